#ifndef FEDDAH_AMR_HPP
#define FEDDAH_AMR_HPP

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "feddah/client.hpp"
#include "feddah/hypernet.hpp"
#include "feddah/model.hpp"
#include "feddah/optim.hpp"
#include "feddah/tape.hpp"

namespace feddah {

/// Which model the historical basic model is compared against for W_s.
enum class SimilarityReference {
  kGenerated,  // W_s(generate_model(hp, z), basic)
  kUpload,     // W_s(upload, basic)
};

/// Which repeat uploads of a task go through the similarity-weighted
/// recalibration.
enum class RecalibrationScope {
  /// Uploads from the clients that created the basic model keep fitting it
  /// directly; only uploads from a later session by another client are
  /// recalibrated.
  kCrossSession,
  /// Every upload of a task that already has a basic model.
  kAll,
};

[[nodiscard]] const char* to_string(SimilarityReference reference) noexcept;
[[nodiscard]] const char* to_string(RecalibrationScope scope) noexcept;
/// Throw ConfigError naming the accepted values.
[[nodiscard]] SimilarityReference parse_similarity_reference(const std::string& name);
[[nodiscard]] RecalibrationScope parse_recalibration_scope(const std::string& name);

struct AmrConfig {
  /// Coefficient of L_R for a task without a basic model.
  double beta = 0.01;
  /// Coefficients of L_R1 (history branch) and L_R2 (upload branch).
  double beta1 = 0.01;
  double beta2 = 0.01;
  /// Optimizer steps behind one candidate change.
  std::size_t n_inner = 1;
  /// Server optimizer steps per upload.
  std::size_t n_server = 20;
  OptimizerOptions optimizer;
  /// Optimizer behind candidate changes, started fresh for each one. Empty
  /// means the server optimizer with its current moments.
  std::optional<OptimizerOptions> candidate;
  std::size_t bins = 64;
  double smoothing = 1e-8;
  /// When false W_s is fixed at 0 and only the upload branch remains.
  bool use_similarity = true;
  SimilarityReference reference = SimilarityReference::kGenerated;
  RecalibrationScope scope = RecalibrationScope::kCrossSession;
};

// ---------------------------------------------------------------------------
// Loss pieces

/// Sum of squared parameter differences. Throws UsageError on shape mismatch.
[[nodiscard]] double l_task(const ModelWeights& generated, const ModelWeights& target);

/// Tape versions over chunk-form layers (see chunk_form()).
Var task_loss(Tape& tape, const GeneratedModel& generated, std::span<const Tensor> target_chunks);
/// (1/|prev|) sum_t ||target_t - generate(shifted, z_t)||^2, or a zero
/// constant when `previous_z` is empty. `shifted` are the bound parameters
/// theta_h + delta.
Var regularizer(Tape& tape, const HyperParams& hp, std::span<const Var> shifted, std::span<const Tensor> previous_z,
                std::span<const std::vector<Tensor>> previous_targets);
/// shifted_i = bound_i + delta_i, with delta held constant.
[[nodiscard]] std::vector<Var> shift(Tape& tape, std::span<const Var> bound, const HyperParams& delta);

// ---------------------------------------------------------------------------
// Similarity

/// Histogram of `values` over `bins` equal bins on [lo, hi]; values outside
/// land in the boundary bins. Every bin gets `smoothing` added before
/// normalization. Throws UsageError unless lo < hi and bins >= 2.
[[nodiscard]] std::vector<double> weights_to_distribution(std::span<const double> values, double lo, double hi,
                                                          std::size_t bins, double smoothing);
[[nodiscard]] std::vector<double> weights_to_distribution(const ModelWeights& w, double lo, double hi,
                                                          std::size_t bins, double smoothing);

/// Jensen-Shannon divergence in nats. Zero-probability terms contribute 0.
[[nodiscard]] double js_divergence(std::span<const double> p, std::span<const double> q);

struct Similarity {
  double js = 0.0;
  double w_s = 1.0;
};

/// Histograms over the pooled [min, max] of both inputs, JS between them and
/// W_s = clamp(1 - JS / ln 2, 0, 1).
[[nodiscard]] Similarity similarity(std::span<const double> a, std::span<const double> b, std::size_t bins,
                                    double smoothing);
/// Throws UsageError when the two models have different shapes.
[[nodiscard]] double similarity_weight(const ModelWeights& a, const ModelWeights& b, const AmrConfig& config);

// ---------------------------------------------------------------------------
// Server state

struct BasicModelEntry {
  ModelWeights weights;
  std::size_t round_created = 0;
  std::size_t round_updated = 0;
  std::size_t source_client = 0;
  /// Clients that uploaded the task in the round it was created.
  std::vector<std::size_t> founders;

  [[nodiscard]] bool founded_by(std::size_t client_id) const;
  friend bool operator==(const BasicModelEntry&, const BasicModelEntry&) = default;
};

using BasicModelRegistry = std::map<std::string, BasicModelEntry>;

struct ServerState {
  ModelSpec spec;
  AmrConfig config;
  HyperParams hp;
  /// theta_h*: hp as it was when the current round started.
  HyperParams snapshot_hp;
  BasicModelRegistry registry;
  IdentityRegistry identities;
  Optimizer optimizer;
  std::size_t rounds = 0;
};

/// Fresh server with hp initialized from `seed`.
[[nodiscard]] ServerState make_server_state(const ModelSpec& spec, const AmrConfig& config,
                                            const IdentityOptions& identity_options, std::size_t hidden,
                                            std::uint64_t seed);

/// Tasks that own a basic model, other than `current`, in registration order.
[[nodiscard]] std::vector<const TaskIdentity*> previous_tasks(const ServerState& state, const std::string& current);

/// hp_after - hp_before for n_inner optimizer steps on L_task from the
/// current hp. Neither hp nor the optimizer of `state` changes.
[[nodiscard]] HyperParams candidate_change(const ServerState& state, const TaskIdentity& identity,
                                           const ModelWeights& target);
/// The history regularizer at hp + delta against outputs of the snapshot.
[[nodiscard]] double l_r(const ServerState& state, const HyperParams& delta,
                         std::span<const TaskIdentity* const> previous);

// ---------------------------------------------------------------------------
// Server objective

/// One upload's server loss. Without `history` it is L_task + beta * L_R;
/// with it, W_s [L_task(gen, history) + beta1 L_R1] +
/// (1 - W_s) [L_task(gen, upload) + beta2 L_R2].
struct Objective {
  Tensor z;
  std::vector<Tensor> upload;
  std::optional<std::vector<Tensor>> history;
  double w_s = 0.0;
  double beta_upload = 0.0;
  double beta_history = 0.0;
  std::vector<Tensor> previous_z;
  std::vector<std::vector<Tensor>> previous_targets;

  [[nodiscard]] double history_weight() const { return history ? w_s : 0.0; }
  [[nodiscard]] double upload_weight() const { return history ? 1.0 - w_s : 1.0; }
  /// Whether the branch's regularizer needs a candidate change.
  [[nodiscard]] bool needs_history_delta() const;
  [[nodiscard]] bool needs_upload_delta() const;
};

struct CandidateChanges {
  std::optional<HyperParams> history;
  std::optional<HyperParams> upload;
};

/// Scalar terms of an objective. A term is empty when its branch has zero
/// weight or its coefficient is zero, in which case it was never computed.
struct LossTerms {
  std::optional<double> w_s;
  std::optional<double> l_task_hist;
  std::optional<double> l_task_upload;
  std::optional<double> l_r1;
  std::optional<double> l_r2;
  double total = 0.0;
};

struct ObjectiveVars {
  Var total;
  std::optional<Var> l_task_hist;
  std::optional<Var> l_task_upload;
  std::optional<Var> l_r1;
  std::optional<Var> l_r2;

  [[nodiscard]] LossTerms terms(const Objective& objective) const;
};

/// Records the objective with candidate changes held constant.
ObjectiveVars build_objective(Tape& tape, const HyperParams& hp, std::span<const Var> bound,
                              const Objective& objective, const CandidateChanges& deltas);

/// Candidate changes the objective needs at `hp`, from a copy of `optimizer`.
[[nodiscard]] CandidateChanges candidate_changes(const HyperParams& hp, const Optimizer& optimizer,
                                                 std::size_t n_inner, const Objective& objective);

struct ObjectiveEvaluation {
  LossTerms terms;
  HyperParams gradient;
};

/// W_s (l_task_hist + beta1 l_r1) + (1 - W_s) (l_task_upload + beta2 l_r2),
/// or l_task_upload + beta l_r2 without history; absent terms count as 0.
[[nodiscard]] double recompose(const Objective& objective, const LossTerms& terms);

/// Value and gradient of the objective at `hp`, with candidate changes taken
/// from `optimizer` as in candidate_changes().
[[nodiscard]] ObjectiveEvaluation evaluate_objective(const HyperParams& hp, const Optimizer& optimizer,
                                                     std::size_t n_inner, const Objective& objective);

// ---------------------------------------------------------------------------
// Server update

struct TaskRecord {
  std::size_t round = 0;
  std::string task_id;
  std::vector<std::size_t> client_ids;
  /// Components of the last optimizer step of the last upload in the group.
  /// Empty for baselines that have no server objective.
  std::optional<LossTerms> terms;
  /// ||hp after the group - hp before it||.
  double delta_norm = 0.0;
};

struct RoundReport {
  std::size_t round = 0;
  std::vector<TaskRecord> tasks;
};

/// One JSON object per line, one line per task record.
[[nodiscard]] std::string to_jsonl(const RoundReport& report);

/// Applies one round of uploads. Snapshots theta_h*, then processes uploads
/// grouped by task (groups in order of the lowest uploading client id,
/// ascending client id inside a group). The state is only replaced when the
/// whole round succeeds.
///
/// Throws ProtocolError for an unregistered task, UsageError for weights
/// that do not fit the spec, DivergedError when a loss is not finite.
RoundReport server_update(ServerState& state, std::span<const ClientUpdate> uploads, std::size_t round);

}  // namespace feddah

#endif  // FEDDAH_AMR_HPP
