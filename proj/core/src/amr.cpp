#include "feddah/amr.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "feddah/error.hpp"
#include "feddah/ops.hpp"

namespace feddah {

const char* to_string(SimilarityReference reference) noexcept {
  return reference == SimilarityReference::kGenerated ? "generated" : "upload";
}

const char* to_string(RecalibrationScope scope) noexcept {
  return scope == RecalibrationScope::kCrossSession ? "cross_session" : "all";
}

SimilarityReference parse_similarity_reference(const std::string& name) {
  if (name == "generated") return SimilarityReference::kGenerated;
  if (name == "upload") return SimilarityReference::kUpload;
  throw ConfigError("unknown similarity reference '" + name + "' (expected one of: generated, upload)");
}

RecalibrationScope parse_recalibration_scope(const std::string& name) {
  if (name == "cross_session") return RecalibrationScope::kCrossSession;
  if (name == "all") return RecalibrationScope::kAll;
  throw ConfigError("unknown recalibration scope '" + name + "' (expected one of: cross_session, all)");
}

// ---------------------------------------------------------------------------
// Loss pieces

double l_task(const ModelWeights& generated, const ModelWeights& target) {
  if (generated.layers.size() != target.layers.size()) throw UsageError("l_task: models have different depths");
  for (std::size_t j = 0; j < generated.layers.size(); ++j) {
    if (generated.layers[j].kernel.shape() != target.layers[j].kernel.shape() ||
        generated.layers[j].bias.shape() != target.layers[j].bias.shape()) {
      throw UsageError("l_task: layer " + std::to_string(j) + " shapes differ");
    }
  }
  return model_squared_distance(generated, target);
}

Var task_loss(Tape& tape, const GeneratedModel& generated, std::span<const Tensor> target_chunks) {
  if (generated.chunks.size() != target_chunks.size()) throw UsageError("task_loss: models have different depths");
  Var total = ad::squared_distance(generated.chunks[0], tape.constant_view(target_chunks[0]));
  for (std::size_t j = 1; j < target_chunks.size(); ++j) {
    total = total + ad::squared_distance(generated.chunks[j], tape.constant_view(target_chunks[j]));
  }
  return total;
}

Var regularizer(Tape& tape, const HyperParams& hp, std::span<const Var> shifted, std::span<const Tensor> previous_z,
                std::span<const std::vector<Tensor>> previous_targets) {
  if (previous_z.size() != previous_targets.size()) throw UsageError("regularizer: identity and target counts differ");
  if (previous_z.empty()) return tape.constant(Tensor::scalar(0.0));
  const std::size_t count = previous_z.size();
  Tensor z(Shape{count, hp.n_z()});
  for (std::size_t t = 0; t < count; ++t) {
    std::copy(previous_z[t].data().begin(), previous_z[t].data().end(), z.data().begin() + t * hp.n_z());
  }
  const GeneratedBatch batch = generate_batch(hp, shifted, tape.constant(std::move(z)));
  Var total;
  for (std::size_t j = 0; j < batch.layers.size(); ++j) {
    Tensor stacked(batch.layers[j].shape());
    auto out = stacked.data().begin();
    for (const auto& target : previous_targets) out = std::copy(target[j].data().begin(), target[j].data().end(), out);
    Var term = ad::squared_distance(batch.layers[j], tape.constant(std::move(stacked)));
    total = total.valid() ? total + term : term;
  }
  return total * (1.0 / static_cast<double>(count));
}

std::vector<Var> shift(Tape& tape, std::span<const Var> bound, const HyperParams& delta) {
  const auto tensors = delta.tensors();
  if (tensors.size() != bound.size()) throw UsageError("shift: delta does not match the bound parameters");
  std::vector<Var> shifted;
  shifted.reserve(bound.size());
  for (std::size_t i = 0; i < bound.size(); ++i) shifted.push_back(bound[i] + tape.constant_view(tensors[i]));
  return shifted;
}

// ---------------------------------------------------------------------------
// Similarity

std::vector<double> weights_to_distribution(std::span<const double> values, double lo, double hi, std::size_t bins,
                                            double smoothing) {
  if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
    throw UsageError("weights_to_distribution: degenerate range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                     "]");
  }
  if (bins < 2) throw UsageError("weights_to_distribution: need at least 2 bins");
  std::vector<double> counts(bins, 0.0);
  const double scale = static_cast<double>(bins) / (hi - lo);
  for (double v : values) {
    const double pos = std::floor((v - lo) * scale);
    std::size_t b = 0;
    if (pos >= static_cast<double>(bins - 1)) {
      b = bins - 1;
    } else if (pos > 0.0) {
      b = static_cast<std::size_t>(pos);
    }
    counts[b] += 1.0;
  }
  const double denom = static_cast<double>(values.size()) + static_cast<double>(bins) * smoothing;
  for (double& c : counts) c = (c + smoothing) / denom;
  return counts;
}

std::vector<double> weights_to_distribution(const ModelWeights& w, double lo, double hi, std::size_t bins,
                                            double smoothing) {
  const auto flat = w.flatten();
  return weights_to_distribution(flat, lo, hi, bins, smoothing);
}

double js_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw UsageError("js_divergence: distributions have different sizes");
  double kl_p = 0.0;
  double kl_q = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) kl_p += p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) kl_q += q[i] * std::log(q[i] / m);
  }
  return 0.5 * kl_p + 0.5 * kl_q;
}

Similarity similarity(std::span<const double> a, std::span<const double> b, std::size_t bins, double smoothing) {
  if (a.empty() || b.empty()) throw UsageError("similarity: empty weight set");
  const auto [a_lo, a_hi] = std::minmax_element(a.begin(), a.end());
  const auto [b_lo, b_hi] = std::minmax_element(b.begin(), b.end());
  double lo = std::min(*a_lo, *b_lo);
  double hi = std::max(*a_hi, *b_hi);
  if (!(lo < hi)) {
    lo -= 1e-9;
    hi += 1e-9;
  }
  const auto p = weights_to_distribution(a, lo, hi, bins, smoothing);
  const auto q = weights_to_distribution(b, lo, hi, bins, smoothing);
  Similarity s;
  s.js = js_divergence(p, q);
  s.w_s = std::clamp(1.0 - s.js / std::numbers::ln2, 0.0, 1.0);
  return s;
}

double similarity_weight(const ModelWeights& a, const ModelWeights& b, const AmrConfig& config) {
  if (a.layers.size() != b.layers.size() || a.param_count() != b.param_count()) {
    throw UsageError("similarity_weight: models have different shapes");
  }
  for (std::size_t j = 0; j < a.layers.size(); ++j) {
    if (a.layers[j].kernel.shape() != b.layers[j].kernel.shape()) {
      throw UsageError("similarity_weight: layer " + std::to_string(j) + " shapes differ");
    }
  }
  const auto fa = a.flatten();
  const auto fb = b.flatten();
  return similarity(fa, fb, config.bins, config.smoothing).w_s;
}

// ---------------------------------------------------------------------------
// Server state

bool BasicModelEntry::founded_by(std::size_t client_id) const {
  return std::find(founders.begin(), founders.end(), client_id) != founders.end();
}

ServerState make_server_state(const ModelSpec& spec, const AmrConfig& config, const IdentityOptions& identity_options,
                              std::size_t hidden, std::uint64_t seed) {
  ServerState state;
  state.spec = spec;
  state.config = config;
  Rng rng = make_rng(seed, {hash_key("hypernet-init")});
  state.hp = HyperParams::initialized(spec, identity_options.n_z, hidden, rng);
  state.snapshot_hp = state.hp;
  state.identities = IdentityRegistry(identity_options);
  state.optimizer = Optimizer(config.optimizer);
  return state;
}

std::vector<const TaskIdentity*> previous_tasks(const ServerState& state, const std::string& current) {
  std::vector<const TaskIdentity*> out;
  for (const TaskIdentity& id : state.identities.identities()) {
    if (id.task_id != current && state.registry.contains(id.task_id)) out.push_back(&id);
  }
  return out;
}

namespace {

HyperParams gradient_of(const HyperParams& hp, Gradients& grads, std::span<const Var> bound) {
  std::vector<Tensor> tensors;
  tensors.reserve(bound.size());
  for (const Var& v : bound) tensors.push_back(grads.take(v));
  return HyperParams::from_tensors(hp.spec(), hp.n_z(), hp.hidden(), std::move(tensors));
}

void require_finite_loss(double value, const char* what) {
  if (!std::isfinite(value)) throw DivergedError(std::string(what) + " is not finite", 0);
}

/// L_task at hp and its gradient.
HyperParams task_gradient(const HyperParams& hp, const Tensor& z, std::span<const Tensor> target) {
  Tape tape;
  const auto bound = bind(tape, hp, true);
  const GeneratedModel gen = generate_model(hp, bound, tape.constant_view(z));
  const Var loss = task_loss(tape, gen, target);
  require_finite_loss(loss.value().item(), "L_task");
  Gradients grads = tape.backward(loss);
  return gradient_of(hp, grads, bound);
}

HyperParams delta_from(const HyperParams& hp, const Optimizer& optimizer, std::size_t n_inner, const Tensor& z,
                       std::span<const Tensor> target) {
  if (n_inner == 0) return hp.zeros_like();
  if (n_inner == 1) {
    const HyperParams grad = task_gradient(hp, z, target);
    return HyperParams::from_tensors(hp.spec(), hp.n_z(), hp.hidden(), optimizer.preview(grad.tensors()));
  }
  HyperParams moved = hp;
  Optimizer local = optimizer;
  for (std::size_t k = 0; k < n_inner; ++k) {
    const HyperParams grad = task_gradient(moved, z, target);
    local.step(moved.tensors(), grad.tensors());
  }
  return moved - hp;
}

}  // namespace

HyperParams candidate_change(const ServerState& state, const TaskIdentity& identity, const ModelWeights& target) {
  target.require_matches(state.spec, "candidate_change");
  const auto chunks = model_chunks(target);
  if (state.config.candidate) {
    return delta_from(state.hp, Optimizer(*state.config.candidate), state.config.n_inner, identity.z, chunks);
  }
  return delta_from(state.hp, state.optimizer, state.config.n_inner, identity.z, chunks);
}

double l_r(const ServerState& state, const HyperParams& delta, std::span<const TaskIdentity* const> previous) {
  if (previous.empty()) return 0.0;
  const HyperParams moved = state.hp + delta;
  double total = 0.0;
  for (const TaskIdentity* t : previous) {
    const auto before = generate_chunks(state.snapshot_hp, t->z);
    const auto after = generate_chunks(moved, t->z);
    for (std::size_t j = 0; j < before.size(); ++j) total += squared_distance(before[j].data(), after[j].data());
  }
  return total / static_cast<double>(previous.size());
}

// ---------------------------------------------------------------------------
// Server objective

bool Objective::needs_history_delta() const {
  return history_weight() > 0.0 && beta_history > 0.0 && !previous_z.empty();
}

bool Objective::needs_upload_delta() const { return upload_weight() > 0.0 && beta_upload > 0.0 && !previous_z.empty(); }

LossTerms ObjectiveVars::terms(const Objective& objective) const {
  LossTerms t;
  if (objective.history) t.w_s = objective.w_s;
  if (l_task_hist) t.l_task_hist = l_task_hist->value().item();
  if (l_task_upload) t.l_task_upload = l_task_upload->value().item();
  if (l_r1) t.l_r1 = l_r1->value().item();
  if (l_r2) t.l_r2 = l_r2->value().item();
  t.total = total.value().item();
  return t;
}

ObjectiveVars build_objective(Tape& tape, const HyperParams& hp, std::span<const Var> bound,
                              const Objective& objective, const CandidateChanges& deltas) {
  ObjectiveVars vars;
  const GeneratedModel gen = generate_model(hp, bound, tape.constant_view(objective.z));

  // One branch: L_task against `target` plus `beta` times L_R at hp + delta.
  auto branch = [&](std::span<const Tensor> target, double beta, bool needs_delta,
                    const std::optional<HyperParams>& delta, std::optional<Var>& l_task_var,
                    std::optional<Var>& l_r_var) {
    l_task_var = task_loss(tape, gen, target);
    Var value = *l_task_var;
    if (beta > 0.0) {
      if (needs_delta) {
        if (!delta) throw UsageError("build_objective: missing candidate change");
        l_r_var = regularizer(tape, hp, shift(tape, bound, *delta), objective.previous_z, objective.previous_targets);
      } else {
        l_r_var = tape.constant(Tensor::scalar(0.0));
      }
      value = value + beta * *l_r_var;
    }
    return value;
  };

  Var total;
  if (objective.history_weight() > 0.0) {
    const Var b = branch(*objective.history, objective.beta_history, objective.needs_history_delta(), deltas.history,
                         vars.l_task_hist, vars.l_r1);
    total = objective.history_weight() * b;
  }
  if (objective.upload_weight() > 0.0) {
    Var b = branch(objective.upload, objective.beta_upload, objective.needs_upload_delta(), deltas.upload,
                   vars.l_task_upload, vars.l_r2);
    if (objective.history) b = objective.upload_weight() * b;
    total = total.valid() ? total + b : b;
  }
  vars.total = total;
  return vars;
}

CandidateChanges candidate_changes(const HyperParams& hp, const Optimizer& optimizer, std::size_t n_inner,
                                   const Objective& objective) {
  CandidateChanges deltas;
  if (objective.needs_history_delta()) {
    deltas.history = delta_from(hp, optimizer, n_inner, objective.z, *objective.history);
  }
  if (objective.needs_upload_delta()) deltas.upload = delta_from(hp, optimizer, n_inner, objective.z, objective.upload);
  return deltas;
}

namespace {

struct RegularizerValue {
  double value = 0.0;
  HyperParams gradient;
};

/// L_R and its gradient at `moved` = hp + delta.
RegularizerValue regularizer_gradient(const HyperParams& moved, const Objective& objective) {
  Tape tape;
  const auto bound = bind(tape, moved, true);
  const Var loss = regularizer(tape, moved, bound, objective.previous_z, objective.previous_targets);
  require_finite_loss(loss.value().item(), "L_R");
  Gradients grads = tape.backward(loss);
  return {loss.value().item(), gradient_of(moved, grads, bound)};
}

}  // namespace

double recompose(const Objective& objective, const LossTerms& terms) {
  auto branch = [](const std::optional<double>& task, const std::optional<double>& reg, double beta) {
    return task.value_or(0.0) + (reg ? beta * *reg : 0.0);
  };
  const double hist = branch(terms.l_task_hist, terms.l_r1, objective.beta_history);
  const double upload = branch(terms.l_task_upload, terms.l_r2, objective.beta_upload);
  if (!objective.history) return upload;
  return objective.history_weight() * hist + objective.upload_weight() * upload;
}

ObjectiveEvaluation evaluate_objective(const HyperParams& hp, const Optimizer& optimizer, std::size_t n_inner,
                                       const Objective& objective) {
  // Same value and gradient as build_objective(), without recording the
  // shifted copies of hp: the gradient of L_R at hp + delta is taken directly
  // with respect to the shifted parameters.
  Tape tape;
  const auto bound = bind(tape, hp, true);
  const GeneratedModel gen = generate_model(hp, bound, tape.constant_view(objective.z));

  ObjectiveEvaluation eval;
  eval.gradient = hp.zeros_like();
  if (objective.history) eval.terms.w_s = objective.w_s;

  auto branch = [&](const std::vector<Tensor>& target, double weight, double beta, std::optional<double>& l_task_out,
                    std::optional<double>& l_r_out) {
    if (!(weight > 0.0)) return;
    const Var loss = task_loss(tape, gen, target);
    l_task_out = loss.value().item();
    require_finite_loss(*l_task_out, "L_task");
    Gradients grads = tape.backward(loss);
    HyperParams grad = gradient_of(hp, grads, bound);
    if (beta > 0.0) {
      if (objective.previous_z.empty()) {
        l_r_out = 0.0;
      } else {
        HyperParams delta = n_inner == 1
                                ? HyperParams::from_tensors(hp.spec(), hp.n_z(), hp.hidden(), optimizer.preview(grad.tensors()))
                                : delta_from(hp, optimizer, n_inner, objective.z, target);
        delta += hp;
        const RegularizerValue reg = regularizer_gradient(delta, objective);
        l_r_out = reg.value;
        grad.add_scaled(reg.gradient, beta);
      }
    }
    eval.gradient.add_scaled(grad, objective.history ? weight : 1.0);
  };

  if (objective.history) {
    branch(*objective.history, objective.history_weight(), objective.beta_history, eval.terms.l_task_hist,
           eval.terms.l_r1);
  }
  branch(objective.upload, objective.upload_weight(), objective.beta_upload, eval.terms.l_task_upload,
         eval.terms.l_r2);
  eval.terms.total = recompose(objective, eval.terms);
  require_finite_loss(eval.terms.total, "server loss");
  return eval;
}

// ---------------------------------------------------------------------------
// Server update

namespace {

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

struct SnapshotOutputs {
  const HyperParams* snapshot = nullptr;
  std::map<std::string, std::vector<Tensor>> cache;

  const std::vector<Tensor>& at(const TaskIdentity& id) {
    auto it = cache.find(id.task_id);
    if (it == cache.end()) it = cache.emplace(id.task_id, generate_chunks(*snapshot, id.z)).first;
    return it->second;
  }
};

LossTerms process_upload(ServerState& state, SnapshotOutputs& snapshot, const ClientUpdate& upload,
                         std::size_t round, const std::vector<std::size_t>& group_clients) {
  const AmrConfig& cfg = state.config;
  const TaskIdentity& identity = state.identities.at(upload.task_id);
  const auto existing = state.registry.find(upload.task_id);
  const bool has_basic = existing != state.registry.end();
  const bool recalibrate =
      has_basic && !(cfg.scope == RecalibrationScope::kCrossSession && existing->second.founded_by(upload.client_id));

  Objective objective;
  objective.z = identity.z;
  objective.upload = model_chunks(upload.weights);
  for (const TaskIdentity* prev : previous_tasks(state, upload.task_id)) {
    objective.previous_z.push_back(prev->z);
    objective.previous_targets.push_back(snapshot.at(*prev));
  }
  if (recalibrate) {
    const ModelWeights& basic = existing->second.weights;
    objective.history = model_chunks(basic);
    if (cfg.use_similarity) {
      const ModelWeights reference =
          cfg.reference == SimilarityReference::kGenerated ? generate_model(state.hp, identity) : upload.weights;
      objective.w_s = similarity_weight(reference, basic, cfg);
    }
    objective.beta_history = cfg.beta1;
    objective.beta_upload = cfg.beta2;
  } else {
    objective.beta_upload = cfg.beta;
  }

  const Optimizer fresh(cfg.candidate.value_or(cfg.optimizer));
  const Optimizer& inner = cfg.candidate ? fresh : state.optimizer;

  LossTerms last;
  if (cfg.n_server == 0) last = evaluate_objective(state.hp, inner, cfg.n_inner, objective).terms;
  for (std::size_t step = 0; step < cfg.n_server; ++step) {
    try {
      ObjectiveEvaluation eval = evaluate_objective(state.hp, inner, cfg.n_inner, objective);
      state.optimizer.step(state.hp.tensors(), eval.gradient.tensors());
      last = eval.terms;
    } catch (const DivergedError& e) {
      throw DivergedError("task '" + upload.task_id + "' from client " + std::to_string(upload.client_id) + ": " +
                              e.what(),
                          step);
    }
  }
  if (!state.hp.all_finite()) {
    throw DivergedError("hypernetwork parameters stopped being finite on task '" + upload.task_id + "'", cfg.n_server);
  }

  ModelWeights refreshed = generate_model(state.hp, identity);
  if (has_basic) {
    existing->second.weights = std::move(refreshed);
    existing->second.round_updated = round;
  } else {
    BasicModelEntry entry;
    entry.weights = std::move(refreshed);
    entry.round_created = round;
    entry.round_updated = round;
    entry.source_client = upload.client_id;
    entry.founders = group_clients;
    state.registry.emplace(upload.task_id, std::move(entry));
  }
  return last;
}

}  // namespace

std::string to_jsonl(const RoundReport& report) {
  std::ostringstream out;
  for (const TaskRecord& r : report.tasks) {
    nlohmann::ordered_json j;
    j["round"] = r.round;
    j["task_id"] = r.task_id;
    j["client_ids"] = r.client_ids;
    const LossTerms none;
    const LossTerms& t = r.terms ? *r.terms : none;
    j["w_s"] = optional_json(t.w_s);
    j["l_task_hist"] = optional_json(t.l_task_hist);
    j["l_task_upload"] = optional_json(t.l_task_upload);
    j["l_r1"] = optional_json(t.l_r1);
    j["l_r2"] = optional_json(t.l_r2);
    j["total_loss"] = r.terms ? nlohmann::ordered_json(t.total) : nlohmann::ordered_json(nullptr);
    j["delta_norm"] = r.delta_norm;
    out << j.dump() << '\n';
  }
  return out.str();
}

RoundReport server_update(ServerState& state, std::span<const ClientUpdate> uploads, std::size_t round) {
  for (const ClientUpdate& u : uploads) {
    (void)state.identities.at(u.task_id);
    u.weights.require_matches(state.spec, "server_update");
    if (!u.weights.all_finite()) {
      throw InvariantError("upload from client " + std::to_string(u.client_id) + " has non-finite weights");
    }
  }

  std::vector<const ClientUpdate*> ordered;
  ordered.reserve(uploads.size());
  for (const ClientUpdate& u : uploads) ordered.push_back(&u);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const ClientUpdate* a, const ClientUpdate* b) { return a->client_id < b->client_id; });

  std::vector<std::string> group_order;
  std::map<std::string, std::vector<const ClientUpdate*>> groups;
  for (const ClientUpdate* u : ordered) {
    auto& group = groups[u->task_id];
    if (group.empty()) group_order.push_back(u->task_id);
    group.push_back(u);
  }

  ServerState next = state;
  next.snapshot_hp = next.hp;
  SnapshotOutputs snapshot{&next.snapshot_hp, {}};

  RoundReport report;
  report.round = round;
  for (const std::string& task_id : group_order) {
    const auto& group = groups[task_id];
    TaskRecord record;
    record.round = round;
    record.task_id = task_id;
    for (const ClientUpdate* u : group) record.client_ids.push_back(u->client_id);
    const HyperParams before = next.hp;
    for (const ClientUpdate* u : group) record.terms = process_upload(next, snapshot, *u, round, record.client_ids);
    record.delta_norm = (next.hp - before).norm();
    report.tasks.push_back(std::move(record));
  }
  next.rounds += 1;
  state = std::move(next);
  return report;
}

}  // namespace feddah
