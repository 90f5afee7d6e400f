// Acceptance checks. One line per criterion; exit status is nonzero when any
// of them fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "feddah/amr.hpp"
#include "feddah/federation.hpp"
#include "feddah/gradcheck.hpp"
#include "feddah/metrics.hpp"
#include "test_util.hpp"

namespace feddah {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;
using testing::uniform;
using testing::uniform_model;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// Toy benchmark shared by the federated criteria.

constexpr std::uint64_t kSeeds[] = {101, 202, 303, 404, 505};

ExperimentConfig benchmark_config(Mode mode, std::uint64_t seed) {
  ExperimentConfig cfg;  // 4 clients, 2 + 5 + 2 tasks each, E = 5, T = 20
  cfg.mode = mode;
  cfg.seed = seed;
  cfg.n_z = 8;
  cfg.hidden_size = 16;
  return cfg;
}

struct BenchmarkRun {
  double final_average = 0.0;
  double mean_forgetting = 0.0;
  double seconds = 0.0;
  std::vector<RoundReport> reports;
  std::vector<BasicModelLoss> basic_losses;
  std::vector<TaskStream> streams;
  std::map<std::pair<std::size_t, std::string>, std::size_t> upload_counts;
  ExperimentConfig config;
};

BenchmarkRun run_benchmark(Mode mode, std::uint64_t seed) {
  const auto t0 = Clock::now();
  BenchmarkRun r;
  r.config = benchmark_config(mode, seed);
  Simulation sim(r.config);
  sim.run();
  const TrajectorySet traj = trajectories(sim.metrics());
  r.final_average = final_average(traj);
  r.mean_forgetting = mean_forgetting(traj);
  r.reports = sim.reports();
  r.basic_losses = sim.basic_model_losses();
  r.streams = sim.streams();
  r.upload_counts = sim.upload_counts();
  r.seconds = seconds_since(t0);
  return r;
}

// ---------------------------------------------------------------------------
// 1. Gradient suite

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const ModelSpec spec = ModelSpec::mlp(2, {3, 2}, 1);  // three layers
  std::mt19937_64 rng(7);
  ServerState s = make_server_state(spec, AmrConfig{}, IdentityOptions{3, 2.0, 0.5, 7}, 4, 7);
  for (Tensor& t : s.hp.tensors()) t = uniform(t.shape(), rng, -0.5, 0.5);
  for (Tensor& t : s.snapshot_hp.tensors()) t = uniform(t.shape(), rng, -0.5, 0.5);

  Objective obj;
  for (const char* id : {"a", "b"}) {
    const TaskIdentity& ident = s.identities.register_task(id);
    obj.previous_z.push_back(ident.z);
    obj.previous_targets.push_back(generate_chunks(s.snapshot_hp, ident.z));
  }
  obj.z = s.identities.register_task("c").z;
  obj.upload = model_chunks(uniform_model(spec, rng));
  obj.history = model_chunks(uniform_model(spec, rng));
  obj.w_s = 0.35;
  obj.beta_history = 0.6;
  obj.beta_upload = 0.8;
  const CandidateChanges deltas = candidate_changes(s.hp, Optimizer{}, 1, obj);

  const std::vector<Tensor> params(s.hp.tensors().begin(), s.hp.tensors().end());
  const auto names = s.hp.tensor_names();
  const std::map<std::string, ScalarFunction> losses = {
      {"L_task",
       [&](Tape& tape, std::span<const Var> p) {
         return task_loss(tape, generate_model(s.hp, p, tape.constant(obj.z)), obj.upload);
       }},
      {"L_R",
       [&](Tape& tape, std::span<const Var> p) {
         return regularizer(tape, s.hp, shift(tape, p, *deltas.upload), obj.previous_z, obj.previous_targets);
       }},
      {"L_total", [&](Tape& tape, std::span<const Var> p) { return build_objective(tape, s.hp, p, obj, deltas).total; }},
  };
  double worst = 0.0;
  bool passed = true;
  std::size_t tensors = 0;
  for (const auto& [name, f] : losses) {
    const GradCheckReport r = grad_check(f, params, 1e-5, 1e-5, names);
    worst = std::max(worst, r.worst_rel_error);
    passed = passed && r.passed;
    tensors += r.entries.size();
  }
  const double secs = seconds_since(t0);
  passed = passed && tensors == 3 * params.size() && secs < 30.0;
  return {passed, format("3 losses x %zu tensors, worst rel error %.2e (tol 1e-5), %.2fs (limit 30s)", params.size(),
                         worst, secs)};
}

// ---------------------------------------------------------------------------
// 2. Oracle equivalence

std::vector<double> brute_histogram(const std::vector<double>& v, double lo, double hi, std::size_t bins,
                                    double eps) {
  std::vector<double> counts(bins, 0.0);
  for (double x : v) {
    std::size_t b = 0;
    // Linear scan for the last edge at or below x.
    for (std::size_t k = 1; k < bins; ++k) {
      if (x >= lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(bins)) b = k;
    }
    counts[b] += 1.0;
  }
  double total = 0.0;
  for (double& c : counts) total += (c += eps);
  for (double& c : counts) c /= total;
  return counts;
}

double brute_js(const std::vector<double>& p, const std::vector<double>& q) {
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = (p[i] + q[i]) / 2.0;
    if (p[i] > 0) a += p[i] * std::log(p[i] / m);
    if (q[i] > 0) b += q[i] * std::log(q[i] / m);
  }
  return (a + b) / 2.0;
}

Outcome oracle_equivalence() {
  const ModelSpec spec = ModelSpec::mlp(2, {8}, 1);
  std::mt19937_64 rng(2718);
  AmrConfig cfg;
  double worst_hist = 0.0, worst_js = 0.0, worst_ws = 0.0;
  for (int pair = 0; pair < 100; ++pair) {
    const ModelWeights a = uniform_model(spec, rng, 1.0 + pair % 3);
    const ModelWeights b = uniform_model(spec, rng, 0.5 + pair % 4);
    const std::vector<double> fa = a.flatten(), fb = b.flatten();
    double lo = fa[0], hi = fa[0];
    for (const auto* v : {&fa, &fb}) {
      for (double x : *v) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
    }
    const auto p = brute_histogram(fa, lo, hi, cfg.bins, cfg.smoothing);
    const auto q = brute_histogram(fb, lo, hi, cfg.bins, cfg.smoothing);
    const auto lp = weights_to_distribution(a, lo, hi, cfg.bins, cfg.smoothing);
    for (std::size_t i = 0; i < p.size(); ++i) worst_hist = std::max(worst_hist, std::abs(lp[i] - p[i]));
    const double js = brute_js(p, q);
    const Similarity sim = similarity(fa, fb, cfg.bins, cfg.smoothing);
    worst_js = std::max(worst_js, std::abs(sim.js - js));
    const double ws = std::clamp(1.0 - js / std::numbers::ln2, 0.0, 1.0);
    worst_ws = std::max(worst_ws, std::abs(similarity_weight(a, b, cfg) - ws));
  }

  // P = [0.5, 0.5], Q = [0.9, 0.1], M = [0.7, 0.3].
  const double closed = 0.5 * (0.5 * std::log(0.5 / 0.7) + 0.5 * std::log(0.5 / 0.3)) +
                        0.5 * (0.9 * std::log(0.9 / 0.7) + 0.1 * std::log(0.1 / 0.3));
  const double two_bin = js_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{0.9, 0.1});

  const ModelWeights a = uniform_model(spec, rng);
  const double self = similarity_weight(a, a, cfg);

  const bool passed = worst_hist <= 1e-10 && worst_js <= 1e-10 && worst_ws <= 1e-10 &&
                      std::abs(two_bin - closed) <= 1e-3 && self == 1.0;
  return {passed, format("100 pairs: max |hist| %.1e, |JS| %.1e, |W_s| %.1e (tol 1e-10); two-bin JS %.6f vs %.6f "
                         "(tol 1e-3); W_s(a,a) = %.17g",
                         worst_hist, worst_js, worst_ws, two_bin, closed, self)};
}

// ---------------------------------------------------------------------------
// 3. Meta-memorization

// Fits five random targets one after another, one server update each.
// Returns max over the first four of (error after the fifth) / (error right
// after the target's own fit), and the mean own-fit error reduction.
struct MemoryTrial {
  double worst_ratio = 0.0;
  double fit_reduction = 0.0;
};

MemoryTrial memory_trial(double beta, std::uint64_t seed) {
  const ModelSpec spec = ModelSpec::mlp(2, {8}, 1);
  AmrConfig cfg;
  cfg.beta = cfg.beta1 = cfg.beta2 = beta;
  cfg.n_server = 50;
  ServerState s = make_server_state(spec, cfg, IdentityOptions{8, 2.0, 0.5, seed}, 16, seed);
  std::mt19937_64 rng(seed + 1000);
  std::normal_distribution<double> normal(0.0, 0.5);
  std::vector<ModelWeights> targets;
  std::vector<double> own;
  double reduction = 0.0;
  for (std::size_t k = 0; k < 5; ++k) {
    std::vector<double> flat(ModelWeights::zeros(spec).param_count());
    for (double& x : flat) x = normal(rng);
    targets.push_back(ModelWeights::unflatten(spec, flat));
    const std::string id = "m" + std::to_string(k);
    const TaskIdentity& ident = s.identities.register_task(id);
    const double before = l_task(generate_model(s.hp, ident), targets.back());
    ClientUpdate u;
    u.task_id = id;
    u.weights = targets.back();
    (void)server_update(s, std::vector<ClientUpdate>{u}, k);
    own.push_back(l_task(generate_model(s.hp, s.identities.at(id)), targets.back()));
    reduction += own.back() / before / 5.0;
  }
  MemoryTrial t;
  t.fit_reduction = reduction;
  for (std::size_t k = 0; k + 1 < 5; ++k) {
    const double after = l_task(generate_model(s.hp, s.identities.at("m" + std::to_string(k))), targets[k]);
    t.worst_ratio = std::max(t.worst_ratio, after / own[k]);
  }
  return t;
}

Outcome meta_memorization() {
  const auto t0 = Clock::now();
  constexpr double kBeta = 30.0;
  int kept = 0, forgot = 0;
  std::string ratios;
  for (std::uint64_t seed : kSeeds) {
    const MemoryTrial with = memory_trial(kBeta, seed);
    const MemoryTrial without = memory_trial(0.0, seed);
    if (with.worst_ratio < 1.5) ++kept;
    if (without.worst_ratio > 5.0) ++forgot;
    ratios += format(" %.2f/%.0f (fit %.2f)", with.worst_ratio, without.worst_ratio, with.fit_reduction);
  }
  const double secs = seconds_since(t0);
  const bool passed = kept >= 4 && forgot >= 4 && secs < 300.0;
  return {passed, format("beta=%g kept <1.5x on %d/5, beta=0 >5x on %d/5; worst ratio beta/0 per seed:%s; %.1fs",
                         kBeta, kept, forgot, ratios.c_str(), secs)};
}

// ---------------------------------------------------------------------------
// 4. Ablation ordering, 5. same-task improvement, 7. protocol conformance

Outcome ablation_ordering(const std::map<Mode, std::vector<BenchmarkRun>>& runs, double seconds) {
  const std::vector<Mode> rivals = {Mode::kNoLr, Mode::kNoWs, Mode::kNoDaHyper, Mode::kFedAvgCl};
  bool passed = seconds < 1800.0;
  std::string detail;
  for (Mode rival : rivals) {
    int wins = 0;
    for (std::size_t i = 0; i < std::size(kSeeds); ++i) {
      const BenchmarkRun& f = runs.at(Mode::kFull)[i];
      const BenchmarkRun& r = runs.at(rival)[i];
      if (f.final_average < r.final_average && f.mean_forgetting < r.mean_forgetting) ++wins;
    }
    passed = passed && wins >= 4;
    detail += format("%s %d/5; ", to_string(rival), wins);
  }
  detail += "means (final, forgetting):";
  for (const auto& [mode, rs] : runs) {
    double fa = 0.0, fg = 0.0;
    for (const BenchmarkRun& r : rs) {
      fa += r.final_average / static_cast<double>(rs.size());
      fg += r.mean_forgetting / static_cast<double>(rs.size());
    }
    detail += format(" %s %.4f/%.4f", to_string(mode), fa, fg);
  }
  detail += format("; %.0fs (limit 1800s)", seconds);
  return {passed, detail};
}

// For the first shared task whose first two visits start at different
// rounds: basic-model loss at the end of each of the two visits.
struct Improvement {
  int improved = 0;
  std::string detail;
};

Improvement count_improvements(const std::vector<BenchmarkRun>& runs) {
  int improved = 0;
  std::string detail;
  for (const BenchmarkRun& r : runs) {
    const std::size_t T = r.config.rounds_per_task;
    bool found = false;
    for (const std::string& task : r.config.shared) {
      std::vector<std::size_t> starts;
      for (const TaskStream& s : r.streams) {
        for (const StreamEntry& e : s.entries) {
          if (e.task_id == task) starts.push_back(e.start_round);
        }
      }
      std::sort(starts.begin(), starts.end());
      if (starts.size() < 2 || starts[0] == starts[1]) continue;
      auto loss_at = [&](std::size_t round) {
        for (const BasicModelLoss& b : r.basic_losses) {
          if (b.round == round && b.task_id == task) return b.loss;
        }
        return std::nan("");
      };
      const double first = loss_at(starts[0] + T - 1);
      const double second = loss_at(starts[1] + T - 1);
      if (second <= first) ++improved;
      detail += format(" %s %.4f->%.4f", task.c_str(), first, second);
      found = true;
      break;
    }
    if (!found) detail += " (no task)";
  }
  return {improved, detail};
}

// no_ws is reported alongside for reference; only full is judged.
Outcome same_task_improvement(const std::vector<BenchmarkRun>& full, const std::vector<BenchmarkRun>& no_ws) {
  const Improvement f = count_improvements(full);
  const Improvement w = count_improvements(no_ws);
  return {f.improved >= 4, format("full improved on %d/5 seeds:%s (no_ws for reference: %d/5)", f.improved,
                                  f.detail.c_str(), w.improved)};
}

Outcome protocol_conformance(const std::vector<BenchmarkRun>& full) {
  std::size_t pairs = 0, bad_counts = 0, records = 0, recalibrated = 0;
  double worst = 0.0;
  for (const BenchmarkRun& r : full) {
    const ExperimentConfig& cfg = r.config;
    const AmrConfig amr = amr_config(cfg);
    const bool ok_protocol = cfg.epochs == 5 && cfg.rounds_per_task == 20;
    std::size_t run_pairs = 0;
    for (const TaskStream& s : r.streams) {
      for (const StreamEntry& e : s.entries) {
        ++run_pairs;
        const auto it = r.upload_counts.find({s.client_id, e.task_id});
        if (!ok_protocol || it == r.upload_counts.end() || it->second != 20) ++bad_counts;
      }
    }
    // No uploads outside the streams.
    if (r.upload_counts.size() != run_pairs) ++bad_counts;
    pairs += run_pairs;
    for (const RoundReport& rep : r.reports) {
      for (const TaskRecord& rec : rep.tasks) {
        if (!rec.terms) continue;
        ++records;
        const LossTerms& t = *rec.terms;
        double expect = 0.0;
        if (t.w_s) {
          ++recalibrated;
          const double hist = t.l_task_hist.value_or(0.0) + amr.beta1 * t.l_r1.value_or(0.0);
          const double up = t.l_task_upload.value_or(0.0) + amr.beta2 * t.l_r2.value_or(0.0);
          expect = *t.w_s * hist + (1.0 - *t.w_s) * up;
        } else {
          expect = t.l_task_upload.value_or(0.0) + amr.beta * t.l_r2.value_or(0.0);
        }
        worst = std::max(worst, std::abs(t.total - expect) / std::max(1.0, std::abs(t.total)));
      }
    }
  }
  const bool passed = bad_counts == 0 && pairs > 0 && worst <= 1e-10 && recalibrated > 0;
  return {passed, format("%zu (client, task) pairs, %zu not at 20 uploads; %zu task records (%zu recalibrated), "
                         "worst recomposition error %.1e (tol 1e-10)",
                         pairs, bad_counts, records, recalibrated, worst)};
}

// ---------------------------------------------------------------------------
// 6. Determinism

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "feddah_acceptance_determinism";
  fs::remove_all(root);
  std::size_t files = 0, differing = 0;
  for (Mode mode : {Mode::kFull, Mode::kNoLr, Mode::kNoWs, Mode::kNoDaHyper, Mode::kFedAvgCl, Mode::kLocalOnly}) {
    ExperimentConfig cfg = benchmark_config(mode, 99);
    cfg.hidden = {8};
    cfg.rounds_per_task = 2;
    cfg.epochs = 1;
    cfg.task_options.n = 30;
    for (const char* run : {"a", "b"}) {
      cfg.output_dir = (root / to_string(mode) / run).string();
      (void)run_experiment(cfg);
    }
    for (const char* f : {"metrics.csv", "rounds.jsonl", "checkpoint.fdah"}) {
      const std::string a = slurp(root / to_string(mode) / "a" / f);
      ++files;
      if (a.empty() || a != slurp(root / to_string(mode) / "b" / f)) ++differing;
    }
  }
  fs::remove_all(root);
  return {differing == 0, format("%zu file pairs over 6 modes, %zu differ", files, differing)};
}

void print(int index, const char* name, const Outcome& o) {
  std::printf("[%s] %d. %s: %s\n", o.passed ? "PASS" : "FAIL", index, name, o.detail.c_str());
  std::fflush(stdout);
}

}  // namespace
}  // namespace feddah

int main() {
  using namespace feddah;
  int failed = 0;
  auto report = [&](int index, const char* name, const Outcome& o) {
    print(index, name, o);
    if (!o.passed) ++failed;
  };

  report(1, "gradient suite", gradient_suite());
  report(2, "oracle equivalence", oracle_equivalence());
  report(3, "meta-memorization", meta_memorization());

  const auto t0 = Clock::now();
  std::map<Mode, std::vector<BenchmarkRun>> runs;
  for (Mode mode : ablation_modes()) {
    for (std::uint64_t seed : kSeeds) runs[mode].push_back(run_benchmark(mode, seed));
  }
  const double bench_seconds = seconds_since(t0);
  report(4, "ablation ordering", ablation_ordering(runs, bench_seconds));
  report(5, "same-task improvement", same_task_improvement(runs.at(Mode::kFull), runs.at(Mode::kNoWs)));
  report(6, "determinism", determinism());
  report(7, "protocol conformance", protocol_conformance(runs.at(Mode::kFull)));

  std::printf("%d of 7 criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
