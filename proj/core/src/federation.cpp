#include "feddah/federation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "feddah/error.hpp"
#include "feddah/rng.hpp"

namespace feddah {

std::vector<TaskStream> build_streams(const ExperimentConfig& cfg, std::uint64_t seed) {
  std::set<std::string> seen;
  auto claim = [&](const std::string& id, const char* where) {
    if (!seen.insert(id).second) throw ConfigError(std::string(where) + ": task '" + id + "' is assigned twice");
  };
  for (const auto& id : cfg.shared_initial) claim(id, "tasks.shared_initial");
  for (const auto& id : cfg.shared) claim(id, "tasks.shared");
  for (const auto& pool : cfg.unique) {
    for (const auto& id : pool) claim(id, "tasks.unique");
  }
  if (!cfg.unique.empty() && cfg.unique.size() != cfg.clients) {
    throw ConfigError("tasks.unique: needs one pool per client");
  }

  std::vector<TaskStream> streams;
  for (std::size_t c = 0; c < cfg.clients; ++c) {
    TaskStream s;
    s.client_id = c;
    s.shared_initial = cfg.shared_initial;
    if (!cfg.unique.empty()) s.unique = cfg.unique[c];
    std::vector<std::string> pool = cfg.shared;
    pool.insert(pool.end(), s.unique.begin(), s.unique.end());
    Rng rng = make_rng(seed, {hash_key("stream"), c});
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<std::string> order = cfg.shared_initial;
    order.insert(order.end(), pool.begin(), pool.end());
    for (std::size_t k = 0; k < order.size(); ++k) s.entries.push_back({order[k], k * cfg.rounds_per_task});
    streams.push_back(std::move(s));
  }
  return streams;
}

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ModelWeights average(const std::vector<const ModelWeights*>& models) {
  ModelWeights out = *models.front();
  for (std::size_t m = 1; m < models.size(); ++m) {
    for (std::size_t j = 0; j < out.layers.size(); ++j) {
      auto k = out.layers[j].kernel.data();
      auto b = out.layers[j].bias.data();
      const auto mk = models[m]->layers[j].kernel.data();
      const auto mb = models[m]->layers[j].bias.data();
      for (std::size_t i = 0; i < k.size(); ++i) k[i] += mk[i];
      for (std::size_t i = 0; i < b.size(); ++i) b[i] += mb[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(models.size());
  for (auto& layer : out.layers) {
    for (double& v : layer.kernel.data()) v *= inv;
    for (double& v : layer.bias.data()) v *= inv;
  }
  return out;
}

double distance(const ModelWeights& a, const ModelWeights& b) { return std::sqrt(model_squared_distance(a, b)); }

void append_model(Checkpoint& ckpt, const std::string& prefix, const ModelWeights& w) {
  for (std::size_t j = 0; j < w.layers.size(); ++j) {
    ckpt.tensors.push_back({prefix + "." + std::to_string(j) + ".kernel", w.layers[j].kernel});
    ckpt.tensors.push_back({prefix + "." + std::to_string(j) + ".bias", w.layers[j].bias});
  }
}

}  // namespace

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "round,client_id,eval_task_id,test_loss,test_accuracy\n";
  for (const MetricsRow& r : rows) {
    out += std::to_string(r.round) + "," + std::to_string(r.client_id) + "," + r.eval_task_id + "," +
           format_double(r.test_loss) + "," + (r.test_accuracy ? format_double(*r.test_accuracy) : "") + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Simulation

Simulation::Simulation(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
  validate(cfg_);
  spec_ = model_spec(cfg_);
  defs_ = task_definitions(cfg_);
  streams_ = build_streams(cfg_, cfg_.seed);

  data_.resize(cfg_.clients);
  for (std::size_t c = 0; c < cfg_.clients; ++c) {
    for (const TaskDefinition& d : defs_) {
      data_[c].emplace(d.task_id, make_task(d.family, d.seed, cfg_.task_options, d.task_id, c));
    }
  }

  if (uses_hypernet(cfg_.mode)) {
    state_.server = make_server_state(spec_, amr_config(cfg_), identity_options(cfg_), cfg_.hidden_size,
                                      derive_seed(cfg_.seed, {hash_key("server")}));
  }
  if (cfg_.mode == Mode::kFedAvgCl) {
    Rng rng = make_rng(cfg_.seed, {hash_key("init"), hash_key("global")});
    state_.global = random_init(spec_, rng);
  }
  state_.clients.resize(cfg_.clients);
  for (std::size_t c = 0; c < cfg_.clients; ++c) {
    ClientProgress& p = state_.clients[c];
    p.weights = streams_[c].entries.empty() ? ModelWeights::zeros(spec_)
                                            : warm_start(state_, c, streams_[c].entries.front().task_id, 0);
  }
}

bool Simulation::finished() const {
  for (std::size_t c = 0; c < cfg_.clients; ++c) {
    if (state_.clients[c].entry < streams_[c].entries.size()) return false;
  }
  return true;
}

std::optional<std::string> Simulation::current_task(std::size_t c) const {
  const ClientProgress& p = state_.clients.at(c);
  if (p.entry >= streams_[c].entries.size()) return std::nullopt;
  return streams_[c].entries[p.entry].task_id;
}

const SyntheticTask& Simulation::data(std::size_t c, const std::string& task_id) const {
  const auto& tasks = data_.at(c);
  const auto it = tasks.find(task_id);
  if (it == tasks.end()) throw UsageError("unknown task '" + task_id + "'");
  return it->second;
}

ModelWeights Simulation::allocation(const State& s, std::size_t c, const std::string& task_id) const {
  switch (cfg_.mode) {
    case Mode::kFull:
    case Mode::kNoLr:
    case Mode::kNoWs:
      return generate_model(s.server->hp, s.server->identities.at(task_id), spec_);
    case Mode::kNoDaHyper:
      return s.store.at(task_id);
    case Mode::kFedAvgCl:
      return s.global;
    case Mode::kLocalOnly:
      return s.clients[c].weights;
  }
  return s.clients[c].weights;
}

ModelWeights Simulation::warm_start(const State& s, std::size_t c, const std::string& task_id,
                                    std::size_t start_round) const {
  bool known = false;
  switch (cfg_.mode) {
    case Mode::kFull:
    case Mode::kNoLr:
    case Mode::kNoWs:
      known = s.server->registry.contains(task_id);
      break;
    case Mode::kNoDaHyper:
      known = s.store.contains(task_id);
      break;
    case Mode::kFedAvgCl:
      return s.global;
    case Mode::kLocalOnly:
      // A client on its own carries its weights from task to task.
      if (!s.clients[c].weights.layers.empty()) return s.clients[c].weights;
      break;
  }
  if (known) return allocation(s, c, task_id);
  Rng rng = make_rng(cfg_.seed, {hash_key("init"), c, start_round});
  return random_init(spec_, rng);
}

ModelWeights Simulation::evaluation_model(const State& s, std::size_t c, const std::string& task_id) const {
  switch (cfg_.mode) {
    case Mode::kFull:
    case Mode::kNoLr:
    case Mode::kNoWs:
      if (s.server->identities.contains(task_id)) return allocation(s, c, task_id);
      break;
    case Mode::kNoDaHyper:
      if (s.store.contains(task_id)) return s.store.at(task_id);
      break;
    case Mode::kFedAvgCl:
      return s.global;
    case Mode::kLocalOnly:
      break;
  }
  return s.clients[c].weights;
}

ModelWeights Simulation::evaluation_model(std::size_t c, const std::string& task_id) const {
  return evaluation_model(state_, c, task_id);
}

RoundReport Simulation::server_phase(State& s, const std::vector<ClientUpdate>& uploads) const {
  if (s.server) {
    for (const ClientUpdate& u : uploads) {
      if (!s.server->identities.contains(u.task_id)) s.server->identities.register_task(u.task_id);
    }
    return server_update(*s.server, uploads, s.round);
  }

  // Baselines: group as the server does, ascending client id inside a group.
  RoundReport report;
  report.round = s.round;
  std::vector<std::string> order;
  std::map<std::string, std::vector<const ClientUpdate*>> groups;
  for (const ClientUpdate& u : uploads) {
    auto& g = groups[u.task_id];
    if (g.empty()) order.push_back(u.task_id);
    g.push_back(&u);
  }

  ModelWeights global_before = s.global;
  if (cfg_.mode == Mode::kFedAvgCl && !uploads.empty()) {
    std::vector<const ModelWeights*> all;
    for (const ClientUpdate& u : uploads) all.push_back(&u.weights);
    s.global = average(all);
  }
  for (const std::string& task_id : order) {
    TaskRecord record;
    record.round = s.round;
    record.task_id = task_id;
    std::vector<const ModelWeights*> models;
    for (const ClientUpdate* u : groups[task_id]) {
      record.client_ids.push_back(u->client_id);
      models.push_back(&u->weights);
    }
    if (cfg_.mode == Mode::kNoDaHyper) {
      ModelWeights next = average(models);
      const auto it = s.store.find(task_id);
      record.delta_norm = it == s.store.end() ? std::sqrt(model_squared_distance(next, ModelWeights::zeros(spec_)))
                                              : distance(next, it->second);
      s.store[task_id] = std::move(next);
    } else if (cfg_.mode == Mode::kFedAvgCl) {
      record.delta_norm = distance(s.global, global_before);
    }
    report.tasks.push_back(std::move(record));
  }
  return report;
}

void Simulation::record_metrics(State& s) const {
  // Generated models do not depend on the client.
  std::map<std::string, ModelWeights> generated;
  if (s.server) {
    for (const TaskIdentity& id : s.server->identities.identities()) {
      generated.emplace(id.task_id, generate_model(s.server->hp, id, spec_));
    }
  }
  for (std::size_t c = 0; c < cfg_.clients; ++c) {
    for (const TaskDefinition& d : defs_) {
      const auto it = generated.find(d.task_id);
      const EvalResult r = evaluate(spec_, it != generated.end() ? it->second : evaluation_model(s, c, d.task_id),
                                    data(c, d.task_id));
      s.metrics.push_back({s.round, c, d.task_id, r.loss, r.accuracy});
    }
  }
  auto basic_loss = [&](const std::string& task_id, const ModelWeights& w) {
    double sum = 0.0;
    for (std::size_t c = 0; c < cfg_.clients; ++c) sum += evaluate(spec_, w, data(c, task_id)).loss;
    s.basic_losses.push_back({s.round, task_id, sum / static_cast<double>(cfg_.clients)});
  };
  if (s.server) {
    for (const TaskIdentity& id : s.server->identities.identities()) {
      const auto it = s.server->registry.find(id.task_id);
      if (it != s.server->registry.end()) basic_loss(id.task_id, it->second.weights);
    }
  } else if (cfg_.mode == Mode::kNoDaHyper) {
    for (const auto& [task_id, w] : s.store) basic_loss(task_id, w);
  }
}

RoundReport Simulation::run_round() {
  State next = state_;

  std::vector<ClientUpdate> uploads;
  for (std::size_t c = 0; c < cfg_.clients; ++c) {
    const ClientProgress& p = next.clients[c];
    if (p.entry >= streams_[c].entries.size()) continue;
    const std::string& task_id = streams_[c].entries[p.entry].task_id;
    TrainOptions options{cfg_.epochs, cfg_.lr_client, derive_seed(cfg_.seed, {hash_key("train"), c, next.round})};
    uploads.push_back(make_update(c, next.round, data(c, task_id), local_train(spec_, p.weights, data(c, task_id), options)));
  }
  if (uploads.empty()) {
    state_.round += 1;
    return RoundReport{state_.round - 1, {}};
  }

  // Local-only clients keep what they trained.
  for (const ClientUpdate& u : uploads) {
    next.upload_counts[{u.client_id, u.task_id}] += 1;
    if (cfg_.mode == Mode::kLocalOnly) next.clients[u.client_id].weights = u.weights;
  }

  RoundReport report = server_phase(next, uploads);

  for (const ClientUpdate& u : uploads) {
    const std::size_t c = u.client_id;
    ClientProgress& p = next.clients[c];
    p.rounds_on_task += 1;
    if (p.rounds_on_task < cfg_.rounds_per_task) {
      p.weights = allocation(next, c, u.task_id);
      continue;
    }
    p.entry += 1;
    p.rounds_on_task = 0;
    if (p.entry < streams_[c].entries.size()) {
      p.weights = warm_start(next, c, streams_[c].entries[p.entry].task_id, next.round + 1);
    } else {
      p.weights = allocation(next, c, u.task_id);
    }
  }

  record_metrics(next);
  next.reports.push_back(report);
  next.round += 1;
  state_ = std::move(next);
  return report;
}

void Simulation::run() {
  while (!finished()) run_round();
}

Checkpoint Simulation::checkpoint() const {
  Checkpoint ckpt;
  if (state_.server) {
    append_hyperparams(ckpt, state_.server->hp);
    ckpt.identities.assign(state_.server->identities.identities().begin(),
                           state_.server->identities.identities().end());
    for (const TaskIdentity& id : state_.server->identities.identities()) {
      const auto it = state_.server->registry.find(id.task_id);
      if (it != state_.server->registry.end()) append_model(ckpt, "basic." + id.task_id, it->second.weights);
    }
  } else if (cfg_.mode == Mode::kNoDaHyper) {
    for (const auto& [task_id, w] : state_.store) append_model(ckpt, "store." + task_id, w);
  } else if (cfg_.mode == Mode::kFedAvgCl) {
    append_model(ckpt, "global", state_.global);
  } else {
    for (std::size_t c = 0; c < cfg_.clients; ++c) {
      append_model(ckpt, "client." + std::to_string(c), state_.clients[c].weights);
    }
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// Experiment

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  Simulation sim(cfg);
  sim.run();

  const std::filesystem::path dir = cfg.output_dir;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  ExperimentResult result;
  result.rounds = sim.round();
  result.metrics_path = dir / "metrics.csv";
  result.rounds_path = dir / "rounds.jsonl";
  result.checkpoint_path = dir / "checkpoint.fdah";

  write_text(result.metrics_path, metrics_csv(sim.metrics()));
  std::string jsonl;
  for (const RoundReport& r : sim.reports()) jsonl += to_jsonl(r);
  write_text(result.rounds_path, jsonl);
  save_checkpoint(result.checkpoint_path, sim.checkpoint());
  write_text(dir / "config.json", serialize_config(cfg));

  if (!sim.metrics().empty()) {
    const std::size_t last = sim.metrics().back().round;
    for (const MetricsRow& r : sim.metrics()) {
      if (r.round == last) result.final_evaluations.push_back({r.client_id, r.eval_task_id, r.test_loss, r.test_accuracy});
    }
  }
  return result;
}

}  // namespace feddah
