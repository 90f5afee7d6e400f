#include "feddah/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "feddah/error.hpp"
#include "feddah/rng.hpp"

namespace feddah {

using nlohmann::json;

const char* to_string(Mode mode) noexcept {
  switch (mode) {
    case Mode::kFull: return "full";
    case Mode::kNoLr: return "no_lr";
    case Mode::kNoWs: return "no_ws";
    case Mode::kNoDaHyper: return "no_dahyper";
    case Mode::kFedAvgCl: return "fedavg_cl";
    case Mode::kLocalOnly: return "local_only";
  }
  return "unknown";
}

Mode parse_mode(const std::string& name) {
  for (Mode m : {Mode::kFull, Mode::kNoLr, Mode::kNoWs, Mode::kNoDaHyper, Mode::kFedAvgCl, Mode::kLocalOnly}) {
    if (name == to_string(m)) return m;
  }
  throw ConfigError("unknown mode '" + name +
                    "' (expected one of: full, no_lr, no_ws, no_dahyper, fedavg_cl, local_only)");
}

std::vector<Mode> ablation_modes() {
  return {Mode::kFull, Mode::kNoLr, Mode::kNoWs, Mode::kNoDaHyper, Mode::kFedAvgCl};
}

bool uses_hypernet(Mode mode) noexcept {
  return mode == Mode::kFull || mode == Mode::kNoLr || mode == Mode::kNoWs;
}

namespace {

void require(bool ok, const std::string& key, const std::string& message) {
  if (!ok) throw ConfigError(key + ": " + message);
}

void validate_task_ids(const ExperimentConfig& cfg) {
  std::set<std::string> seen;
  auto add = [&](const std::string& id, const std::string& key) {
    require(!id.empty(), key, "task ids must be non-empty");
    require(seen.insert(id).second, key, "task '" + id + "' is listed more than once");
  };
  for (const auto& id : cfg.shared_initial) add(id, "tasks.shared_initial");
  for (const auto& id : cfg.shared) add(id, "tasks.shared");
  for (std::size_t c = 0; c < cfg.unique.size(); ++c) {
    for (const auto& id : cfg.unique[c]) add(id, "tasks.unique[" + std::to_string(c) + "]");
  }
}

}  // namespace

void validate(const ExperimentConfig& cfg) {
  require(cfg.clients >= 1, "tasks.clients", "need at least one client");
  require(cfg.unique.empty() || cfg.unique.size() == cfg.clients, "tasks.unique",
          "needs one pool per client (" + std::to_string(cfg.clients) + "), got " + std::to_string(cfg.unique.size()));
  validate_task_ids(cfg);
  require(!cfg.families.empty(), "tasks.families", "needs at least one family");
  const bool classification = is_classification(cfg.families.front());
  for (TaskFamily f : cfg.families) {
    require(is_classification(f) == classification, "tasks.families",
            "cannot mix regression and classification families under one client architecture");
  }
  require(cfg.task_options.n >= 5, "tasks.samples", "needs at least 5 samples for a 4:1 split");
  require(cfg.task_options.d_in >= 1, "tasks.input_dim", "must be positive");
  require(cfg.task_options.noise >= 0.0, "tasks.noise", "must be non-negative");
  for (std::size_t h : cfg.hidden) require(h >= 1, "client.hidden", "layer widths must be positive");
  require(cfg.lr_client > 0.0, "client.lr", "must be positive");
  require(cfg.rounds_per_task >= 1, "federation.rounds_per_task", "must be at least 1");
  require(cfg.n_z >= 1, "hypernet.n_z", "must be positive");
  require(cfg.hidden_size >= 1, "hypernet.hidden", "must be positive");
  require(cfg.mu_spacing >= 0.0, "hypernet.mu_spacing", "must be non-negative");
  require(cfg.sigma > 0.0, "hypernet.sigma", "must be positive");
  require(cfg.lr_server > 0.0, "server.lr", "must be positive");
  require(cfg.beta >= 0.0, "server.beta", "must be non-negative");
  require(cfg.beta1 >= 0.0, "server.beta1", "must be non-negative");
  require(cfg.beta2 >= 0.0, "server.beta2", "must be non-negative");
  require(cfg.bins >= 2, "server.bins", "must be at least 2");
  require(cfg.smoothing > 0.0, "server.smoothing", "must be positive");
}

// ---------------------------------------------------------------------------
// JSON reading

namespace {

/// Walks one JSON object, checking types and collecting the keys it reads so
/// leftovers can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(label() + ": expected an object");
  }

  [[nodiscard]] std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    known_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(key_path(key) + ": expected a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void read(const std::string& key, std::uint64_t& out, int /*tag*/) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(key_path(key) + ": expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void read(const std::string& key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(key_path(key) + ": expected a number");
      out = v->get<double>();
    }
  }
  void read(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(key_path(key) + ": expected a string");
      out = v->get<std::string>();
    }
  }
  void read(const std::string& key, std::vector<std::string>& out) {
    if (const json* v = find(key)) out = strings(*v, key_path(key));
  }
  void read(const std::string& key, std::vector<std::size_t>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(key_path(key) + ": expected an array of integers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_number_unsigned()) {
          throw ConfigError(key_path(key) + "[" + std::to_string(i) + "]: expected a non-negative integer");
        }
        out.push_back((*v)[i].get<std::size_t>());
      }
    }
  }

  static std::vector<std::string> strings(const json& v, const std::string& path) {
    if (!v.is_array()) throw ConfigError(path + ": expected an array of strings");
    std::vector<std::string> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_string()) throw ConfigError(path + "[" + std::to_string(i) + "]: expected a string");
      out.push_back(v[i].get<std::string>());
    }
    return out;
  }

  /// Throws on the first key that was never read.
  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!known_.contains(key)) throw ConfigError("unknown key '" + key_path(key) + "'");
    }
  }

 private:
  [[nodiscard]] std::string label() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> known_;
};

template <typename Fn>
void section(ObjectReader& parent, const std::string& key, Fn&& fn) {
  if (const json* v = parent.find(key)) {
    ObjectReader reader(*v, parent.key_path(key));
    fn(reader);
    reader.finish();
  }
}

template <typename Parse>
auto parse_enum(const std::string& key, const std::string& value, Parse&& parse) {
  try {
    return parse(value);
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

}  // namespace

ExperimentConfig parse_config_json(const std::string& text) {
  json root = json::object();
  try {
    // An empty file means "all defaults".
    if (text.find_first_not_of(" \t\r\n") != std::string::npos) root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (root.is_null()) root = json::object();

  ExperimentConfig cfg;
  ObjectReader top(root, "");
  top.read("seed", cfg.seed, 0);
  std::string mode = to_string(cfg.mode);
  top.read("mode", mode);
  cfg.mode = parse_enum("mode", mode, parse_mode);
  top.read("output_dir", cfg.output_dir);

  section(top, "tasks", [&](ObjectReader& r) {
    r.read("clients", cfg.clients);
    r.read("shared_initial", cfg.shared_initial);
    r.read("shared", cfg.shared);
    if (const json* v = r.find("unique")) {
      if (!v->is_array()) throw ConfigError("tasks.unique: expected an array of arrays");
      cfg.unique.clear();
      for (std::size_t c = 0; c < v->size(); ++c) {
        cfg.unique.push_back(ObjectReader::strings((*v)[c], "tasks.unique[" + std::to_string(c) + "]"));
      }
    }
    if (const json* v = r.find("families")) {
      cfg.families.clear();
      for (const auto& name : ObjectReader::strings(*v, "tasks.families")) {
        cfg.families.push_back(parse_enum("tasks.families", name, parse_task_family));
      }
    }
    r.read("samples", cfg.task_options.n);
    r.read("input_dim", cfg.task_options.d_in);
    r.read("noise", cfg.task_options.noise);
    r.read("poly_degree", cfg.task_options.poly_degree);
  });
  section(top, "client", [&](ObjectReader& r) {
    r.read("hidden", cfg.hidden);
    r.read("epochs", cfg.epochs);
    r.read("lr", cfg.lr_client);
  });
  section(top, "federation", [&](ObjectReader& r) { r.read("rounds_per_task", cfg.rounds_per_task); });
  section(top, "hypernet", [&](ObjectReader& r) {
    r.read("n_z", cfg.n_z);
    r.read("hidden", cfg.hidden_size);
    r.read("mu_spacing", cfg.mu_spacing);
    r.read("sigma", cfg.sigma);
  });
  section(top, "server", [&](ObjectReader& r) {
    r.read("lr", cfg.lr_server);
    r.read("beta", cfg.beta);
    r.read("beta1", cfg.beta1);
    r.read("beta2", cfg.beta2);
    r.read("n_inner", cfg.n_inner);
    r.read("n_server", cfg.n_server);
    r.read("bins", cfg.bins);
    r.read("smoothing", cfg.smoothing);
    std::string reference = to_string(cfg.similarity_reference);
    r.read("similarity_reference", reference);
    cfg.similarity_reference = parse_enum("server.similarity_reference", reference, parse_similarity_reference);
    std::string scope = to_string(cfg.recalibration_scope);
    r.read("recalibration_scope", scope);
    cfg.recalibration_scope = parse_enum("server.recalibration_scope", scope, parse_recalibration_scope);
  });
  top.finish();
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config_json(text.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  j["seed"] = cfg.seed;
  j["mode"] = to_string(cfg.mode);
  j["output_dir"] = cfg.output_dir;
  auto& tasks = j["tasks"];
  tasks["clients"] = cfg.clients;
  tasks["shared_initial"] = cfg.shared_initial;
  tasks["shared"] = cfg.shared;
  tasks["unique"] = cfg.unique;
  std::vector<std::string> families;
  for (TaskFamily f : cfg.families) families.emplace_back(to_string(f));
  tasks["families"] = families;
  tasks["samples"] = cfg.task_options.n;
  tasks["input_dim"] = cfg.task_options.d_in;
  tasks["noise"] = cfg.task_options.noise;
  tasks["poly_degree"] = cfg.task_options.poly_degree;
  j["client"] = {{"hidden", cfg.hidden}, {"epochs", cfg.epochs}, {"lr", cfg.lr_client}};
  j["federation"] = {{"rounds_per_task", cfg.rounds_per_task}};
  auto& hyper = j["hypernet"];
  hyper["n_z"] = cfg.n_z;
  hyper["hidden"] = cfg.hidden_size;
  hyper["mu_spacing"] = cfg.mu_spacing;
  hyper["sigma"] = cfg.sigma;
  auto& server = j["server"];
  server["lr"] = cfg.lr_server;
  server["beta"] = cfg.beta;
  server["beta1"] = cfg.beta1;
  server["beta2"] = cfg.beta2;
  server["n_inner"] = cfg.n_inner;
  server["n_server"] = cfg.n_server;
  server["bins"] = cfg.bins;
  server["smoothing"] = cfg.smoothing;
  server["similarity_reference"] = to_string(cfg.similarity_reference);
  server["recalibration_scope"] = to_string(cfg.recalibration_scope);
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Derived settings

std::vector<TaskDefinition> task_definitions(const ExperimentConfig& cfg) {
  std::vector<std::string> ids = cfg.shared_initial;
  ids.insert(ids.end(), cfg.shared.begin(), cfg.shared.end());
  for (const auto& pool : cfg.unique) ids.insert(ids.end(), pool.begin(), pool.end());
  std::vector<TaskDefinition> defs;
  defs.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    defs.push_back({ids[i], cfg.families[i % cfg.families.size()],
                    derive_seed(cfg.seed, {hash_key("task"), hash_key(ids[i])})});
  }
  return defs;
}

ModelSpec model_spec(const ExperimentConfig& cfg) {
  return ModelSpec::mlp(cfg.task_options.d_in, cfg.hidden, family_output_size(cfg.families.front()));
}

AmrConfig amr_config(const ExperimentConfig& cfg) {
  AmrConfig amr;
  amr.beta = cfg.beta;
  amr.beta1 = cfg.beta1;
  amr.beta2 = cfg.beta2;
  amr.n_inner = cfg.n_inner;
  amr.n_server = cfg.n_server;
  amr.optimizer = OptimizerOptions{OptimizerKind::kAdam, cfg.lr_server};
  amr.bins = cfg.bins;
  amr.smoothing = cfg.smoothing;
  amr.reference = cfg.similarity_reference;
  amr.scope = cfg.recalibration_scope;
  if (cfg.mode == Mode::kNoLr) amr.beta = amr.beta1 = amr.beta2 = 0.0;
  if (cfg.mode == Mode::kNoWs) amr.use_similarity = false;
  return amr;
}

IdentityOptions identity_options(const ExperimentConfig& cfg) {
  return IdentityOptions{cfg.n_z, cfg.mu_spacing, cfg.sigma, derive_seed(cfg.seed, {hash_key("identities")})};
}

}  // namespace feddah
