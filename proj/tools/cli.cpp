#include "cli.hpp"

#include <cstdlib>
#include <iomanip>
#include <ostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "feddah/error.hpp"
#include "feddah/federation.hpp"
#include "feddah/metrics.hpp"

namespace feddah::cli {

namespace fs = std::filesystem;

ExperimentConfig resolve_config(const std::optional<fs::path>& file, const Overrides& o) {
  ExperimentConfig cfg = file ? load_config(*file) : ExperimentConfig{};
  if (const char* env = std::getenv("FEDDAH_OUT"); env != nullptr && *env != '\0') cfg.output_dir = env;

  auto apply = [](auto& field, const auto& value) {
    if (value) field = *value;
  };
  apply(cfg.seed, o.seed);
  if (o.mode) cfg.mode = parse_mode(*o.mode);
  apply(cfg.output_dir, o.output_dir);
  apply(cfg.epochs, o.epochs);
  apply(cfg.rounds_per_task, o.rounds_per_task);
  apply(cfg.n_z, o.n_z);
  apply(cfg.hidden_size, o.hidden_size);
  apply(cfg.mu_spacing, o.mu_spacing);
  apply(cfg.sigma, o.sigma);
  apply(cfg.lr_client, o.lr_client);
  apply(cfg.lr_server, o.lr_server);
  apply(cfg.beta, o.beta);
  apply(cfg.beta1, o.beta1);
  apply(cfg.beta2, o.beta2);
  apply(cfg.n_inner, o.n_inner);
  apply(cfg.n_server, o.n_server);
  apply(cfg.bins, o.bins);
  apply(cfg.smoothing, o.smoothing);
  if (o.similarity_reference) cfg.similarity_reference = parse_similarity_reference(*o.similarity_reference);
  if (o.recalibration_scope) cfg.recalibration_scope = parse_recalibration_scope(*o.recalibration_scope);
  validate(cfg);
  return cfg;
}

fs::path ablation_dir(const fs::path& root, Mode mode, std::optional<std::uint64_t> seed) {
  fs::path dir = root / to_string(mode);
  if (seed) dir /= "seed_" + std::to_string(*seed);
  return dir;
}

namespace {

void add_overrides(CLI::App& cmd, Overrides& o, bool with_seed) {
  if (with_seed) cmd.add_option("--seed", o.seed, "Master seed");
  cmd.add_option("--mode", o.mode, "full, no_lr, no_ws, no_dahyper, fedavg_cl or local_only");
  cmd.add_option("-o,--output", o.output_dir, "Output directory");
  cmd.add_option("--epochs", o.epochs, "Local epochs per round (E)");
  cmd.add_option("--rounds-per-task", o.rounds_per_task, "Rounds per task (T)");
  cmd.add_option("--n-z", o.n_z, "Task identity size");
  cmd.add_option("--hidden-size", o.hidden_size, "Hypernetwork hidden size d");
  cmd.add_option("--mu-spacing", o.mu_spacing, "Identity mean spacing");
  cmd.add_option("--sigma", o.sigma, "Identity standard deviation");
  cmd.add_option("--lr-client", o.lr_client, "Client learning rate");
  cmd.add_option("--lr-server", o.lr_server, "Server learning rate");
  cmd.add_option("--beta", o.beta, "L_R coefficient for new tasks");
  cmd.add_option("--beta1", o.beta1, "L_R1 coefficient");
  cmd.add_option("--beta2", o.beta2, "L_R2 coefficient");
  cmd.add_option("--n-inner", o.n_inner, "Optimizer steps per candidate change");
  cmd.add_option("--n-server", o.n_server, "Server steps per upload");
  cmd.add_option("--bins", o.bins, "Histogram bins for W_s");
  cmd.add_option("--smoothing", o.smoothing, "Histogram smoothing");
  cmd.add_option("--similarity-reference", o.similarity_reference, "generated or upload");
  cmd.add_option("--recalibration-scope", o.recalibration_scope, "cross_session or all");
}

void print_final(std::ostream& out, const ExperimentResult& r) {
  out << "rounds " << r.rounds << "\n";
  out << "client task test_loss test_accuracy\n";
  for (const FinalEvaluation& e : r.final_evaluations) {
    out << e.client_id << ' ' << e.task_id << ' ' << std::setprecision(6) << e.test_loss << ' ';
    if (e.test_accuracy) {
      out << *e.test_accuracy;
    } else {
      out << '-';
    }
    out << '\n';
  }
  out << "wrote " << r.metrics_path.string() << ", " << r.rounds_path.string() << ", " << r.checkpoint_path.string()
      << "\n";
}

void print_error(std::ostream& err, const std::string& command, const char* kind, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = {{"command", command}, {"kind", kind}, {"message", message}};
  err << j.dump() << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"FedDAH federated continual learning simulator"};
  app.require_subcommand(1);

  std::optional<fs::path> config_path;
  Overrides run_overrides;
  auto* run_cmd = app.add_subcommand("run", "Run one experiment");
  run_cmd->add_option("-c,--config", config_path, "Config file (JSON)")->check(CLI::ExistingFile);
  add_overrides(*run_cmd, run_overrides, true);

  std::optional<fs::path> ablate_config;
  std::vector<std::uint64_t> seeds;
  Overrides ablate_overrides;
  auto* ablate_cmd = app.add_subcommand("ablate", "Run every ablation mode over a seed set");
  ablate_cmd->add_option("-c,--config", ablate_config, "Config file (JSON)")->check(CLI::ExistingFile);
  ablate_cmd->add_option("--seeds", seeds, "Comma-separated seeds")->delimiter(',');
  add_overrides(*ablate_cmd, ablate_overrides, false);

  fs::path report_dir;
  auto* report_cmd = app.add_subcommand("report", "Summarize an output directory");
  report_cmd->add_option("-d,--dir", report_dir, "Directory holding metrics.csv files")->required();

  std::vector<std::string> argv_storage;
  argv_storage.reserve(args.size() + 1);
  argv_storage.emplace_back("feddah");
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_storage) argv.push_back(a.c_str());

  const std::string command = args.empty() ? "" : args.front();
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    print_error(err, command, "usage", e.what());
    return 2;
  }

  try {
    if (*run_cmd) {
      const ExperimentConfig cfg = resolve_config(config_path, run_overrides);
      print_final(out, run_experiment(cfg));
    } else if (*ablate_cmd) {
      const ExperimentConfig base = resolve_config(ablate_config, ablate_overrides);
      std::vector<std::optional<std::uint64_t>> seed_list;
      if (seeds.empty()) {
        seed_list.emplace_back(std::nullopt);
      } else {
        seed_list.assign(seeds.begin(), seeds.end());
      }
      for (Mode mode : ablation_modes()) {
        for (const auto& seed : seed_list) {
          ExperimentConfig cfg = base;
          cfg.mode = mode;
          if (seed) cfg.seed = *seed;
          cfg.output_dir = ablation_dir(base.output_dir, mode, seed).string();
          const ExperimentResult r = run_experiment(cfg);
          out << to_string(mode) << " seed " << cfg.seed << ": " << r.rounds << " rounds -> " << cfg.output_dir
              << "\n";
        }
      }
    } else if (*report_cmd) {
      out << summary_json(write_report(report_dir));
    }
  } catch (const Error& e) {
    print_error(err, command, e.kind(), e.what());
    return e.kind() == std::string("config") || e.kind() == std::string("usage") ? 2 : 1;
  } catch (const std::exception& e) {
    print_error(err, command, "internal", e.what());
    return 1;
  }
  return 0;
}

}  // namespace feddah::cli
