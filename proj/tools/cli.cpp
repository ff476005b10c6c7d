#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "isacbeam/error.hpp"
#include "isacbeam/experiments.hpp"
#include "isacbeam/metrics_io.hpp"

namespace isacbeam::cli {
namespace {

namespace fs = std::filesystem;

struct CommonOptions {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string scenario;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void add_common(CLI::App& cmd, CommonOptions& o, bool run_producing) {
  cmd.add_option("--config", o.config, "INI config file")->check(CLI::ExistingFile);
  cmd.add_option("--set", o.sets, "Override a config key: section.key=value")->take_all();
  cmd.add_option("--scenario", o.scenario, "Preset name or scenario file");
  cmd.add_option("--seed", o.seed, run_producing ? "Training seed (required)" : "Training seed");
  cmd.add_option("--out", o.out, "Output directory (required)");
}

RunConfig resolve(const CommonOptions& o, bool need_seed, const CLI::App& cmd) {
  if (o.out.empty()) throw UsageError("--out is required\n" + cmd.help());
  if (need_seed && !o.seed) throw UsageError("--seed is required\n" + cmd.help());
  std::vector<std::string> sets = o.sets;
  if (!o.scenario.empty()) {
    const auto names = scenario_preset_names();
    const bool preset = std::find(names.begin(), names.end(), o.scenario) != names.end();
    sets.push_back(std::string(preset ? "scenario.preset=" : "scenario.file=") + o.scenario);
  }
  RunConfig cfg = load_config(o.config.empty() ? std::nullopt
                                               : std::optional<fs::path>(o.config),
                              sets);
  if (o.seed) cfg.spec.training.seed = *o.seed;
  cfg.spec.output_dir = o.out;
  return cfg;
}

void print_metrics(std::ostream& out, const RunMetrics& m) {
  out << m.variant << ": avg_se_regret=" << format_number(m.average_se_regret)
      << " avg_sum_se=" << format_number(m.average_sum_se)
      << " optimal_fraction=" << format_number(m.optimal_action_fraction) << '\n';
}

std::vector<std::size_t> parse_epoch_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("bad epoch list '" + text + "'");
    }
    out.push_back(std::stoul(item));
  }
  return out;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"isacbeam: ISAC-aided beam selection experiments"};
  app.require_subcommand(1);

  CommonOptions gen_o, oracle_o, train_o, sweep_o, transfer_o, baseline_o;
  auto* gen = app.add_subcommand("gen-scenario", "Build a scenario trace and write scenario.bin");
  add_common(*gen, gen_o, false);
  auto* oracle = app.add_subcommand("oracle", "Precompute the exhaustive-search oracle cache");
  add_common(*oracle, oracle_o, false);
  auto* train = app.add_subcommand("train", "Train and evaluate one experiment arm");
  add_common(*train, train_o, true);
  auto* sweep = app.add_subcommand("sweep", "Evaluate one training run after several epoch counts");
  add_common(*sweep, sweep_o, true);
  std::string epochs_flag;
  sweep->add_option("--epochs", epochs_flag, "Ascending comma-separated epoch counts");
  auto* transfer = app.add_subcommand("transfer", "Transfer a single-user checkpoint and fine-tune");
  add_common(*transfer, transfer_o, true);
  std::string checkpoint;
  std::optional<std::size_t> ft_epochs;
  transfer->add_option("--checkpoint", checkpoint, "Source checkpoint");
  transfer->add_option("--fine-tune-epochs", ft_epochs, "Fine-tuning epochs");
  auto* baseline = app.add_subcommand("baseline", "Random or exhaustive baseline arm");
  add_common(*baseline, baseline_o, true);
  std::string baseline_variant = "random";
  baseline->add_option("--variant", baseline_variant, "random or exhaustive")
      ->check(CLI::IsMember({"random", "exhaustive"}));
  auto* report = app.add_subcommand("report", "Aggregate run directories into one summary CSV");
  std::vector<std::string> report_dirs;
  std::string report_out;
  report->add_option("runs", report_dirs, "Run directories")->required()->check(CLI::ExistingDirectory);
  report->add_option("--out", report_out, "Output CSV path (or directory)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n' << app.help();
    return kExitUsage;
  }

  // Configuration problems are usage errors; everything after is runtime.
  RunConfig cfg;
  try {
    if (*gen) cfg = resolve(gen_o, false, *gen);
    if (*oracle) cfg = resolve(oracle_o, false, *oracle);
    if (*train) cfg = resolve(train_o, true, *train);
    if (*sweep) {
      cfg = resolve(sweep_o, true, *sweep);
      if (!epochs_flag.empty()) cfg.epoch_list = parse_epoch_list(epochs_flag);
    }
    if (*transfer) {
      cfg = resolve(transfer_o, true, *transfer);
      if (!checkpoint.empty()) cfg.source_checkpoint = checkpoint;
      if (ft_epochs) cfg.fine_tune_epochs = *ft_epochs;
      if (cfg.source_checkpoint.empty()) {
        throw UsageError("--checkpoint (or experiment.source_checkpoint) is required\n" +
                         transfer->help());
      }
    }
    if (*baseline) {
      cfg = resolve(baseline_o, true, *baseline);
      cfg.spec.variant = parse_variant(baseline_variant);
    }
    if (!*report) cfg.spec.validate();
  } catch (const UsageError& e) {
    err << "error: " << e.what();
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    const ExperimentSpec& spec = cfg.spec;
    if (*gen) {
      const std::string started = utc_timestamp();
      const ScenarioTrace trace = resolve_scenario(spec);
      fs::create_directories(spec.output_dir);
      save_scenario(trace, spec.output_dir / "scenario.bin");
      RunManifest m;
      m.command = "gen-scenario";
      m.config_json = experiment_spec_to_json(spec);
      m.seed = spec.training.seed;
      m.scenario_hash = scenario_hash(trace);
      m.codebook_hash = codebook_hash(scenario_codebook(trace.config));
      m.started_at = started;
      m.finished_at = utc_timestamp();
      m.revision = build_revision();
      write_manifest(m, {"scenario.bin"}, spec.output_dir);
      out << "wrote " << (spec.output_dir / "scenario.bin").string() << " (" << trace.states.size()
          << " steps, " << trace.config.n_users << " users)\n";
    } else if (*oracle) {
      const ScenarioTrace trace = resolve_scenario(spec);
      std::string warning;
      const OracleTable table = cached_oracle(trace, scenario_codebook(trace.config),
                                              spec.output_dir, spec.workers, &warning);
      if (!warning.empty()) err << "warning: " << warning << '\n';
      double mean = 0.0;
      for (const OracleResult& r : table.per_step) mean += r.sum_se;
      out << "oracle for " << table.per_step.size() << " steps in " << spec.output_dir.string()
          << " (mean sum SE " << format_number(mean / static_cast<double>(table.per_step.size()))
          << ")\n";
    } else if (*train || *baseline) {
      print_metrics(out, run_experiment(spec).metrics);
    } else if (*sweep) {
      for (const SweepPoint& p : epoch_sweep(spec, cfg.epoch_list)) {
        out << "epochs=" << p.epochs << ' ';
        print_metrics(out, p.metrics);
      }
    } else if (*transfer) {
      const TransferResult r =
          transfer_experiment(fs::path(cfg.source_checkpoint), spec, cfg.fine_tune_epochs);
      print_metrics(out, r.before);
      print_metrics(out, r.after);
    } else if (*report) {
      std::vector<fs::path> dirs(report_dirs.begin(), report_dirs.end());
      fs::path path = report_out;
      if (fs::is_directory(path)) path /= "report.csv";
      const std::vector<ReportRow> rows = collect_report(dirs);
      write_report_csv(rows, path);
      for (const ReportRow& row : rows) print_metrics(out, row.metrics);
      out << "wrote " << path.string() << '\n';
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace isacbeam::cli
