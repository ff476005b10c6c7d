#include "isacbeam/metrics_io.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "isacbeam/error.hpp"
#include "isacbeam/hash.hpp"

#ifndef ISACBEAM_REVISION
#define ISACBEAM_REVISION "unknown"
#endif

namespace isacbeam {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const fs::path& path) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InvalidArgument(path.string() + ": bad number '" + s + "'");
  }
}

json metrics_to_json(const RunMetrics& m) {
  return json{{"variant", m.variant},
              {"average_se_regret", m.average_se_regret},
              {"average_sum_se", m.average_sum_se},
              {"optimal_action_fraction", m.optimal_action_fraction},
              {"mean_oracle_se", m.mean_oracle_se},
              {"test_steps", m.per_step.size()}};
}

}  // namespace

std::string format_number(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", value);
  return buf;
}

std::string format_actions(const BeamAssignment& actions) {
  std::string out;
  for (std::size_t i = 0; i < actions.actions.size(); ++i) {
    if (i) out += ';';
    out += std::to_string(actions.actions[i]);
  }
  return out;
}

BeamAssignment parse_actions(const std::string& field) {
  if (field.empty()) throw InvalidArgument("empty action list");
  BeamAssignment a;
  for (const std::string& part : split(field, ';')) {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
      throw InvalidArgument("bad action list '" + field + "'");
    }
    a.actions.push_back(std::stoul(part));
  }
  return a;
}

void write_trace_csv(const RunMetrics& metrics, const fs::path& path) {
  std::ofstream out = open_output(path);
  out << kTraceHeader << '\n';
  for (const StepRecord& r : metrics.per_step) {
    out << r.step << ',' << format_number(r.sum_se) << ',' << format_number(r.oracle_se) << ','
        << format_number(r.reward) << ',' << format_number(r.oracle_se - r.sum_se) << ','
        << (r.optimal ? 1 : 0) << ',' << format_actions(r.actions) << '\n';
  }
  finish(out, path);
}

void write_metrics_json(const RunMetrics& metrics, const fs::path& path) {
  std::ofstream out = open_output(path);
  out << metrics_to_json(metrics).dump(2) << '\n';
  finish(out, path);
}

void write_metrics_csv(const RunMetrics& metrics, const fs::path& path) {
  std::ofstream out = open_output(path);
  out << kMetricsCsvHeader << '\n'
      << metrics.variant << ',' << format_number(metrics.average_se_regret) << ','
      << format_number(metrics.average_sum_se) << ','
      << format_number(metrics.optimal_action_fraction) << ','
      << format_number(metrics.mean_oracle_se) << ',' << metrics.per_step.size() << '\n';
  finish(out, path);
}

void write_epochs_csv(const std::vector<SweepPoint>& sweep, const fs::path& path) {
  std::ofstream out = open_output(path);
  out << kEpochsHeader << '\n';
  for (const SweepPoint& p : sweep) {
    out << p.epochs << ',' << format_number(p.metrics.average_se_regret) << ','
        << format_number(p.metrics.average_sum_se) << ','
        << format_number(p.metrics.optimal_action_fraction) << '\n';
  }
  finish(out, path);
}

void write_train_log_csv(const std::vector<TrainStepLog>& log, const fs::path& path) {
  std::ofstream out = open_output(path);
  out << kTrainLogHeader << '\n';
  for (const TrainStepLog& r : log) {
    out << r.epoch << ',' << r.step << ',' << format_number(r.epsilon) << ','
        << format_number(r.sum_se) << ',' << format_number(r.reward) << ','
        << (r.update_tick ? 1 : 0) << ',' << format_actions(r.actions) << '\n';
  }
  finish(out, path);
}

std::vector<std::string> write_metrics(const RunMetrics& metrics, const fs::path& dir) {
  fs::create_directories(dir);
  write_trace_csv(metrics, dir / "trace.csv");
  write_metrics_json(metrics, dir / "metrics.json");
  write_metrics_csv(metrics, dir / "metrics.csv");
  return {"trace.csv", "metrics.json", "metrics.csv"};
}

RunMetrics read_trace_csv(const fs::path& path, std::string variant) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kTraceHeader) {
    throw InvalidArgument(path.string() + ": unexpected trace header");
  }
  std::vector<StepRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> f = split(line, ',');
    if (f.size() != 7) throw InvalidArgument(path.string() + ": expected 7 fields: " + line);
    StepRecord r;
    r.step = static_cast<std::size_t>(parse_double(f[0], path));
    r.sum_se = parse_double(f[1], path);
    r.oracle_se = parse_double(f[2], path);
    r.reward = parse_double(f[3], path);
    if (f[5] != "0" && f[5] != "1") throw InvalidArgument(path.string() + ": bad optimal flag");
    r.optimal = f[5] == "1";
    r.actions = parse_actions(f[6]);
    records.push_back(std::move(r));
  }
  return summarize(std::move(variant), std::move(records));
}

std::string build_revision() { return ISACBEAM_REVISION; }

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(RunManifest manifest, const std::vector<std::string>& files,
                    const fs::path& dir) {
  manifest.files.clear();
  for (const std::string& name : files) manifest.files.push_back({name, sha256_file(dir / name)});
  json inventory = json::array();
  for (const ManifestFile& f : manifest.files) {
    inventory.push_back({{"name", f.name}, {"sha256", f.sha256}});
  }
  const json j{{"artifact_version", manifest.artifact_version},
               {"command", manifest.command},
               {"config", json::parse(manifest.config_json)},
               {"seed", manifest.seed},
               {"scenario_hash", manifest.scenario_hash},
               {"codebook_hash", manifest.codebook_hash},
               {"started_at", manifest.started_at},
               {"finished_at", manifest.finished_at},
               {"revision", manifest.revision},
               {"files", inventory}};
  const fs::path path = dir / "manifest.json";
  std::ofstream out = open_output(path);
  out << j.dump(2) << '\n';
  finish(out, path);
}

RunManifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  try {
    const json j = json::parse(in);
    RunManifest m;
    m.artifact_version = j.at("artifact_version").get<int>();
    m.command = j.at("command").get<std::string>();
    m.config_json = j.at("config").dump();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.scenario_hash = j.at("scenario_hash").get<std::string>();
    m.codebook_hash = j.at("codebook_hash").get<std::string>();
    m.started_at = j.at("started_at").get<std::string>();
    m.finished_at = j.at("finished_at").get<std::string>();
    m.revision = j.at("revision").get<std::string>();
    for (const json& f : j.at("files")) {
      m.files.push_back({f.at("name").get<std::string>(), f.at("sha256").get<std::string>()});
    }
    return m;
  } catch (const json::exception& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
}

std::vector<ReportRow> collect_report(const std::vector<fs::path>& run_dirs) {
  std::vector<ReportRow> rows;
  for (const fs::path& dir : run_dirs) {
    std::string variant = dir.filename().string();
    if (variant.empty()) variant = dir.parent_path().filename().string();
    const fs::path mj = dir / "metrics.json";
    if (fs::exists(mj)) {
      std::ifstream in(mj, std::ios::binary);
      try {
        variant = json::parse(in).at("variant").get<std::string>();
      } catch (const json::exception& e) {
        throw InvalidArgument(mj.string() + ": " + e.what());
      }
    }
    rows.push_back({variant, dir.string(), read_trace_csv(dir / "trace.csv", variant)});
  }
  return rows;
}

void write_report_csv(const std::vector<ReportRow>& rows, const fs::path& path) {
  std::ofstream out = open_output(path);
  out << kReportHeader << '\n';
  for (const ReportRow& r : rows) {
    out << r.variant << ',' << format_number(r.metrics.average_se_regret) << ','
        << format_number(r.metrics.average_sum_se) << ','
        << format_number(r.metrics.optimal_action_fraction) << '\n';
  }
  finish(out, path);
}

}  // namespace isacbeam
