#pragma once

// Run-directory files: trace.csv, metrics.json, metrics.csv, epochs.csv,
// train_log.csv and manifest.json. Headers are frozen; see
// docs/file-formats.md.

#include <filesystem>
#include <string>
#include <vector>

#include "isacbeam/experiments.hpp"

namespace isacbeam {

inline constexpr const char* kTraceHeader = "step,sum_se,oracle_se,reward,regret,optimal,actions";
inline constexpr const char* kEpochsHeader = "epochs,avg_se_regret,avg_sum_se,optimal_fraction";
inline constexpr const char* kReportHeader = "variant,avg_se_regret,avg_sum_se,optimal_fraction";
inline constexpr const char* kMetricsCsvHeader =
    "variant,avg_se_regret,avg_sum_se,optimal_fraction,mean_oracle_se,steps";
inline constexpr const char* kTrainLogHeader = "epoch,step,epsilon,sum_se,reward,update_tick,actions";

// printf %.9g.
std::string format_number(double value);
// "14;22".
std::string format_actions(const BeamAssignment& actions);
BeamAssignment parse_actions(const std::string& field);

void write_trace_csv(const RunMetrics& metrics, const std::filesystem::path& path);
void write_metrics_json(const RunMetrics& metrics, const std::filesystem::path& path);
void write_metrics_csv(const RunMetrics& metrics, const std::filesystem::path& path);
void write_epochs_csv(const std::vector<SweepPoint>& sweep, const std::filesystem::path& path);
void write_train_log_csv(const std::vector<TrainStepLog>& log, const std::filesystem::path& path);

// trace.csv, metrics.json and metrics.csv in `dir`; returns the file names.
std::vector<std::string> write_metrics(const RunMetrics& metrics, const std::filesystem::path& dir);

// Rebuilds per-step records and aggregates from a trace.csv. Throws
// InvalidArgument on a header or field mismatch.
RunMetrics read_trace_csv(const std::filesystem::path& path, std::string variant);

struct ManifestFile {
  std::string name;  // relative to the run directory
  std::string sha256;
};

struct RunManifest {
  int artifact_version = 1;
  std::string command;
  std::string config_json;  // resolved configuration
  std::uint64_t seed = 0;
  std::string scenario_hash;
  std::string codebook_hash;
  std::string started_at;  // ISO 8601 UTC
  std::string finished_at;
  std::string revision;
  std::vector<ManifestFile> files;
};

// Revision string baked in at configure time ("unknown" outside git).
std::string build_revision();
std::string utc_timestamp();

// Checksums every listed file (relative to `dir`) and writes manifest.json.
void write_manifest(RunManifest manifest, const std::vector<std::string>& files,
                    const std::filesystem::path& dir);
RunManifest read_manifest(const std::filesystem::path& path);

struct ReportRow {
  std::string variant;
  std::string run_dir;
  RunMetrics metrics;
};

// Reads <dir>/trace.csv of each run; the variant comes from metrics.json
// when present, else the directory name.
std::vector<ReportRow> collect_report(const std::vector<std::filesystem::path>& run_dirs);
void write_report_csv(const std::vector<ReportRow>& rows, const std::filesystem::path& path);

}  // namespace isacbeam
