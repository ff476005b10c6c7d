#include <cstring>
#include <filesystem>

#include "binary_io.hpp"
#include "isacbeam/error.hpp"
#include "isacbeam/experiments.hpp"
#include "isacbeam/hash.hpp"
#include "isacbeam/parallel.hpp"

namespace isacbeam {
namespace {

constexpr char kMagic[8] = {'I', 'S', 'A', 'C', 'O', 'R', 'C', 'L'};
constexpr std::uint32_t kOracleVersion = 1;

}  // namespace

std::string scenario_hash(const ScenarioTrace& trace) {
  return sha256_hex(serialize_scenario(trace));
}

std::string codebook_hash(const BeamCodebook& codebook) {
  detail::ByteWriter w;
  w.put(static_cast<std::uint64_t>(codebook.size()));
  w.put(static_cast<std::uint64_t>(codebook.antennas()));
  for (std::size_t m = 0; m < codebook.size(); ++m) {
    w.put(static_cast<std::uint64_t>(codebook.source_indices[m]));
    for (const Complex& c : codebook.vectors[m]) {
      w.put(c.real());
      w.put(c.imag());
    }
  }
  return sha256_hex(w.bytes());
}

OracleTable precompute_oracle(const ScenarioTrace& trace, const BeamCodebook& codebook,
                              std::size_t workers) {
  OracleTable table;
  table.scenario_hash = scenario_hash(trace);
  table.codebook_hash = codebook_hash(codebook);
  table.per_step.resize(trace.states.size());
  parallel_for(trace.states.size(), workers, [&](std::size_t s) {
    table.per_step[s] = exhaustive_search(trace.states[s].channels, codebook, trace.budget);
  });
  return table;
}

void save_oracle_table(const OracleTable& table, const std::filesystem::path& path) {
  detail::ByteWriter w;
  w.put_bytes(kMagic, sizeof kMagic);
  w.put(kOracleVersion);
  w.put_string(table.scenario_hash);
  w.put_string(table.codebook_hash);
  const std::uint32_t k = table.per_step.empty()
                              ? 0
                              : static_cast<std::uint32_t>(table.per_step.front().assignment.actions.size());
  w.put(static_cast<std::uint64_t>(table.per_step.size()));
  w.put(k);
  for (const OracleResult& r : table.per_step) {
    if (r.assignment.actions.size() != k) throw InvalidArgument("oracle rows disagree on user count");
    for (std::size_t a : r.assignment.actions) w.put(static_cast<std::uint32_t>(a));
    w.put(r.sum_se);
  }
  detail::write_file(path.string(), w.bytes());
}

OracleTable load_oracle_table(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = detail::read_file(path.string());
  detail::ByteReader r(bytes.data(), bytes.size());
  try {
    char magic[sizeof kMagic];
    r.get_bytes(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
      throw InvalidArgument("not an oracle cache file");
    }
    if (r.get<std::uint32_t>() != kOracleVersion) {
      throw InvalidArgument("unsupported oracle cache version");
    }
    OracleTable table;
    table.scenario_hash = r.get_string();
    table.codebook_hash = r.get_string();
    const auto n = r.get<std::uint64_t>();
    const auto k = r.get<std::uint32_t>();
    if (n > r.remaining() / (4ull * k + 8)) throw InvalidArgument("oracle cache is truncated");
    table.per_step.resize(n);
    for (OracleResult& row : table.per_step) {
      row.assignment.actions.resize(k);
      for (std::size_t& a : row.assignment.actions) a = r.get<std::uint32_t>();
      row.sum_se = r.get<double>();
    }
    if (r.remaining() != 0) throw InvalidArgument("trailing bytes in oracle cache");
    return table;
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
}

OracleTable cached_oracle(const ScenarioTrace& trace, const BeamCodebook& codebook,
                          const std::filesystem::path& cache_dir, std::size_t workers,
                          std::string* warning) {
  const std::string sh = scenario_hash(trace);
  const std::string ch = codebook_hash(codebook);
  const std::filesystem::path path =
      cache_dir / ("oracle-" + sh.substr(0, 16) + "-" + ch.substr(0, 16) + ".bin");
  std::string problem;
  if (std::filesystem::exists(path)) {
    try {
      OracleTable cached = load_oracle_table(path);
      if (cached.scenario_hash != sh || cached.codebook_hash != ch) {
        problem = "oracle cache " + path.string() + " has mismatched hashes; recomputing";
      } else if (cached.per_step.size() != trace.states.size()) {
        problem = "oracle cache " + path.string() + " has the wrong step count; recomputing";
      } else {
        return cached;
      }
    } catch (const std::exception& e) {
      problem = std::string("unreadable oracle cache (") + e.what() + "); recomputing";
    }
  }
  OracleTable table = precompute_oracle(trace, codebook, workers);
  std::filesystem::create_directories(cache_dir);
  save_oracle_table(table, path);
  if (warning) *warning = problem;
  return table;
}

}  // namespace isacbeam
