#include "config.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "isacbeam/error.hpp"
#include "isacbeam/parallel.hpp"

namespace isacbeam::cli {
namespace {

namespace pt = boost::property_tree;

const std::map<std::string, std::set<std::string>>& schema() {
  static const std::map<std::string, std::set<std::string>> s{
      {"scenario",
       {"preset", "file", "seed", "n_users", "n_steps", "step_interval", "room_width",
        "room_depth", "n_scatterers", "image_height", "image_width", "image_noise_std",
        "train_fraction", "total_beams", "beam_first", "beam_last", "total_power",
        "carrier_frequency", "reference_snr_db", "reference_distance"}},
      {"training",
       {"epochs", "train_interval", "batch_size", "replay_capacity", "learning_rate",
        "reward_exponent", "eps_start", "eps_end", "seed", "context_all_locations", "shared_agent"}},
      {"network",
       {"conv_filters", "conv_kernel", "d_model", "n_heads", "ffn_dim", "encoder_layers",
        "encoder_dropout", "hidden_sizes", "head_dropout", "bypass_mmt"}},
      {"experiment",
       {"variant", "auxiliary_scenario", "cache_dir", "workers", "epochs_list",
        "fine_tune_epochs", "source_checkpoint"}},
  };
  return s;
}

class Reader {
 public:
  explicit Reader(const pt::ptree& tree) : tree_(tree) {}

  std::optional<std::string> raw(const std::string& section, const std::string& key) const {
    const auto sec = tree_.get_child_optional(section);
    if (!sec) return std::nullopt;
    const auto v = sec->get_optional<std::string>(pt::ptree::path_type(key, '\0'));
    if (!v) return std::nullopt;
    return *v;
  }

  template <typename T>
  void read(const std::string& section, const std::string& key, T& out) const {
    const auto v = raw(section, key);
    if (!v) return;
    out = parse<T>(section + "." + key, *v);
  }

  void read_list(const std::string& section, const std::string& key,
                 std::vector<std::size_t>& out) const {
    const auto v = raw(section, key);
    if (!v) return;
    out.clear();
    std::stringstream ss(*v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse<std::size_t>(section + "." + key, item));
  }

 private:
  template <typename T>
  static T parse(const std::string& name, std::string text) {
    text.erase(0, text.find_first_not_of(" \t"));
    text.erase(text.find_last_not_of(" \t") + 1);
    auto bad = [&]() -> ConfigError {
      return ConfigError("bad value '" + text + "' for " + name);
    };
    if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw bad();
    } else if constexpr (std::is_same_v<T, std::string>) {
      return text;
    } else {
      std::istringstream in(text);
      T value{};
      if (text.empty() || (std::is_unsigned_v<T> && text.front() == '-') || !(in >> value) ||
          !in.eof()) {
        throw bad();
      }
      return value;
    }
  }

  const pt::ptree& tree_;
};

void check_keys(const pt::ptree& tree) {
  for (const auto& [section, body] : tree) {
    const auto it = schema().find(section);
    if (it == schema().end()) {
      if (body.empty()) throw ConfigError("key '" + section + "' is outside any section");
      throw ConfigError("unknown config section [" + section + "]");
    }
    for (const auto& [key, value] : body) {
      if (!it->second.count(key)) throw ConfigError("unknown config key " + section + "." + key);
      if (!value.empty()) throw ConfigError("nested value under " + section + "." + key);
    }
  }
}

void apply_override(pt::ptree& tree, const std::string& text) {
  const auto eq = text.find('=');
  const auto dot = text.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq || dot == 0 ||
      dot + 1 == eq) {
    throw ConfigError("--set expects section.key=value, got '" + text + "'");
  }
  const std::string section = text.substr(0, dot);
  const std::string key = text.substr(dot + 1, eq - dot - 1);
  auto sec = tree.get_child_optional(section);
  if (!sec) sec = tree.put_child(section, pt::ptree());
  sec->put(pt::ptree::path_type(key, '\0'), text.substr(eq + 1));
}

ScenarioConfig scenario_from(const Reader& r, ExperimentSpec& spec) {
  std::string preset = "s44";
  r.read("scenario", "preset", preset);
  std::string file;
  r.read("scenario", "file", file);
  spec.scenario = file.empty() ? preset : file;
  return scenario_preset(preset);
}

}  // namespace

std::vector<std::string> known_keys() {
  std::vector<std::string> out;
  for (const auto& [section, keys] : schema()) {
    for (const auto& k : keys) out.push_back(section + "." + k);
  }
  return out;
}

RunConfig load_config(const std::optional<std::filesystem::path>& file,
                      const std::vector<std::string>& overrides) {
  pt::ptree tree;
  if (file) {
    try {
      pt::read_ini(file->string(), tree);
    } catch (const pt::ini_parser_error& e) {
      throw ConfigError(std::string("cannot read config: ") + e.what());
    }
  }
  for (const std::string& o : overrides) apply_override(tree, o);
  check_keys(tree);

  const Reader r(tree);
  RunConfig cfg;
  ExperimentSpec& spec = cfg.spec;

  const std::vector<std::string> scenario_overrides{
      "seed", "n_users", "n_steps", "step_interval", "room_width", "room_depth",
      "n_scatterers", "image_height", "image_width", "image_noise_std", "train_fraction",
      "total_beams", "beam_first", "beam_last", "total_power", "carrier_frequency",
      "reference_snr_db", "reference_distance"};
  const bool has_override = std::any_of(scenario_overrides.begin(), scenario_overrides.end(),
                                        [&](const std::string& k) { return r.raw("scenario", k); });
  const bool has_file = r.raw("scenario", "file").has_value();
  if (has_file && r.raw("scenario", "preset")) {
    throw ConfigError("scenario.preset and scenario.file are mutually exclusive");
  }
  if (has_file && has_override) {
    throw ConfigError("scenario files cannot be combined with scenario overrides");
  }
  try {
    ScenarioConfig sc = scenario_from(r, spec);
    if (has_override) {
      r.read("scenario", "seed", sc.seed);
      r.read("scenario", "n_users", sc.n_users);
      r.read("scenario", "n_steps", sc.n_steps);
      r.read("scenario", "step_interval", sc.step_interval);
      r.read("scenario", "room_width", sc.room_width);
      r.read("scenario", "room_depth", sc.room_depth);
      r.read("scenario", "n_scatterers", sc.n_scatterers);
      r.read("scenario", "image_height", sc.image_height);
      r.read("scenario", "image_width", sc.image_width);
      r.read("scenario", "image_noise_std", sc.image_noise_std);
      r.read("scenario", "train_fraction", sc.train_fraction);
      r.read("scenario", "total_beams", sc.total_beams);
      r.read("scenario", "beam_first", sc.beam_subset.first);
      r.read("scenario", "beam_last", sc.beam_subset.last);
      r.read("scenario", "total_power", sc.total_power);
      r.read("scenario", "carrier_frequency", sc.carrier_frequency);
      r.read("scenario", "reference_snr_db", sc.reference_snr_db);
      r.read("scenario", "reference_distance", sc.reference_distance);
      sc.validate();
      spec.scenario_config = sc;
    }
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }

  TrainingConfig& t = spec.training;
  r.read("training", "epochs", t.epochs);
  r.read("training", "train_interval", t.train_interval);
  r.read("training", "batch_size", t.batch_size);
  r.read("training", "replay_capacity", t.replay_capacity);
  r.read("training", "learning_rate", t.learning_rate);
  r.read("training", "reward_exponent", t.reward_exponent);
  r.read("training", "seed", t.seed);
  r.read("training", "eps_start", t.eps_start);
  r.read("training", "eps_end", t.eps_end);
  r.read("training", "context_all_locations", t.context_all_locations);
  r.read("training", "shared_agent", t.shared_agent);

  nn::QNetworkConfig& n = spec.network;
  r.read_list("network", "conv_filters", n.conv_filters);
  r.read("network", "conv_kernel", n.conv_kernel);
  r.read("network", "d_model", n.d_model);
  r.read("network", "n_heads", n.n_heads);
  r.read("network", "ffn_dim", n.ffn_dim);
  r.read("network", "encoder_layers", n.encoder_layers);
  r.read("network", "encoder_dropout", n.encoder_dropout);
  r.read_list("network", "hidden_sizes", n.hidden_sizes);
  r.read("network", "head_dropout", n.head_dropout);
  r.read("network", "bypass_mmt", n.bypass_mmt);

  std::string variant = "trl";
  r.read("experiment", "variant", variant);
  spec.variant = parse_variant(variant);
  r.read("experiment", "auxiliary_scenario", spec.auxiliary_scenario);
  std::string cache_dir;
  r.read("experiment", "cache_dir", cache_dir);
  spec.cache_dir = cache_dir;
  std::size_t workers = 0;
  r.read("experiment", "workers", workers);
  spec.workers = workers == 0 ? configured_workers() : workers;
  r.read_list("experiment", "epochs_list", cfg.epoch_list);
  r.read("experiment", "fine_tune_epochs", cfg.fine_tune_epochs);
  r.read("experiment", "source_checkpoint", cfg.source_checkpoint);
  return cfg;
}

}  // namespace isacbeam::cli
