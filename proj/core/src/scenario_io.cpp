#include <json.hpp>
#include <algorithm>

#include "binary_io.hpp"
#include "isacbeam/envsim.hpp"
#include "isacbeam/error.hpp"

namespace isacbeam {
namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'I', 'S', 'A', 'C', 'S', 'C', 'N', '\0'};
constexpr std::uint32_t kFormatVersion = 1;

json config_to_json(const ScenarioConfig& c) {
  return json{
      {"name", c.name},
      {"n_users", c.n_users},
      {"n_steps", c.n_steps},
      {"step_interval", c.step_interval},
      {"room_width", c.room_width},
      {"room_depth", c.room_depth},
      {"ap_x", c.ap_position.x},
      {"ap_y", c.ap_position.y},
      {"seed", c.seed},
      {"n_scatterers", c.n_scatterers},
      {"image_height", c.image_height},
      {"image_width", c.image_width},
      {"image_noise_std", c.image_noise_std},
      {"train_fraction", c.train_fraction},
      {"n_vertical", c.geometry.n_vertical},
      {"n_horizontal", c.geometry.n_horizontal},
      {"element_spacing", c.geometry.element_spacing},
      {"total_beams", c.total_beams},
      {"beam_first", c.beam_subset.first},
      {"beam_last", c.beam_subset.last},
      {"total_power", c.total_power},
      {"carrier_frequency", c.carrier_frequency},
      {"reference_snr_db", c.reference_snr_db},
      {"reference_distance", c.reference_distance},
  };
}

ScenarioConfig config_from_json(const json& j) {
  ScenarioConfig c;
  c.name = j.at("name").get<std::string>();
  c.n_users = j.at("n_users").get<std::size_t>();
  c.n_steps = j.at("n_steps").get<std::size_t>();
  c.step_interval = j.at("step_interval").get<double>();
  c.room_width = j.at("room_width").get<double>();
  c.room_depth = j.at("room_depth").get<double>();
  c.ap_position = {j.at("ap_x").get<double>(), j.at("ap_y").get<double>()};
  c.seed = j.at("seed").get<std::uint64_t>();
  c.n_scatterers = j.at("n_scatterers").get<std::size_t>();
  c.image_height = j.at("image_height").get<std::size_t>();
  c.image_width = j.at("image_width").get<std::size_t>();
  c.image_noise_std = j.at("image_noise_std").get<double>();
  c.train_fraction = j.at("train_fraction").get<double>();
  c.geometry.n_vertical = j.at("n_vertical").get<std::size_t>();
  c.geometry.n_horizontal = j.at("n_horizontal").get<std::size_t>();
  c.geometry.element_spacing = j.at("element_spacing").get<double>();
  c.total_beams = j.at("total_beams").get<std::size_t>();
  c.beam_subset = {j.at("beam_first").get<std::size_t>(), j.at("beam_last").get<std::size_t>()};
  c.total_power = j.at("total_power").get<double>();
  c.carrier_frequency = j.at("carrier_frequency").get<double>();
  c.reference_snr_db = j.at("reference_snr_db").get<double>();
  c.reference_distance = j.at("reference_distance").get<double>();
  return c;
}

}  // namespace

std::string scenario_config_to_json(const ScenarioConfig& config) {
  return config_to_json(config).dump();
}

ScenarioConfig scenario_config_from_json(const std::string& text) {
  try {
    return config_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed scenario config: ") + e.what());
  }
}

std::vector<std::uint8_t> serialize_scenario(const ScenarioTrace& trace) {
  const ScenarioConfig& c = trace.config;
  const std::size_t k_users = c.n_users;
  const std::size_t n = c.geometry.size();

  json header = config_to_json(c);
  json scat = json::array();
  for (const Scatterer& s : trace.scatterers) {
    scat.push_back({s.position.x, s.position.y, s.reflectivity, s.phase});
  }
  header["scatterers"] = scat;

  detail::ByteWriter w;
  w.put_bytes(kMagic, sizeof(kMagic));
  w.put(kFormatVersion);
  w.put_string(header.dump());
  w.put(trace.budget.noise_variance);
  w.put(static_cast<std::uint32_t>(k_users));
  w.put(static_cast<std::uint32_t>(n));
  w.put(static_cast<std::uint32_t>(trace.states.size()));
  w.put(static_cast<std::uint32_t>(c.image_height));
  w.put(static_cast<std::uint32_t>(c.image_width));
  for (const EnvironmentState& st : trace.states) {
    w.put(static_cast<std::uint32_t>(st.step));
    for (const Point2& p : st.positions) {
      w.put(p.x);
      w.put(p.y);
    }
    for (const Channel& ch : st.channels) {
      for (const Complex& z : ch.coefficients) {
        w.put(z.real());
        w.put(z.imag());
      }
    }
    for (float px : st.isac_image->pixels) w.put(px);
  }
  return std::move(w.bytes());
}

ScenarioTrace deserialize_scenario(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes.data(), bytes.size());
  char magic[8];
  r.get_bytes(magic, sizeof(magic));
  if (!std::equal(magic, magic + 8, kMagic)) throw InvalidArgument("not a scenario trace file");
  const auto version = r.get<std::uint32_t>();
  if (version != kFormatVersion) {
    throw InvalidArgument("unsupported scenario format version " + std::to_string(version));
  }

  ScenarioTrace trace;
  json header;
  try {
    header = json::parse(r.get_string());
    trace.config = config_from_json(header);
    for (const auto& s : header.at("scatterers")) {
      trace.scatterers.push_back(
          Scatterer{{s.at(0).get<double>(), s.at(1).get<double>()}, s.at(2).get<double>(),
                    s.at(3).get<double>()});
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed scenario header: ") + e.what());
  }
  const ScenarioConfig& c = trace.config;
  trace.budget = LinkBudget{c.total_power, r.get<double>(), c.carrier_frequency};

  const auto k_users = r.get<std::uint32_t>();
  const auto n = r.get<std::uint32_t>();
  const auto steps = r.get<std::uint32_t>();
  const auto h = r.get<std::uint32_t>();
  const auto wd = r.get<std::uint32_t>();
  if (k_users != c.n_users || n != c.geometry.size() || steps != c.n_steps ||
      h != c.image_height || wd != c.image_width) {
    throw InvalidArgument("scenario dimensions disagree with the embedded config");
  }

  trace.states.resize(steps);
  for (std::uint32_t t = 0; t < steps; ++t) {
    EnvironmentState& st = trace.states[t];
    st.step = r.get<std::uint32_t>();
    if (st.step != t) throw InvalidArgument("scenario steps out of order");
    for (std::uint32_t k = 0; k < k_users; ++k) {
      const double x = r.get<double>();
      const double y = r.get<double>();
      st.positions.push_back({x, y});
      st.distances.push_back(distance(st.positions.back(), c.ap_position));
    }
    for (std::uint32_t k = 0; k < k_users; ++k) {
      Channel ch;
      ch.ue_distance = st.distances[k];
      ch.coefficients.resize(n);
      for (auto& z : ch.coefficients) {
        const double re = r.get<double>();
        const double im = r.get<double>();
        z = {re, im};
      }
      st.channels.push_back(std::move(ch));
    }
    Image img{h, wd, std::vector<float>(static_cast<std::size_t>(h) * wd)};
    for (float& px : img.pixels) px = r.get<float>();
    st.isac_image = std::make_shared<const Image>(std::move(img));
  }
  if (r.remaining() != 0) throw InvalidArgument("trailing bytes after scenario data");
  return trace;
}

void save_scenario(const ScenarioTrace& trace, const std::filesystem::path& path) {
  detail::write_file(path.string(), serialize_scenario(trace));
}

ScenarioTrace load_scenario(const std::filesystem::path& path) {
  return deserialize_scenario(detail::read_file(path.string()));
}

}  // namespace isacbeam
