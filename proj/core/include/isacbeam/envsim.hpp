#pragma once

// Synthetic indoor scenario: seeded UE trajectories, geometric channels and
// range/azimuth ISAC sensing images.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "isacbeam/beamcore.hpp"
#include "isacbeam/rng.hpp"

namespace isacbeam {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

double distance(Point2 a, Point2 b) noexcept;

// Azimuth of `target` seen from an AP at `ap` whose boresight points along +y.
double azimuth_from(Point2 ap, Point2 target) noexcept;

// Row-major H x W intensity map.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  float at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
};

struct ScenarioConfig {
  std::string name = "custom";
  std::size_t n_users = 1;
  std::size_t n_steps = 2100;
  double step_interval = 0.1;  // seconds
  double room_width = 10.0;    // x extent, meters
  double room_depth = 10.0;    // y extent, meters
  Point2 ap_position{5.0, 0.0};
  std::uint64_t seed = 42;
  std::size_t n_scatterers = 3;
  std::size_t image_height = 64;
  std::size_t image_width = 64;
  double image_noise_std = 0.02;
  double train_fraction = 0.8;

  ArrayGeometry geometry{};
  std::size_t total_beams = 64;
  IndexRange beam_subset{12, 49};
  double total_power = 1.0;
  double carrier_frequency = 60e9;
  // Noise is calibrated so a boresight UE at reference_distance gets this SNR
  // on its best beam.
  double reference_snr_db = 20.0;
  double reference_distance = 3.0;

  void validate() const;
  std::size_t train_steps() const noexcept;
};

struct Scatterer {
  Point2 position;
  double reflectivity = 0.1;  // path amplitude relative to the LoS path
  double phase = 0.0;         // radians
};

struct EnvironmentState {
  std::size_t step = 0;
  std::vector<Point2> positions;
  std::vector<Channel> channels;
  std::shared_ptr<const Image> isac_image;
  std::vector<double> distances;
};

struct ScenarioTrace {
  ScenarioConfig config;
  std::vector<Scatterer> scatterers;
  LinkBudget budget;
  std::vector<EnvironmentState> states;

  std::size_t train_end() const noexcept { return config.train_steps(); }
};

enum class Split { kTrain, kTest };

// Half-open step range of a split.
struct StepRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
};

StepRange split_range(const ScenarioTrace& trace, Split split) noexcept;

BeamCodebook scenario_codebook(const ScenarioConfig& config);

// K sequences of n_steps positions each.
std::vector<std::vector<Point2>> generate_trajectories(const ScenarioConfig& config);

std::vector<Scatterer> generate_scatterers(const ScenarioConfig& config);

Channel synthesize_channel(Point2 position, Point2 ap_position, const ArrayGeometry& geometry,
                           const LinkBudget& budget, const std::vector<Scatterer>& scatterers);

// Noise variance that gives the configured reference SNR.
double calibrate_noise_variance(const ScenarioConfig& config);

struct ImageRenderOptions {
  bool add_noise = true;
  bool clip = true;
};

Image render_isac_image(const std::vector<Point2>& positions,
                        const std::vector<Scatterer>& scatterers, const ScenarioConfig& config,
                        Rng& noise_rng, ImageRenderOptions options = {});

ScenarioTrace build_scenario(const ScenarioConfig& config);

// Named presets: "s44", "s42", "s44-small", "s42-small".
ScenarioConfig scenario_preset(const std::string& name);
std::vector<std::string> scenario_preset_names();

// Lossless JSON form of a config (used in file headers and manifests).
std::string scenario_config_to_json(const ScenarioConfig& config);
ScenarioConfig scenario_config_from_json(const std::string& text);

// Binary container; layout documented in docs/file-formats.md.
void save_scenario(const ScenarioTrace& trace, const std::filesystem::path& path);
ScenarioTrace load_scenario(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_scenario(const ScenarioTrace& trace);
ScenarioTrace deserialize_scenario(const std::vector<std::uint8_t>& bytes);

}  // namespace isacbeam
