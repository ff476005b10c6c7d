#include "isacbeam/envsim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "isacbeam/error.hpp"

namespace isacbeam {
namespace {

// UEs and waypoints keep this clearance from the walls.
constexpr double kWallMargin = 0.25;
constexpr double kMinApClearance = 1.0;
constexpr double kMinSpeed = 0.5;
constexpr double kMaxSpeed = 1.5;
constexpr std::size_t kMaxWaypointDraws = 100000;

// Blob amplitude is (kImageReferenceRange / d)^2.
constexpr double kImageReferenceRange = 2.0;
constexpr double kBlobSigma = 1.5;
constexpr double kBlobRadius = 6.0;

// Substream ids under ScenarioConfig::seed.
constexpr std::uint64_t kScattererStream = 1;
constexpr std::uint64_t kImageNoiseStream = 2;
constexpr std::uint64_t kTrajectoryStream = 100;

double farthest_interior_distance(const ScenarioConfig& c) {
  const double xs[2] = {kWallMargin, c.room_width - kWallMargin};
  const double ys[2] = {kWallMargin, c.room_depth - kWallMargin};
  double best = 0.0;
  for (double x : xs) {
    for (double y : ys) best = std::max(best, distance(c.ap_position, {x, y}));
  }
  return best;
}

Point2 draw_interior_point(const ScenarioConfig& c, Rng& rng) {
  std::uniform_real_distribution<double> ux(kWallMargin, c.room_width - kWallMargin);
  std::uniform_real_distribution<double> uy(kWallMargin, c.room_depth - kWallMargin);
  for (std::size_t i = 0; i < kMaxWaypointDraws; ++i) {
    Point2 p{ux(rng), uy(rng)};
    if (distance(p, c.ap_position) >= kMinApClearance) return p;
  }
  throw InvalidArgument("could not place a waypoint at least 1 m from the AP");
}

}  // namespace

double distance(Point2 a, Point2 b) noexcept { return std::hypot(a.x - b.x, a.y - b.y); }

double azimuth_from(Point2 ap, Point2 target) noexcept {
  return std::atan2(target.x - ap.x, target.y - ap.y);
}

void ScenarioConfig::validate() const {
  if (n_users < 1) throw InvalidArgument("scenario needs at least one user");
  if (n_steps < 1) throw InvalidArgument("scenario needs at least one step");
  if (!(step_interval > 0.0)) throw InvalidArgument("step interval must be positive");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw InvalidArgument("train fraction must lie strictly between 0 and 1");
  }
  if (!(room_width > 2 * kWallMargin && room_depth > 2 * kWallMargin)) {
    throw InvalidArgument("room dimensions must be positive and exceed the wall margin");
  }
  if (image_height < 8 || image_width < 8) throw InvalidArgument("image dims must be >= 8");
  if (!(image_noise_std >= 0.0)) throw InvalidArgument("image noise std must be >= 0");
  if (ap_position.y > kWallMargin / 2 || ap_position.x < 0.0 || ap_position.x > room_width) {
    throw InvalidArgument("AP must sit on the y = 0 wall of the room");
  }
  if (farthest_interior_distance(*this) < kMinApClearance) {
    throw InvalidArgument("room too small to place waypoints 1 m from the AP");
  }
  if (!(reference_distance > 0.0)) throw InvalidArgument("reference distance must be positive");
  geometry.validate();
  if (beam_subset.first > beam_subset.last || beam_subset.last >= total_beams) {
    throw InvalidArgument("beam subset outside the parent codebook");
  }
  LinkBudget{total_power, 1.0, carrier_frequency}.validate();
}

std::size_t ScenarioConfig::train_steps() const noexcept {
  return static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n_steps) + 1e-9));
}

StepRange split_range(const ScenarioTrace& trace, Split split) noexcept {
  const std::size_t boundary = trace.train_end();
  if (split == Split::kTrain) return {0, boundary};
  return {boundary, trace.states.size()};
}

BeamCodebook scenario_codebook(const ScenarioConfig& config) {
  return build_codebook(config.geometry, config.total_beams, config.beam_subset);
}

std::vector<std::vector<Point2>> generate_trajectories(const ScenarioConfig& config) {
  config.validate();
  std::vector<std::vector<Point2>> paths(config.n_users);
  std::uniform_real_distribution<double> speed_dist(kMinSpeed, kMaxSpeed);

  for (std::size_t k = 0; k < config.n_users; ++k) {
    Rng rng = make_rng(config.seed, {kTrajectoryStream, k});
    auto& path = paths[k];
    path.reserve(config.n_steps);

    Point2 pos = draw_interior_point(config, rng);
    Point2 target = draw_interior_point(config, rng);
    double speed = speed_dist(rng);
    path.push_back(pos);

    for (std::size_t t = 1; t < config.n_steps; ++t) {
      const double step_len = speed * config.step_interval;
      const double remaining = distance(pos, target);
      if (remaining <= step_len) {
        pos = target;
        target = draw_interior_point(config, rng);
        speed = speed_dist(rng);
      } else {
        const double f = step_len / remaining;
        pos = {pos.x + (target.x - pos.x) * f, pos.y + (target.y - pos.y) * f};
      }
      path.push_back(pos);
    }
  }
  return paths;
}

std::vector<Scatterer> generate_scatterers(const ScenarioConfig& config) {
  Rng rng = make_rng(config.seed, {kScattererStream});
  std::uniform_real_distribution<double> beta(0.05, 0.3);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::vector<Scatterer> out;
  out.reserve(config.n_scatterers);
  for (std::size_t s = 0; s < config.n_scatterers; ++s) {
    Scatterer sc;
    sc.position = draw_interior_point(config, rng);
    sc.reflectivity = beta(rng);
    sc.phase = phase(rng);
    out.push_back(sc);
  }
  return out;
}

Channel synthesize_channel(Point2 position, Point2 ap_position, const ArrayGeometry& geometry,
                           const LinkBudget& budget, const std::vector<Scatterer>& scatterers) {
  const double d = distance(position, ap_position);
  if (!(d > 0.0)) throw InvalidArgument("UE coincides with the AP");
  const double lambda = budget.wavelength();
  const double two_pi = 2.0 * std::numbers::pi;
  const double sqrt_n = std::sqrt(static_cast<double>(geometry.size()));
  const double los_amplitude = lambda / (4.0 * std::numbers::pi * d);

  Channel ch;
  ch.ue_distance = d;
  ch.coefficients.assign(geometry.size(), Complex{0.0, 0.0});

  auto add_path = [&](double azimuth, Complex gain) {
    const ComplexVector a = steering_vector(geometry, azimuth, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) ch.coefficients[i] += sqrt_n * gain * std::conj(a[i]);
  };

  add_path(azimuth_from(ap_position, position), std::polar(los_amplitude, -two_pi * d / lambda));
  for (const Scatterer& s : scatterers) {
    const double path_len = distance(ap_position, s.position) + distance(s.position, position);
    const double phase = s.phase - two_pi * path_len / lambda;
    add_path(azimuth_from(ap_position, s.position),
             std::polar(s.reflectivity * los_amplitude, phase));
  }
  return ch;
}

double calibrate_noise_variance(const ScenarioConfig& config) {
  const BeamCodebook book = scenario_codebook(config);
  const LinkBudget unit{config.total_power, 1.0, config.carrier_frequency};
  const Point2 boresight{config.ap_position.x, config.ap_position.y + config.reference_distance};
  const Channel ch = synthesize_channel(boresight, config.ap_position, config.geometry, unit, {});
  double best_gain = 0.0;
  for (const ComplexVector& f : book.vectors) {
    best_gain = std::max(best_gain, std::norm(inner_product(ch.coefficients, f)));
  }
  return config.total_power * best_gain / std::pow(10.0, config.reference_snr_db / 10.0);
}

Image render_isac_image(const std::vector<Point2>& positions,
                        const std::vector<Scatterer>& scatterers, const ScenarioConfig& config,
                        Rng& noise_rng, ImageRenderOptions options) {
  const std::size_t h = config.image_height;
  const std::size_t w = config.image_width;
  const double diag = std::hypot(config.room_width, config.room_depth);

  Image img{h, w, std::vector<float>(h * w, 0.0f)};
  std::vector<double> acc(h * w, 0.0);

  auto add_blob = [&](Point2 p) {
    const double range = distance(config.ap_position, p);
    const double az = azimuth_from(config.ap_position, p);
    const double row = std::round(std::clamp(range / diag, 0.0, 1.0) * static_cast<double>(h - 1));
    const double col = std::round(std::clamp((az + std::numbers::pi / 2) / std::numbers::pi, 0.0, 1.0) *
                                  static_cast<double>(w - 1));
    const double amp = std::pow(kImageReferenceRange / std::max(range, 1e-6), 2.0);
    const auto r0 = static_cast<long>(row);
    const auto c0 = static_cast<long>(col);
    const auto rad = static_cast<long>(kBlobRadius);
    for (long r = std::max(0L, r0 - rad); r <= std::min<long>(h - 1, r0 + rad); ++r) {
      for (long c = std::max(0L, c0 - rad); c <= std::min<long>(w - 1, c0 + rad); ++c) {
        const double d2 = static_cast<double>((r - r0) * (r - r0) + (c - c0) * (c - c0));
        if (d2 > kBlobRadius * kBlobRadius) continue;
        acc[r * w + c] += amp * std::exp(-d2 / (2.0 * kBlobSigma * kBlobSigma));
      }
    }
  };

  for (const Point2& p : positions) add_blob(p);
  for (const Scatterer& s : scatterers) add_blob(s.position);

  if (options.add_noise && config.image_noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, config.image_noise_std);
    for (double& v : acc) v += noise(noise_rng);
  }
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const double v = options.clip ? std::clamp(acc[i], 0.0, 1.0) : acc[i];
    img.pixels[i] = static_cast<float>(v);
  }
  return img;
}

ScenarioTrace build_scenario(const ScenarioConfig& config) {
  config.validate();
  ScenarioTrace trace;
  trace.config = config;
  trace.budget = LinkBudget{config.total_power, calibrate_noise_variance(config),
                            config.carrier_frequency};
  trace.scatterers = generate_scatterers(config);

  const auto paths = generate_trajectories(config);
  trace.states.resize(config.n_steps);
  for (std::size_t t = 0; t < config.n_steps; ++t) {
    EnvironmentState& st = trace.states[t];
    st.step = t;
    for (std::size_t k = 0; k < config.n_users; ++k) {
      const Point2 p = paths[k][t];
      st.positions.push_back(p);
      st.distances.push_back(distance(p, config.ap_position));
      st.channels.push_back(synthesize_channel(p, config.ap_position, config.geometry,
                                               trace.budget, trace.scatterers));
    }
    Rng noise_rng = make_rng(config.seed, {kImageNoiseStream, t});
    st.isac_image = std::make_shared<const Image>(
        render_isac_image(st.positions, trace.scatterers, config, noise_rng));
  }
  return trace;
}

ScenarioConfig scenario_preset(const std::string& name) {
  ScenarioConfig c;
  c.name = name;
  if (name == "s44" || name == "s42") {
    c.n_users = name == "s44" ? 1 : 2;
    return c;
  }
  if (name == "s44-small" || name == "s42-small") {
    c.n_users = name == "s44-small" ? 1 : 2;
    c.n_steps = 500;
    c.image_height = 32;
    c.image_width = 32;
    c.total_beams = 16;
    c.beam_subset = {4, 11};
    return c;
  }
  throw InvalidArgument("unknown scenario preset '" + name + "'");
}

std::vector<std::string> scenario_preset_names() {
  return {"s44", "s42", "s44-small", "s42-small"};
}

}  // namespace isacbeam
