#include "isacbeam/beamcore.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <thread>

#include "isacbeam/error.hpp"

namespace isacbeam {
namespace {

constexpr double kSpeedOfLight = 299'792'458.0;

// SINR-based rate of `user` given its gain row (one entry per beam).
double user_rate(std::span<const double> gains_row, const std::vector<std::size_t>& actions,
                 std::size_t user, double power_per_user, double noise_variance) {
  const double desired = power_per_user * gains_row[actions[user]];
  double interference = 0.0;
  for (std::size_t other = 0; other < actions.size(); ++other) {
    if (other == user) continue;
    interference += power_per_user * gains_row[actions[other]];
  }
  return std::log2(1.0 + desired / (interference + noise_variance));
}

void check_inputs(std::span<const Channel> channels, const BeamAssignment& assignment,
                  const BeamCodebook& codebook) {
  if (channels.empty()) throw InvalidArgument("at least one channel is required");
  if (assignment.actions.size() != channels.size()) {
    throw InvalidArgument("assignment length " + std::to_string(assignment.actions.size()) +
                          " does not match user count " + std::to_string(channels.size()));
  }
  for (std::size_t a : assignment.actions) {
    if (a >= codebook.size()) throw InvalidArgument("beam index out of codebook range");
  }
  for (const Channel& ch : channels) {
    if (ch.coefficients.size() != codebook.antennas()) {
      throw InvalidArgument("channel length does not match codebook antenna count");
    }
  }
}

bool better(double value, const std::vector<std::size_t>& tuple, double best_value,
            const std::vector<std::size_t>& best_tuple) {
  if (value != best_value) return value > best_value;
  return tuple < best_tuple;
}

}  // namespace

void ArrayGeometry::validate() const {
  if (n_vertical < 1 || n_horizontal < 1) {
    throw InvalidArgument("array must have at least one element per axis");
  }
  if (!(element_spacing > 0.0) || !std::isfinite(element_spacing)) {
    throw InvalidArgument("element spacing must be positive");
  }
}

double LinkBudget::wavelength() const noexcept { return kSpeedOfLight / carrier_frequency; }

void LinkBudget::validate() const {
  if (!(total_power > 0.0) || !(noise_variance > 0.0) || !(carrier_frequency > 0.0)) {
    throw InvalidArgument("link budget values must be positive");
  }
}

ComplexVector steering_vector(const ArrayGeometry& geometry, double azimuth, double elevation) {
  geometry.validate();
  if (!std::isfinite(azimuth) || !std::isfinite(elevation)) {
    throw InvalidArgument("steering angles must be finite");
  }
  if (std::abs(azimuth) >= std::numbers::pi / 2 || std::abs(elevation) >= std::numbers::pi / 2) {
    throw InvalidArgument("steering angles must lie strictly inside (-pi/2, pi/2)");
  }
  const std::size_t n = geometry.size();
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  const double k = 2.0 * std::numbers::pi * geometry.element_spacing;
  const double u = std::sin(azimuth) * std::cos(elevation);
  const double w = std::sin(elevation);

  ComplexVector out(n);
  for (std::size_t v = 0; v < geometry.n_vertical; ++v) {
    for (std::size_t h = 0; h < geometry.n_horizontal; ++h) {
      const double phase = k * (static_cast<double>(h) * u + static_cast<double>(v) * w);
      out[v * geometry.n_horizontal + h] = std::polar(scale, phase);
    }
  }
  return out;
}

double parent_beam_azimuth(std::size_t index, std::size_t total_beams) {
  const double m = static_cast<double>(total_beams);
  const double s = 2.0 * static_cast<double>(index) / m - 1.0 + 1.0 / m;
  return std::asin(s);
}

BeamCodebook build_codebook(const ArrayGeometry& geometry, std::size_t total_beams,
                            IndexRange subset) {
  geometry.validate();
  if (total_beams == 0) throw InvalidArgument("codebook must contain at least one beam");
  if (subset.first > subset.last || subset.last >= total_beams) {
    throw InvalidArgument("beam subset [" + std::to_string(subset.first) + ", " +
                          std::to_string(subset.last) + "] outside parent codebook of " +
                          std::to_string(total_beams) + " beams");
  }
  BeamCodebook book;
  book.vectors.reserve(subset.length());
  for (std::size_t i = subset.first; i <= subset.last; ++i) {
    const double az = parent_beam_azimuth(i, total_beams);
    book.vectors.push_back(steering_vector(geometry, az, 0.0));
    book.source_indices.push_back(i);
    book.azimuths.push_back(az);
  }
  return book;
}

Complex inner_product(const ComplexVector& h, const ComplexVector& f) {
  if (h.size() != f.size()) throw InvalidArgument("inner product length mismatch");
  Complex acc{0.0, 0.0};
  for (std::size_t i = 0; i < h.size(); ++i) acc += h[i] * f[i];
  return acc;
}

std::vector<double> gain_matrix(std::span<const Channel> channels, const BeamCodebook& codebook) {
  const std::size_t m = codebook.size();
  std::vector<double> gains(channels.size() * m);
  for (std::size_t k = 0; k < channels.size(); ++k) {
    for (std::size_t b = 0; b < m; ++b) {
      gains[k * m + b] = std::norm(inner_product(channels[k].coefficients, codebook.vectors[b]));
    }
  }
  return gains;
}

double spectral_efficiency(std::size_t user, std::span<const Channel> channels,
                           const BeamAssignment& assignment, const BeamCodebook& codebook,
                           const LinkBudget& budget) {
  check_inputs(channels, assignment, codebook);
  if (user >= channels.size()) throw InvalidArgument("user index out of range");
  budget.validate();

  // Only the beams in use matter; fill the rest with zeros.
  std::vector<double> row(codebook.size(), 0.0);
  for (std::size_t a : assignment.actions) {
    row[a] = std::norm(inner_product(channels[user].coefficients, codebook.vectors[a]));
  }
  const double p = budget.total_power / static_cast<double>(channels.size());
  return user_rate(row, assignment.actions, user, p, budget.noise_variance);
}

std::vector<double> per_user_spectral_efficiency(std::span<const Channel> channels,
                                                 const BeamAssignment& assignment,
                                                 const BeamCodebook& codebook,
                                                 const LinkBudget& budget) {
  std::vector<double> out(channels.size());
  for (std::size_t k = 0; k < channels.size(); ++k) {
    out[k] = spectral_efficiency(k, channels, assignment, codebook, budget);
  }
  return out;
}

double sum_spectral_efficiency(std::span<const Channel> channels, const BeamAssignment& assignment,
                               const BeamCodebook& codebook, const LinkBudget& budget) {
  double total = 0.0;
  for (std::size_t k = 0; k < channels.size(); ++k) {
    total += spectral_efficiency(k, channels, assignment, codebook, budget);
  }
  return total;
}

OracleResult exhaustive_search(std::span<const Channel> channels, const BeamCodebook& codebook,
                               const LinkBudget& budget, std::size_t workers) {
  const std::size_t k_users = channels.size();
  const std::size_t m = codebook.size();
  if (k_users == 0 || m == 0) throw InvalidArgument("exhaustive search needs K >= 1 and M >= 1");
  budget.validate();

  std::size_t combos = 1;
  for (std::size_t k = 0; k < k_users; ++k) {
    if (combos > kMaxJointAssignments / m) {
      throw CapacityExceeded("M^K exceeds the exhaustive-search guard of 1e7 assignments");
    }
    combos *= m;
  }
  {
    BeamAssignment probe{std::vector<std::size_t>(k_users, 0)};
    check_inputs(channels, probe, codebook);
  }

  const std::vector<double> gains = gain_matrix(channels, codebook);
  const double p = budget.total_power / static_cast<double>(k_users);
  const double noise = budget.noise_variance;

  // Enumerate tuples whose first action lies in [lo, hi), lexicographically.
  auto search_range = [&](std::size_t lo, std::size_t hi) {
    OracleResult best;
    best.sum_se = -1.0;
    std::vector<std::size_t> tuple(k_users, 0);
    tuple[0] = lo;
    while (tuple[0] < hi) {
      double total = 0.0;
      for (std::size_t k = 0; k < k_users; ++k) {
        total += user_rate(std::span<const double>(gains).subspan(k * m, m), tuple, k, p, noise);
      }
      if (best.sum_se < 0.0 || better(total, tuple, best.sum_se, best.assignment.actions)) {
        best.sum_se = total;
        best.assignment.actions = tuple;
      }
      std::size_t pos = k_users;
      while (pos-- > 0) {
        if (++tuple[pos] < m || pos == 0) break;
        tuple[pos] = 0;
      }
    }
    return best;
  };

  const std::size_t n_workers = std::clamp<std::size_t>(workers, 1, m);
  if (n_workers == 1) return search_range(0, m);

  std::vector<OracleResult> partial(n_workers);
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < n_workers; ++w) {
    const std::size_t lo = m * w / n_workers;
    const std::size_t hi = m * (w + 1) / n_workers;
    threads.emplace_back([&, w, lo, hi] { partial[w] = search_range(lo, hi); });
  }
  for (auto& t : threads) t.join();

  OracleResult best = partial.front();
  for (std::size_t w = 1; w < n_workers; ++w) {
    if (partial[w].sum_se < 0.0) continue;
    if (better(partial[w].sum_se, partial[w].assignment.actions, best.sum_se,
               best.assignment.actions)) {
      best = partial[w];
    }
  }
  return best;
}

double shaped_reward(std::span<const double> se_values, std::span<const double> distances,
                     double exponent) {
  if (se_values.size() != distances.size()) {
    throw InvalidArgument("reward inputs must have one distance per user");
  }
  double reward = 0.0;
  for (std::size_t k = 0; k < se_values.size(); ++k) {
    if (!(distances[k] > 0.0)) throw InvalidArgument("UE distance must be positive");
    reward += se_values[k] * std::pow(distances[k], exponent);
  }
  return reward;
}

double average_se_regret(std::span<const double> policy_se, std::span<const double> oracle_se) {
  if (policy_se.size() != oracle_se.size()) {
    throw InvalidArgument("policy and oracle series differ in length");
  }
  if (policy_se.empty()) throw InvalidArgument("regret needs at least one step");
  double total = 0.0;
  for (std::size_t t = 0; t < policy_se.size(); ++t) {
    if (oracle_se[t] < policy_se[t] - 1e-9) {
      throw InvalidArgument("policy sum SE exceeds oracle at step " + std::to_string(t));
    }
    total += oracle_se[t] - policy_se[t];
  }
  return total / static_cast<double>(policy_se.size());
}

}  // namespace isacbeam
