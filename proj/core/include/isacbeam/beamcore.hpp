#pragma once

// Closed-form beamforming math: URA steering vectors, DFT codebooks,
// multi-user spectral efficiency, the exhaustive joint-assignment oracle,
// the distance-shaped reward and the average SE regret.

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace isacbeam {

using Complex = std::complex<double>;
using ComplexVector = std::vector<Complex>;

struct ArrayGeometry {
  std::size_t n_vertical = 2;
  std::size_t n_horizontal = 8;
  double element_spacing = 0.5;  // in wavelengths

  std::size_t size() const noexcept { return n_vertical * n_horizontal; }
  void validate() const;
};

// Inclusive range of indices into a parent codebook.
struct IndexRange {
  std::size_t first = 0;
  std::size_t last = 0;

  std::size_t length() const noexcept { return last - first + 1; }
};

struct BeamCodebook {
  std::vector<ComplexVector> vectors;       // unit-norm beamformers f_m
  std::vector<std::size_t> source_indices;  // positions in the parent codebook
  std::vector<double> azimuths;             // steering azimuth of each beam (rad)

  std::size_t size() const noexcept { return vectors.size(); }
  std::size_t antennas() const noexcept { return vectors.empty() ? 0 : vectors.front().size(); }
};

struct Channel {
  ComplexVector coefficients;
  double ue_distance = 1.0;  // meters
};

struct LinkBudget {
  double total_power = 1.0;         // P_T, watts
  double noise_variance = 1.0;      // sigma^2, watts
  double carrier_frequency = 60e9;  // hertz

  double wavelength() const noexcept;
  void validate() const;
};

// One codebook index per user.
struct BeamAssignment {
  std::vector<std::size_t> actions;

  friend bool operator==(const BeamAssignment&, const BeamAssignment&) = default;
};

struct OracleResult {
  BeamAssignment assignment;
  double sum_se = 0.0;
};

// Largest number of joint assignments exhaustive_search will enumerate.
inline constexpr std::size_t kMaxJointAssignments = 10'000'000;

// URA response, element (v, h) stored row-major at v * n_horizontal + h,
// scaled by 1/sqrt(N).
ComplexVector steering_vector(const ArrayGeometry& geometry, double azimuth, double elevation);

// Azimuth of beam `index` on the sine-space grid of a `total_beams` codebook.
double parent_beam_azimuth(std::size_t index, std::size_t total_beams);

BeamCodebook build_codebook(const ArrayGeometry& geometry, std::size_t total_beams,
                            IndexRange subset);

// Unconjugated h^T f.
Complex inner_product(const ComplexVector& h, const ComplexVector& f);

// |h^T f|^2 for every (user, beam) pair, row-major K x M.
std::vector<double> gain_matrix(std::span<const Channel> channels, const BeamCodebook& codebook);

double spectral_efficiency(std::size_t user, std::span<const Channel> channels,
                           const BeamAssignment& assignment, const BeamCodebook& codebook,
                           const LinkBudget& budget);

std::vector<double> per_user_spectral_efficiency(std::span<const Channel> channels,
                                                 const BeamAssignment& assignment,
                                                 const BeamCodebook& codebook,
                                                 const LinkBudget& budget);

double sum_spectral_efficiency(std::span<const Channel> channels, const BeamAssignment& assignment,
                               const BeamCodebook& codebook, const LinkBudget& budget);

// Enumerates all M^K joint assignments. Ties resolve to the lexicographically
// smallest action tuple regardless of `workers`.
OracleResult exhaustive_search(std::span<const Channel> channels, const BeamCodebook& codebook,
                               const LinkBudget& budget, std::size_t workers = 1);

double shaped_reward(std::span<const double> se_values, std::span<const double> distances,
                     double exponent);

double average_se_regret(std::span<const double> policy_se, std::span<const double> oracle_se);

}  // namespace isacbeam
