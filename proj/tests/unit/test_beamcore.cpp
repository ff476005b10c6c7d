#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "isacbeam/beamcore.hpp"
#include "isacbeam/error.hpp"

using namespace isacbeam;

namespace {

Channel channel_with_gain(const BeamCodebook& cb, std::size_t beam, double gain) {
  // h = sqrt(gain) * conj(f) gives |h^T f|^2 = gain for that beam.
  Channel c;
  for (const Complex& v : cb.vectors[beam]) c.coefficients.push_back(std::sqrt(gain) * std::conj(v));
  return c;
}

BeamCodebook unit_codebook(std::size_t m) {
  // M orthonormal basis vectors in C^M.
  BeamCodebook cb;
  for (std::size_t i = 0; i < m; ++i) {
    ComplexVector v(m, 0.0);
    v[i] = 1.0;
    cb.vectors.push_back(v);
    cb.source_indices.push_back(i);
    cb.azimuths.push_back(0.0);
  }
  return cb;
}

std::vector<Channel> random_channels(std::size_t k, std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Channel> out(k);
  for (auto& c : out) {
    for (std::size_t i = 0; i < n; ++i) c.coefficients.emplace_back(g(rng), g(rng));
  }
  return out;
}

}  // namespace

TEST(SteeringVector, BoresightIsFlat) {
  const ComplexVector a = steering_vector(ArrayGeometry{}, 0.0, 0.0);
  ASSERT_EQ(a.size(), 16u);
  for (const Complex& v : a) {
    EXPECT_NEAR(v.real(), 0.25, 1e-15);
    EXPECT_NEAR(v.imag(), 0.0, 1e-15);
  }
}

TEST(SteeringVector, TwoElementPhaseByHand) {
  const ArrayGeometry g{1, 2, 0.5};
  const ComplexVector a = steering_vector(g, std::numbers::pi / 6, 0.0);
  const double s = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(std::abs(a[0] - Complex(s, 0.0)), 0.0, 1e-12);
  // phase 2*pi*0.5*sin(pi/6) = pi/2
  EXPECT_NEAR(std::abs(a[1] - Complex(0.0, s)), 0.0, 1e-12);
}

TEST(SteeringVector, UnitNormForRandomAngles) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int i = 0; i < 100; ++i) {
    const ComplexVector a = steering_vector(ArrayGeometry{}, u(rng), u(rng));
    double n = 0.0;
    for (const Complex& v : a) n += std::norm(v);
    EXPECT_NEAR(n, 1.0, 1e-12);
  }
}

TEST(SteeringVector, RejectsNonFiniteAngles) {
  EXPECT_THROW(steering_vector(ArrayGeometry{}, std::nan(""), 0.0), InvalidArgument);
  EXPECT_THROW(steering_vector(ArrayGeometry{}, 2.0, 0.0), InvalidArgument);
}

TEST(Codebook, DefaultSubsetHas38Beams) {
  const BeamCodebook cb = build_codebook(ArrayGeometry{}, 64, {12, 49});
  ASSERT_EQ(cb.size(), 38u);
  for (std::size_t i = 0; i < cb.size(); ++i) EXPECT_EQ(cb.source_indices[i], 12 + i);
  for (const auto& v : cb.vectors) {
    double n = 0.0;
    for (const Complex& c : v) n += std::norm(c);
    EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
  }
}

TEST(Codebook, AzimuthGridMatchesArcsin) {
  const BeamCodebook cb = build_codebook(ArrayGeometry{}, 64, {12, 49});
  double max_abs = 0.0;
  for (std::size_t i = 0; i < cb.size(); ++i) {
    const double idx = static_cast<double>(12 + i);
    EXPECT_NEAR(cb.azimuths[i], std::asin(2.0 * idx / 64.0 - 1.0 + 1.0 / 64.0), 1e-15);
    max_abs = std::max(max_abs, std::abs(cb.azimuths[i]));
  }
  // The arcsin grid reaches about 37.5 degrees at index 12; see the ledger
  // for why the 0.56 rad figure cannot hold for this index range.
  EXPECT_NEAR(max_abs, std::asin(1.0 - 24.0 / 64.0 - 1.0 / 64.0), 1e-15);
}

TEST(Codebook, RejectsSubsetOutOfRange) {
  EXPECT_THROW(build_codebook(ArrayGeometry{}, 64, {12, 64}), InvalidArgument);
  EXPECT_THROW(build_codebook(ArrayGeometry{}, 64, {20, 10}), InvalidArgument);
}

TEST(SpectralEfficiency, UnitSnrGivesOneBit) {
  const BeamCodebook cb = unit_codebook(2);
  const std::vector<Channel> ch{channel_with_gain(cb, 0, 1.0)};
  const LinkBudget b{1.0, 1.0, 60e9};
  EXPECT_NEAR(spectral_efficiency(0, ch, {{0}}, cb, b), 1.0, 1e-9);
}

TEST(SpectralEfficiency, TwoUsersWithInterferenceByHand) {
  // Both users see gain 1 on both beams: desired 1, interference 1.
  BeamCodebook cb = unit_codebook(2);
  Channel h;
  h.coefficients = {Complex(1.0, 0.0), Complex(1.0, 0.0)};
  const std::vector<Channel> ch{h, h};
  const LinkBudget b{2.0, 1.0, 60e9};
  const BeamAssignment a{{0, 1}};
  EXPECT_NEAR(spectral_efficiency(0, ch, a, cb, b), std::log2(1.5), 1e-9);
  EXPECT_NEAR(spectral_efficiency(0, ch, a, cb, b), 0.58496250072, 1e-9);
  EXPECT_NEAR(sum_spectral_efficiency(ch, a, cb, b), 1.16992500144, 1e-9);
}

TEST(SpectralEfficiency, ZeroChannelGivesZero) {
  const BeamCodebook cb = unit_codebook(3);
  Channel h;
  h.coefficients.assign(3, Complex(0.0, 0.0));
  EXPECT_EQ(spectral_efficiency(0, std::vector<Channel>{h}, {{1}}, cb, LinkBudget{}), 0.0);
}

TEST(SpectralEfficiency, DimensionMismatchThrows) {
  const BeamCodebook cb = unit_codebook(3);
  Channel h;
  h.coefficients.assign(3, Complex(1.0, 0.0));
  EXPECT_THROW(spectral_efficiency(0, std::vector<Channel>{h}, {{0, 1}}, cb, LinkBudget{}),
               InvalidArgument);
  EXPECT_THROW(spectral_efficiency(0, std::vector<Channel>{h}, {{3}}, cb, LinkBudget{}),
               InvalidArgument);
}

TEST(SpectralEfficiency, InterferenceMonotone) {
  const BeamCodebook cb = unit_codebook(2);
  const LinkBudget b{1.0, 0.1, 60e9};
  Channel other;
  other.coefficients = {Complex(0.3, 0.0), Complex(1.0, 0.0)};
  double previous = std::numeric_limits<double>::infinity();
  for (double leak = 0.0; leak <= 2.0; leak += 0.125) {
    Channel h;
    h.coefficients = {Complex(1.0, 0.0), Complex(leak, 0.0)};
    const std::vector<Channel> ch{h, other};
    const double r = spectral_efficiency(0, ch, {{0, 1}}, cb, b);
    EXPECT_LE(r, previous);
    EXPECT_GE(r, 0.0);
    previous = r;
  }
}

TEST(SumSpectralEfficiency, PermutationInvariant) {
  std::mt19937_64 rng(3);
  const BeamCodebook cb = build_codebook(ArrayGeometry{}, 16, {2, 9});
  const LinkBudget b{1.0, 0.05, 60e9};
  auto ch = random_channels(2, 16, rng);
  const double s = sum_spectral_efficiency(ch, {{1, 5}}, cb, b);
  std::swap(ch[0], ch[1]);
  EXPECT_DOUBLE_EQ(sum_spectral_efficiency(ch, {{5, 1}}, cb, b), s);
}

TEST(ExhaustiveSearch, SingleUserPicksStrongestBeam) {
  std::mt19937_64 rng(4);
  const BeamCodebook cb = build_codebook(ArrayGeometry{}, 64, {12, 49});
  for (int trial = 0; trial < 30; ++trial) {
    const auto ch = random_channels(1, 16, rng);
    std::size_t best = 0;
    double best_gain = -1.0;
    for (std::size_t m = 0; m < cb.size(); ++m) {
      const double g = std::norm(inner_product(ch[0].coefficients, cb.vectors[m]));
      if (g > best_gain) {
        best_gain = g;
        best = m;
      }
    }
    EXPECT_EQ(exhaustive_search(ch, cb, LinkBudget{}).assignment.actions[0], best);
  }
}

TEST(ExhaustiveSearch, MatchesPlainEnumerationAndDominatesRandom) {
  std::mt19937_64 rng(5);
  const BeamCodebook cb = build_codebook(ArrayGeometry{}, 16, {4, 6});
  const LinkBudget b{1.0, 0.02, 60e9};
  const auto ch = random_channels(2, 16, rng);
  double best = -1.0;
  BeamAssignment arg;
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double total = 0.0;
      for (std::size_t k = 0; k < 2; ++k) total += spectral_efficiency(k, ch, {{i, j}}, cb, b);
      if (total > best) {
        best = total;
        arg = {{i, j}};
      }
    }
  }
  const OracleResult r = exhaustive_search(ch, cb, b);
  EXPECT_EQ(r.assignment, arg);
  EXPECT_EQ(r.sum_se, best);
  std::uniform_int_distribution<std::size_t> pick(0, 2);
  for (int t = 0; t < 50; ++t) {
    EXPECT_GE(r.sum_se, sum_spectral_efficiency(ch, {{pick(rng), pick(rng)}}, cb, b));
  }
}

TEST(ExhaustiveSearch, TiesResolveToSmallestTupleForAnyWorkerCount) {
  // Identical beams make every assignment tie.
  BeamCodebook cb = unit_codebook(4);
  for (auto& v : cb.vectors) v = ComplexVector(4, Complex(0.5, 0.0));
  Channel h;
  h.coefficients.assign(4, Complex(1.0, 0.0));
  const std::vector<Channel> ch{h, h};
  for (std::size_t w : {1u, 2u, 3u, 8u}) {
    EXPECT_EQ(exhaustive_search(ch, cb, LinkBudget{}, w).assignment, (BeamAssignment{{0, 0}}));
  }
}

TEST(ExhaustiveSearch, ParallelMatchesSerial) {
  std::mt19937_64 rng(6);
  const BeamCodebook cb = build_codebook(ArrayGeometry{}, 64, {12, 49});
  const LinkBudget b{1.0, 0.01, 60e9};
  for (int t = 0; t < 5; ++t) {
    const auto ch = random_channels(2, 16, rng);
    const OracleResult a = exhaustive_search(ch, cb, b, 1);
    const OracleResult c = exhaustive_search(ch, cb, b, 4);
    EXPECT_EQ(a.assignment, c.assignment);
    EXPECT_EQ(a.sum_se, c.sum_se);
  }
}

TEST(ExhaustiveSearch, GuardRejectsHugeEnumerations) {
  const BeamCodebook cb = build_codebook(ArrayGeometry{}, 64, {0, 63});
  std::mt19937_64 rng(7);
  const auto ch = random_channels(4, 16, rng);  // 64^4 > 1e7
  EXPECT_THROW(exhaustive_search(ch, cb, LinkBudget{}), CapacityExceeded);
}

TEST(ShapedReward, HandValues) {
  const std::vector<double> r1{2.0, 3.0}, d1{5.0, 10.0};
  EXPECT_DOUBLE_EQ(shaped_reward(r1, d1, 0.0), 5.0);
  const std::vector<double> r2{4.0}, d2{1.0};
  EXPECT_DOUBLE_EQ(shaped_reward(r2, d2, 0.4), 4.0);
  const std::vector<double> r3{1.0}, d3{2.0};
  EXPECT_NEAR(shaped_reward(r3, d3, 0.4), 1.3195079107728942, 1e-12);
  const std::vector<double> bad{0.0};
  EXPECT_THROW(shaped_reward(r3, bad, 0.4), InvalidArgument);
}

TEST(AverageSeRegret, HandValues) {
  const std::vector<double> oracle{2.0, 4.0}, policy{1.0, 3.0};
  EXPECT_DOUBLE_EQ(average_se_regret(policy, oracle), 1.0);
  EXPECT_EQ(average_se_regret(oracle, oracle), 0.0);
  const std::vector<double> shorter{1.0};
  EXPECT_THROW(average_se_regret(shorter, oracle), InvalidArgument);
}
