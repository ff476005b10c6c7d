#pragma once

// Finite-difference verification of the analytic gradients of the masked
// MSE loss, grouped by layer type.

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "isacbeam/nn/qnetwork.hpp"

namespace isacbeam::nn {

struct GradientCheckOptions {
  std::size_t samples_per_type = 200;
  double step = 1e-5;
  std::uint64_t seed = 0;
  // kEval freezes batch-norm statistics and disables dropout. kTrain uses
  // batch statistics and replays the same dropout masks (drawn from
  // `dropout_seed`) for every evaluation.
  Mode mode = Mode::kEval;
  std::uint64_t dropout_seed = 1;
};

struct GradientCheckReport {
  std::map<std::string, double> max_error;     // keyed by layer type
  std::map<std::string, std::size_t> samples;  // parameters checked per type
  double overall = 0.0;
};

// Layer type a parameter belongs to: conv, batchnorm, embedding, attention,
// layernorm, ffn or linear.
std::string layer_type_of(const std::string& parameter_name);

double relative_error(double analytic, double numeric);

// Compares analytic and central-difference gradients of mse_loss over a
// seeded subsample of each layer type's parameters. The "mse" entry checks
// dL/dq itself.
GradientCheckReport gradient_check(const QNetwork<double>& network, const Tensor<double>& images,
                                   const Tensor<double>& locations,
                                   std::span<const std::size_t> actions,
                                   std::span<const double> targets,
                                   const GradientCheckOptions& options = {});

}  // namespace isacbeam::nn
