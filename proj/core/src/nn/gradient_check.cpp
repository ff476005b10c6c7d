#include "isacbeam/nn/gradient_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

namespace isacbeam::nn {

std::string layer_type_of(const std::string& name) {
  auto starts = [&](const char* prefix) { return name.rfind(prefix, 0) == 0; };
  if (starts("conv")) return "conv";
  if (starts("bn")) return "batchnorm";
  if (starts("tokens")) return "embedding";
  if (starts("head")) return "linear";
  if (starts("enc")) {
    if (name.find(".attn.") != std::string::npos) return "attention";
    if (name.find(".ln") != std::string::npos) return "layernorm";
    if (name.find(".ffn") != std::string::npos) return "ffn";
  }
  return "other";
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

GradientCheckReport gradient_check(const QNetwork<double>& network, const Tensor<double>& images,
                                   const Tensor<double>& locations,
                                   std::span<const std::size_t> actions,
                                   std::span<const double> targets,
                                   const GradientCheckOptions& options) {
  QNetwork<double> net = network;
  const Mode mode = options.mode;

  auto loss_at = [&](QNetwork<double>& n) {
    Rng rng(options.dropout_seed);
    // forward() in train mode would move the running statistics; work on a
    // copy so every evaluation sees the same network.
    QNetwork<double> probe = n;
    const Tensor<double> q = probe.forward(images, locations, mode, &rng);
    return mse_loss<double>(q, actions, targets, nullptr);
  };

  QNetwork<double> work = net;
  work.zero_grad();
  Rng rng(options.dropout_seed);
  Tensor<double> q = work.forward(images, locations, mode, &rng);
  Tensor<double> grad_q;
  mse_loss<double>(q, actions, targets, &grad_q);
  work.backward(grad_q);

  GradientCheckReport report;
  auto record = [&](const std::string& type, double err) {
    auto [it, inserted] = report.max_error.emplace(type, err);
    if (!inserted) it->second = std::max(it->second, err);
    ++report.samples[type];
    report.overall = std::max(report.overall, err);
  };

  // Candidate (parameter, element) pairs per type, then a seeded subsample.
  std::map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> candidates;
  const auto& params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    auto& list = candidates[layer_type_of(params[i].name)];
    for (std::size_t j = 0; j < params[i].value.size(); ++j) list.emplace_back(i, j);
  }

  Rng pick(options.seed);
  const double h = options.step;
  for (auto& [type, list] : candidates) {
    std::shuffle(list.begin(), list.end(), pick);
    const std::size_t n = std::min(options.samples_per_type, list.size());
    for (std::size_t s = 0; s < n; ++s) {
      const auto [pi, ej] = list[s];
      double& value = net.parameters()[pi].value[ej];
      const double original = value;
      value = original + h;
      const double plus = loss_at(net);
      value = original - h;
      const double minus = loss_at(net);
      value = original;
      const double numeric = (plus - minus) / (2.0 * h);
      record(type, relative_error(work.parameters()[pi].grad[ej], numeric));
    }
  }

  // dL/dq through the selection mask, including the non-selected entries.
  for (std::size_t k = 0; k < q.size(); ++k) {
    Tensor<double> qp = q, qm = q;
    qp[k] += h;
    qm[k] -= h;
    const double numeric = (mse_loss<double>(qp, actions, targets, nullptr) -
                            mse_loss<double>(qm, actions, targets, nullptr)) /
                           (2.0 * h);
    record("mse", relative_error(grad_q[k], numeric));
  }
  return report;
}

}  // namespace isacbeam::nn
