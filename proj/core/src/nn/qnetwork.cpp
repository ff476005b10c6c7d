#include "isacbeam/nn/qnetwork.hpp"

#include <cmath>
#include <random>

namespace isacbeam::nn {
namespace {

template <typename T>
void check_finite(const Tensor<T>& t, const char* stage) {
  if (!t.all_finite()) throw NumericError(std::string("non-finite values after ") + stage);
}

template <typename T>
Tensor<T> concat_columns(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  Tensor<T> out({rows, ca + cb});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data() + r * ca, ca, out.data() + r * (ca + cb));
    std::copy_n(b.data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
  }
  return out;
}

}  // namespace

std::vector<bool> default_pool_layers(std::size_t height, std::size_t width, std::size_t layers) {
  std::vector<bool> pools(layers, false);
  std::size_t h = height, w = width;
  for (std::size_t i = 0; i < layers && (h > 8 || w > 8) && h >= 2 && w >= 2; ++i) {
    pools[i] = true;
    h /= 2;
    w /= 2;
  }
  return pools;
}

QNetworkConfig QNetworkConfig::resolved() const {
  QNetworkConfig c = *this;
  if (c.pool_layers.empty()) {
    c.pool_layers = default_pool_layers(c.image_height, c.image_width, c.conv_filters.size());
  }
  c.validate();
  return c;
}

void QNetworkConfig::validate() const {
  if (conv_filters.empty()) throw ConfigError("at least one convolution layer is required");
  for (std::size_t f : conv_filters) {
    if (f == 0) throw ConfigError("convolution filter counts must be positive");
  }
  if (pool_layers.size() != conv_filters.size()) {
    throw ConfigError("pool_layers must have one entry per convolution layer");
  }
  if (conv_kernel == 0 || conv_kernel % 2 == 0) throw ConfigError("conv_kernel must be odd");
  if (image_height == 0 || image_width == 0) throw ConfigError("image dims must be positive");
  if (conv_output_height() < 1 || conv_output_width() < 1) {
    throw ConfigError("pooling collapses the feature map below 1x1");
  }
  if (n_actions < 1) throw ConfigError("n_actions must be >= 1");
  if (location_dim < 1) throw ConfigError("location_dim must be >= 1");
  if (n_heads == 0 || d_model == 0 || d_model % n_heads != 0) {
    throw ConfigError("d_model must be a positive multiple of n_heads");
  }
  if (ffn_dim == 0) throw ConfigError("ffn_dim must be positive");
  if (!bypass_mmt && encoder_layers == 0) throw ConfigError("encoder_layers must be >= 1");
  if (!(encoder_dropout >= 0.0 && encoder_dropout < 1.0) ||
      !(head_dropout >= 0.0 && head_dropout < 1.0)) {
    throw ConfigError("dropout rates must lie in [0, 1)");
  }
  for (std::size_t hsz : hidden_sizes) {
    if (hsz == 0) throw ConfigError("hidden layer sizes must be positive");
  }
}

std::size_t QNetworkConfig::conv_output_height() const {
  std::size_t h = image_height;
  for (bool p : pool_layers) h = p ? h / 2 : h;
  return h;
}

std::size_t QNetworkConfig::conv_output_width() const {
  std::size_t w = image_width;
  for (bool p : pool_layers) w = p ? w / 2 : w;
  return w;
}

std::size_t QNetworkConfig::conv_feature_length() const {
  return conv_filters.back() * conv_output_height() * conv_output_width();
}

std::size_t QNetworkConfig::token_count() const {
  return (conv_feature_length() + location_dim + d_model - 1) / d_model;
}

template <typename T>
void adam_update(std::span<T> values, std::span<const T> grads, std::span<T> moment1,
                 std::span<T> moment2, std::uint64_t step, const AdamOptions& o) {
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double g = grads[i];
    const double m = o.beta1 * moment1[i] + (1.0 - o.beta1) * g;
    const double v = o.beta2 * moment2[i] + (1.0 - o.beta2) * g * g;
    moment1[i] = static_cast<T>(m);
    moment2[i] = static_cast<T>(v);
    const double update = o.learning_rate * (m / c1) / (std::sqrt(v / c2) + o.epsilon);
    values[i] = static_cast<T>(values[i] - update);
  }
}

template <typename T>
T mse_loss(const Tensor<T>& q_values, std::span<const std::size_t> actions,
           std::span<const T> targets, Tensor<T>* grad) {
  if (q_values.rank() != 2) throw InvalidArgument("q-values must be (batch, actions)");
  const std::size_t batch = q_values.dim(0), m = q_values.dim(1);
  if (actions.size() != batch || targets.size() != batch) {
    throw InvalidArgument("one action and target per batch row required");
  }
  if (grad) *grad = Tensor<T>(q_values.shape());
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (actions[b] >= m) throw InvalidArgument("action index out of range");
    const double diff = static_cast<double>(q_values[b * m + actions[b]]) - targets[b];
    loss += diff * diff;
    if (grad) (*grad)[b * m + actions[b]] = static_cast<T>(2.0 * diff / static_cast<double>(batch));
  }
  return static_cast<T>(loss / static_cast<double>(batch));
}

template <typename T>
QNetwork<T>::QNetwork(const QNetworkConfig& config, std::uint64_t seed)
    : config_(config.resolved()) {
  build();
  initialize(seed);
}

template <typename T>
void QNetwork<T>::build() {
  const QNetworkConfig& c = config_;
  std::size_t channels = 1;
  for (std::size_t i = 0; i < c.conv_filters.size(); ++i) {
    const std::string name = "conv" + std::to_string(i);
    ConvBlock block;
    block.conv = Conv2d<T>(params_, name, channels, c.conv_filters[i], c.conv_kernel);
    block.norm = BatchNorm2d<T>(params_, "bn" + std::to_string(i), c.conv_filters[i]);
    block.pool = c.pool_layers[i];
    conv_.push_back(block);
    channels = c.conv_filters[i];
  }

  std::size_t head_in = c.conv_feature_length() + c.location_dim;
  if (!c.bypass_mmt) {
    tokens_ = TokenBuilder<T>(params_, "tokens", c.conv_feature_length(), c.location_dim, c.d_model);
    for (std::size_t l = 0; l < c.encoder_layers; ++l) {
      encoder_.emplace_back(params_, "enc" + std::to_string(l), c.d_model, c.n_heads, c.ffn_dim,
                            c.encoder_dropout);
    }
    head_in = c.d_model;
  }

  std::size_t in = head_in;
  for (std::size_t i = 0; i < c.hidden_sizes.size(); ++i) {
    head_linear_.emplace_back(params_, "head" + std::to_string(i), in, c.hidden_sizes[i]);
    in = c.hidden_sizes[i];
  }
  head_linear_.emplace_back(params_, "head" + std::to_string(c.hidden_sizes.size()), in,
                            c.n_actions);
  head_dropout_ = Dropout<T>(c.head_dropout);
}

template <typename T>
void QNetwork<T>::initialize(std::uint64_t seed) {
  Rng rng(seed);
  for (auto& p : params_) {
    switch (p.init) {
      case Init::kZeros:
        p.value.fill(T(0));
        break;
      case Init::kOnes:
        p.value.fill(T(1));
        break;
      case Init::kGlorotUniform: {
        const double bound = std::sqrt(6.0 / static_cast<double>(p.fan_in + p.fan_out));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (auto& v : p.value.values()) v = static_cast<T>(u(rng));
        break;
      }
    }
  }
}

template <typename T>
Tensor<T> QNetwork<T>::run_conv(const Tensor<T>& images, Mode mode, ForwardCache* cache) const {
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != config_.image_height ||
      images.dim(3) != config_.image_width) {
    throw InvalidArgument("image batch must be (B, 1, " + std::to_string(config_.image_height) +
                          ", " + std::to_string(config_.image_width) + "), got " +
                          shape_string(images.shape()));
  }
  if (cache) cache->conv.assign(conv_.size(), {});
  Tensor<T> x = images;
  for (std::size_t i = 0; i < conv_.size(); ++i) {
    const ConvBlock& blk = conv_[i];
    ConvBlockCache* bc = cache ? &cache->conv[i] : nullptr;
    x = blk.conv.forward(params_, x, bc ? &bc->conv : nullptr);
    x = blk.norm.forward(params_, x, mode, bc ? &bc->norm : nullptr);
    x = blk.relu.forward(x, bc ? &bc->relu : nullptr);
    if (blk.pool) x = blk.pooling.forward(x, bc ? &bc->pool : nullptr);
    check_finite(x, "convolution block");
  }
  if (cache) cache->conv_shape = x.shape();
  const std::size_t batch = x.dim(0);
  x.reshape({batch, x.size() / batch});
  return x;
}

template <typename T>
Tensor<T> QNetwork<T>::run_head(const Tensor<T>& features, Mode mode, Rng* rng,
                                HeadCache* cache) const {
  const std::size_t n = head_linear_.size();
  if (cache) {
    cache->linear.assign(n, {});
    cache->relu.assign(n - 1, {});
    cache->dropout.assign(n - 1, {});
  }
  Tensor<T> x = features;
  for (std::size_t i = 0; i < n; ++i) {
    x = head_linear_[i].forward(params_, x, cache ? &cache->linear[i] : nullptr);
    if (i + 1 < n) {
      x = relu_.forward(x, cache ? &cache->relu[i] : nullptr);
      x = head_dropout_.forward(x, mode, rng, cache ? &cache->dropout[i] : nullptr);
    }
  }
  check_finite(x, "linear head");
  return x;
}

template <typename T>
Tensor<T> QNetwork<T>::run(const Tensor<T>& images, const Tensor<T>& locations, Mode mode, Rng* rng,
                           ForwardCache* cache) const {
  if (locations.rank() != 2 || locations.dim(1) != config_.location_dim ||
      locations.dim(0) != images.dim(0)) {
    throw InvalidArgument("location batch must be (B, " + std::to_string(config_.location_dim) +
                          ")");
  }
  Tensor<T> conv = run_conv(images, mode, cache);
  if (cache) cache->batch = conv.dim(0);

  if (config_.bypass_mmt) {
    return run_head(concat_columns(conv, locations), mode, rng, cache ? &cache->head : nullptr);
  }

  Tensor<T> x = tokens_.forward(params_, conv, locations);
  if (cache) cache->encoder.assign(encoder_.size(), {});
  for (std::size_t l = 0; l < encoder_.size(); ++l) {
    x = encoder_[l].forward(params_, x, mode, rng, cache ? &cache->encoder[l] : nullptr);
    check_finite(x, "encoder layer");
  }
  // Mean over tokens.
  const std::size_t batch = x.dim(0), tokens = x.dim(1), d = x.dim(2);
  Tensor<T> pooled({batch, d});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < tokens; ++t) {
      for (std::size_t j = 0; j < d; ++j) pooled[b * d + j] += x[(b * tokens + t) * d + j];
    }
  }
  for (auto& v : pooled.values()) v /= static_cast<T>(tokens);
  return run_head(pooled, mode, rng, cache ? &cache->head : nullptr);
}

template <typename T>
Tensor<T> QNetwork<T>::forward(const Tensor<T>& images, const Tensor<T>& locations, Mode mode,
                               Rng* rng) {
  cache_.valid = false;
  Tensor<T> q = run(images, locations, mode, rng, &cache_);
  if (mode == Mode::kTrain) {
    for (std::size_t i = 0; i < conv_.size(); ++i) {
      conv_[i].norm.update_running_stats(params_, cache_.conv[i].norm);
    }
  }
  cache_.valid = true;
  return q;
}

template <typename T>
void QNetwork<T>::backward(const Tensor<T>& grad_q) {
  if (!cache_.valid) throw InvalidArgument("backward() without a preceding forward()");
  HeadCache& hc = cache_.head;
  const std::size_t n = head_linear_.size();
  Tensor<T> g = grad_q;
  for (std::size_t i = n; i-- > 0;) {
    if (i + 1 < n) {
      g = head_dropout_.backward(hc.dropout[i], g);
      g = relu_.backward(hc.relu[i], g);
    }
    g = head_linear_[i].backward(params_, hc.linear[i], g);
  }

  const std::size_t batch = cache_.batch;
  const std::size_t conv_len = config_.conv_feature_length();
  Tensor<T> g_conv({batch, conv_len});
  if (config_.bypass_mmt) {
    const std::size_t width = g.dim(1);
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(g.data() + b * width, conv_len, g_conv.data() + b * conv_len);
    }
  } else {
    const std::size_t tokens = tokens_.token_count(), d = config_.d_model;
    Tensor<T> gx({batch, tokens, d});
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t t = 0; t < tokens; ++t) {
        for (std::size_t j = 0; j < d; ++j) {
          gx[(b * tokens + t) * d + j] = g[b * d + j] / static_cast<T>(tokens);
        }
      }
    }
    for (std::size_t l = encoder_.size(); l-- > 0;) {
      gx = encoder_[l].backward(params_, cache_.encoder[l], gx);
    }
    g_conv = tokens_.backward(params_, gx).first;
  }

  g_conv.reshape(cache_.conv_shape);
  for (std::size_t i = conv_.size(); i-- > 0;) {
    const ConvBlock& blk = conv_[i];
    ConvBlockCache& bc = cache_.conv[i];
    if (blk.pool) g_conv = blk.pooling.backward(bc.pool, g_conv);
    g_conv = blk.relu.backward(bc.relu, g_conv);
    g_conv = blk.norm.backward(params_, bc.norm, g_conv);
    g_conv = blk.conv.backward(params_, bc.conv, g_conv);
  }
}

template <typename T>
Tensor<T> QNetwork<T>::predict(const Tensor<T>& images, const Tensor<T>& locations) const {
  return run(images, locations, Mode::kEval, nullptr, nullptr);
}

template <typename T>
Tensor<T> QNetwork<T>::conv_stage_forward(const Tensor<T>& images, Mode mode) const {
  return run_conv(images, mode, nullptr);
}

template <typename T>
Tensor<T> QNetwork<T>::build_tokens(const Tensor<T>& conv_features,
                                    const Tensor<T>& locations) const {
  if (config_.bypass_mmt) throw InvalidArgument("network bypasses the transformer encoder");
  return tokens_.forward(params_, conv_features, locations);
}

template <typename T>
Tensor<T> QNetwork<T>::encoder_forward(const Tensor<T>& tokens, Mode mode, Rng* rng) const {
  if (config_.bypass_mmt) throw InvalidArgument("network bypasses the transformer encoder");
  Tensor<T> x = tokens;
  for (const auto& layer : encoder_) x = layer.forward(params_, x, mode, rng, nullptr);
  return x;
}

template <typename T>
Tensor<T> QNetwork<T>::attention_weights(const Tensor<T>& tokens) const {
  if (config_.bypass_mmt) throw InvalidArgument("network bypasses the transformer encoder");
  typename EncoderLayer<T>::Cache cache;
  encoder_.front().forward(params_, tokens, Mode::kEval, nullptr, &cache);
  return cache.attn.weights;
}

template <typename T>
void QNetwork<T>::adam_step(const AdamOptions& options) {
  for (const auto& p : params_) {
    if (p.trainable && !p.grad.all_finite()) {
      throw NumericError("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  const std::uint64_t step = ++params_.adam_steps;
  for (auto& p : params_) {
    if (!p.trainable) continue;
    adam_update<T>(p.value.values(), p.grad.values(), p.moment1.values(), p.moment2.values(), step,
                   options);
  }
}

template <typename Dst, typename Src>
void copy_parameters(QNetwork<Dst>& dst, const QNetwork<Src>& src) {
  if (!(dst.config() == src.config())) throw InvalidArgument("network configs differ");
  auto& dp = dst.parameters();
  const auto& sp = src.parameters();
  for (std::size_t i = 0; i < dp.size(); ++i) {
    auto copy = [](auto& to, const auto& from) {
      for (std::size_t j = 0; j < from.size(); ++j) to[j] = static_cast<Dst>(from[j]);
    };
    copy(dp[i].value, sp[i].value);
    if (dp[i].trainable) {
      copy(dp[i].moment1, sp[i].moment1);
      copy(dp[i].moment2, sp[i].moment2);
    }
  }
  dp.adam_steps = sp.adam_steps;
}

template class QNetwork<float>;
template class QNetwork<double>;

template void adam_update<float>(std::span<float>, std::span<const float>, std::span<float>,
                                 std::span<float>, std::uint64_t, const AdamOptions&);
template void adam_update<double>(std::span<double>, std::span<const double>, std::span<double>,
                                  std::span<double>, std::uint64_t, const AdamOptions&);
template float mse_loss<float>(const Tensor<float>&, std::span<const std::size_t>,
                               std::span<const float>, Tensor<float>*);
template double mse_loss<double>(const Tensor<double>&, std::span<const std::size_t>,
                                 std::span<const double>, Tensor<double>*);
template void copy_parameters<float, float>(QNetwork<float>&, const QNetwork<float>&);
template void copy_parameters<double, float>(QNetwork<double>&, const QNetwork<float>&);
template void copy_parameters<float, double>(QNetwork<float>&, const QNetwork<double>&);
template void copy_parameters<double, double>(QNetwork<double>&, const QNetwork<double>&);

}  // namespace isacbeam::nn
