#pragma once

// Value network mapping an (ISAC image, location) context to one q-value per
// codebook beam: conv stack -> token builder -> transformer encoder ->
// linear head. With bypass_mmt the flattened conv features and the location
// go straight to the linear head.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "isacbeam/nn/layers.hpp"

namespace isacbeam::nn {

struct QNetworkConfig {
  std::size_t image_height = 64;
  std::size_t image_width = 64;
  std::size_t location_dim = 2;
  std::size_t n_actions = 38;

  std::vector<std::size_t> conv_filters{8, 8, 8, 8, 8, 4, 4, 1};
  std::size_t conv_kernel = 3;
  // Empty means "pool in the leading layers until the feature map is 8 x 8".
  std::vector<bool> pool_layers;

  std::size_t d_model = 40;
  std::size_t n_heads = 5;
  std::size_t ffn_dim = 2048;
  std::size_t encoder_layers = 1;
  double encoder_dropout = 0.1;

  std::vector<std::size_t> hidden_sizes{256, 256};
  double head_dropout = 0.4;

  bool bypass_mmt = false;

  // Fills pool_layers when empty and checks every invariant.
  QNetworkConfig resolved() const;
  void validate() const;

  std::size_t conv_output_height() const;
  std::size_t conv_output_width() const;
  std::size_t conv_feature_length() const;
  std::size_t token_count() const;

  friend bool operator==(const QNetworkConfig&, const QNetworkConfig&) = default;
};

// Pool the first layers until an H x W map shrinks to at most 8 x 8.
std::vector<bool> default_pool_layers(std::size_t height, std::size_t width, std::size_t layers);

struct AdamOptions {
  double learning_rate = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// One bias-corrected Adam update; `step` counts from 1.
template <typename T>
void adam_update(std::span<T> values, std::span<const T> grads, std::span<T> moment1,
                 std::span<T> moment2, std::uint64_t step, const AdamOptions& options);

// Mean over the batch of (q[b, action_b] - target_b)^2. When `grad` is
// non-null it receives dL/dq, nonzero only at the selected entries.
template <typename T>
T mse_loss(const Tensor<T>& q_values, std::span<const std::size_t> actions,
           std::span<const T> targets, Tensor<T>* grad);

template <typename T>
class QNetwork {
 public:
  QNetwork() = default;
  // Parameters Glorot-initialised from `seed`.
  QNetwork(const QNetworkConfig& config, std::uint64_t seed);

  const QNetworkConfig& config() const noexcept { return config_; }
  ParameterSet<T>& parameters() noexcept { return params_; }
  const ParameterSet<T>& parameters() const noexcept { return params_; }

  // images (B, 1, H, W), locations (B, L) -> q-values (B, M). Records the
  // activations needed by backward(). Train mode uses batch statistics,
  // updates the batch-norm running stats and draws dropout masks from `rng`.
  Tensor<T> forward(const Tensor<T>& images, const Tensor<T>& locations, Mode mode, Rng* rng);

  // Accumulates parameter gradients of the last forward() call.
  void backward(const Tensor<T>& grad_q);

  // Eval-mode forward without recording state; safe to call concurrently.
  Tensor<T> predict(const Tensor<T>& images, const Tensor<T>& locations) const;

  // Stage entry points (eval-only helpers used for inspection and tests).
  Tensor<T> conv_stage_forward(const Tensor<T>& images, Mode mode) const;
  Tensor<T> build_tokens(const Tensor<T>& conv_features, const Tensor<T>& locations) const;
  Tensor<T> encoder_forward(const Tensor<T>& tokens, Mode mode, Rng* rng) const;
  // Attention weights (B, H, T, T) of the first encoder layer for `tokens`.
  Tensor<T> attention_weights(const Tensor<T>& tokens) const;

  void zero_grad() { params_.zero_grad(); }

  // Adam step over all trainable parameters using their accumulated
  // gradients. Throws NumericError naming the first non-finite gradient.
  void adam_step(const AdamOptions& options);

  std::uint64_t optimizer_steps() const noexcept { return params_.adam_steps; }

 private:
  struct ConvBlock {
    Conv2d<T> conv;
    BatchNorm2d<T> norm;
    Relu<T> relu;
    bool pool = false;
    MaxPool2<T> pooling;
  };

  struct ConvBlockCache {
    typename Conv2d<T>::Cache conv;
    typename BatchNorm2d<T>::Cache norm;
    typename Relu<T>::Cache relu;
    typename MaxPool2<T>::Cache pool;
  };

  struct HeadCache {
    std::vector<typename Linear<T>::Cache> linear;
    std::vector<typename Relu<T>::Cache> relu;
    std::vector<typename Dropout<T>::Cache> dropout;
  };

  struct ForwardCache {
    std::vector<ConvBlockCache> conv;
    std::vector<std::size_t> conv_shape;
    std::vector<typename EncoderLayer<T>::Cache> encoder;
    std::size_t batch = 0;
    HeadCache head;
    bool valid = false;
  };

  void build();
  void initialize(std::uint64_t seed);
  Tensor<T> run_conv(const Tensor<T>& images, Mode mode, ForwardCache* cache) const;
  Tensor<T> run_head(const Tensor<T>& features, Mode mode, Rng* rng, HeadCache* cache) const;
  Tensor<T> run(const Tensor<T>& images, const Tensor<T>& locations, Mode mode, Rng* rng,
                ForwardCache* cache) const;

  QNetworkConfig config_;
  ParameterSet<T> params_;
  std::vector<ConvBlock> conv_;
  TokenBuilder<T> tokens_;
  std::vector<EncoderLayer<T>> encoder_;
  std::vector<Linear<T>> head_linear_;
  Relu<T> relu_;
  Dropout<T> head_dropout_;
  ForwardCache cache_;
};

// Copies parameter values, running statistics and optimizer state between
// networks with identical configs.
template <typename Dst, typename Src>
void copy_parameters(QNetwork<Dst>& dst, const QNetwork<Src>& src);

}  // namespace isacbeam::nn
