#pragma once

// Layers with hand-written backward passes. Each layer is an immutable
// descriptor holding parameter indices; per-call state lives in a Cache
// that forward fills and backward consumes, so const forward passes may
// run concurrently on a shared ParameterSet.

#include <string>
#include <utility>
#include <vector>

#include "isacbeam/nn/parameters.hpp"
#include "isacbeam/rng.hpp"

namespace isacbeam::nn {

enum class Mode { kTrain, kEval };

// Row-wise affine map: (R, in) -> (R, out).
template <typename T>
class Linear {
 public:
  struct Cache {
    Tensor<T> input;
  };

  Linear() = default;
  Linear(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t out);

  Tensor<T> forward(const ParameterSet<T>& ps, const Tensor<T>& x, Cache* cache) const;
  Tensor<T> backward(ParameterSet<T>& ps, const Cache& cache, const Tensor<T>& grad_out) const;

  std::size_t in_features() const noexcept { return in_; }
  std::size_t out_features() const noexcept { return out_; }

 private:
  std::size_t weight_ = 0;
  std::size_t bias_ = 0;
  std::size_t in_ = 0;
  std::size_t out_ = 0;
};

// k x k convolution, stride 1, zero "same" padding: (B, Cin, H, W) -> (B, Cout, H, W).
template <typename T>
class Conv2d {
 public:
  struct Cache {
    Tensor<T> input;
  };

  Conv2d() = default;
  Conv2d(ParameterSet<T>& ps, const std::string& name, std::size_t in_channels,
         std::size_t out_channels, std::size_t kernel);

  Tensor<T> forward(const ParameterSet<T>& ps, const Tensor<T>& x, Cache* cache) const;
  Tensor<T> backward(ParameterSet<T>& ps, const Cache& cache, const Tensor<T>& grad_out) const;

 private:
  std::size_t weight_ = 0;
  std::size_t bias_ = 0;
  std::size_t cin_ = 0;
  std::size_t cout_ = 0;
  std::size_t kernel_ = 3;
};

// Per-channel batch normalisation over (B, H, W).
template <typename T>
class BatchNorm2d {
 public:
  static constexpr double kEpsilon = 1e-5;
  static constexpr double kMomentum = 0.1;

  struct Cache {
    Mode mode = Mode::kEval;
    Tensor<T> normalized;
    std::vector<T> inv_std;
    std::vector<T> batch_mean;
    std::vector<T> batch_var;  // unbiased
  };

  BatchNorm2d() = default;
  BatchNorm2d(ParameterSet<T>& ps, const std::string& name, std::size_t channels);

  Tensor<T> forward(const ParameterSet<T>& ps, const Tensor<T>& x, Mode mode, Cache* cache) const;
  Tensor<T> backward(ParameterSet<T>& ps, const Cache& cache, const Tensor<T>& grad_out) const;
  void update_running_stats(ParameterSet<T>& ps, const Cache& cache) const;

 private:
  std::size_t gamma_ = 0;
  std::size_t beta_ = 0;
  std::size_t running_mean_ = 0;
  std::size_t running_var_ = 0;
  std::size_t channels_ = 0;
};

// 2 x 2 max pooling, stride 2 (floor).
template <typename T>
class MaxPool2 {
 public:
  struct Cache {
    std::vector<std::size_t> input_shape;
    std::vector<std::size_t> argmax;
  };

  Tensor<T> forward(const Tensor<T>& x, Cache* cache) const;
  Tensor<T> backward(const Cache& cache, const Tensor<T>& grad_out) const;
};

template <typename T>
struct Relu {
  struct Cache {
    Tensor<T> output;
  };

  Tensor<T> forward(const Tensor<T>& x, Cache* cache) const;
  Tensor<T> backward(const Cache& cache, const Tensor<T>& grad_out) const;
};

// Inverted dropout; identity in eval mode or when rate == 0.
template <typename T>
class Dropout {
 public:
  struct Cache {
    std::vector<T> mask;  // empty when inactive
  };

  Dropout() = default;
  explicit Dropout(double rate) : rate_(rate) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode, Rng* rng, Cache* cache) const;
  Tensor<T> backward(const Cache& cache, const Tensor<T>& grad_out) const;

  double rate() const noexcept { return rate_; }

 private:
  double rate_ = 0.0;
};

// Normalises the last axis of a (R, D) tensor.
template <typename T>
class LayerNorm {
 public:
  static constexpr double kEpsilon = 1e-5;

  struct Cache {
    Tensor<T> normalized;
    std::vector<T> inv_std;
  };

  LayerNorm() = default;
  LayerNorm(ParameterSet<T>& ps, const std::string& name, std::size_t dim);

  Tensor<T> forward(const ParameterSet<T>& ps, const Tensor<T>& x, Cache* cache) const;
  Tensor<T> backward(ParameterSet<T>& ps, const Cache& cache, const Tensor<T>& grad_out) const;

 private:
  std::size_t gamma_ = 0;
  std::size_t beta_ = 0;
  std::size_t dim_ = 0;
};

// Scaled dot-product self-attention over (B, T, D) with H heads.
template <typename T>
class MultiHeadAttention {
 public:
  struct Cache {
    typename Linear<T>::Cache q_cache, k_cache, v_cache, out_cache;
    Tensor<T> q, k, v;
    Tensor<T> weights;  // (B, H, T, T), rows sum to one
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterSet<T>& ps, const std::string& name, std::size_t d_model,
                     std::size_t n_heads);

  Tensor<T> forward(const ParameterSet<T>& ps, const Tensor<T>& x, Cache* cache) const;
  Tensor<T> backward(ParameterSet<T>& ps, const Cache& cache, const Tensor<T>& grad_out) const;

  std::size_t heads() const noexcept { return heads_; }

 private:
  Linear<T> q_proj_, k_proj_, v_proj_, out_proj_;
  std::size_t d_model_ = 0;
  std::size_t heads_ = 1;
};

// Post-norm transformer encoder layer.
template <typename T>
class EncoderLayer {
 public:
  struct Cache {
    typename MultiHeadAttention<T>::Cache attn;
    typename Dropout<T>::Cache attn_drop, ffn_drop;
    typename LayerNorm<T>::Cache norm1, norm2;
    typename Linear<T>::Cache ffn_in, ffn_out;
    typename Relu<T>::Cache ffn_relu;
  };

  EncoderLayer() = default;
  EncoderLayer(ParameterSet<T>& ps, const std::string& name, std::size_t d_model,
               std::size_t n_heads, std::size_t ffn_dim, double dropout);

  Tensor<T> forward(const ParameterSet<T>& ps, const Tensor<T>& x, Mode mode, Rng* rng,
                    Cache* cache) const;
  Tensor<T> backward(ParameterSet<T>& ps, const Cache& cache, const Tensor<T>& grad_out) const;

 private:
  MultiHeadAttention<T> attention_;
  Dropout<T> attn_dropout_;
  LayerNorm<T> norm1_;
  Linear<T> ffn_in_;
  Relu<T> relu_;
  Linear<T> ffn_out_;
  Dropout<T> ffn_dropout_;
  LayerNorm<T> norm2_;
};

// Concatenates conv features and location, chunks the vector into
// ceil(len / d_model) zero-padded tokens and adds positional and modality
// embeddings. Modality 0 marks chunks made only of conv features, modality 1
// chunks that hold any location entry.
template <typename T>
class TokenBuilder {
 public:
  TokenBuilder() = default;
  TokenBuilder(ParameterSet<T>& ps, const std::string& name, std::size_t conv_features,
               std::size_t location_dim, std::size_t d_model);

  // (B, F), (B, L) -> (B, T, D)
  Tensor<T> forward(const ParameterSet<T>& ps, const Tensor<T>& conv, const Tensor<T>& location) const;
  // Returns gradients w.r.t. (conv, location).
  std::pair<Tensor<T>, Tensor<T>> backward(ParameterSet<T>& ps, const Tensor<T>& grad_out) const;

  std::size_t token_count() const noexcept { return tokens_; }
  std::size_t modality_of(std::size_t token) const noexcept;

 private:
  std::size_t positional_ = 0;
  std::size_t modality_ = 0;
  std::size_t conv_features_ = 0;
  std::size_t location_dim_ = 0;
  std::size_t d_model_ = 0;
  std::size_t tokens_ = 0;
};

}  // namespace isacbeam::nn
