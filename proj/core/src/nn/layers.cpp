#include "isacbeam/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace isacbeam::nn {
namespace {

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// y += a * x
template <typename T>
void axpy(T* __restrict y, const T* __restrict x, T a, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

// Unfolds one (C, H, W) image into (C*k*k, H*W) zero-padded patches.
template <typename T>
void im2col(const T* in, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kernel, T* cols) {
  const long h = static_cast<long>(height), w = static_cast<long>(width);
  const long pad = static_cast<long>(kernel / 2);
  const std::size_t plane = height * width;
  T* row = cols;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* src = in + c * plane;
    for (long ky = 0; ky < static_cast<long>(kernel); ++ky) {
      for (long kx = 0; kx < static_cast<long>(kernel); ++kx, row += plane) {
        const long dy = ky - pad, dx = kx - pad;
        for (long yy = 0; yy < h; ++yy) {
          T* dst = row + yy * w;
          const long sy = yy + dy;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, T(0));
            continue;
          }
          for (long xx = 0; xx < w; ++xx) {
            const long sx = xx + dx;
            dst[xx] = (sx >= 0 && sx < w) ? src[sy * w + sx] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters patch gradients back onto the image.
template <typename T>
void col2im_add(const T* cols, std::size_t channels, std::size_t height, std::size_t width,
                std::size_t kernel, T* out) {
  const long h = static_cast<long>(height), w = static_cast<long>(width);
  const long pad = static_cast<long>(kernel / 2);
  const std::size_t plane = height * width;
  const T* row = cols;
  for (std::size_t c = 0; c < channels; ++c) {
    T* dst = out + c * plane;
    for (long ky = 0; ky < static_cast<long>(kernel); ++ky) {
      for (long kx = 0; kx < static_cast<long>(kernel); ++kx, row += plane) {
        const long dy = ky - pad, dx = kx - pad;
        const long y0 = std::max(0L, -dy), y1 = std::min(h, h - dy);
        const long x0 = std::max(0L, -dx), x1 = std::min(w, w - dx);
        for (long yy = y0; yy < y1; ++yy) {
          T* drow = dst + (yy + dy) * w + dx;
          const T* srow = row + yy * w;
          for (long xx = x0; xx < x1; ++xx) drow[xx] += srow[xx];
        }
      }
    }
  }
}

void require_rank(const std::vector<std::size_t>& shape, std::size_t rank, const char* layer) {
  if (shape.size() != rank) {
    throw InvalidArgument(std::string(layer) + " expects a rank-" + std::to_string(rank) +
                          " input, got " + shape_string(shape));
  }
}

}  // namespace

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t out)
    : in_(in), out_(out) {
  weight_ = ps.add(name + ".weight", {out, in}, Init::kGlorotUniform, true, in, out);
  bias_ = ps.add(name + ".bias", {out}, Init::kZeros);
}

template <typename T>
Tensor<T> Linear<T>::forward(const ParameterSet<T>& ps, const Tensor<T>& x, Cache* cache) const {
  require_rank(x.shape(), 2, "Linear");
  if (x.dim(1) != in_) {
    throw InvalidArgument("Linear expects " + std::to_string(in_) + " features, got " +
                          std::to_string(x.dim(1)));
  }
  const std::size_t rows = x.dim(0);
  const T* w = ps[weight_].value.data();
  const T* b = ps[bias_].value.data();
  // Column-major copy of W so the inner loop runs over outputs.
  std::vector<T> wt(in_ * out_);
  for (std::size_t o = 0; o < out_; ++o) {
    for (std::size_t i = 0; i < in_; ++i) wt[i * out_ + o] = w[o * in_ + i];
  }
  Tensor<T> y({rows, out_});
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * in_;
    T* yr = y.data() + r * out_;
    std::copy(b, b + out_, yr);
    for (std::size_t i = 0; i < in_; ++i) {
      const T xi = xr[i];
      if (xi == T(0)) continue;
      const T* wi = wt.data() + i * out_;
      for (std::size_t o = 0; o < out_; ++o) yr[o] += wi[o] * xi;
    }
  }
  if (cache) cache->input = x;
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(ParameterSet<T>& ps, const Cache& cache,
                              const Tensor<T>& grad_out) const {
  const Tensor<T>& x = cache.input;
  const std::size_t rows = x.dim(0);
  const T* w = ps[weight_].value.data();
  T* gw = ps[weight_].grad.data();
  T* gb = ps[bias_].grad.data();
  Tensor<T> gx({rows, in_});
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * in_;
    const T* gr = grad_out.data() + r * out_;
    T* gxr = gx.data() + r * in_;
    for (std::size_t o = 0; o < out_; ++o) {
      const T g = gr[o];
      if (g == T(0)) continue;
      gb[o] += g;
      const T* wo = w + o * in_;
      T* gwo = gw + o * in_;
      for (std::size_t i = 0; i < in_; ++i) {
        gwo[i] += g * xr[i];
        gxr[i] += g * wo[i];
      }
    }
  }
  return gx;
}

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(ParameterSet<T>& ps, const std::string& name, std::size_t in_channels,
                  std::size_t out_channels, std::size_t kernel)
    : cin_(in_channels), cout_(out_channels), kernel_(kernel) {
  if (kernel % 2 == 0) throw ConfigError("convolution kernel must be odd for same padding");
  weight_ = ps.add(name + ".weight", {out_channels, in_channels, kernel, kernel},
                   Init::kGlorotUniform, true, in_channels * kernel * kernel,
                   out_channels * kernel * kernel);
  bias_ = ps.add(name + ".bias", {out_channels}, Init::kZeros);
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const ParameterSet<T>& ps, const Tensor<T>& x, Cache* cache) const {
  require_rank(x.shape(), 4, "Conv2d");
  if (x.dim(1) != cin_) throw InvalidArgument("Conv2d input channel mismatch");
  const std::size_t batch = x.dim(0);
  const std::size_t plane = x.dim(2) * x.dim(3);
  const std::size_t rows = cin_ * kernel_ * kernel_;
  const T* wt = ps[weight_].value.data();
  const T* bias = ps[bias_].value.data();

  Tensor<T> y({batch, cout_, x.dim(2), x.dim(3)});
  std::vector<T> cols(rows * plane);
  for (std::size_t b = 0; b < batch; ++b) {
    im2col(x.data() + b * cin_ * plane, cin_, x.dim(2), x.dim(3), kernel_, cols.data());
    for (std::size_t co = 0; co < cout_; ++co) {
      T* out = y.data() + (b * cout_ + co) * plane;
      std::fill(out, out + plane, bias[co]);
      const T* wrow = wt + co * rows;
      for (std::size_t r = 0; r < rows; ++r) axpy(out, cols.data() + r * plane, wrow[r], plane);
    }
  }
  if (cache) cache->input = x;
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(ParameterSet<T>& ps, const Cache& cache,
                              const Tensor<T>& grad_out) const {
  const Tensor<T>& x = cache.input;
  const std::size_t batch = x.dim(0);
  const std::size_t plane = x.dim(2) * x.dim(3);
  const std::size_t rows = cin_ * kernel_ * kernel_;
  const T* wt = ps[weight_].value.data();
  T* gw = ps[weight_].grad.data();
  T* gb = ps[bias_].grad.data();

  Tensor<T> gx(x.shape());
  std::vector<T> cols(rows * plane), cols_t(plane * rows), gcols(rows * plane);
  for (std::size_t b = 0; b < batch; ++b) {
    im2col(x.data() + b * cin_ * plane, cin_, x.dim(2), x.dim(3), kernel_, cols.data());
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t n = 0; n < plane; ++n) cols_t[n * rows + r] = cols[r * plane + n];
    }
    const T* g = grad_out.data() + b * cout_ * plane;
    std::fill(gcols.begin(), gcols.end(), T(0));
    for (std::size_t co = 0; co < cout_; ++co) {
      const T* gco = g + co * plane;
      T gsum = 0;
      for (std::size_t n = 0; n < plane; ++n) gsum += gco[n];
      gb[co] += gsum;
      T* gwrow = gw + co * rows;
      for (std::size_t n = 0; n < plane; ++n) {
        if (gco[n] != T(0)) axpy(gwrow, cols_t.data() + n * rows, gco[n], rows);
      }
      const T* wrow = wt + co * rows;
      for (std::size_t r = 0; r < rows; ++r) axpy(gcols.data() + r * plane, gco, wrow[r], plane);
    }
    col2im_add(gcols.data(), cin_, x.dim(2), x.dim(3), kernel_, gx.data() + b * cin_ * plane);
  }
  return gx;
}

// ---------------------------------------------------------------- BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(ParameterSet<T>& ps, const std::string& name, std::size_t channels)
    : channels_(channels) {
  gamma_ = ps.add(name + ".gamma", {channels}, Init::kOnes);
  beta_ = ps.add(name + ".beta", {channels}, Init::kZeros);
  running_mean_ = ps.add(name + ".running_mean", {channels}, Init::kZeros, false);
  running_var_ = ps.add(name + ".running_var", {channels}, Init::kOnes, false);
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const ParameterSet<T>& ps, const Tensor<T>& x, Mode mode,
                                  Cache* cache) const {
  require_rank(x.shape(), 4, "BatchNorm2d");
  if (x.dim(1) != channels_) throw InvalidArgument("BatchNorm2d channel mismatch");
  const std::size_t batch = x.dim(0);
  const std::size_t plane = x.dim(2) * x.dim(3);
  const std::size_t count = batch * plane;
  const T* gamma = ps[gamma_].value.data();
  const T* beta = ps[beta_].value.data();

  std::vector<T> mean(channels_), inv_std(channels_), unbiased(channels_, T(0));
  if (mode == Mode::kTrain) {
    for (std::size_t c = 0; c < channels_; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = x.data() + (b * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* p = x.data() + (b * channels_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) ss += (p[i] - m) * (p[i] - m);
      }
      const double var = ss / static_cast<double>(count);
      mean[c] = static_cast<T>(m);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + kEpsilon));
      unbiased[c] = static_cast<T>(count > 1 ? ss / static_cast<double>(count - 1) : var);
    }
  } else {
    const T* rm = ps[running_mean_].value.data();
    const T* rv = ps[running_var_].value.data();
    for (std::size_t c = 0; c < channels_; ++c) {
      mean[c] = rm[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(rv[c]) + kEpsilon));
    }
  }

  Tensor<T> y(x.shape());
  Tensor<T> xhat(cache ? x.shape() : std::vector<std::size_t>{});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels_; ++c) {
      const std::size_t off = (b * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T n = (x[off + i] - mean[c]) * inv_std[c];
        if (cache) xhat[off + i] = n;
        y[off + i] = gamma[c] * n + beta[c];
      }
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->batch_mean = std::move(mean);
    cache->batch_var = std::move(unbiased);
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(ParameterSet<T>& ps, const Cache& cache,
                                   const Tensor<T>& grad_out) const {
  const Tensor<T>& xhat = cache.normalized;
  const std::size_t batch = xhat.dim(0);
  const std::size_t plane = xhat.dim(2) * xhat.dim(3);
  const double count = static_cast<double>(batch * plane);
  const T* gamma = ps[gamma_].value.data();
  T* ggamma = ps[gamma_].grad.data();
  T* gbeta = ps[beta_].grad.data();

  Tensor<T> gx(xhat.shape());
  for (std::size_t c = 0; c < channels_; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_g += grad_out[off + i];
        sum_gx += grad_out[off + i] * xhat[off + i];
      }
    }
    ggamma[c] += static_cast<T>(sum_gx);
    gbeta[c] += static_cast<T>(sum_g);

    const double scale = static_cast<double>(gamma[c]) * cache.inv_std[c];
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels_ + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        if (cache.mode == Mode::kTrain) {
          gx[off + i] = static_cast<T>(
              scale * (grad_out[off + i] - sum_g / count - xhat[off + i] * sum_gx / count));
        } else {
          gx[off + i] = static_cast<T>(scale * grad_out[off + i]);
        }
      }
    }
  }
  return gx;
}

template <typename T>
void BatchNorm2d<T>::update_running_stats(ParameterSet<T>& ps, const Cache& cache) const {
  if (cache.mode != Mode::kTrain) return;
  T* rm = ps[running_mean_].value.data();
  T* rv = ps[running_var_].value.data();
  const T mom = static_cast<T>(kMomentum);
  for (std::size_t c = 0; c < channels_; ++c) {
    rm[c] = (T(1) - mom) * rm[c] + mom * cache.batch_mean[c];
    rv[c] = (T(1) - mom) * rv[c] + mom * cache.batch_var[c];
  }
}

// ---------------------------------------------------------------- MaxPool2

template <typename T>
Tensor<T> MaxPool2<T>::forward(const Tensor<T>& x, Cache* cache) const {
  require_rank(x.shape(), 4, "MaxPool2");
  const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) throw InvalidArgument("max-pool input smaller than 2x2");
  Tensor<T> y({batch, ch, oh, ow});
  if (cache) {
    cache->input_shape = x.shape();
    cache->argmax.assign(y.size(), 0);
  }
  std::size_t o = 0;
  for (std::size_t bc = 0; bc < batch * ch; ++bc) {
    const std::size_t base = bc * h * w;
    for (std::size_t r = 0; r < oh; ++r) {
      for (std::size_t c = 0; c < ow; ++c, ++o) {
        std::size_t best = base + (2 * r) * w + 2 * c;
        for (std::size_t dr = 0; dr < 2; ++dr) {
          for (std::size_t dc = 0; dc < 2; ++dc) {
            const std::size_t idx = base + (2 * r + dr) * w + 2 * c + dc;
            if (x[idx] > x[best]) best = idx;
          }
        }
        y[o] = x[best];
        if (cache) cache->argmax[o] = best;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> MaxPool2<T>::backward(const Cache& cache, const Tensor<T>& grad_out) const {
  Tensor<T> gx(cache.input_shape);
  for (std::size_t o = 0; o < grad_out.size(); ++o) gx[cache.argmax[o]] += grad_out[o];
  return gx;
}

// ---------------------------------------------------------------- Relu

template <typename T>
Tensor<T> Relu<T>::forward(const Tensor<T>& x, Cache* cache) const {
  Tensor<T> y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = y[i] > T(0) ? y[i] : T(0);
  if (cache) cache->output = y;
  return y;
}

template <typename T>
Tensor<T> Relu<T>::backward(const Cache& cache, const Tensor<T>& grad_out) const {
  Tensor<T> gx = grad_out;
  const T* out = cache.output.data();
  T* g = gx.data();
  for (std::size_t i = 0; i < gx.size(); ++i) g[i] = out[i] > T(0) ? g[i] : T(0);
  return gx;
}

// ---------------------------------------------------------------- Dropout

template <typename T>
Tensor<T> Dropout<T>::forward(const Tensor<T>& x, Mode mode, Rng* rng, Cache* cache) const {
  if (mode == Mode::kEval || rate_ <= 0.0) {
    if (cache) cache->mask.clear();
    return x;
  }
  if (!rng) throw InvalidArgument("train-mode dropout requires a generator");
  std::bernoulli_distribution keep(1.0 - rate_);
  const T scale = static_cast<T>(1.0 / (1.0 - rate_));
  std::vector<T> mask(x.size());
  Tensor<T> y = x;
  for (std::size_t i = 0; i < y.size(); ++i) {
    mask[i] = keep(*rng) ? scale : T(0);
    y[i] *= mask[i];
  }
  if (cache) cache->mask = std::move(mask);
  return y;
}

template <typename T>
Tensor<T> Dropout<T>::backward(const Cache& cache, const Tensor<T>& grad_out) const {
  if (cache.mask.empty()) return grad_out;
  Tensor<T> gx = grad_out;
  for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= cache.mask[i];
  return gx;
}

// ---------------------------------------------------------------- LayerNorm

template <typename T>
LayerNorm<T>::LayerNorm(ParameterSet<T>& ps, const std::string& name, std::size_t dim) : dim_(dim) {
  gamma_ = ps.add(name + ".gamma", {dim}, Init::kOnes);
  beta_ = ps.add(name + ".beta", {dim}, Init::kZeros);
}

template <typename T>
Tensor<T> LayerNorm<T>::forward(const ParameterSet<T>& ps, const Tensor<T>& x, Cache* cache) const {
  require_rank(x.shape(), 2, "LayerNorm");
  if (x.dim(1) != dim_) throw InvalidArgument("LayerNorm width mismatch");
  const std::size_t rows = x.dim(0);
  const T* gamma = ps[gamma_].value.data();
  const T* beta = ps[beta_].value.data();
  Tensor<T> y(x.shape());
  Tensor<T> xhat(cache ? x.shape() : std::vector<std::size_t>{});
  std::vector<T> inv(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * dim_;
    double m = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) m += xr[i];
    m /= static_cast<double>(dim_);
    double v = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) v += (xr[i] - m) * (xr[i] - m);
    v /= static_cast<double>(dim_);
    const double is = 1.0 / std::sqrt(v + kEpsilon);
    inv[r] = static_cast<T>(is);
    for (std::size_t i = 0; i < dim_; ++i) {
      const T n = static_cast<T>((xr[i] - m) * is);
      if (cache) xhat[r * dim_ + i] = n;
      y[r * dim_ + i] = gamma[i] * n + beta[i];
    }
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv);
  }
  return y;
}

template <typename T>
Tensor<T> LayerNorm<T>::backward(ParameterSet<T>& ps, const Cache& cache,
                                 const Tensor<T>& grad_out) const {
  const Tensor<T>& xhat = cache.normalized;
  const std::size_t rows = xhat.dim(0);
  const T* gamma = ps[gamma_].value.data();
  T* ggamma = ps[gamma_].grad.data();
  T* gbeta = ps[beta_].grad.data();
  Tensor<T> gx(xhat.shape());
  const double d = static_cast<double>(dim_);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* g = grad_out.data() + r * dim_;
    const T* n = xhat.data() + r * dim_;
    double sum_dn = 0.0, sum_dn_n = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) {
      ggamma[i] += g[i] * n[i];
      gbeta[i] += g[i];
      const double dn = static_cast<double>(g[i]) * gamma[i];
      sum_dn += dn;
      sum_dn_n += dn * n[i];
    }
    for (std::size_t i = 0; i < dim_; ++i) {
      const double dn = static_cast<double>(g[i]) * gamma[i];
      gx[r * dim_ + i] =
          static_cast<T>(cache.inv_std[r] * (dn - sum_dn / d - n[i] * sum_dn_n / d));
    }
  }
  return gx;
}

// ---------------------------------------------------------------- MultiHeadAttention

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(ParameterSet<T>& ps, const std::string& name,
                                          std::size_t d_model, std::size_t n_heads)
    : q_proj_(ps, name + ".q", d_model, d_model),
      k_proj_(ps, name + ".k", d_model, d_model),
      v_proj_(ps, name + ".v", d_model, d_model),
      out_proj_(ps, name + ".out", d_model, d_model),
      d_model_(d_model),
      heads_(n_heads) {
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("d_model must be divisible by the number of heads");
  }
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::forward(const ParameterSet<T>& ps, const Tensor<T>& x,
                                         Cache* cache) const {
  require_rank(x.shape(), 3, "MultiHeadAttention");
  const std::size_t batch = x.dim(0), tokens = x.dim(1), d = d_model_;
  const std::size_t dh = d / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor<T> rows = x;
  rows.reshape({batch * tokens, d});
  Tensor<T> q = q_proj_.forward(ps, rows, cache ? &cache->q_cache : nullptr);
  Tensor<T> k = k_proj_.forward(ps, rows, cache ? &cache->k_cache : nullptr);
  Tensor<T> v = v_proj_.forward(ps, rows, cache ? &cache->v_cache : nullptr);

  Tensor<T> ctx({batch * tokens, d});
  Tensor<T> weights({batch, heads_, tokens, tokens});
  std::vector<double> logits(tokens);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads_; ++h) {
      for (std::size_t i = 0; i < tokens; ++i) {
        const T* qi = q.data() + (b * tokens + i) * d + h * dh;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < tokens; ++j) {
          const T* kj = k.data() + (b * tokens + j) * d + h * dh;
          double s = 0.0;
          for (std::size_t e = 0; e < dh; ++e) s += static_cast<double>(qi[e]) * kj[e];
          logits[j] = s * scale;
          mx = std::max(mx, logits[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < tokens; ++j) {
          logits[j] = std::exp(logits[j] - mx);
          z += logits[j];
        }
        T* wrow = weights.data() + ((b * heads_ + h) * tokens + i) * tokens;
        T* crow = ctx.data() + (b * tokens + i) * d + h * dh;
        for (std::size_t j = 0; j < tokens; ++j) {
          wrow[j] = static_cast<T>(logits[j] / z);
          const T* vj = v.data() + (b * tokens + j) * d + h * dh;
          for (std::size_t e = 0; e < dh; ++e) crow[e] += wrow[j] * vj[e];
        }
      }
    }
  }
  Tensor<T> out = out_proj_.forward(ps, ctx, cache ? &cache->out_cache : nullptr);
  out.reshape({batch, tokens, d});
  if (cache) {
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->weights = std::move(weights);
  }
  return out;
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::backward(ParameterSet<T>& ps, const Cache& cache,
                                          const Tensor<T>& grad_out) const {
  const std::size_t batch = cache.weights.dim(0), tokens = cache.weights.dim(2), d = d_model_;
  const std::size_t dh = d / heads_;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  Tensor<T> g = grad_out;
  g.reshape({batch * tokens, d});
  Tensor<T> gctx = out_proj_.backward(ps, cache.out_cache, g);

  Tensor<T> gq({batch * tokens, d}), gk({batch * tokens, d}), gv({batch * tokens, d});
  std::vector<T> dweights(tokens), dlogits(tokens);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads_; ++h) {
      for (std::size_t i = 0; i < tokens; ++i) {
        const T* wrow = cache.weights.data() + ((b * heads_ + h) * tokens + i) * tokens;
        const T* gci = gctx.data() + (b * tokens + i) * d + h * dh;
        T dot = 0;
        for (std::size_t j = 0; j < tokens; ++j) {
          const T* vj = cache.v.data() + (b * tokens + j) * d + h * dh;
          T* gvj = gv.data() + (b * tokens + j) * d + h * dh;
          T s = 0;
          for (std::size_t e = 0; e < dh; ++e) {
            s += gci[e] * vj[e];
            gvj[e] += wrow[j] * gci[e];
          }
          dweights[j] = s;
          dot += wrow[j] * s;
        }
        for (std::size_t j = 0; j < tokens; ++j) dlogits[j] = wrow[j] * (dweights[j] - dot) * scale;

        const T* qi = cache.q.data() + (b * tokens + i) * d + h * dh;
        T* gqi = gq.data() + (b * tokens + i) * d + h * dh;
        for (std::size_t j = 0; j < tokens; ++j) {
          const T* kj = cache.k.data() + (b * tokens + j) * d + h * dh;
          T* gkj = gk.data() + (b * tokens + j) * d + h * dh;
          for (std::size_t e = 0; e < dh; ++e) {
            gqi[e] += dlogits[j] * kj[e];
            gkj[e] += dlogits[j] * qi[e];
          }
        }
      }
    }
  }
  Tensor<T> gx = q_proj_.backward(ps, cache.q_cache, gq);
  add_into(gx, k_proj_.backward(ps, cache.k_cache, gk));
  add_into(gx, v_proj_.backward(ps, cache.v_cache, gv));
  gx.reshape({batch, tokens, d});
  return gx;
}

// ---------------------------------------------------------------- EncoderLayer

template <typename T>
EncoderLayer<T>::EncoderLayer(ParameterSet<T>& ps, const std::string& name, std::size_t d_model,
                              std::size_t n_heads, std::size_t ffn_dim, double dropout)
    : attention_(ps, name + ".attn", d_model, n_heads),
      attn_dropout_(dropout),
      norm1_(ps, name + ".ln1", d_model),
      ffn_in_(ps, name + ".ffn1", d_model, ffn_dim),
      ffn_out_(ps, name + ".ffn2", ffn_dim, d_model),
      ffn_dropout_(dropout),
      norm2_(ps, name + ".ln2", d_model) {}

template <typename T>
Tensor<T> EncoderLayer<T>::forward(const ParameterSet<T>& ps, const Tensor<T>& x, Mode mode,
                                   Rng* rng, Cache* cache) const {
  const std::size_t batch = x.dim(0), tokens = x.dim(1), d = x.dim(2);

  Tensor<T> attn = attention_.forward(ps, x, cache ? &cache->attn : nullptr);
  attn = attn_dropout_.forward(attn, mode, rng, cache ? &cache->attn_drop : nullptr);
  Tensor<T> r1 = x;
  add_into(r1, attn);
  r1.reshape({batch * tokens, d});
  Tensor<T> x1 = norm1_.forward(ps, r1, cache ? &cache->norm1 : nullptr);

  Tensor<T> f = ffn_in_.forward(ps, x1, cache ? &cache->ffn_in : nullptr);
  f = relu_.forward(f, cache ? &cache->ffn_relu : nullptr);
  f = ffn_out_.forward(ps, f, cache ? &cache->ffn_out : nullptr);
  f = ffn_dropout_.forward(f, mode, rng, cache ? &cache->ffn_drop : nullptr);
  add_into(f, x1);
  Tensor<T> out = norm2_.forward(ps, f, cache ? &cache->norm2 : nullptr);
  out.reshape({batch, tokens, d});
  return out;
}

template <typename T>
Tensor<T> EncoderLayer<T>::backward(ParameterSet<T>& ps, const Cache& cache,
                                    const Tensor<T>& grad_out) const {
  const std::size_t batch = grad_out.dim(0), tokens = grad_out.dim(1), d = grad_out.dim(2);
  Tensor<T> g = grad_out;
  g.reshape({batch * tokens, d});

  Tensor<T> g_r2 = norm2_.backward(ps, cache.norm2, g);
  Tensor<T> g_f = ffn_dropout_.backward(cache.ffn_drop, g_r2);
  g_f = ffn_out_.backward(ps, cache.ffn_out, g_f);
  g_f = relu_.backward(cache.ffn_relu, g_f);
  Tensor<T> g_x1 = ffn_in_.backward(ps, cache.ffn_in, g_f);
  add_into(g_x1, g_r2);

  Tensor<T> g_r1 = norm1_.backward(ps, cache.norm1, g_x1);
  g_r1.reshape({batch, tokens, d});
  Tensor<T> g_attn = attn_dropout_.backward(cache.attn_drop, g_r1);
  Tensor<T> gx = attention_.backward(ps, cache.attn, g_attn);
  add_into(gx, g_r1);
  return gx;
}

// ---------------------------------------------------------------- TokenBuilder

template <typename T>
TokenBuilder<T>::TokenBuilder(ParameterSet<T>& ps, const std::string& name,
                              std::size_t conv_features, std::size_t location_dim,
                              std::size_t d_model)
    : conv_features_(conv_features), location_dim_(location_dim), d_model_(d_model) {
  const std::size_t total = conv_features + location_dim;
  tokens_ = (total + d_model - 1) / d_model;
  positional_ = ps.add(name + ".positional", {tokens_, d_model}, Init::kGlorotUniform, true,
                       tokens_, d_model);
  modality_ = ps.add(name + ".modality", {2, d_model}, Init::kGlorotUniform, true, 2, d_model);
}

template <typename T>
std::size_t TokenBuilder<T>::modality_of(std::size_t token) const noexcept {
  return (token + 1) * d_model_ > conv_features_ ? 1 : 0;
}

template <typename T>
Tensor<T> TokenBuilder<T>::forward(const ParameterSet<T>& ps, const Tensor<T>& conv,
                                   const Tensor<T>& location) const {
  require_rank(conv.shape(), 2, "TokenBuilder");
  require_rank(location.shape(), 2, "TokenBuilder");
  if (conv.dim(1) != conv_features_ || location.dim(1) != location_dim_ ||
      conv.dim(0) != location.dim(0)) {
    throw InvalidArgument("token builder input shape mismatch");
  }
  const std::size_t batch = conv.dim(0);
  const T* pos = ps[positional_].value.data();
  const T* mod = ps[modality_].value.data();
  Tensor<T> out({batch, tokens_, d_model_});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < tokens_; ++t) {
      const T* m = mod + modality_of(t) * d_model_;
      for (std::size_t j = 0; j < d_model_; ++j) {
        const std::size_t idx = t * d_model_ + j;
        T v = 0;
        if (idx < conv_features_) {
          v = conv[b * conv_features_ + idx];
        } else if (idx < conv_features_ + location_dim_) {
          v = location[b * location_dim_ + idx - conv_features_];
        }
        out[(b * tokens_ + t) * d_model_ + j] = v + pos[t * d_model_ + j] + m[j];
      }
    }
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> TokenBuilder<T>::backward(ParameterSet<T>& ps,
                                                          const Tensor<T>& grad_out) const {
  const std::size_t batch = grad_out.dim(0);
  T* gpos = ps[positional_].grad.data();
  T* gmod = ps[modality_].grad.data();
  Tensor<T> gconv({batch, conv_features_});
  Tensor<T> gloc({batch, location_dim_});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < tokens_; ++t) {
      T* gm = gmod + modality_of(t) * d_model_;
      for (std::size_t j = 0; j < d_model_; ++j) {
        const std::size_t idx = t * d_model_ + j;
        const T g = grad_out[(b * tokens_ + t) * d_model_ + j];
        gpos[idx] += g;
        gm[j] += g;
        if (idx < conv_features_) {
          gconv[b * conv_features_ + idx] = g;
        } else if (idx < conv_features_ + location_dim_) {
          gloc[b * location_dim_ + idx - conv_features_] = g;
        }
      }
    }
  }
  return {std::move(gconv), std::move(gloc)};
}

#define ISACBEAM_INSTANTIATE(T)          \
  template class Linear<T>;              \
  template class Conv2d<T>;              \
  template class BatchNorm2d<T>;         \
  template class MaxPool2<T>;            \
  template struct Relu<T>;               \
  template class Dropout<T>;             \
  template class LayerNorm<T>;           \
  template class MultiHeadAttention<T>;  \
  template class EncoderLayer<T>;        \
  template class TokenBuilder<T>;

ISACBEAM_INSTANTIATE(float)
ISACBEAM_INSTANTIATE(double)

#undef ISACBEAM_INSTANTIATE

}  // namespace isacbeam::nn
