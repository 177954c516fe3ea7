#pragma once

#include <Eigen/Core>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fdlab/core/error.hpp"
#include "fdlab/core/random.hpp"
#include "fdlab/core/tensor.hpp"

namespace fdlab::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

/// A differentiable operation inside a Graph. Ops own their parameters but
/// keep no per-call state: everything backward needs goes through `saved`,
/// so a trained graph can serve concurrent callers.
///
/// Shapes passed to `output_shape` are per-sample; tensors passed to
/// forward/backward carry the batch as their leading dimension.
template <typename T>
class Op {
 public:
  virtual ~Op() = default;

  virtual std::string kind() const = 0;
  /// Integer attributes sufficient to rebuild the op with `make_op`.
  virtual std::vector<long> attributes() const { return {}; }
  virtual Shape output_shape(std::span<const Shape> in) const = 0;

  virtual void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Tensor<T>& saved,
                       bool training) const = 0;

  /// Accumulates input gradients into every non-null `gin[i]` (pre-sized)
  /// and parameter gradients into `pgrad` when it is non-empty.
  virtual void backward(std::span<const Tensor<T>* const> in, const Tensor<T>& out, const Tensor<T>& saved,
                        const Tensor<T>& gout, std::span<Tensor<T>* const> gin,
                        std::span<Tensor<T>> pgrad) const = 0;

  virtual std::span<Tensor<T>> params() { return {}; }
  virtual std::span<const Tensor<T>> params() const { return {}; }
  /// Non-trainable state (batch-norm running statistics).
  virtual std::span<Tensor<T>> buffers() { return {}; }
  virtual std::span<const Tensor<T>> buffers() const { return {}; }

  virtual void init(Rng&) {}
};

namespace detail {

inline Shape with_batch(std::size_t n, const Shape& s) {
  Shape out{n};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

// Treats {C}, {C,H,W} uniformly as channels x spatial.
inline std::pair<std::size_t, std::size_t> channels_spatial(const Shape& sample) {
  if (sample.empty()) return {1, 1};
  return {sample[0], numel(sample) / sample[0]};
}

template <typename T>
void he_normal(Tensor<T>& w, std::size_t fan_in, Rng& rng) {
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : w) v = static_cast<T>(rng.normal(0.0, sd));
}

}  // namespace detail

template <typename T>
class Conv2d final : public Op<T> {
 public:
  Conv2d(std::size_t cin, std::size_t cout, std::size_t kernel, std::size_t stride, std::size_t pad)
      : cin_(cin), cout_(cout), k_(kernel), stride_(stride), pad_(pad) {
    require(cin > 0 && cout > 0 && kernel > 0 && stride > 0, "conv2d: invalid geometry");
    params_.emplace_back(Shape{cout, cin * kernel * kernel});
    params_.emplace_back(Shape{cout});
  }

  std::string kind() const override { return "conv2d"; }
  std::vector<long> attributes() const override {
    return {long(cin_), long(cout_), long(k_), long(stride_), long(pad_)};
  }

  Shape output_shape(std::span<const Shape> in) const override {
    require(in.size() == 1 && in[0].size() == 3 && in[0][0] == cin_,
            "conv2d expects {" + std::to_string(cin_) + ",H,W}, got " + shape_str(in.empty() ? Shape{} : in[0]));
    require(in[0][1] + 2 * pad_ >= k_ && in[0][2] + 2 * pad_ >= k_, "conv2d: input smaller than kernel");
    return {cout_, out_dim(in[0][1]), out_dim(in[0][2])};
  }

  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Tensor<T>&, bool) const override {
    const auto& x = *in[0];
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t ho = out_dim(h), wo = out_dim(w), ckk = cin_ * k_ * k_;
    out.reset({n, cout_, ho, wo});
    ConstMatMap<T> wm(params_[0].data(), cout_, ckk);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(params_[1].data(), cout_);
    AlignedVector<T> col(is_pointwise() ? 0 : ckk * ho * wo);
    for (std::size_t s = 0; s < n; ++s) {
      const T* src = x.data() + s * cin_ * h * w;
      const T* colp = src;
      if (!is_pointwise()) {
        im2col(src, h, w, col.data());
        colp = col.data();
      }
      MatMap<T> om(out.data() + s * cout_ * ho * wo, cout_, ho * wo);
      om.noalias() = wm * ConstMatMap<T>(colp, ckk, ho * wo);
      om.colwise() += b;
    }
  }

  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> gin, std::span<Tensor<T>> pgrad) const override {
    const auto& x = *in[0];
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
    const std::size_t ho = out_dim(h), wo = out_dim(w), ckk = cin_ * k_ * k_;
    ConstMatMap<T> wm(params_[0].data(), cout_, ckk);
    AlignedVector<T> col(ckk * ho * wo);
    for (std::size_t s = 0; s < n; ++s) {
      ConstMatMap<T> g(gout.data() + s * cout_ * ho * wo, cout_, ho * wo);
      const T* src = x.data() + s * cin_ * h * w;
      if (!pgrad.empty()) {
        const T* colp = src;
        if (!is_pointwise()) {
          im2col(src, h, w, col.data());
          colp = col.data();
        }
        MatMap<T>(pgrad[0].data(), cout_, ckk).noalias() += g * ConstMatMap<T>(colp, ckk, ho * wo).transpose();
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(pgrad[1].data(), cout_) += g.rowwise().sum();
      }
      if (gin[0]) {
        T* dst = gin[0]->data() + s * cin_ * h * w;
        if (is_pointwise()) {
          MatMap<T>(dst, ckk, ho * wo).noalias() += wm.transpose() * g;
        } else {
          MatMap<T>(col.data(), ckk, ho * wo).noalias() = wm.transpose() * g;
          col2im(col.data(), h, w, dst);
        }
      }
    }
  }

  std::span<Tensor<T>> params() override { return params_; }
  std::span<const Tensor<T>> params() const override { return params_; }
  void init(Rng& rng) override {
    detail::he_normal(params_[0], cin_ * k_ * k_, rng);
    params_[1].fill(T{0});
  }

 private:
  std::size_t out_dim(std::size_t d) const { return (d + 2 * pad_ - k_) / stride_ + 1; }
  bool is_pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }

  void im2col(const T* img, std::size_t h, std::size_t w, T* col) const {
    const std::size_t ho = out_dim(h), wo = out_dim(w);
    for (std::size_t c = 0; c < cin_; ++c)
      for (std::size_t ki = 0; ki < k_; ++ki)
        for (std::size_t kj = 0; kj < k_; ++kj) {
          T* row = col + ((c * k_ + ki) * k_ + kj) * ho * wo;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const long iy = long(oy * stride_) - long(pad_) + long(ki);
            T* dst = row + oy * wo;
            if (iy < 0 || iy >= long(h)) {
              std::fill_n(dst, wo, T{0});
              continue;
            }
            const T* src = img + (c * h + std::size_t(iy)) * w;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const long ix = long(ox * stride_) - long(pad_) + long(kj);
              dst[ox] = (ix < 0 || ix >= long(w)) ? T{0} : src[ix];
            }
          }
        }
  }

  void col2im(const T* col, std::size_t h, std::size_t w, T* img) const {
    const std::size_t ho = out_dim(h), wo = out_dim(w);
    for (std::size_t c = 0; c < cin_; ++c)
      for (std::size_t ki = 0; ki < k_; ++ki)
        for (std::size_t kj = 0; kj < k_; ++kj) {
          const T* row = col + ((c * k_ + ki) * k_ + kj) * ho * wo;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const long iy = long(oy * stride_) - long(pad_) + long(ki);
            if (iy < 0 || iy >= long(h)) continue;
            T* dst = img + (c * h + std::size_t(iy)) * w;
            const T* src = row + oy * wo;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const long ix = long(ox * stride_) - long(pad_) + long(kj);
              if (ix >= 0 && ix < long(w)) dst[ix] += src[ox];
            }
          }
        }
  }

  std::size_t cin_, cout_, k_, stride_, pad_;
  std::vector<Tensor<T>> params_;
};

/// Per-channel batch normalization. In training mode `saved` holds
/// {batch mean, inverse std, unbiased batch variance}; the trainer folds the
/// latter into the running statistics.
template <typename T>
class BatchNorm final : public Op<T> {
 public:
  explicit BatchNorm(std::size_t channels, double eps = 1e-5) : c_(channels), eps_(eps) {
    params_.emplace_back(Shape{channels}, T{1});
    params_.emplace_back(Shape{channels}, T{0});
    buffers_.emplace_back(Shape{channels}, T{0});
    buffers_.emplace_back(Shape{channels}, T{1});
  }

  std::string kind() const override { return "batchnorm"; }
  std::vector<long> attributes() const override { return {long(c_)}; }
  Shape output_shape(std::span<const Shape> in) const override {
    require(in.size() == 1 && !in[0].empty() && in[0][0] == c_, "batchnorm: channel mismatch");
    return in[0];
  }

  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Tensor<T>& saved,
               bool training) const override {
    const auto& x = *in[0];
    const std::size_t n = x.dim(0);
    const auto [c, hw] = detail::channels_spatial(x.sample_shape());
    out.reset(x.shape());
    if (training) {
      saved.reset({3, c_});
      const double m = double(n * hw);
      for (std::size_t ch = 0; ch < c_; ++ch) {
        double sum = 0, sq = 0;
        for (std::size_t s = 0; s < n; ++s) {
          const T* p = x.data() + (s * c + ch) * hw;
          for (std::size_t i = 0; i < hw; ++i) sum += p[i];
        }
        const double mean = sum / m;
        for (std::size_t s = 0; s < n; ++s) {
          const T* p = x.data() + (s * c + ch) * hw;
          for (std::size_t i = 0; i < hw; ++i) sq += (p[i] - mean) * (p[i] - mean);
        }
        const double var = sq / m;
        saved[ch] = T(mean);
        saved[c_ + ch] = T(1.0 / std::sqrt(var + eps_));
        saved[2 * c_ + ch] = T(m > 1 ? sq / (m - 1) : var);
      }
    } else {
      saved.reset({2, c_});
      for (std::size_t ch = 0; ch < c_; ++ch) {
        saved[ch] = buffers_[0][ch];
        saved[c_ + ch] = T(1.0 / std::sqrt(double(buffers_[1][ch]) + eps_));
      }
    }
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c_; ++ch) {
        const T scale = params_[0][ch] * saved[c_ + ch];
        const T shift = params_[1][ch] - saved[ch] * scale;
        const T* p = x.data() + (s * c + ch) * hw;
        T* q = out.data() + (s * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) q[i] = p[i] * scale + shift;
      }
  }

  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>& saved, const Tensor<T>& gout,
                std::span<Tensor<T>* const> gin, std::span<Tensor<T>> pgrad) const override {
    const auto& x = *in[0];
    const std::size_t n = x.dim(0);
    const auto [c, hw] = detail::channels_spatial(x.sample_shape());
    const bool training = saved.dim(0) == 3;
    const double m = double(n * hw);
    for (std::size_t ch = 0; ch < c_; ++ch) {
      const double mean = saved[ch], inv = saved[c_ + ch], gamma = params_[0][ch];
      double sum_g = 0, sum_gx = 0;
      for (std::size_t s = 0; s < n; ++s) {
        const T* p = x.data() + (s * c + ch) * hw;
        const T* g = gout.data() + (s * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          sum_g += g[i];
          sum_gx += g[i] * (p[i] - mean) * inv;
        }
      }
      if (!pgrad.empty()) {
        pgrad[0][ch] += T(sum_gx);
        pgrad[1][ch] += T(sum_g);
      }
      if (!gin[0]) continue;
      for (std::size_t s = 0; s < n; ++s) {
        const T* p = x.data() + (s * c + ch) * hw;
        const T* g = gout.data() + (s * c + ch) * hw;
        T* d = gin[0]->data() + (s * c + ch) * hw;
        if (training) {
          for (std::size_t i = 0; i < hw; ++i) {
            const double xhat = (p[i] - mean) * inv;
            d[i] += T(gamma * inv / m * (m * g[i] - sum_g - xhat * sum_gx));
          }
        } else {
          for (std::size_t i = 0; i < hw; ++i) d[i] += T(gamma * inv * g[i]);
        }
      }
    }
  }

  std::span<Tensor<T>> params() override { return params_; }
  std::span<const Tensor<T>> params() const override { return params_; }
  std::span<Tensor<T>> buffers() override { return buffers_; }
  std::span<const Tensor<T>> buffers() const override { return buffers_; }

 private:
  std::size_t c_;
  double eps_;
  std::vector<Tensor<T>> params_;
  std::vector<Tensor<T>> buffers_;
};

template <typename T>
class Relu final : public Op<T> {
 public:
  std::string kind() const override { return "relu"; }
  Shape output_shape(std::span<const Shape> in) const override { return in[0]; }
  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Tensor<T>&, bool) const override {
    const auto& x = *in[0];
    out.reset(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  }
  void backward(std::span<const Tensor<T>* const>, const Tensor<T>& out, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> gin, std::span<Tensor<T>>) const override {
    if (!gin[0]) return;
    for (std::size_t i = 0; i < out.size(); ++i)
      if (out[i] > T{0}) (*gin[0])[i] += gout[i];
  }
};

/// Non-overlapping k x k max pooling; `saved` records the argmax offset.
template <typename T>
class MaxPool final : public Op<T> {
 public:
  explicit MaxPool(std::size_t k = 2) : k_(k) {}
  std::string kind() const override { return "maxpool"; }
  std::vector<long> attributes() const override { return {long(k_)}; }
  Shape output_shape(std::span<const Shape> in) const override {
    require(in[0].size() == 3 && in[0][1] >= k_ && in[0][2] >= k_, "maxpool: input too small");
    return {in[0][0], in[0][1] / k_, in[0][2] / k_};
  }
  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Tensor<T>& saved, bool) const override {
    const auto& x = *in[0];
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), ho = h / k_, wo = w / k_;
    out.reset({n, c, ho, wo});
    saved.reset({n, c, ho, wo});
    for (std::size_t p = 0; p < n * c; ++p) {
      const T* src = x.data() + p * h * w;
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          std::size_t best = 0;
          T bv = src[(oy * k_) * w + ox * k_];
          for (std::size_t a = 0; a < k_; ++a)
            for (std::size_t b = 0; b < k_; ++b) {
              const T v = src[(oy * k_ + a) * w + ox * k_ + b];
              if (v > bv) {
                bv = v;
                best = a * k_ + b;
              }
            }
          out[(p * ho + oy) * wo + ox] = bv;
          saved[(p * ho + oy) * wo + ox] = T(best);
        }
    }
  }
  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>& out, const Tensor<T>& saved,
                const Tensor<T>& gout, std::span<Tensor<T>* const> gin, std::span<Tensor<T>>) const override {
    if (!gin[0]) return;
    const auto& x = *in[0];
    const std::size_t h = x.dim(2), w = x.dim(3), ho = out.dim(2), wo = out.dim(3);
    for (std::size_t p = 0; p < x.dim(0) * x.dim(1); ++p)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const std::size_t o = (p * ho + oy) * wo + ox;
          const auto best = static_cast<std::size_t>(saved[o]);
          (*gin[0])[p * h * w + (oy * k_ + best / k_) * w + ox * k_ + best % k_] += gout[o];
        }
  }

 private:
  std::size_t k_;
};

/// Non-overlapping k x k average pooling.
template <typename T>
class AvgPool final : public Op<T> {
 public:
  explicit AvgPool(std::size_t k = 2) : k_(k) {}
  std::string kind() const override { return "avgpool"; }
  std::vector<long> attributes() const override { return {long(k_)}; }
  Shape output_shape(std::span<const Shape> in) const override {
    require(in[0].size() == 3 && in[0][1] >= k_ && in[0][2] >= k_, "avgpool: input too small");
    return {in[0][0], in[0][1] / k_, in[0][2] / k_};
  }
  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Tensor<T>&, bool) const override {
    const auto& x = *in[0];
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), ho = h / k_, wo = w / k_;
    out.reset({n, c, ho, wo});
    const T scale = T(1) / T(k_ * k_);
    for (std::size_t p = 0; p < n * c; ++p)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          T acc{0};
          for (std::size_t a = 0; a < k_; ++a)
            for (std::size_t b = 0; b < k_; ++b) acc += x[p * h * w + (oy * k_ + a) * w + ox * k_ + b];
          out[(p * ho + oy) * wo + ox] = acc * scale;
        }
  }
  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>& out, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> gin, std::span<Tensor<T>>) const override {
    if (!gin[0]) return;
    const auto& x = *in[0];
    const std::size_t h = x.dim(2), w = x.dim(3), ho = out.dim(2), wo = out.dim(3);
    const T scale = T(1) / T(k_ * k_);
    for (std::size_t p = 0; p < x.dim(0) * x.dim(1); ++p)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const T g = gout[(p * ho + oy) * wo + ox] * scale;
          for (std::size_t a = 0; a < k_; ++a)
            for (std::size_t b = 0; b < k_; ++b) (*gin[0])[p * h * w + (oy * k_ + a) * w + ox * k_ + b] += g;
        }
  }

 private:
  std::size_t k_;
};

template <typename T>
class GlobalAvgPool final : public Op<T> {
 public:
  std::string kind() const override { return "gap"; }
  Shape output_shape(std::span<const Shape> in) const override {
    require(in[0].size() == 3, "gap expects {C,H,W}");
    return {in[0][0]};
  }
  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Tensor<T>&, bool) const override {
    const auto& x = *in[0];
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    out.reset({n, c});
    for (std::size_t p = 0; p < n * c; ++p) {
      T acc{0};
      for (std::size_t i = 0; i < hw; ++i) acc += x[p * hw + i];
      out[p] = acc / T(hw);
    }
  }
  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> gin, std::span<Tensor<T>>) const override {
    if (!gin[0]) return;
    const auto& x = *in[0];
    const std::size_t hw = x.dim(2) * x.dim(3);
    for (std::size_t p = 0; p < x.dim(0) * x.dim(1); ++p)
      for (std::size_t i = 0; i < hw; ++i) (*gin[0])[p * hw + i] += gout[p] / T(hw);
  }
};

/// Fully connected layer over the flattened sample.
template <typename T>
class Linear final : public Op<T> {
 public:
  Linear(std::size_t in, std::size_t out) : in_(in), out_(out) {
    require(in > 0 && out > 0, "linear: invalid size");
    params_.emplace_back(Shape{out, in});
    params_.emplace_back(Shape{out});
  }
  std::string kind() const override { return "linear"; }
  std::vector<long> attributes() const override { return {long(in_), long(out_)}; }
  Shape output_shape(std::span<const Shape> in) const override {
    require(in.size() == 1 && numel(in[0]) == in_,
            "linear expects " + std::to_string(in_) + " inputs, got " + shape_str(in.empty() ? Shape{} : in[0]));
    return {out_};
  }
  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Tensor<T>&, bool) const override {
    const auto& x = *in[0];
    const std::size_t n = x.dim(0);
    out.reset({n, out_});
    MatMap<T> om(out.data(), n, out_);
    om.noalias() = ConstMatMap<T>(x.data(), n, in_) * ConstMatMap<T>(params_[0].data(), out_, in_).transpose();
    om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(params_[1].data(), out_);
  }
  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>&, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> gin, std::span<Tensor<T>> pgrad) const override {
    const auto& x = *in[0];
    const std::size_t n = x.dim(0);
    ConstMatMap<T> g(gout.data(), n, out_);
    if (!pgrad.empty()) {
      MatMap<T>(pgrad[0].data(), out_, in_).noalias() += g.transpose() * ConstMatMap<T>(x.data(), n, in_);
      Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(pgrad[1].data(), out_) += g.colwise().sum();
    }
    if (gin[0])
      MatMap<T>(gin[0]->data(), n, in_).noalias() += g * ConstMatMap<T>(params_[0].data(), out_, in_);
  }
  std::span<Tensor<T>> params() override { return params_; }
  std::span<const Tensor<T>> params() const override { return params_; }
  void init(Rng& rng) override {
    detail::he_normal(params_[0], in_, rng);
    params_[1].fill(T{0});
  }

 private:
  std::size_t in_, out_;
  std::vector<Tensor<T>> params_;
};

template <typename T>
class Add final : public Op<T> {
 public:
  std::string kind() const override { return "add"; }
  Shape output_shape(std::span<const Shape> in) const override {
    require(in.size() == 2 && in[0] == in[1], "add: shape mismatch");
    return in[0];
  }
  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Tensor<T>&, bool) const override {
    out.reset(in[0]->shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*in[0])[i] + (*in[1])[i];
  }
  void backward(std::span<const Tensor<T>* const>, const Tensor<T>&, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> gin, std::span<Tensor<T>>) const override {
    for (auto* g : gin)
      if (g)
        for (std::size_t i = 0; i < gout.size(); ++i) (*g)[i] += gout[i];
  }
};

/// Channel concatenation of {Ci,H,W} inputs.
template <typename T>
class Concat final : public Op<T> {
 public:
  std::string kind() const override { return "concat"; }
  Shape output_shape(std::span<const Shape> in) const override {
    require(!in.empty() && in[0].size() == 3, "concat expects {C,H,W} inputs");
    Shape out = in[0];
    for (std::size_t i = 1; i < in.size(); ++i) {
      require(in[i].size() == 3 && in[i][1] == out[1] && in[i][2] == out[2], "concat: spatial mismatch");
      out[0] += in[i][0];
    }
    return out;
  }
  void forward(std::span<const Tensor<T>* const> in, Tensor<T>& out, Tensor<T>&, bool) const override {
    const std::size_t n = in[0]->dim(0), hw = in[0]->dim(2) * in[0]->dim(3);
    std::size_t c = 0;
    for (auto* t : in) c += t->dim(1);
    out.reset({n, c, in[0]->dim(2), in[0]->dim(3)});
    for (std::size_t s = 0; s < n; ++s) {
      T* dst = out.data() + s * c * hw;
      for (auto* t : in) {
        const std::size_t len = t->dim(1) * hw;
        std::copy_n(t->data() + s * len, len, dst);
        dst += len;
      }
    }
  }
  void backward(std::span<const Tensor<T>* const> in, const Tensor<T>& out, const Tensor<T>&, const Tensor<T>& gout,
                std::span<Tensor<T>* const> gin, std::span<Tensor<T>>) const override {
    const std::size_t n = out.dim(0), c = out.dim(1), hw = out.dim(2) * out.dim(3);
    for (std::size_t s = 0; s < n; ++s) {
      const T* src = gout.data() + s * c * hw;
      for (std::size_t i = 0; i < in.size(); ++i) {
        const std::size_t len = in[i]->dim(1) * hw;
        if (gin[i]) {
          T* dst = gin[i]->data() + s * len;
          for (std::size_t j = 0; j < len; ++j) dst[j] += src[j];
        }
        src += len;
      }
    }
  }
};

/// Rebuilds an op from `kind()` and `attributes()`.
template <typename T>
std::unique_ptr<Op<T>> make_op(const std::string& kind, const std::vector<long>& a) {
  auto at = [&](std::size_t i) {
    require(i < a.size(), "make_op: missing attribute for " + kind);
    return static_cast<std::size_t>(a[i]);
  };
  if (kind == "conv2d") return std::make_unique<Conv2d<T>>(at(0), at(1), at(2), at(3), at(4));
  if (kind == "batchnorm") return std::make_unique<BatchNorm<T>>(at(0));
  if (kind == "relu") return std::make_unique<Relu<T>>();
  if (kind == "maxpool") return std::make_unique<MaxPool<T>>(at(0));
  if (kind == "avgpool") return std::make_unique<AvgPool<T>>(at(0));
  if (kind == "gap") return std::make_unique<GlobalAvgPool<T>>();
  if (kind == "linear") return std::make_unique<Linear<T>>(at(0), at(1));
  if (kind == "add") return std::make_unique<Add<T>>();
  if (kind == "concat") return std::make_unique<Concat<T>>();
  throw ArgumentError("unknown op kind '" + kind + "'");
}

}  // namespace fdlab::nn
