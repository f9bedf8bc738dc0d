#include "feataug/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace feataug::nn {

namespace {

// Kernels store float but multiply and accumulate in double.
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using MapMatF = Eigen::Map<RowMatF>;
using CMapMatF = Eigen::Map<const RowMatF>;

RowMat widen(std::span<const float> v, std::size_t rows, std::size_t cols) {
  return CMapMatF(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)).cast<double>();
}

// Column matrix (c_in*9, h*w) for one sample, zero padded.
void im2col(const float* src, std::size_t c_in, std::size_t h, std::size_t w, double* col) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < c_in; ++c) {
    const float* plane = src + c * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* dst = col + ((c * 3 + ky) * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + ky - 1;
          double* row = dst + y * w;
          if (sy < 0 || sy >= static_cast<long>(h)) {
            std::fill(row, row + w, 0.0);
            continue;
          }
          const float* srow = plane + sy * w;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + kx - 1;
            row[x] = (sx < 0 || sx >= static_cast<long>(w)) ? 0.0 : srow[sx];
          }
        }
      }
    }
  }
}

void col2im(const double* col, std::size_t c_in, std::size_t h, std::size_t w, double* dst) {
  const std::size_t hw = h * w;
  std::fill(dst, dst + c_in * hw, 0.0);
  for (std::size_t c = 0; c < c_in; ++c) {
    double* plane = dst + c * hw;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* src = col + ((c * 3 + ky) * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + ky - 1;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          double* prow = plane + sy * w;
          const double* row = src + y * w;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + kx - 1;
            if (sx >= 0 && sx < static_cast<long>(w)) prow[sx] += row[x];
          }
        }
      }
    }
  }
}

std::size_t conv_in_channels(const Tensor4& x, std::span<const float> weight, std::size_t c_out) {
  const std::size_t c_in = x.dims().c;
  if (c_out == 0 || weight.size() != c_out * c_in * 9)
    throw ShapeError("conv2d: weight of " + std::to_string(weight.size()) + " values does not match c_out=" +
                     std::to_string(c_out) + ", c_in=" + std::to_string(c_in));
  return c_in;
}

}  // namespace

Parameter::Parameter(std::string n, std::vector<std::size_t> s) : name(std::move(n)), shape(std::move(s)) {
  std::size_t count = 1;
  for (std::size_t d : shape) count *= d;
  value.assign(count, 0.0f);
  grad.assign(count, 0.0f);
  velocity.assign(count, 0.0f);
}

void Parameter::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }

void zero_grads(std::span<Parameter> params) {
  for (auto& p : params) p.zero_grad();
}

void SgdConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidArgument("sgd: learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("sgd: momentum must lie in [0, 1)");
  if (batch_size < 1) throw InvalidArgument("sgd: batch_size must be >= 1");
}

SgdConfig SgdConfig::desk() { return {0.01, 0.9, 32, 10}; }
SgdConfig SgdConfig::paper() { return {0.001, 0.9, 128, 10}; }

void sgd_step(std::span<Parameter> params, const SgdConfig& cfg) {
  const auto lr = static_cast<float>(cfg.learning_rate);
  const auto mu = static_cast<float>(cfg.momentum);
  for (auto& p : params) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      p.velocity[i] = mu * p.velocity[i] + p.grad[i];
      p.value[i] -= lr * p.velocity[i];
    }
  }
}

Tensor4 conv2d_forward(const Tensor4& x, std::span<const float> weight, std::span<const float> bias,
                       std::size_t c_out) {
  const Dims4& d = x.dims();
  const std::size_t c_in = conv_in_channels(x, weight, c_out);
  if (bias.size() != c_out) throw ShapeError("conv2d: bias length mismatch");
  const std::size_t hw = d.plane();
  Tensor4 out({d.b, c_out, d.h, d.w});
  std::vector<double> col(c_in * 9 * hw);
  const RowMat W = widen(weight, c_out, c_in * 9);
  RowMat Y(static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(hw));
  for (std::size_t n = 0; n < d.b; ++n) {
    im2col(x.sample(n).data(), c_in, d.h, d.w, col.data());
    CMapMat C(col.data(), static_cast<Eigen::Index>(c_in * 9), static_cast<Eigen::Index>(hw));
    Y.noalias() = W * C;
    for (std::size_t o = 0; o < c_out; ++o) Y.row(static_cast<Eigen::Index>(o)).array() += double(bias[o]);
    MapMatF(out.sample(n).data(), Y.rows(), Y.cols()) = Y.cast<float>();
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor4& x, std::span<const float> weight, const Tensor4& grad_out, bool need_input) {
  const Dims4& d = x.dims();
  const std::size_t c_out = grad_out.dims().c;
  const std::size_t c_in = conv_in_channels(x, weight, c_out);
  if (!(grad_out.dims() == Dims4{d.b, c_out, d.h, d.w})) throw ShapeError("conv2d_backward: grad shape mismatch");
  const std::size_t hw = d.plane();
  const auto k = static_cast<Eigen::Index>(c_in * 9);
  const auto co = static_cast<Eigen::Index>(c_out);
  const auto ehw = static_cast<Eigen::Index>(hw);

  ConvGrads g;
  if (need_input) g.input = Tensor4(d);
  std::vector<double> col(c_in * 9 * hw), dcol(need_input ? c_in * 9 * hw : 0), dx(need_input ? c_in * hw : 0);
  const RowMat W = widen(weight, c_out, c_in * 9);
  RowMat dW = RowMat::Zero(co, k);
  Eigen::VectorXd db = Eigen::VectorXd::Zero(co);
  for (std::size_t n = 0; n < d.b; ++n) {
    const RowMat G = widen(grad_out.sample(n), c_out, hw);
    im2col(x.sample(n).data(), c_in, d.h, d.w, col.data());
    CMapMat C(col.data(), k, ehw);
    dW.noalias() += G * C.transpose();
    db += G.rowwise().sum();
    if (need_input) {
      MapMat dC(dcol.data(), k, ehw);
      dC.noalias() = W.transpose() * G;
      col2im(dcol.data(), c_in, d.h, d.w, dx.data());
      std::transform(dx.begin(), dx.end(), g.input.sample(n).begin(), [](double v) { return static_cast<float>(v); });
    }
  }
  g.weight.resize(c_out * c_in * 9);
  MapMatF(g.weight.data(), co, k) = dW.cast<float>();
  g.bias.resize(c_out);
  for (std::size_t o = 0; o < c_out; ++o) g.bias[o] = static_cast<float>(db[static_cast<Eigen::Index>(o)]);
  return g;
}

MaxPoolResult maxpool2d(const Tensor4& x) {
  const Dims4& d = x.dims();
  if (d.h % 2 != 0 || d.w % 2 != 0) throw ShapeError("maxpool2d: spatial dims must be even, got " + to_string(d));
  const std::size_t oh = d.h / 2, ow = d.w / 2;
  MaxPoolResult r{Tensor4({d.b, d.c, oh, ow}), {}};
  r.argmax.resize(r.output.size());
  auto src = x.data();
  auto dst = r.output.data();
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < d.b * d.c; ++nc) {
    const std::size_t base = nc * d.plane();
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
        std::size_t best = base + (2 * y) * d.w + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t i = base + (2 * y + dy) * d.w + 2 * xx + dx;
            if (src[i] > src[best]) best = i;
          }
        dst[o] = src[best];
        r.argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return r;
}

Tensor4 maxpool2d_backward(const Tensor4& grad_out, std::span<const std::uint32_t> argmax, const Dims4& in_dims) {
  if (argmax.size() != grad_out.size()) throw ShapeError("maxpool2d_backward: index count mismatch");
  Tensor4 g(in_dims);
  auto dst = g.data();
  auto src = grad_out.data();
  for (std::size_t i = 0; i < argmax.size(); ++i) dst[argmax[i]] += src[i];
  return g;
}

Tensor4 relu(const Tensor4& x) {
  Tensor4 y = x;
  for (float& v : y.data()) v = v > 0.0f ? v : 0.0f;
  return y;
}

Tensor4 relu_backward(const Tensor4& grad_out, const Tensor4& output) {
  if (!(grad_out.dims() == output.dims())) throw ShapeError("relu_backward: shape mismatch");
  Tensor4 g = grad_out;
  auto out = output.data();
  auto gd = g.data();
  for (std::size_t i = 0; i < gd.size(); ++i)
    if (!(out[i] > 0.0f)) gd[i] = 0.0f;
  return g;
}

Tensor2 global_avg_pool(const Tensor4& x) {
  const Dims4& d = x.dims();
  Tensor2 y(d.b, d.c);
  const std::size_t hw = d.plane();
  for (std::size_t n = 0; n < d.b; ++n)
    for (std::size_t c = 0; c < d.c; ++c) {
      double s = 0.0;
      for (float v : x.channel(n, c).data) s += v;
      y(n, c) = static_cast<float>(s / static_cast<double>(hw));
    }
  return y;
}

Tensor4 global_avg_pool_backward(const Tensor2& grad_out, const Dims4& in_dims) {
  if (grad_out.rows() != in_dims.b || grad_out.cols() != in_dims.c)
    throw ShapeError("global_avg_pool_backward: shape mismatch");
  Tensor4 g(in_dims);
  const float inv = 1.0f / static_cast<float>(in_dims.plane());
  for (std::size_t n = 0; n < in_dims.b; ++n)
    for (std::size_t c = 0; c < in_dims.c; ++c) {
      const float v = grad_out(n, c) * inv;
      for (float& e : g.channel(n, c).data) e = v;
    }
  return g;
}

Tensor2 linear(const Tensor2& x, std::span<const float> weight, std::span<const float> bias, std::size_t out_features) {
  const std::size_t in = x.cols();
  if (weight.size() != out_features * in) throw ShapeError("linear: weight shape does not match input features");
  if (bias.size() != out_features) throw ShapeError("linear: bias length mismatch");
  Tensor2 y(x.rows(), out_features);
  const RowMat X = widen(x.data(), x.rows(), in);
  const RowMat W = widen(weight, out_features, in);
  RowMat Y = X * W.transpose();
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t o = 0; o < out_features; ++o)
      y(r, o) = static_cast<float>(Y(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(o)) + bias[o]);
  return y;
}

LinearGrads linear_backward(const Tensor2& x, std::span<const float> weight, const Tensor2& grad_out) {
  const std::size_t in = x.cols(), out = grad_out.cols();
  if (weight.size() != out * in || grad_out.rows() != x.rows()) throw ShapeError("linear_backward: shape mismatch");
  LinearGrads g{Tensor2(x.rows(), in), std::vector<float>(out * in), std::vector<float>(out, 0.0f)};
  const auto rows = static_cast<Eigen::Index>(x.rows());
  const RowMat X = widen(x.data(), x.rows(), in);
  const RowMat W = widen(weight, out, in);
  const RowMat G = widen(grad_out.data(), x.rows(), out);
  MapMatF(g.input.data().data(), rows, static_cast<Eigen::Index>(in)) = (G * W).cast<float>();
  MapMatF(g.weight.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)) =
      (G.transpose() * X).cast<float>();
  const Eigen::VectorXd db = G.colwise().sum().transpose();
  for (std::size_t o = 0; o < out; ++o) g.bias[o] = static_cast<float>(db[static_cast<Eigen::Index>(o)]);
  return g;
}

LossResult softmax_cross_entropy(const Tensor2& logits, std::span<const int> labels) {
  const std::size_t b = logits.rows(), k = logits.cols();
  if (labels.size() != b) throw ShapeError("softmax_cross_entropy: label count mismatch");
  LossResult r{0.0, Tensor2(b, k)};
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t n = 0; n < b; ++n) {
    const int label = labels[n];
    if (label < 0 || static_cast<std::size_t>(label) >= k)
      throw InvalidArgument("softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " +
                            std::to_string(k) + ")");
    const auto row = logits.row(n);
    const double m = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (float v : row) z += std::exp(static_cast<double>(v) - m);
    const double log_z = std::log(z) + m;
    r.loss += ((m - row[static_cast<std::size_t>(label)]) + std::log(z)) * inv_b;
    for (std::size_t c = 0; c < k; ++c) {
      double p = std::exp(static_cast<double>(row[c]) - log_z);
      if (c == static_cast<std::size_t>(label)) p -= 1.0;
      r.grad(n, c) = static_cast<float>(p * inv_b);
    }
  }
  return r;
}

std::vector<int> argmax_rows(const Tensor2& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t n = 0; n < logits.rows(); ++n) {
    const auto row = logits.row(n);
    out[n] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace feataug::nn
