#pragma once

// Double-precision reference implementations used as test oracles. Nothing
// here calls into the library's kernels; only plain data types are shared.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "feataug/augment.hpp"
#include "feataug/model.hpp"
#include "feataug/tensor.hpp"

namespace oracle {

using feataug::augment::AugmentRecord;
using feataug::augment::ChannelTransform;
using feataug::augment::CropBox;
using feataug::augment::Transform;
using feataug::augment::TransformSet;

struct Plane {
  std::size_t h = 0, w = 0;
  std::vector<double> v;
  double at(long y, long x) const {
    if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) return 0.0;
    return v[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  }
};

inline Plane plane_of(feataug::ChannelView c) {
  return {c.h, c.w, std::vector<double>(c.data.begin(), c.data.end())};
}

// Zero-padded bilinear interpolation, written out corner by corner.
inline double bilinear(const Plane& p, double y, double x) {
  const double fy = std::floor(y), fx = std::floor(x);
  const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
  const double ty = y - fy, tx = x - fx;
  return (1 - ty) * (1 - tx) * p.at(y0, x0) + (1 - ty) * tx * p.at(y0, x0 + 1) + ty * (1 - tx) * p.at(y0 + 1, x0) +
         ty * tx * p.at(y0 + 1, x0 + 1);
}

inline Plane crop_resize(const Plane& in, const CropBox& b) {
  Plane out{in.h, in.w, std::vector<double>(in.h * in.w)};
  const double sy = in.h > 1 ? double(b.height - 1) / double(in.h - 1) : 0.0;
  const double sx = in.w > 1 ? double(b.width - 1) / double(in.w - 1) : 0.0;
  for (std::size_t y = 0; y < in.h; ++y)
    for (std::size_t x = 0; x < in.w; ++x)
      out.v[y * in.w + x] = bilinear(in, double(b.top) + double(y) * sy, double(b.left) + double(x) * sx);
  return out;
}

inline Plane flip(const Plane& in) {
  Plane out = in;
  for (std::size_t y = 0; y < in.h; ++y)
    for (std::size_t x = 0; x < in.w; ++x) out.v[y * in.w + x] = in.v[y * in.w + in.w - 1 - x];
  return out;
}

// Inverse warp: the output pixel p samples the input at R(angle)^-1 (p - center) + center,
// where R rotates (x, y) counter-clockwise in a y-down frame.
inline Plane rotate(const Plane& in, double angle_deg) {
  Plane out{in.h, in.w, std::vector<double>(in.h * in.w)};
  const double t = angle_deg * std::numbers::pi / 180.0;
  const double inv[2][2] = {{std::cos(t), std::sin(t)}, {-std::sin(t), std::cos(t)}};  // rows act on (x, y)
  const double cx = (double(in.w) - 1) / 2, cy = (double(in.h) - 1) / 2;
  for (std::size_t y = 0; y < in.h; ++y)
    for (std::size_t x = 0; x < in.w; ++x) {
      const double px = double(x) - cx, py = double(y) - cy;
      const double sx = inv[0][0] * px + inv[0][1] * py + cx;
      const double sy = inv[1][0] * px + inv[1][1] * py + cy;
      out.v[y * in.w + x] = bilinear(in, sy, sx);
    }
  return out;
}

inline long mirror(long i, long n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

// Dense 3x3 convolution with the outer-product Gaussian and mirrored borders.
inline Plane blur_dense(const Plane& in, double sigma) {
  double g[3];
  double s = 0;
  for (int i = -1; i <= 1; ++i) s += g[i + 1] = std::exp(-double(i * i) / (2 * sigma * sigma));
  Plane out{in.h, in.w, std::vector<double>(in.h * in.w)};
  const long h = long(in.h), w = long(in.w);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double acc = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          acc += g[dy + 1] * g[dx + 1] / (s * s) * in.v[std::size_t(mirror(y + dy, h) * w + mirror(x + dx, w))];
      out.v[std::size_t(y * w + x)] = acc;
    }
  return out;
}

inline Plane transform_channel(Plane p, const ChannelTransform& t, TransformSet enabled) {
  if (enabled.has(Transform::RRC)) p = crop_resize(p, t.crop);
  if (enabled.has(Transform::RHF) && t.flip) p = flip(p);
  if (enabled.has(Transform::RR)) p = rotate(p, t.angle_deg);
  if (enabled.has(Transform::GB) && t.blur_applied) p = blur_dense(p, t.blur_sigma);
  if (enabled.has(Transform::GN))
    for (std::size_t i = 0; i < p.v.size(); ++i) p.v[i] += double(t.noise_sigma) * double(t.noise_field[i]);
  return p;
}

// ---- dense double tensors and a reference network --------------------------------

struct T4 {
  std::size_t b = 0, c = 0, h = 0, w = 0;
  std::vector<double> v;
  double& at(std::size_t n, std::size_t ch, std::size_t y, std::size_t x) { return v[((n * c + ch) * h + y) * w + x]; }
  double at(std::size_t n, std::size_t ch, std::size_t y, std::size_t x) const {
    return v[((n * c + ch) * h + y) * w + x];
  }
};

inline T4 from(const feataug::Tensor4& t) {
  const auto& d = t.dims();
  return {d.b, d.c, d.h, d.w, std::vector<double>(t.data().begin(), t.data().end())};
}

inline T4 augment(const T4& in, const AugmentRecord& rec) {
  T4 out = in;
  for (std::size_t n = 0; n < rec.samples.size(); ++n)
    for (const auto& t : rec.samples[n].channels) {
      Plane p{in.h, in.w, std::vector<double>(in.h * in.w)};
      for (std::size_t y = 0; y < in.h; ++y)
        for (std::size_t x = 0; x < in.w; ++x) p.v[y * in.w + x] = in.at(n, t.channel, y, x);
      p = transform_channel(p, t, rec.enabled);
      for (std::size_t y = 0; y < in.h; ++y)
        for (std::size_t x = 0; x < in.w; ++x) out.at(n, t.channel, y, x) = p.v[y * in.w + x];
    }
  return out;
}

struct Net {
  feataug::BackboneConfig cfg;
  std::vector<std::vector<double>> params;  // same order as Model::params()
};

inline Net net_of(const feataug::Model& m) {
  Net n{m.config(), {}};
  for (const auto& p : m.params()) n.params.emplace_back(p.value.begin(), p.value.end());
  return n;
}

/// Activations between stages of the reference network.
struct State {
  T4 x;                     // feature maps while spatial
  std::vector<double> feat; // (b, f) after global pooling
  std::size_t feat_dim = 0;
};

inline std::size_t param_index_of_stage(const Net& net, std::size_t stage) {
  std::size_t pi = 0;
  for (std::size_t i = 0; i < stage; ++i) {
    const auto k = net.cfg.stages[i].kind;
    if (k == feataug::StageKind::Conv || k == feataug::StageKind::Linear) pi += 2;
  }
  return pi;
}

/// Applies the augmentation layers sitting at `boundary`.
inline void augment_at(const Net& net, std::size_t boundary, const std::vector<AugmentRecord>& records, State& s) {
  for (std::size_t l = 0; l < net.cfg.aug_layers.size(); ++l)
    if (net.cfg.aug_layers[l].position == boundary) s.x = augment(s.x, records.at(l));
}

/// Runs stage `si` alone, without the augmentation that may follow it.
/// `signature` collects the ReLU on/off pattern and max-pool winners so
/// callers can detect kink crossings.
inline void apply_stage(const Net& net, std::size_t si, State& s, std::vector<std::uint32_t>* signature = nullptr) {
  using feataug::StageKind;
  const std::size_t pi = param_index_of_stage(net, si);
  {
    const auto& st = net.cfg.stages[si];
    T4& x = s.x;
    switch (st.kind) {
      case StageKind::Conv: {
        const auto& w = net.params[pi];
        const auto& bias = net.params[pi + 1];
        T4 y{x.b, st.out, x.h, x.w, std::vector<double>(x.b * st.out * x.h * x.w)};
        const long H = long(x.h), W = long(x.w);
        for (std::size_t n = 0; n < x.b; ++n)
          for (std::size_t o = 0; o < st.out; ++o) {
            double* out = &y.at(n, o, 0, 0);
            for (long i = 0; i < H * W; ++i) out[i] = bias[o];
            for (std::size_t ci = 0; ci < st.in; ++ci) {
              const double* in = x.v.data() + (n * x.c + ci) * x.h * x.w;
              for (long ky = 0; ky < 3; ++ky)
                for (long kx = 0; kx < 3; ++kx) {
                  const double k = w[((o * st.in + ci) * 3 + std::size_t(ky)) * 3 + std::size_t(kx)];
                  for (long yy = std::max(0L, 1 - ky); yy < std::min(H, H + 1 - ky); ++yy)
                    for (long xx = std::max(0L, 1 - kx); xx < std::min(W, W + 1 - kx); ++xx)
                      out[yy * W + xx] += k * in[(yy + ky - 1) * W + (xx + kx - 1)];
                }
            }
          }
        x = std::move(y);
        break;
      }
      case StageKind::Relu:
        if (s.feat_dim == 0) {
          for (double& v : x.v) {
            if (signature) signature->push_back(v > 0);
            v = v > 0 ? v : 0;
          }
        } else {
          for (double& v : s.feat) v = v > 0 ? v : 0;
        }
        break;
      case StageKind::MaxPool: {
        T4 y{x.b, x.c, x.h / 2, x.w / 2, std::vector<double>(x.b * x.c * (x.h / 2) * (x.w / 2))};
        for (std::size_t n = 0; n < x.b; ++n)
          for (std::size_t c = 0; c < x.c; ++c)
            for (std::size_t yy = 0; yy < y.h; ++yy)
              for (std::size_t xx = 0; xx < y.w; ++xx) {
                double best = x.at(n, c, 2 * yy, 2 * xx);
                std::uint32_t arg = 0;
                for (std::uint32_t k = 1; k < 4; ++k) {
                  const double v = x.at(n, c, 2 * yy + k / 2, 2 * xx + k % 2);
                  if (v > best) best = v, arg = k;
                }
                if (signature) signature->push_back(arg);
                y.at(n, c, yy, xx) = best;
              }
        x = std::move(y);
        break;
      }
      case StageKind::GlobalAvgPool:
        s.feat_dim = x.c;
        s.feat.assign(x.b * x.c, 0.0);
        for (std::size_t n = 0; n < x.b; ++n)
          for (std::size_t c = 0; c < x.c; ++c) {
            double acc = 0;
            for (std::size_t i = 0; i < x.h * x.w; ++i) acc += x.v[(n * x.c + c) * x.h * x.w + i];
            s.feat[n * x.c + c] = acc / double(x.h * x.w);
          }
        break;
      case StageKind::Linear: {
        const auto& w = net.params[pi];
        const auto& bias = net.params[pi + 1];
        std::vector<double> y(x.b * st.out);
        for (std::size_t n = 0; n < x.b; ++n)
          for (std::size_t o = 0; o < st.out; ++o) {
            double acc = bias[o];
            for (std::size_t i = 0; i < st.in; ++i) acc += w[o * st.in + i] * s.feat[n * s.feat_dim + i];
            y[n * st.out + o] = acc;
          }
        s.feat = std::move(y);
        s.feat_dim = st.out;
        break;
      }
    }
  }
}

/// Runs stages [from, to) with the augmentation layers between them.
inline void run_stages(const Net& net, std::size_t from, std::size_t to, const std::vector<AugmentRecord>& records,
                       State& s, std::vector<std::uint32_t>* signature = nullptr) {
  for (std::size_t si = from; si < to; ++si) {
    apply_stage(net, si, s, signature);
    augment_at(net, si + 1, records, s);
  }
}

/// Adds the effect of changing one 3x3 conv weight by `delta` to the conv
/// output `y` computed from input `x`.
inline void conv_weight_delta(const T4& x, std::size_t c_in, std::size_t index, double delta, T4& y) {
  const std::size_t o = index / (c_in * 9), ci = index / 9 % c_in;
  const long ky = long(index % 9 / 3), kx = long(index % 3);
  const long H = long(x.h), W = long(x.w);
  for (std::size_t n = 0; n < x.b; ++n) {
    double* out = &y.at(n, o, 0, 0);
    const double* in = x.v.data() + (n * x.c + ci) * x.h * x.w;
    for (long yy = std::max(0L, 1 - ky); yy < std::min(H, H + 1 - ky); ++yy)
      for (long xx = std::max(0L, 1 - kx); xx < std::min(W, W + 1 - kx); ++xx)
        out[yy * W + xx] += delta * in[(yy + ky - 1) * W + (xx + kx - 1)];
  }
}

inline double cross_entropy(const State& s, const std::vector<int>& labels) {
  double total = 0;
  const std::size_t b = labels.size();
  for (std::size_t n = 0; n < b; ++n) {
    const double* row = s.feat.data() + n * s.feat_dim;
    const double m = *std::max_element(row, row + s.feat_dim);
    double z = 0;
    for (std::size_t k = 0; k < s.feat_dim; ++k) z += std::exp(row[k] - m);
    total += m + std::log(z) - row[labels[n]];
  }
  return total / double(b);
}

/// Mean cross-entropy of the reference network.
inline double loss(const Net& net, const T4& input, const std::vector<int>& labels,
                   const std::vector<AugmentRecord>& records, std::vector<std::uint32_t>* signature = nullptr) {
  State s{input, {}, 0};
  augment_at(net, 0, records, s);
  run_stages(net, 0, net.cfg.stages.size(), records, s, signature);
  return cross_entropy(s, labels);
}

/// Relative error with an absolute floor on the denominator.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central difference of f at step eps. f(delta, signature) evaluates the
/// function at the perturbed point and records its kink signature. When the
/// signature at +-eps differs from `base`, the step is shrunk (down to 1e-7)
/// so the difference straddles no ReLU or max-pool switch.
template <class F>
double central_difference(F&& f, const std::vector<std::uint32_t>& base, double eps = 1e-3, int* shrunk = nullptr) {
  std::vector<std::uint32_t> plus, minus;
  for (; eps >= 1e-7; eps /= 10) {
    plus.clear();
    minus.clear();
    const double fp = f(eps, &plus);
    const double fm = f(-eps, &minus);
    if (plus == base && minus == base) return (fp - fm) / (2 * eps);
    if (shrunk) ++*shrunk;
  }
  const double e = 1e-7;
  return (f(e, nullptr) - f(-e, nullptr)) / (2 * e);
}

}  // namespace oracle
