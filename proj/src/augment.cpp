#include "feataug/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace feataug::augment {

namespace {

// Child-stream labels. Each transform draws from its own stream so toggling
// one transform never shifts the draws of another.
constexpr std::uint64_t kSelectLabel = 0x5e1ec7;
constexpr std::uint64_t kChannelLabel = 0xc4a11e1;

std::size_t reflect(long i, std::size_t n) {
  if (n == 1) return 0;
  const long last = static_cast<long>(n) - 1;
  if (i < 0) i = -i;
  if (i > last) i = 2 * last - i;
  return static_cast<std::size_t>(std::clamp(i, 0L, last));
}

std::vector<float> copy_of(ChannelView in) { return {in.data.begin(), in.data.end()}; }

void blur_rows(std::span<const float> in, std::span<float> out, std::size_t h, std::size_t w,
               const std::array<float, 3>& k) {
  for (std::size_t y = 0; y < h; ++y) {
    const float* row = in.data() + y * w;
    float* dst = out.data() + y * w;
    for (std::size_t x = 0; x < w; ++x) {
      const long xl = static_cast<long>(x);
      dst[x] = k[0] * row[reflect(xl - 1, w)] + k[1] * row[x] + k[2] * row[reflect(xl + 1, w)];
    }
  }
}

void blur_cols(std::span<const float> in, std::span<float> out, std::size_t h, std::size_t w,
               const std::array<float, 3>& k) {
  for (std::size_t y = 0; y < h; ++y) {
    const long yl = static_cast<long>(y);
    const float* up = in.data() + reflect(yl - 1, h) * w;
    const float* mid = in.data() + y * w;
    const float* down = in.data() + reflect(yl + 1, h) * w;
    float* dst = out.data() + y * w;
    for (std::size_t x = 0; x < w; ++x) dst[x] = k[0] * up[x] + k[1] * mid[x] + k[2] * down[x];
  }
}

void blur_rows_adjoint(std::span<const float> g, std::span<float> out, std::size_t h, std::size_t w,
                       const std::array<float, 3>& k) {
  std::fill(out.begin(), out.end(), 0.0f);
  for (std::size_t y = 0; y < h; ++y) {
    const float* grow = g.data() + y * w;
    float* dst = out.data() + y * w;
    for (std::size_t x = 0; x < w; ++x) {
      const long xl = static_cast<long>(x);
      dst[reflect(xl - 1, w)] += k[0] * grow[x];
      dst[x] += k[1] * grow[x];
      dst[reflect(xl + 1, w)] += k[2] * grow[x];
    }
  }
}

void blur_cols_adjoint(std::span<const float> g, std::span<float> out, std::size_t h, std::size_t w,
                       const std::array<float, 3>& k) {
  std::fill(out.begin(), out.end(), 0.0f);
  for (std::size_t y = 0; y < h; ++y) {
    const long yl = static_cast<long>(y);
    float* up = out.data() + reflect(yl - 1, h) * w;
    float* mid = out.data() + y * w;
    float* down = out.data() + reflect(yl + 1, h) * w;
    const float* grow = g.data() + y * w;
    for (std::size_t x = 0; x < w; ++x) {
      up[x] += k[0] * grow[x];
      mid[x] += k[1] * grow[x];
      down[x] += k[2] * grow[x];
    }
  }
}

void flip_into(std::span<const float> in, std::span<float> out, std::size_t h, std::size_t w) {
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) out[y * w + x] = in[y * w + (w - 1 - x)];
}

void check_box(std::size_t h, std::size_t w, const CropBox& box) {
  if (box.height < 1 || box.width < 1 || box.top + box.height > h || box.left + box.width > w)
    throw InvalidArgument("crop box out of bounds");
}

void check_record(const Dims4& dims, const AugmentRecord& record) {
  if (record.identity()) return;
  if (!(record.dims == dims)) throw ShapeError("augment record was made for dims " + to_string(record.dims));
  if (record.samples.size() != dims.b) throw ShapeError("augment record sample count mismatch");
  for (const auto& s : record.samples)
    for (const auto& t : s.channels) {
      if (t.channel >= dims.c) throw ShapeError("augment record channel out of range");
      if (record.enabled.has(Transform::GN) && t.noise_field.size() != dims.plane())
        throw ShapeError("augment record noise field size mismatch");
      if (record.enabled.has(Transform::RRC)) check_box(dims.h, dims.w, t.crop);
    }
}

}  // namespace

std::string_view name(Transform t) {
  switch (t) {
    case Transform::RRC: return "RRC";
    case Transform::RHF: return "RHF";
    case Transform::RR: return "RR";
    case Transform::GB: return "GB";
    case Transform::GN: return "GN";
  }
  return "?";
}

std::optional<Transform> parse_transform(std::string_view s) {
  for (Transform t : kAllTransforms)
    if (name(t) == s) return t;
  return std::nullopt;
}

std::vector<std::string> TransformSet::names() const {
  std::vector<std::string> out;
  for (Transform t : kAllTransforms)
    if (has(t)) out.emplace_back(name(t));
  return out;
}

void AugmentationLayerConfig::validate() const {
  auto fail = [](const std::string& what) { throw InvalidArgument("augmentation config: " + what); };
  if (!(p >= 0.0 && p <= 1.0)) fail("p must lie in [0, 1]");
  if (!(crop_scale_range.lo > 0.0 && crop_scale_range.lo <= crop_scale_range.hi && crop_scale_range.hi <= 1.0))
    fail("crop_scale_range must satisfy 0 < lo <= hi <= 1");
  if (!(rotation_range_deg.lo <= rotation_range_deg.hi)) fail("rotation_range_deg lo > hi");
  if (!(blur_sigma_range.lo > 0.0 && blur_sigma_range.lo <= blur_sigma_range.hi))
    fail("blur_sigma_range must satisfy 0 < lo <= hi");
  if (!(blur_apply_prob >= 0.0 && blur_apply_prob <= 1.0)) fail("blur_apply_prob must lie in [0, 1]");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) fail("flip_prob must lie in [0, 1]");
  if (!(noise_rel_sigma >= 0.0 && std::isfinite(noise_rel_sigma))) fail("noise_rel_sigma must be >= 0");
}

std::size_t selected_count(std::size_t c, double p) {
  const double k = std::floor(p * static_cast<double>(c) + 1e-9);
  return std::min(c, static_cast<std::size_t>(std::max(0.0, k)));
}

std::vector<std::size_t> select_channels(std::size_t c, double p, RngStream& rng) {
  const std::size_t k = selected_count(c, p);
  std::vector<std::size_t> idx(c);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Partial Fisher-Yates: the first k slots are a uniform k-subset.
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(c - 1)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

WarpPlan crop_plan(std::size_t h, std::size_t w, const CropBox& box) {
  check_box(h, w, box);
  WarpPlan plan{h, w, {}, {}};
  plan.offsets.reserve(h * w + 1);
  plan.taps.reserve(h * w * 4);
  plan.offsets.push_back(0);
  for (std::size_t y = 0; y < h; ++y) {
    const double sy = static_cast<double>(box.top) +
                      (h == 1 ? 0.0 : static_cast<double>(y * (box.height - 1)) / static_cast<double>(h - 1));
    for (std::size_t x = 0; x < w; ++x) {
      const double sx = static_cast<double>(box.left) +
                        (w == 1 ? 0.0 : static_cast<double>(x * (box.width - 1)) / static_cast<double>(w - 1));
      bilinear_taps(h, w, sy, sx, plan.taps);
      plan.offsets.push_back(static_cast<std::uint32_t>(plan.taps.size()));
    }
  }
  return plan;
}

WarpPlan rotation_plan(std::size_t h, std::size_t w, double angle_deg) {
  WarpPlan plan{h, w, {}, {}};
  plan.offsets.reserve(h * w + 1);
  plan.taps.reserve(h * w * 4);
  plan.offsets.push_back(0);
  const double theta = angle_deg * std::numbers::pi / 180.0;
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  for (std::size_t y = 0; y < h; ++y) {
    const double dy = static_cast<double>(y) - cy;
    for (std::size_t x = 0; x < w; ++x) {
      const double dx = static_cast<double>(x) - cx;
      // Pre-image of (y, x) under a rotation by angle_deg about the center.
      const double sx = cx + c * dx + s * dy;
      const double sy = cy - s * dx + c * dy;
      bilinear_taps(h, w, sy, sx, plan.taps);
      plan.offsets.push_back(static_cast<std::uint32_t>(plan.taps.size()));
    }
  }
  return plan;
}

void warp(const WarpPlan& plan, std::span<const float> in, std::span<float> out) {
  const std::size_t n = plan.h * plan.w;
  for (std::size_t i = 0; i < n; ++i) {
    float acc = 0.0f;
    for (std::uint32_t k = plan.offsets[i]; k < plan.offsets[i + 1]; ++k)
      acc += plan.taps[k].weight * in[plan.taps[k].index];
    out[i] = acc;
  }
}

void warp_adjoint(const WarpPlan& plan, std::span<const float> grad_out, std::span<float> grad_in) {
  std::fill(grad_in.begin(), grad_in.end(), 0.0f);
  const std::size_t n = plan.h * plan.w;
  for (std::size_t i = 0; i < n; ++i)
    for (std::uint32_t k = plan.offsets[i]; k < plan.offsets[i + 1]; ++k)
      grad_in[plan.taps[k].index] += plan.taps[k].weight * grad_out[i];
}

std::vector<float> random_resized_crop(ChannelView in, const CropBox& box) {
  std::vector<float> out(in.h * in.w);
  warp(crop_plan(in.h, in.w, box), in.data, out);
  return out;
}

std::vector<float> horizontal_flip(ChannelView in) {
  std::vector<float> out(in.h * in.w);
  flip_into(in.data, out, in.h, in.w);
  return out;
}

std::vector<float> rotate(ChannelView in, double angle_deg) {
  std::vector<float> out(in.h * in.w);
  warp(rotation_plan(in.h, in.w, angle_deg), in.data, out);
  return out;
}

std::array<float, 3> gaussian_kernel3(double sigma) {
  if (!(sigma > 0.0)) throw InvalidArgument("blur sigma must be positive");
  const double side = std::exp(-1.0 / (2.0 * sigma * sigma));
  const double norm = 1.0 + 2.0 * side;
  return {static_cast<float>(side / norm), static_cast<float>(1.0 / norm), static_cast<float>(side / norm)};
}

std::vector<float> gaussian_blur(ChannelView in, double sigma) {
  const auto k = gaussian_kernel3(sigma);
  std::vector<float> tmp(in.h * in.w), out(in.h * in.w);
  blur_rows(in.data, tmp, in.h, in.w, k);
  blur_cols(tmp, out, in.h, in.w, k);
  return out;
}

std::vector<float> gaussian_blur_adjoint(ChannelView grad_out, double sigma) {
  const auto k = gaussian_kernel3(sigma);
  std::vector<float> tmp(grad_out.h * grad_out.w), out(grad_out.h * grad_out.w);
  blur_cols_adjoint(grad_out.data, tmp, grad_out.h, grad_out.w, k);
  blur_rows_adjoint(tmp, out, grad_out.h, grad_out.w, k);
  return out;
}

float noise_sigma(ChannelView in, double rel_sigma) {
  if (rel_sigma == 0.0 || in.data.empty()) return 0.0f;
  double mean = 0.0;
  for (float v : in.data) mean += v;
  mean /= static_cast<double>(in.data.size());
  double var = 0.0;
  for (float v : in.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(in.data.size());
  return static_cast<float>(rel_sigma * std::sqrt(var));
}

std::vector<float> add_gaussian_noise(ChannelView in, std::span<const float> noise_field, float sigma) {
  if (noise_field.size() != in.data.size()) throw ShapeError("noise field does not match channel size");
  std::vector<float> out = copy_of(in);
  if (sigma == 0.0f) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += sigma * noise_field[i];
  return out;
}

ChannelTransform draw_channel_transform(std::size_t h, std::size_t w, std::size_t channel,
                                        const AugmentationLayerConfig& cfg, RngStream rng) {
  ChannelTransform t;
  t.channel = channel;
  {
    RngStream r = rng.derive(static_cast<std::uint64_t>(Transform::RRC));
    auto extent = [&](std::size_t n) {
      const auto dn = static_cast<double>(n);
      const auto lo = std::clamp<long>(static_cast<long>(std::ceil(cfg.crop_scale_range.lo * dn - 1e-9)), 1, static_cast<long>(n));
      const auto hi = std::clamp<long>(static_cast<long>(std::floor(cfg.crop_scale_range.hi * dn + 1e-9)), lo, static_cast<long>(n));
      return static_cast<std::size_t>(r.uniform_int(lo, hi));
    };
    t.crop.height = extent(h);
    t.crop.width = extent(w);
    t.crop.top = static_cast<std::size_t>(r.uniform_int(0, static_cast<std::int64_t>(h - t.crop.height)));
    t.crop.left = static_cast<std::size_t>(r.uniform_int(0, static_cast<std::int64_t>(w - t.crop.width)));
  }
  t.flip = rng.derive(static_cast<std::uint64_t>(Transform::RHF)).bernoulli(cfg.flip_prob);
  t.angle_deg = rng.derive(static_cast<std::uint64_t>(Transform::RR))
                    .uniform(cfg.rotation_range_deg.lo, cfg.rotation_range_deg.hi);
  {
    RngStream r = rng.derive(static_cast<std::uint64_t>(Transform::GB));
    t.blur_applied = r.bernoulli(cfg.blur_apply_prob);
    t.blur_sigma = r.uniform(cfg.blur_sigma_range.lo, cfg.blur_sigma_range.hi);
  }
  if (cfg.enabled.has(Transform::GN)) {
    RngStream r = rng.derive(static_cast<std::uint64_t>(Transform::GN));
    t.noise_field.resize(h * w);
    for (float& v : t.noise_field) v = static_cast<float>(r.normal());
  }
  return t;
}

void apply_channel_transform(ChannelView in, std::span<float> out, ChannelTransform& t, TransformSet enabled,
                             double noise_rel_sigma, bool resolve_sigma) {
  const std::size_t h = in.h, w = in.w;
  std::vector<float> cur(in.data.begin(), in.data.end());
  std::vector<float> next(cur.size());
  if (enabled.has(Transform::RRC)) {
    warp(crop_plan(h, w, t.crop), cur, next);
    cur.swap(next);
  }
  if (enabled.has(Transform::RHF) && t.flip) {
    flip_into(cur, next, h, w);
    cur.swap(next);
  }
  if (enabled.has(Transform::RR)) {
    warp(rotation_plan(h, w, t.angle_deg), cur, next);
    cur.swap(next);
  }
  if (enabled.has(Transform::GB) && t.blur_applied) {
    const auto k = gaussian_kernel3(t.blur_sigma);
    blur_rows(cur, next, h, w, k);
    blur_cols(next, cur, h, w, k);
  }
  if (enabled.has(Transform::GN)) {
    if (resolve_sigma) t.noise_sigma = noise_sigma({cur, h, w}, noise_rel_sigma);
    if (t.noise_sigma != 0.0f)
      for (std::size_t i = 0; i < cur.size(); ++i) cur[i] += t.noise_sigma * t.noise_field[i];
  }
  std::copy(cur.begin(), cur.end(), out.begin());
}

AugmentResult augment_batch(const Tensor4& batch, const AugmentationLayerConfig& cfg, Mode mode,
                            const RngStream& rng) {
  AugmentResult result{batch, {}};
  if (mode == Mode::eval) return result;
  cfg.validate();
  const Dims4& d = batch.dims();
  result.record.dims = d;
  result.record.enabled = cfg.enabled;
  result.record.samples.resize(d.b);

  std::vector<std::size_t> shared;
  if (cfg.share_selection_across_batch) {
    RngStream sel = rng.derive(kSelectLabel);
    shared = select_channels(d.c, cfg.p, sel);
  }
  for (std::size_t n = 0; n < d.b; ++n) {
    const RngStream sample_rng = rng.derive(n);
    std::vector<std::size_t> chosen = shared;
    if (!cfg.share_selection_across_batch) {
      RngStream sel = sample_rng.derive(kSelectLabel);
      chosen = select_channels(d.c, cfg.p, sel);
    }
    auto& params = result.record.samples[n].channels;
    params.reserve(chosen.size());
    for (std::size_t c : chosen) {
      params.push_back(draw_channel_transform(d.h, d.w, c, cfg, sample_rng.derive({kChannelLabel, c})));
      apply_channel_transform(batch.channel(n, c), result.output.channel(n, c).data, params.back(), cfg.enabled,
                              cfg.noise_rel_sigma, true);
    }
  }
  return result;
}

Tensor4 replay(const Tensor4& batch, const AugmentRecord& record) {
  check_record(batch.dims(), record);
  Tensor4 out = batch;
  for (std::size_t n = 0; n < record.samples.size(); ++n)
    for (ChannelTransform t : record.samples[n].channels)
      apply_channel_transform(batch.channel(n, t.channel), out.channel(n, t.channel).data, t, record.enabled, 0.0,
                              false);
  return out;
}

Tensor4 augment_backward(const Tensor4& grad_out, const AugmentRecord& record) {
  check_record(grad_out.dims(), record);
  Tensor4 grad_in = grad_out;
  const std::size_t h = grad_out.dims().h, w = grad_out.dims().w;
  const TransformSet enabled = record.enabled;
  std::vector<float> cur(h * w), next(h * w);
  for (std::size_t n = 0; n < record.samples.size(); ++n) {
    for (const ChannelTransform& t : record.samples[n].channels) {
      const ChannelView g = grad_out.channel(n, t.channel);
      std::copy(g.data.begin(), g.data.end(), cur.begin());
      // Reverse order of the forward pipeline; the noise step has identity Jacobian.
      if (enabled.has(Transform::GB) && t.blur_applied) {
        const auto k = gaussian_kernel3(t.blur_sigma);
        blur_cols_adjoint(cur, next, h, w, k);
        blur_rows_adjoint(next, cur, h, w, k);
      }
      if (enabled.has(Transform::RR)) {
        warp_adjoint(rotation_plan(h, w, t.angle_deg), cur, next);
        cur.swap(next);
      }
      if (enabled.has(Transform::RHF) && t.flip) {
        flip_into(cur, next, h, w);
        cur.swap(next);
      }
      if (enabled.has(Transform::RRC)) {
        warp_adjoint(crop_plan(h, w, t.crop), cur, next);
        cur.swap(next);
      }
      auto dst = grad_in.channel(n, t.channel).data;
      std::copy(cur.begin(), cur.end(), dst.begin());
    }
  }
  return grad_in;
}

}  // namespace feataug::augment
