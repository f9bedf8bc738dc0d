#include "feataug/tensor.hpp"

#include <cmath>
#include <limits>

namespace feataug {

namespace {

std::size_t checked_count(const Dims4& d) {
  const std::array<std::size_t, 4> dims{d.b, d.c, d.h, d.w};
  std::size_t n = 1;
  for (std::size_t v : dims) {
    if (v == 0) throw InvalidArgument("tensor dimension must be positive: " + to_string(d));
    if (n > std::numeric_limits<std::size_t>::max() / sizeof(float) / v)
      throw InvalidArgument("tensor dimensions overflow: " + to_string(d));
    n *= v;
  }
  return n;
}

// Up to four in-bounds bilinear neighbors of (y, x).
struct Stencil {
  int n = 0;
  Tap taps[4];
};

Stencil stencil(std::size_t h, std::size_t w, double y, double x) {
  Stencil s;
  if (!std::isfinite(y) || !std::isfinite(x)) return s;
  const double fy = std::floor(y);
  const double fx = std::floor(x);
  // Entire stencil outside the grid.
  if (fy < -1.0 || fx < -1.0 || fy >= static_cast<double>(h) || fx >= static_cast<double>(w)) return s;
  const double wy = y - fy;
  const double wx = x - fx;
  const long y0 = static_cast<long>(fy);
  const long x0 = static_cast<long>(fx);
  const double wys[2] = {1.0 - wy, wy};
  const double wxs[2] = {1.0 - wx, wx};
  for (int dy = 0; dy < 2; ++dy) {
    const long yy = y0 + dy;
    if (yy < 0 || yy >= static_cast<long>(h) || wys[dy] == 0.0) continue;
    for (int dx = 0; dx < 2; ++dx) {
      const long xx = x0 + dx;
      if (xx < 0 || xx >= static_cast<long>(w) || wxs[dx] == 0.0) continue;
      s.taps[s.n++] = {static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx),
                       static_cast<float>(wys[dy] * wxs[dx])};
    }
  }
  return s;
}

}  // namespace

std::string to_string(const Dims4& d) {
  return "(" + std::to_string(d.b) + "," + std::to_string(d.c) + "," + std::to_string(d.h) + "," +
         std::to_string(d.w) + ")";
}

Tensor4::Tensor4(Dims4 dims, float fill) : dims_(dims), data_(checked_count(dims), fill) {}

Tensor4::Tensor4(Dims4 dims, std::vector<float> data) : dims_(dims), data_(std::move(data)) {
  if (data_.size() != checked_count(dims))
    throw ShapeError("tensor payload length " + std::to_string(data_.size()) + " does not match dims " +
                     to_string(dims));
}

ChannelView Tensor4::channel(std::size_t n, std::size_t c) const {
  return {std::span<const float>(data_).subspan(offset(n, c, 0, 0), dims_.plane()), dims_.h, dims_.w};
}

ChannelSpan Tensor4::channel(std::size_t n, std::size_t c) {
  return {std::span<float>(data_).subspan(offset(n, c, 0, 0), dims_.plane()), dims_.h, dims_.w};
}

std::span<const float> Tensor4::sample(std::size_t n) const {
  const std::size_t len = dims_.c * dims_.plane();
  return std::span<const float>(data_).subspan(n * len, len);
}

std::span<float> Tensor4::sample(std::size_t n) {
  const std::size_t len = dims_.c * dims_.plane();
  return std::span<float>(data_).subspan(n * len, len);
}

bool Tensor4::all_finite() const {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor2::Tensor2(std::size_t rows, std::size_t cols, float fill) : rows_(rows), cols_(cols) {
  if (rows == 0 || cols == 0) throw InvalidArgument("matrix dimension must be positive");
  data_.assign(rows * cols, fill);
}

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) throw ShapeError("matrix payload length mismatch");
}

Tensor4 alloc(Dims4 dims, float fill) { return Tensor4(dims, fill); }

float bilinear_sample(ChannelView channel, double y, double x) {
  const Stencil s = stencil(channel.h, channel.w, y, x);
  float acc = 0.0f;
  for (int i = 0; i < s.n; ++i) acc += s.taps[i].weight * channel.data[s.taps[i].index];
  return acc;
}

void bilinear_taps(std::size_t h, std::size_t w, double y, double x, std::vector<Tap>& out) {
  const Stencil s = stencil(h, w, y, x);
  out.insert(out.end(), s.taps, s.taps + s.n);
}

}  // namespace feataug
