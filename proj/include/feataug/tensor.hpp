#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace feataug {

// Error taxonomy shared by every module.
struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Dims4 {
  std::size_t b = 0, c = 0, h = 0, w = 0;

  std::size_t count() const { return b * c * h * w; }
  std::size_t plane() const { return h * w; }
  friend bool operator==(const Dims4&, const Dims4&) = default;
};

std::string to_string(const Dims4& d);

/// Read-only view of one h x w channel slab, row-major.
struct ChannelView {
  std::span<const float> data;
  std::size_t h = 0, w = 0;

  float at(std::size_t y, std::size_t x) const { return data[y * w + x]; }
};

/// Mutable view of one h x w channel slab.
struct ChannelSpan {
  std::span<float> data;
  std::size_t h = 0, w = 0;

  float& at(std::size_t y, std::size_t x) const { return data[y * w + x]; }
  operator ChannelView() const { return {data, h, w}; }
};

/// Dense NCHW float tensor.
class Tensor4 {
 public:
  Tensor4() = default;
  /// Throws InvalidArgument on a zero or overflowing dimension.
  explicit Tensor4(Dims4 dims, float fill = 0.0f);
  Tensor4(Dims4 dims, std::vector<float> data);

  const Dims4& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  const std::vector<float>& vec() const { return data_; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return ((n * dims_.c + c) * dims_.h + y) * dims_.w + x;
  }
  float& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[offset(n, c, y, x)];
  }
  float operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[offset(n, c, y, x)];
  }

  ChannelView channel(std::size_t n, std::size_t c) const;
  ChannelSpan channel(std::size_t n, std::size_t c);
  std::span<const float> sample(std::size_t n) const;
  std::span<float> sample(std::size_t n);

  bool all_finite() const;

  friend bool operator==(const Tensor4&, const Tensor4&) = default;

 private:
  Dims4 dims_{};
  std::vector<float> data_;
};

/// Dense row-major matrix (logits, activations after pooling).
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, float fill = 0.0f);
  Tensor2(std::size_t rows, std::size_t cols, std::vector<float> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  friend bool operator==(const Tensor2&, const Tensor2&) = default;

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<float> data_;
};

Tensor4 alloc(Dims4 dims, float fill);

/// Bilinear interpolation at (y, x) with zero padding: every integer-grid
/// neighbor outside [0,h) x [0,w) contributes 0.
float bilinear_sample(ChannelView channel, double y, double x);

/// One neighbor of a bilinear tap. Weight zero taps are never emitted.
struct Tap {
  std::size_t index;
  float weight;
};

/// Appends the in-bounds taps of the bilinear stencil at (y, x) to `out`.
/// sum(weight * channel[index]) equals bilinear_sample(channel, y, x).
void bilinear_taps(std::size_t h, std::size_t w, double y, double x, std::vector<Tap>& out);

}  // namespace feataug
