#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "feataug/rng.hpp"
#include "feataug/tensor.hpp"

namespace feataug::augment {

/// The five feature-map transforms, in application order.
enum class Transform : std::uint8_t { RRC = 0, RHF = 1, RR = 2, GB = 3, GN = 4 };

inline constexpr std::array<Transform, 5> kAllTransforms{Transform::RRC, Transform::RHF, Transform::RR,
                                                         Transform::GB, Transform::GN};

std::string_view name(Transform t);
std::optional<Transform> parse_transform(std::string_view s);

class TransformSet {
 public:
  constexpr TransformSet() = default;
  static constexpr TransformSet all() { return TransformSet(0x1f); }
  static constexpr TransformSet none() { return TransformSet(0); }

  constexpr bool has(Transform t) const { return bits_ & bit(t); }
  constexpr TransformSet with(Transform t) const { return TransformSet(bits_ | bit(t)); }
  constexpr TransformSet without(Transform t) const { return TransformSet(bits_ & ~bit(t)); }
  constexpr std::uint8_t bits() const { return bits_; }
  constexpr bool empty() const { return bits_ == 0; }
  std::vector<std::string> names() const;

  friend constexpr bool operator==(TransformSet, TransformSet) = default;

 private:
  constexpr explicit TransformSet(std::uint8_t bits) : bits_(bits) {}
  static constexpr std::uint8_t bit(Transform t) { return static_cast<std::uint8_t>(1u << static_cast<unsigned>(t)); }
  std::uint8_t bits_ = 0;
};

enum class Mode { train, eval };

struct Range {
  double lo = 0.0, hi = 0.0;
  friend bool operator==(const Range&, const Range&) = default;
};

struct AugmentationLayerConfig {
  double p = 0.3;                          // fraction of channels augmented per sample
  TransformSet enabled = TransformSet::all();
  std::size_t position = 0;                // stage boundary in the backbone
  Range crop_scale_range{0.6, 1.0};
  Range rotation_range_deg{0.0, 180.0};
  Range blur_sigma_range{0.1, 2.0};
  double blur_apply_prob = 0.5;
  double flip_prob = 0.5;
  double noise_rel_sigma = 0.05;
  bool share_selection_across_batch = false;

  /// Throws InvalidArgument when a field is out of range.
  void validate() const;
  friend bool operator==(const AugmentationLayerConfig&, const AugmentationLayerConfig&) = default;
};

struct CropBox {
  std::size_t top = 0, left = 0, height = 0, width = 0;
  friend bool operator==(const CropBox&, const CropBox&) = default;
};

/// Frozen random draws for one augmented channel.
struct ChannelTransform {
  std::size_t channel = 0;
  CropBox crop;
  bool flip = false;
  double angle_deg = 0.0;
  bool blur_applied = false;
  double blur_sigma = 1.0;
  std::vector<float> noise_field;  // h*w standard-normal draws
  float noise_sigma = 0.0f;        // resolved from the channel during the drawing forward pass

  friend bool operator==(const ChannelTransform&, const ChannelTransform&) = default;
};

/// One sample's draws: the selected channels in ascending order.
struct TransformParams {
  std::vector<ChannelTransform> channels;
  friend bool operator==(const TransformParams&, const TransformParams&) = default;
};

/// Everything needed to replay or differentiate one augment_batch call.
/// Empty `samples` means the layer acted as the identity (eval mode).
struct AugmentRecord {
  Dims4 dims{};
  TransformSet enabled;
  std::vector<TransformParams> samples;

  bool identity() const { return samples.empty(); }
  friend bool operator==(const AugmentRecord&, const AugmentRecord&) = default;
};

struct AugmentResult {
  Tensor4 output;
  AugmentRecord record;
};

// ---- channel selection ------------------------------------------------------

/// floor(p * c), guarded against representation error (0.3 * 10 must give 3).
std::size_t selected_count(std::size_t c, double p);

/// Exactly selected_count(c, p) distinct indices, sorted, uniform without replacement.
std::vector<std::size_t> select_channels(std::size_t c, double p, RngStream& rng);

// ---- per-channel transforms (forward) -----------------------------------------

std::vector<float> random_resized_crop(ChannelView in, const CropBox& box);
std::vector<float> horizontal_flip(ChannelView in);
std::vector<float> rotate(ChannelView in, double angle_deg);
std::array<float, 3> gaussian_kernel3(double sigma);
std::vector<float> gaussian_blur(ChannelView in, double sigma);
/// Population standard deviation times `rel_sigma`; zero for a constant channel.
float noise_sigma(ChannelView in, double rel_sigma);
std::vector<float> add_gaussian_noise(ChannelView in, std::span<const float> noise_field, float sigma);

// ---- linear warps shared by crop and rotation ----------------------------------

/// Sparse sampling matrix: output pixel i reads taps[offsets[i] .. offsets[i+1]).
struct WarpPlan {
  std::size_t h = 0, w = 0;
  std::vector<std::uint32_t> offsets;
  std::vector<Tap> taps;
};

WarpPlan crop_plan(std::size_t h, std::size_t w, const CropBox& box);
WarpPlan rotation_plan(std::size_t h, std::size_t w, double angle_deg);
void warp(const WarpPlan& plan, std::span<const float> in, std::span<float> out);
/// Transpose of `warp`: scatters `grad_out` back through the sampling weights.
void warp_adjoint(const WarpPlan& plan, std::span<const float> grad_out, std::span<float> grad_in);

/// Adjoint of the reflect-padded separable blur.
std::vector<float> gaussian_blur_adjoint(ChannelView grad_out, double sigma);

// ---- the layer ---------------------------------------------------------------

/// Draws one channel's transform parameters; noise_sigma is left at zero.
ChannelTransform draw_channel_transform(std::size_t h, std::size_t w, std::size_t channel,
                                        const AugmentationLayerConfig& cfg, RngStream rng);

/// Applies the enabled transforms of `t` to one channel. When `resolve_sigma`
/// is set the noise scale is computed from the channel entering the noise
/// step and stored back into `t`; otherwise the frozen value is used.
void apply_channel_transform(ChannelView in, std::span<float> out, ChannelTransform& t, TransformSet enabled,
                             double noise_rel_sigma, bool resolve_sigma);

/// M' = A(M, p). Eval mode returns M unchanged with an empty record.
AugmentResult augment_batch(const Tensor4& batch, const AugmentationLayerConfig& cfg, Mode mode,
                            const RngStream& rng);

/// Re-applies a recorded call with every draw (including noise scale) frozen.
Tensor4 replay(const Tensor4& batch, const AugmentRecord& record);

/// Vector-Jacobian product of the frozen-parameter forward map.
Tensor4 augment_backward(const Tensor4& grad_out, const AugmentRecord& record);

}  // namespace feataug::augment
