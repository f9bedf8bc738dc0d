#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "feataug/augment.hpp"
#include "feataug/rng.hpp"
#include "feataug/tensor.hpp"

namespace feataug::data {

inline constexpr std::size_t kImageSize = 32;
inline constexpr std::size_t kImageChannels = 3;

enum class Background { flat, texture, gradient };
enum class Foreground { filled, outline };

std::string name(Background b);
std::string name(Foreground f);
Background parse_background(const std::string& s);
Foreground parse_foreground(const std::string& s);

/// Rendering style of one domain.
struct DomainSpec {
  std::string name;
  Background background = Background::flat;
  Foreground foreground = Foreground::filled;
  std::uint64_t palette_seed = 0;
  double noise = 0.0;       // std of additive pixel noise
  double brightness = 0.0;  // offset added to every pixel before clamping

  bool same_style(const DomainSpec& o) const;
  friend bool operator==(const DomainSpec&, const DomainSpec&) = default;
};

/// Shape vocabulary; class i renders shape i.
const std::vector<std::string>& shape_names();

struct DatasetSpec {
  std::size_t classes = 4;
  std::vector<DomainSpec> domains;
  std::size_t per_cell = 125;
  std::uint64_t seed = 0;

  /// Throws InvalidArgument: classes outside [2, 8], per_cell 0, fewer than
  /// one domain, duplicate names, or two domains with identical style.
  void validate() const;

  /// Four styles loosely modelled on photo / art painting / cartoon / sketch.
  static DatasetSpec defaults();
  friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

void to_json(nlohmann::json& j, const DomainSpec& d);
void from_json(const nlohmann::json& j, DomainSpec& d);

struct SampleRef {
  std::size_t domain = 0;
  std::size_t cls = 0;
  std::string file;
  std::size_t index = 0;  // position within the cell file
};

struct DatasetManifest {
  std::vector<std::string> classes;
  std::vector<DomainSpec> domains;
  std::vector<SampleRef> samples;
  std::size_t per_cell = 0;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

/// Renders one 3x32x32 image in [0,1].
std::vector<float> render_image(const DomainSpec& domain, std::size_t cls, RngStream rng);

/// Writes one FMAT per (domain, class) cell plus manifest.json into `out_dir`.
/// Output is a pure function of `spec`. Throws IoError when the directory
/// cannot be written.
DatasetManifest generate_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir);

struct Dataset {
  DatasetManifest manifest;
  Tensor4 images;                  // (N, 3, 32, 32), manifest sample order
  std::vector<int> labels;         // class index per sample
  std::vector<std::size_t> domain; // domain index per sample

  std::size_t size() const { return labels.size(); }
  std::size_t domain_index(const std::string& name) const;
};

/// Throws FormatError on a missing or malformed manifest or blob.
Dataset load_dataset(const std::filesystem::path& dir);

struct Split {
  Tensor4 images;
  std::vector<int> labels;
  std::vector<std::size_t> indices;  // rows of the parent dataset

  std::size_t size() const { return labels.size(); }
};

/// (train = every other domain, test = target domain). Throws
/// InvalidArgument for an unknown domain or a dataset with one domain.
std::pair<Split, Split> split_leave_one_domain_out(const Dataset& ds, const std::string& target);

struct Normalization {
  std::array<float, kImageChannels> mean{0.0f, 0.0f, 0.0f};
  std::array<float, kImageChannels> std{1.0f, 1.0f, 1.0f};

  /// Per-channel statistics over every pixel of `images`.
  static Normalization of(const Tensor4& images);
  void apply(std::span<float> image) const;
  void invert(std::span<float> image) const;
  friend bool operator==(const Normalization&, const Normalization&) = default;
};

struct InputAugmentConfig {
  bool crop = true;
  augment::Range crop_scale{0.6, 1.0};  // area fraction
  bool flip = true;
  bool jitter = true;
  augment::Range jitter_mul{0.8, 1.2};
  augment::Range jitter_add{-0.1, 0.1};
  double grayscale_prob = 0.1;

  /// Every random step off: only normalisation remains.
  static InputAugmentConfig none();
};

/// Random resized crop back to 32x32, horizontal flip, colour jitter with
/// clamping to [0,1], random grayscale, then normalisation. One 3x32x32 image.
std::vector<float> standard_input_augment(std::span<const float> image, const InputAugmentConfig& cfg,
                                          const Normalization& norm, RngStream& rng);

/// Held-out accuracy (percent) of a softmax classifier on per-image channel
/// means predicting the domain. Samples alternate between fit and score halves.
double domain_separability(const Dataset& ds);

}  // namespace feataug::data
