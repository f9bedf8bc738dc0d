#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "feataug/augment.hpp"
#include "feataug/graph.hpp"
#include "feataug/nn.hpp"

namespace feataug {

enum class StageKind { Conv, Relu, MaxPool, GlobalAvgPool, Linear };

/// Conv stages are 3x3, stride 1, zero padding 1. `in`/`out` are channels
/// (conv) or features (linear) and unused otherwise.
struct Stage {
  StageKind kind;
  std::size_t in = 0;
  std::size_t out = 0;
  friend bool operator==(const Stage&, const Stage&) = default;
};

std::string stage_name(StageKind k);

struct BackboneConfig {
  std::size_t input_channels = 3;
  std::vector<Stage> stages;
  /// Insertion points: each layer's `position` is a stage boundary, i.e. the
  /// layer runs after the first `position` stages. Equal positions apply in
  /// list order.
  std::vector<augment::AugmentationLayerConfig> aug_layers;

  /// Throws InvalidArgument on a broken channel chain or a bad insertion point.
  void validate() const;
  std::size_t num_classes() const;

  /// conv(3->16) relu maxpool [aug p=0.3] conv(16->32) relu conv(32->32) relu
  /// maxpool [aug p=0.2] conv(32->64) relu global-avg-pool linear(64->k).
  static BackboneConfig mini_cnn(std::size_t num_classes, bool with_aug = true);
  static std::vector<augment::AugmentationLayerConfig> default_aug_layers();

  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

struct ForwardOptions {
  augment::Mode mode = augment::Mode::eval;
  /// Augmentation layer i draws from rng.derive(i).
  RngStream rng{0};
  /// When set, augmentation layer i replays (*replay)[i] instead of drawing.
  const std::vector<augment::AugmentRecord>* replay = nullptr;
};

class Model {
 public:
  /// Kaiming-uniform fan-in initialisation of weights, zero biases.
  Model(BackboneConfig cfg, std::uint64_t init_seed);
  Model(BackboneConfig cfg, std::vector<nn::Parameter> params);

  const BackboneConfig& config() const { return cfg_; }
  std::vector<nn::Parameter>& params() { return params_; }
  const std::vector<nn::Parameter>& params() const { return params_; }

  /// Builds the forward pass on `g` and returns the logits node.
  Graph::NodeId forward(Graph& g, Graph::NodeId input, const ForwardOptions& opt);

  /// Inference logits; augmentation layers are the identity.
  Tensor2 predict(const Tensor4& x) const;
  /// Eval-mode activations after the first `boundary` stages.
  Tensor4 features_at(const Tensor4& x, std::size_t boundary) const;

  /// One FMAT per parameter into `dir`; returns [{name, file, shape}].
  nlohmann::json save_params(const std::filesystem::path& dir) const;
  static std::vector<nn::Parameter> load_params(const std::filesystem::path& dir, const nlohmann::json& index);

 private:
  BackboneConfig cfg_;
  std::vector<nn::Parameter> params_;
  std::vector<std::size_t> param_of_stage_;  // first parameter index of stage, or SIZE_MAX
};

}  // namespace feataug
