#include "feataug/model.hpp"

#include <cmath>

#include "feataug/fmat.hpp"

namespace feataug {

std::string stage_name(StageKind k) {
  switch (k) {
    case StageKind::Conv: return "conv";
    case StageKind::Relu: return "relu";
    case StageKind::MaxPool: return "maxpool";
    case StageKind::GlobalAvgPool: return "global_avg_pool";
    case StageKind::Linear: return "linear";
  }
  return "?";
}

void BackboneConfig::validate() const {
  auto fail = [](const std::string& m) { throw InvalidArgument("backbone: " + m); };
  if (stages.empty()) fail("no stages");
  std::size_t channels = input_channels;
  bool spatial = true;
  std::size_t last_spatial_boundary = 0;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const Stage& s = stages[i];
    const std::string at = " at stage " + std::to_string(i);
    switch (s.kind) {
      case StageKind::Conv:
        if (!spatial) fail("conv after global pooling" + at);
        if (s.in != channels || s.out == 0) fail("conv channel chain broken" + at);
        channels = s.out;
        break;
      case StageKind::Relu:
      case StageKind::MaxPool:
        if (s.kind == StageKind::MaxPool && !spatial) fail("maxpool after global pooling" + at);
        break;
      case StageKind::GlobalAvgPool:
        if (!spatial) fail("second global pooling" + at);
        spatial = false;
        break;
      case StageKind::Linear:
        if (spatial) fail("linear before global pooling" + at);
        if (s.in != channels || s.out == 0) fail("linear feature chain broken" + at);
        channels = s.out;
        break;
    }
    if (spatial) last_spatial_boundary = i + 1;
  }
  if (spatial || stages.back().kind != StageKind::Linear) fail("must end with global pooling and a linear head");
  for (std::size_t i = 0; i < aug_layers.size(); ++i) {
    const auto& a = aug_layers[i];
    a.validate();
    if (i > 0 && a.position < aug_layers[i - 1].position) fail("augmentation layers must be listed by position");
    if (a.position < 1 || a.position > last_spatial_boundary)
      fail("augmentation position " + std::to_string(a.position) + " is not a feature-map boundary in [1, " +
           std::to_string(last_spatial_boundary) + "]");
  }
}

std::size_t BackboneConfig::num_classes() const { return stages.empty() ? 0 : stages.back().out; }

std::vector<augment::AugmentationLayerConfig> BackboneConfig::default_aug_layers() {
  augment::AugmentationLayerConfig first;
  first.p = 0.3;
  first.position = 3;
  augment::AugmentationLayerConfig second;
  second.p = 0.2;
  second.position = 8;
  return {first, second};
}

BackboneConfig BackboneConfig::mini_cnn(std::size_t num_classes, bool with_aug) {
  BackboneConfig cfg;
  cfg.input_channels = 3;
  cfg.stages = {
      {StageKind::Conv, 3, 16},  {StageKind::Relu},          {StageKind::MaxPool},
      {StageKind::Conv, 16, 32}, {StageKind::Relu},          {StageKind::Conv, 32, 32},
      {StageKind::Relu},         {StageKind::MaxPool},       {StageKind::Conv, 32, 64},
      {StageKind::Relu},         {StageKind::GlobalAvgPool}, {StageKind::Linear, 64, num_classes},
  };
  if (with_aug) cfg.aug_layers = default_aug_layers();
  return cfg;
}

Model::Model(BackboneConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const RngStream root(init_seed, {0x1417});
  for (std::size_t i = 0; i < cfg_.stages.size(); ++i) {
    const Stage& s = cfg_.stages[i];
    if (s.kind != StageKind::Conv && s.kind != StageKind::Linear) {
      param_of_stage_.push_back(SIZE_MAX);
      continue;
    }
    param_of_stage_.push_back(params_.size());
    const std::string prefix = "s" + std::to_string(i) + "_" + stage_name(s.kind);
    nn::Parameter w = s.kind == StageKind::Conv ? nn::Parameter(prefix + ".weight", {s.out, s.in, 3, 3})
                                                : nn::Parameter(prefix + ".weight", {s.out, s.in});
    const double fan_in = static_cast<double>(s.kind == StageKind::Conv ? s.in * 9 : s.in);
    const double bound = std::sqrt(6.0 / fan_in);
    RngStream r = root.derive(i);
    for (float& v : w.value) v = static_cast<float>(r.uniform(-bound, bound));
    params_.push_back(std::move(w));
    params_.emplace_back(prefix + ".bias", std::vector<std::size_t>{s.out});
  }
}

Model::Model(BackboneConfig cfg, std::vector<nn::Parameter> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  std::size_t next = 0;
  for (const Stage& s : cfg_.stages) {
    if (s.kind != StageKind::Conv && s.kind != StageKind::Linear) {
      param_of_stage_.push_back(SIZE_MAX);
      continue;
    }
    if (next + 2 > params_.size()) throw ShapeError("model: too few parameters for backbone");
    const std::vector<std::size_t> wshape = s.kind == StageKind::Conv ? std::vector<std::size_t>{s.out, s.in, 3, 3}
                                                                      : std::vector<std::size_t>{s.out, s.in};
    if (params_[next].shape != wshape || params_[next + 1].shape != std::vector<std::size_t>{s.out})
      throw ShapeError("model: parameter shape mismatch for " + params_[next].name);
    param_of_stage_.push_back(next);
    next += 2;
  }
  if (next != params_.size()) throw ShapeError("model: too many parameters for backbone");
}

Graph::NodeId Model::forward(Graph& g, Graph::NodeId input, const ForwardOptions& opt) {
  Graph::NodeId x = input;
  std::size_t layer = 0;
  auto run_aug = [&](std::size_t boundary) {
    for (; layer < cfg_.aug_layers.size() && cfg_.aug_layers[layer].position == boundary; ++layer) {
      if (opt.replay) {
        if (layer >= opt.replay->size()) throw StateError("model: replay record missing for layer " + std::to_string(layer));
        x = g.augment_replay(x, (*opt.replay)[layer]);
      } else {
        x = g.augment(x, cfg_.aug_layers[layer], opt.mode, opt.rng.derive(layer));
      }
    }
  };
  for (std::size_t i = 0; i < cfg_.stages.size(); ++i) {
    const Stage& s = cfg_.stages[i];
    switch (s.kind) {
      case StageKind::Conv: x = g.conv2d(x, params_[param_of_stage_[i]], params_[param_of_stage_[i] + 1]); break;
      case StageKind::Relu: x = g.relu(x); break;
      case StageKind::MaxPool: x = g.maxpool(x); break;
      case StageKind::GlobalAvgPool: x = g.global_avg_pool(x); break;
      case StageKind::Linear: x = g.linear(x, params_[param_of_stage_[i]], params_[param_of_stage_[i] + 1]); break;
    }
    run_aug(i + 1);
  }
  return x;
}

Tensor4 Model::features_at(const Tensor4& x, std::size_t boundary) const {
  if (boundary > cfg_.stages.size()) throw InvalidArgument("model: boundary out of range");
  Tensor4 t = x;
  for (std::size_t i = 0; i < boundary; ++i) {
    const Stage& s = cfg_.stages[i];
    switch (s.kind) {
      case StageKind::Conv: {
        const auto& w = params_[param_of_stage_[i]];
        t = nn::conv2d_forward(t, w.value, params_[param_of_stage_[i] + 1].value, s.out);
        break;
      }
      case StageKind::Relu: t = nn::relu(t); break;
      case StageKind::MaxPool: t = nn::maxpool2d(t).output; break;
      default: throw InvalidArgument("model: boundary " + std::to_string(boundary) + " is past the feature maps");
    }
  }
  return t;
}

Tensor2 Model::predict(const Tensor4& x) const {
  std::size_t gap = 0;
  while (cfg_.stages[gap].kind != StageKind::GlobalAvgPool) ++gap;
  Tensor2 v = nn::global_avg_pool(features_at(x, gap));
  for (std::size_t i = gap + 1; i < cfg_.stages.size(); ++i) {
    const auto& w = params_[param_of_stage_[i]];
    v = nn::linear(v, w.value, params_[param_of_stage_[i] + 1].value, cfg_.stages[i].out);
  }
  return v;
}

nlohmann::json Model::save_params(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  nlohmann::json index = nlohmann::json::array();
  for (const auto& p : params_) {
    const std::string file = p.name + ".fmat";
    std::vector<std::uint32_t> dims(p.shape.begin(), p.shape.end());
    fmat::write_array(dir / file, dims, p.value);
    index.push_back({{"name", p.name}, {"file", file}, {"shape", p.shape}});
  }
  return index;
}

std::vector<nn::Parameter> Model::load_params(const std::filesystem::path& dir, const nlohmann::json& index) {
  std::vector<nn::Parameter> out;
  try {
    for (const auto& e : index) {
      nn::Parameter p(e.at("name").get<std::string>(), e.at("shape").get<std::vector<std::size_t>>());
      fmat::Array a = fmat::read_array(dir / e.at("file").get<std::string>());
      if (std::vector<std::size_t>(a.dims.begin(), a.dims.end()) != p.shape)
        throw FormatError("checkpoint: shape of " + p.name + " does not match its index entry");
      p.value = std::move(a.data);
      out.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint index: ") + e.what());
  }
  return out;
}

}  // namespace feataug
