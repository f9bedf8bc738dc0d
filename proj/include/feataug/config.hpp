#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "feataug/augment.hpp"
#include "feataug/datagen.hpp"
#include "feataug/model.hpp"
#include "feataug/nn.hpp"

namespace feataug::config {

/// Malformed or schema-violating configuration. Messages carry the JSON path
/// of the offending key, or line and column for syntax errors.
struct ConfigError : InvalidArgument {
  using InvalidArgument::InvalidArgument;
};

/// Parses JSON text; syntax errors become "<source>:<line>:<col>: ...".
nlohmann::json parse_text(const std::string& text, const std::string& source);
nlohmann::json read_file(const std::filesystem::path& path);

// Strict decoders: unknown keys and wrong types throw ConfigError. Missing
// keys keep the defaults of the target struct.
augment::AugmentationLayerConfig aug_layer_from_json(const nlohmann::json& j, const std::string& where = "aug_layer");
nlohmann::json to_json(const augment::AugmentationLayerConfig& c);

std::vector<augment::AugmentationLayerConfig> aug_layers_from_json(const nlohmann::json& j,
                                                                   const std::string& where = "aug_layers");
nlohmann::json to_json(const std::vector<augment::AugmentationLayerConfig>& layers);

nn::SgdConfig sgd_from_json(const nlohmann::json& j, const std::string& where = "sgd");
nlohmann::json to_json(const nn::SgdConfig& c);

data::InputAugmentConfig input_augment_from_json(const nlohmann::json& j, const std::string& where = "input_augment");
nlohmann::json to_json(const data::InputAugmentConfig& c);

data::DatasetSpec dataset_spec_from_json(const nlohmann::json& j, const std::string& where = "data_spec");
nlohmann::json to_json(const data::DatasetSpec& s);

BackboneConfig backbone_from_json(const nlohmann::json& j, const std::string& where = "backbone");
nlohmann::json to_json(const BackboneConfig& c);

/// Replayable dump of one augmentation call (crop box, flip, angle, blur and
/// noise parameters per selected channel). Floats survive the round trip exactly.
nlohmann::json to_json(const augment::AugmentRecord& r);
augment::AugmentRecord record_from_json(const nlohmann::json& j);

nlohmann::json to_json(const data::Normalization& n);
data::Normalization normalization_from_json(const nlohmann::json& j, const std::string& where = "normalization");

}  // namespace feataug::config
