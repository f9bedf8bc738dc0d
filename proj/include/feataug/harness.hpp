#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "feataug/augment.hpp"
#include "feataug/datagen.hpp"
#include "feataug/model.hpp"
#include "feataug/nn.hpp"

namespace feataug::harness {

/// A row of the results table: a backbone variant defined by its
/// augmentation layers. No layers is the ERM control.
struct Method {
  std::string name;
  std::vector<augment::AugmentationLayerConfig> aug_layers;

  static Method erm();
  static Method feataug();
  friend bool operator==(const Method&, const Method&) = default;
};

struct ExperimentConfig {
  std::filesystem::path dataset;
  std::vector<Method> methods{Method::erm(), Method::feataug()};
  nn::SgdConfig sgd = nn::SgdConfig::desk();
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<std::string> targets;  // empty means every domain
  data::InputAugmentConfig input_augment;
  /// Base layers whose transform sets the ablation grid varies.
  std::vector<augment::AugmentationLayerConfig> ablation_layers = BackboneConfig::default_aug_layers();
  std::size_t jobs = 1;

  /// Throws InvalidArgument on empty seeds or methods, duplicate method
  /// names, or invalid nested configs.
  void validate() const;
  std::vector<std::string> resolved_targets(const data::Dataset& ds) const;

  /// Strict: unknown keys raise config::ConfigError.
  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct RunResult {
  std::string method;
  std::string target;
  std::uint64_t seed = 0;
  std::vector<double> epoch_loss;  // mean training loss per epoch
  double train_accuracy = 0.0;     // percent, eval mode on the source split
  double target_accuracy = 0.0;    // percent, eval mode on the held-out domain
  std::size_t eval_aug_calls = 0;  // train-mode augmentation calls seen while evaluating
  double seconds = 0.0;

  nlohmann::json to_json() const;
  static RunResult from_json(const nlohmann::json& j);
  /// Everything but wall time.
  bool same_outcome(const RunResult& o) const;
};

struct TrainedRun {
  Model model;
  data::Normalization normalization;
  RunResult result;
};

/// Training schedule for one run. Every random draw is keyed by
/// (seed, epoch, batch or sample, layer), so runs are reproducible bit for bit.
TrainedRun train(const Method& method, const ExperimentConfig& cfg, const data::Dataset& ds, const std::string& target,
                 std::uint64_t seed);

struct EvalResult {
  double accuracy = 0.0;  // percent
  std::size_t aug_calls = 0;
};

/// Top-1 accuracy with augmentation layers in eval mode. `images` must already
/// be normalised. Passing Mode::train is rejected with StateError: evaluation
/// never augments.
EvalResult evaluate(Model& model, const Tensor4& images, std::span<const int> labels,
                    augment::Mode mode = augment::Mode::eval);

/// Normalised copy of a split.
Tensor4 normalized(const Tensor4& images, const data::Normalization& norm);

/// Writes params FMATs and index.json (params, backbone, aug layers, seed,
/// normalisation, classes) into `dir`.
void save_checkpoint(const std::filesystem::path& dir, const TrainedRun& run, const std::vector<std::string>& classes);

struct Checkpoint {
  Model model;
  data::Normalization normalization;
  std::vector<std::string> classes;
  nlohmann::json index;
};
/// Throws FormatError on a missing or malformed checkpoint.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

struct Cell {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation over seeds, 0 for one seed
  std::size_t runs = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

struct MetricsRow {
  std::string method;
  std::vector<Cell> cells;  // one per domain column
  double average = 0.0;     // mean of the per-domain means
  /// Ablation rows only: which transforms were enabled (RRC, RHF, RR, GB, GN).
  std::vector<bool> transforms;
  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

struct MetricsTable {
  std::vector<std::string> domains;
  std::vector<MetricsRow> rows;
  bool ablation = false;

  /// Aggregates per-run results; methods keep their order of first appearance.
  static MetricsTable from_runs(const std::vector<RunResult>& runs, const std::vector<std::string>& domains);
  nlohmann::json to_json() const;
  friend bool operator==(const MetricsTable&, const MetricsTable&) = default;
};

struct ProtocolResult {
  std::vector<RunResult> runs;
  MetricsTable table;
};

using Progress = std::function<void(const RunResult&)>;

/// Train + evaluate every (method, target, seed). Runs execute on
/// `cfg.jobs` worker threads; results come back in a fixed order regardless.
/// When `checkpoint_root` is non-empty each run is saved under
/// <root>/runs/<target>/<seed>/<method>/.
ProtocolResult run_protocol(const ExperimentConfig& cfg, const data::Dataset& ds,
                            const std::filesystem::path& checkpoint_root = {}, const Progress& progress = {});

/// The 16 methods of the ablation grid: RRC always on, every subset of
/// {RHF, RR, GB, GN}, ordered by indicator pattern with the full set last.
std::vector<Method> ablation_methods(const std::vector<augment::AugmentationLayerConfig>& base);

ProtocolResult run_ablation(const ExperimentConfig& cfg, const data::Dataset& ds,
                            const std::filesystem::path& checkpoint_root = {}, const Progress& progress = {});

/// results.json (config echo, runs, table), table.csv and table.md.
void write_results(const std::filesystem::path& dir, const ExperimentConfig& cfg, const ProtocolResult& r);

/// Worker count: explicit value if non-zero, else FEATAUG_JOBS, else 1.
std::size_t resolve_jobs(std::size_t flag);

}  // namespace feataug::harness
