#include "feataug/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"

#include "feataug/config.hpp"
#include "feataug/datagen.hpp"
#include "feataug/fmat.hpp"
#include "feataug/harness.hpp"
#include "feataug/report.hpp"

namespace feataug::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

/// Usage problems detected by the commands themselves.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
  if (!f) throw IoError("cannot write " + p.string());
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
}

void echo_config(const fs::path& out, const std::string& command, const std::string& source, const json& raw,
                 const json& effective, const json& overrides) {
  ensure_dir(out);
  write_text(out / "config_echo.json", json{{"command", command},
                                            {"config_file", source},
                                            {"file", raw},
                                            {"overrides", overrides},
                                            {"effective", effective}}
                                           .dump(1) +
                                           "\n");
}

struct Loaded {
  json raw;
  harness::ExperimentConfig cfg;
  json overrides = json::object();
};

Loaded load_experiment(const std::string& path, const std::optional<std::uint64_t>& seed,
                       const std::optional<std::string>& target, std::size_t jobs) {
  Loaded l;
  l.raw = config::read_file(path);
  l.cfg = harness::ExperimentConfig::from_json(l.raw);
  // Command-line flags take precedence over the file.
  if (seed) {
    l.cfg.seeds = {*seed};
    l.overrides["seeds"] = {*seed};
  }
  if (target && *target != "all") {
    l.cfg.targets = {*target};
    l.overrides["targets"] = {*target};
  } else if (target) {
    l.cfg.targets.clear();
    l.overrides["targets"] = "all";
  }
  l.cfg.jobs = harness::resolve_jobs(jobs != 0 ? jobs : l.cfg.jobs);
  return l;
}

void print_run(const harness::RunResult& r) {
  std::fprintf(stderr, "[%s] target=%s seed=%llu final_loss=%.4f train=%.2f%% target=%.2f%% (%.1fs)\n",
               r.method.c_str(), r.target.c_str(), static_cast<unsigned long long>(r.seed),
               r.epoch_loss.empty() ? 0.0 : r.epoch_loss.back(), r.train_accuracy, r.target_accuracy, r.seconds);
}

int cmd_generate(const std::string& spec_path, const std::string& out, const std::optional<std::uint64_t>& seed,
                 bool force) {
  data::DatasetSpec spec = data::DatasetSpec::defaults();
  json raw = json::object();
  if (!spec_path.empty()) {
    raw = config::read_file(spec_path);
    // Either a bare dataset spec or an experiment config carrying one.
    if (raw.is_object() && raw.contains("data_spec") && raw.contains("dataset"))
      spec = config::dataset_spec_from_json(raw.at("data_spec"));
    else
      spec = config::dataset_spec_from_json(raw, "spec");
  }
  json overrides = json::object();
  if (seed) {
    spec.seed = *seed;
    overrides["seed"] = *seed;
  }
  spec.validate();
  const fs::path dir(out);
  if (fs::exists(dir) && !fs::is_directory(dir)) throw UsageError(out + " exists and is not a directory");
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw UsageError(out + " is not empty; pass --force to overwrite");
  const auto m = data::generate_dataset(spec, dir);
  echo_config(dir, "generate-data", spec_path, raw, config::to_json(spec), overrides);
  std::printf("wrote %zu images (%zu classes x %zu domains x %zu per cell) to %s\n", m.samples.size(),
              m.classes.size(), m.domains.size(), m.per_cell, out.c_str());
  for (const auto& d : m.domains)
    std::printf("  domain %-10s background=%s foreground=%s\n", d.name.c_str(), data::name(d.background).c_str(),
                data::name(d.foreground).c_str());
  return kOk;
}

int cmd_train(const Loaded& l, const std::string& out, bool ablation) {
  const auto ds = data::load_dataset(l.cfg.dataset);
  (void)l.cfg.resolved_targets(ds);  // unknown domains fail before any work
  const fs::path root(out);
  echo_config(root, ablation ? "ablate" : "train", "", l.raw, l.cfg.to_json(), l.overrides);
  const auto result = ablation ? harness::run_ablation(l.cfg, ds, root, print_run)
                               : harness::run_protocol(l.cfg, ds, root, print_run);
  harness::write_results(root, l.cfg, result);
  std::printf("%s", report::render_markdown(result.table).c_str());
  return kOk;
}

int cmd_eval(const Loaded& l, const std::string& runs_root) {
  const auto ds = data::load_dataset(l.cfg.dataset);
  const auto targets = l.cfg.resolved_targets(ds);
  std::vector<harness::RunResult> results;
  for (const auto& m : l.cfg.methods)
    for (const auto& t : targets)
      for (auto seed : l.cfg.seeds) {
        const fs::path dir = fs::path(runs_root) / "runs" / t / std::to_string(seed) / m.name;
        auto ck = harness::load_checkpoint(dir);
        if (ck.classes != ds.manifest.classes)
          throw InvalidArgument("checkpoint " + dir.string() + " was trained on different classes");
        const auto [src, tgt] = data::split_leave_one_domain_out(ds, t);
        harness::RunResult r;
        r.method = m.name;
        r.target = t;
        r.seed = seed;
        const auto tr = harness::evaluate(ck.model, harness::normalized(src.images, ck.normalization), src.labels);
        const auto te = harness::evaluate(ck.model, harness::normalized(tgt.images, ck.normalization), tgt.labels);
        r.train_accuracy = tr.accuracy;
        r.target_accuracy = te.accuracy;
        r.eval_aug_calls = tr.aug_calls + te.aug_calls;
        print_run(r);
        results.push_back(r);
      }
  const auto table = harness::MetricsTable::from_runs(results, targets);
  json runs = json::array();
  for (const auto& r : results) runs.push_back(r.to_json());
  write_text(fs::path(runs_root) / "eval.json", json{{"runs", runs}, {"table", table.to_json()}}.dump(1) + "\n");
  std::printf("%s", report::render_markdown(table).c_str());
  return kOk;
}

void write_pgm(const fs::path& p, std::span<const float> v, std::size_t h, std::size_t w) {
  float lo = v[0], hi = v[0];
  for (float x : v) lo = std::min(lo, x), hi = std::max(hi, x);
  std::ofstream f(p, std::ios::binary);
  f << "P5\n" << w << " " << h << "\n255\n";
  for (float x : v) {
    const double t = hi > lo ? (x - lo) / (hi - lo) : 0.0;
    f.put(static_cast<char>(static_cast<unsigned char>(std::lround(t * 255.0))));
  }
  if (!f) throw IoError("cannot write " + p.string());
}

int cmd_preview(const std::string& checkpoint, const std::string& image, std::size_t layer, std::uint64_t seed,
                std::size_t index, const std::string& out) {
  if (layer < 1 || layer > 2) throw UsageError("--layer must be 1 or 2");
  auto ck = harness::load_checkpoint(checkpoint);
  // ERM checkpoints carry no layers; preview at the default insertion points.
  auto layers = ck.model.config().aug_layers;
  if (layers.empty()) layers = BackboneConfig::default_aug_layers();
  if (layer > layers.size()) throw UsageError("checkpoint has only " + std::to_string(layers.size()) + " augmentation layers");
  const auto& cfg = layers[layer - 1];

  const Tensor4 images = fmat::read_tensor(image);
  const auto& d = images.dims();
  if (d.c != data::kImageChannels || d.h != data::kImageSize || d.w != data::kImageSize)
    throw UsageError(image + ": expected (n, 3, 32, 32), got " + to_string(d));
  if (index >= d.b) throw UsageError("--index " + std::to_string(index) + " out of range for " + std::to_string(d.b) + " images");
  Tensor4 x({1, d.c, d.h, d.w});
  std::copy_n(images.sample(index).begin(), d.c * d.plane(), x.data().begin());
  ck.normalization.apply(x.data());

  const Tensor4 before = ck.model.features_at(x, cfg.position);
  // Same stream layout as training: layer i draws from rng.derive(i).
  const auto res = augment::augment_batch(before, cfg, augment::Mode::train, RngStream(seed).derive(layer - 1));

  const fs::path dir(out);
  ensure_dir(dir / "pgm");
  const std::string tag = "layer" + std::to_string(layer);
  fmat::write_tensor(dir / (tag + "_before.fmat"), before);
  fmat::write_tensor(dir / (tag + "_after.fmat"), res.output);
  json sidecar{{"checkpoint", checkpoint},
               {"image", image},
               {"index", index},
               {"layer", layer},
               {"seed", seed},
               {"layer_config", config::to_json(cfg)},
               {"record", config::to_json(res.record)}};
  write_text(dir / (tag + "_params.json"), sidecar.dump(1) + "\n");
  const auto& fd = before.dims();
  for (std::size_t c = 0; c < fd.c; ++c) {
    char name[64];
    std::snprintf(name, sizeof name, "%s_c%02zu_before.pgm", tag.c_str(), c);
    write_pgm(dir / "pgm" / name, before.channel(0, c).data, fd.h, fd.w);
    std::snprintf(name, sizeof name, "%s_c%02zu_after.pgm", tag.c_str(), c);
    write_pgm(dir / "pgm" / name, res.output.channel(0, c).data, fd.h, fd.w);
  }
  echo_config(dir, "preview-aug", checkpoint, ck.index, sidecar.at("layer_config"), json{{"seed", seed}, {"layer", layer}});
  std::string selected;
  for (const auto& t : res.record.samples.at(0).channels) selected += (selected.empty() ? "" : " ") + std::to_string(t.channel);
  std::printf("layer %zu at stage boundary %zu: %zux%zux%zu feature map, augmented channels: %s\n", layer, cfg.position,
              fd.c, fd.h, fd.w, selected.empty() ? "(none)" : selected.c_str());
  return kOk;
}

int cmd_report(const std::string& results, const std::string& format) {
  const fs::path dir(results);
  if (!fs::is_directory(dir) || !fs::exists(dir / "results.json"))
    throw UsageError("no results.json in " + results);
  const auto table = report::load_table(dir);
  std::printf("%s", (format == "csv" ? report::render_csv(table) : report::render_markdown(table)).c_str());
  return kOk;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Feature-map augmentation layer: data generation, training, evaluation and reports", "feataug"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::string spec, out, config_path, checkpoint, image, results, format = "md";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> target;
  bool force = false;
  std::size_t jobs = 0, layer = 0, index = 0;

  auto* gen = app.add_subcommand("generate-data", "Render the synthetic multi-domain dataset");
  gen->add_option("--spec", spec, "Dataset spec JSON (defaults to 4 domains x 4 classes x 125)")->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--seed", seed, "Generator seed (overrides the JSON value)");
  gen->add_flag("--force", force, "Write into a non-empty directory");

  auto add_experiment = [&](CLI::App* sub, const char* out_help, bool out_required) {
    sub->add_option("--config", config_path, "Experiment config JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("--target", target, "Held-out domain name, or 'all'");
    sub->add_option("--seed", seed, "Single seed (overrides the config's seeds)");
    auto* o = sub->add_option("--out", out, out_help);
    if (out_required) o->required();
    sub->add_option("--jobs", jobs, "Parallel runs (default: FEATAUG_JOBS or 1)")->check(CLI::PositiveNumber);
  };
  auto* train = app.add_subcommand("train", "Train and evaluate every (method, target, seed)");
  add_experiment(train, "Output root (results.json, tables, runs/)", true);
  auto* eval = app.add_subcommand("eval", "Re-evaluate checkpoints written by train");
  add_experiment(eval, "Output root of an earlier train", true);
  auto* ablate = app.add_subcommand("ablate", "Run the 16-row transform ablation grid");
  add_experiment(ablate, "Output root (results.json, tables, runs/)", true);

  auto* preview = app.add_subcommand("preview-aug", "Dump feature maps before and after one augmentation layer");
  preview->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  preview->add_option("--image", image, "FMAT file of (n, 3, 32, 32) images in [0,1]")->required()->check(CLI::ExistingFile);
  preview->add_option("--layer", layer, "Augmentation layer, 1 or 2")->required();
  preview->add_option("--seed", seed, "Draw seed")->required();
  preview->add_option("--index", index, "Image index within the file");
  preview->add_option("--out", out, "Output directory")->required();

  auto* rep = app.add_subcommand("report", "Render a results table");
  rep->add_option("--results", results, "Directory holding results.json")->required();
  rep->add_option("--format", format, "md or csv")->check(CLI::IsMember({"md", "csv"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    (void)app.exit(e);
    return kUsage;
  }

  try {
    if (gen->parsed()) return cmd_generate(spec, out, seed, force);
    if (train->parsed()) return cmd_train(load_experiment(config_path, seed, target, jobs), out, false);
    if (ablate->parsed()) return cmd_train(load_experiment(config_path, seed, target, jobs), out, true);
    if (eval->parsed()) return cmd_eval(load_experiment(config_path, seed, target, jobs), out);
    if (preview->parsed()) return cmd_preview(checkpoint, image, layer, *seed, index, out);
    if (rep->parsed()) return cmd_report(results, format);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const std::invalid_argument& e) {  // ConfigError, InvalidArgument, ShapeError
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntime;
  }
  return kUsage;
}

}  // namespace feataug::cli
