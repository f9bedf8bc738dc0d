#include "feataug/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "feataug/config.hpp"
#include "feataug/graph.hpp"
#include "feataug/report.hpp"

namespace feataug::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Labels of the RNG paths used by training.
constexpr std::uint64_t kShuffle = 0x5b0ff1e;
constexpr std::uint64_t kInputAug = 0x1a9a06;
constexpr std::uint64_t kLayerAug = 0xfea7a06;

constexpr std::size_t kEvalChunk = 250;

}  // namespace

Method Method::erm() { return {"ERM", {}}; }
Method Method::feataug() { return {"FeatAug", BackboneConfig::default_aug_layers()}; }

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw InvalidArgument("seeds must not be empty");
  if (methods.empty()) throw InvalidArgument("methods must not be empty");
  std::set<std::string> names;
  for (const auto& m : methods) {
    if (m.name.empty()) throw InvalidArgument("method name must not be empty");
    if (m.name.find_first_of("/\\,|") != std::string::npos)
      throw InvalidArgument("method name '" + m.name + "' may not contain / \\ , or |");
    if (!names.insert(m.name).second) throw InvalidArgument("duplicate method name '" + m.name + "'");
    BackboneConfig bb = BackboneConfig::mini_cnn(2, false);
    bb.aug_layers = m.aug_layers;
    bb.validate();
  }
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw InvalidArgument("seeds must be distinct");
  sgd.validate();
  BackboneConfig bb = BackboneConfig::mini_cnn(2, false);
  bb.aug_layers = ablation_layers;
  bb.validate();
}

std::vector<std::string> ExperimentConfig::resolved_targets(const data::Dataset& ds) const {
  if (targets.empty()) {
    std::vector<std::string> all;
    for (const auto& d : ds.manifest.domains) all.push_back(d.name);
    return all;
  }
  for (const auto& t : targets) (void)ds.domain_index(t);
  return targets;
}

json RunResult::to_json() const {
  return json{{"method", method},
              {"target", target},
              {"seed", seed},
              {"epoch_loss", epoch_loss},
              {"train_accuracy", train_accuracy},
              {"target_accuracy", target_accuracy},
              {"eval_aug_calls", eval_aug_calls},
              {"seconds", seconds}};
}

RunResult RunResult::from_json(const json& j) {
  try {
    RunResult r;
    r.method = j.at("method").get<std::string>();
    r.target = j.at("target").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
    r.train_accuracy = j.at("train_accuracy").get<double>();
    r.target_accuracy = j.at("target_accuracy").get<double>();
    r.eval_aug_calls = j.at("eval_aug_calls").get<std::size_t>();
    r.seconds = j.value("seconds", 0.0);
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("run result: ") + e.what());
  }
}

bool RunResult::same_outcome(const RunResult& o) const {
  return method == o.method && target == o.target && seed == o.seed && epoch_loss == o.epoch_loss &&
         train_accuracy == o.train_accuracy && target_accuracy == o.target_accuracy &&
         eval_aug_calls == o.eval_aug_calls;
}

Tensor4 normalized(const Tensor4& images, const data::Normalization& norm) {
  Tensor4 out = images;
  for (std::size_t n = 0; n < out.dims().b; ++n) norm.apply(out.sample(n));
  return out;
}

EvalResult evaluate(Model& model, const Tensor4& images, std::span<const int> labels, augment::Mode mode) {
  if (mode != augment::Mode::eval) throw StateError("evaluate: augmentation layers are always in eval mode");
  const auto& d = images.dims();
  if (labels.size() != d.b) throw ShapeError("evaluate: label count does not match images");
  const int k = static_cast<int>(model.config().num_classes());
  EvalResult r;
  std::size_t correct = 0;
  const std::size_t per = d.c * d.plane();
  for (std::size_t start = 0; start < d.b; start += kEvalChunk) {
    const std::size_t m = std::min(kEvalChunk, d.b - start);
    Tensor4 chunk({m, d.c, d.h, d.w});
    std::copy_n(images.data().begin() + static_cast<long>(start * per), m * per, chunk.data().begin());
    Graph g;
    const auto logits = model.forward(g, g.input(std::move(chunk), false), ForwardOptions{});
    r.aug_calls += g.train_augment_calls();
    const auto pred = nn::argmax_rows(g.tensor2(logits));
    for (std::size_t i = 0; i < m; ++i) {
      if (labels[start + i] < 0 || labels[start + i] >= k) throw InvalidArgument("evaluate: label out of range");
      correct += pred[i] == labels[start + i];
    }
  }
  r.accuracy = d.b == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(d.b);
  return r;
}

TrainedRun train(const Method& method, const ExperimentConfig& cfg, const data::Dataset& ds, const std::string& target,
                 std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto [src, tgt] = data::split_leave_one_domain_out(ds, target);
  const auto norm = data::Normalization::of(src.images);

  BackboneConfig bb = BackboneConfig::mini_cnn(ds.manifest.classes.size(), false);
  bb.aug_layers = method.aug_layers;
  if (ds.images.dims().c != bb.input_channels) throw ShapeError("dataset channels do not match the backbone");
  TrainedRun run{Model(bb, seed), norm, {}};
  Model& model = run.model;
  RunResult& res = run.result;
  res.method = method.name;
  res.target = target;
  res.seed = seed;

  const std::size_t n = src.size(), bs = cfg.sgd.batch_size;
  const auto& d = src.images.dims();
  const std::size_t per = d.c * d.plane();
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < cfg.sgd.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream shuffle(seed, {kShuffle, epoch});
    for (std::size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i - 1)))]);

    double loss_sum = 0.0;
    for (std::size_t start = 0, b = 0; start < n; start += bs, ++b) {
      const std::size_t m = std::min(bs, n - start);
      Tensor4 batch({m, d.c, d.h, d.w});
      std::vector<int> labels(m);
      for (std::size_t i = 0; i < m; ++i) {
        const std::size_t row = order[start + i];
        RngStream r(seed, {kInputAug, epoch, row});
        const auto img = data::standard_input_augment(src.images.sample(row), cfg.input_augment, norm, r);
        std::copy(img.begin(), img.end(), batch.data().begin() + static_cast<long>(i * per));
        labels[i] = src.labels[row];
      }
      Graph g;
      ForwardOptions opt{augment::Mode::train, RngStream(seed, {kLayerAug, epoch, b}), nullptr};
      const auto loss = g.softmax_cross_entropy(model.forward(g, g.input(std::move(batch), false), opt), labels);
      nn::zero_grads(model.params());
      g.backward(loss);
      nn::sgd_step(model.params(), cfg.sgd);
      loss_sum += g.scalar(loss) * static_cast<double>(m);
    }
    res.epoch_loss.push_back(loss_sum / static_cast<double>(n));
  }

  const auto tr = evaluate(model, normalized(src.images, norm), src.labels);
  const auto te = evaluate(model, normalized(tgt.images, norm), tgt.labels);
  res.train_accuracy = tr.accuracy;
  res.target_accuracy = te.accuracy;
  res.eval_aug_calls = tr.aug_calls + te.aug_calls;
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

void save_checkpoint(const fs::path& dir, const TrainedRun& run, const std::vector<std::string>& classes) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  json index{{"format", "feataug-checkpoint"},
             {"version", 1},
             {"params", run.model.save_params(dir)},
             {"backbone", config::to_json(run.model.config())},
             {"aug_layers", config::to_json(run.model.config().aug_layers)},
             {"method", run.result.method},
             {"target", run.result.target},
             {"seed", run.result.seed},
             {"normalization", config::to_json(run.normalization)},
             {"classes", classes}};
  std::ofstream f(dir / "index.json");
  f << index.dump(1) << "\n";
  if (!f) throw IoError("cannot write " + (dir / "index.json").string());
}

Checkpoint load_checkpoint(const fs::path& dir) {
  std::ifstream f(dir / "index.json");
  if (!f) throw FormatError("no checkpoint index at " + (dir / "index.json").string());
  try {
    const json index = json::parse(f);
    if (index.at("format") != "feataug-checkpoint") throw FormatError("not a checkpoint index");
    BackboneConfig bb = config::backbone_from_json(index.at("backbone"));
    auto params = Model::load_params(dir, index.at("params"));
    return Checkpoint{Model(std::move(bb), std::move(params)), config::normalization_from_json(index.at("normalization")),
                      index.at("classes").get<std::vector<std::string>>(), index};
  } catch (const json::exception& e) {
    throw FormatError("checkpoint " + dir.string() + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError("checkpoint " + dir.string() + ": " + e.what());
  }
}

MetricsTable MetricsTable::from_runs(const std::vector<RunResult>& runs, const std::vector<std::string>& domains) {
  MetricsTable t;
  t.domains = domains;
  std::vector<std::string> methods;
  for (const auto& r : runs)
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  for (const auto& m : methods) {
    MetricsRow row{m, {}, 0.0, {}};
    for (const auto& dom : domains) {
      std::vector<double> acc;
      for (const auto& r : runs)
        if (r.method == m && r.target == dom) acc.push_back(r.target_accuracy);
      Cell c;
      c.runs = acc.size();
      if (!acc.empty()) {
        c.mean = std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
        if (acc.size() > 1) {
          double ss = 0.0;
          for (double a : acc) ss += (a - c.mean) * (a - c.mean);
          c.std = std::sqrt(ss / static_cast<double>(acc.size() - 1));
        }
      }
      row.cells.push_back(c);
    }
    double sum = 0.0;
    for (const auto& c : row.cells) sum += c.mean;
    row.average = row.cells.empty() ? 0.0 : sum / static_cast<double>(row.cells.size());
    t.rows.push_back(std::move(row));
  }
  return t;
}

json MetricsTable::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows) {
    json cells = json::array();
    for (const auto& c : r.cells) cells.push_back({{"mean", c.mean}, {"std", c.std}, {"runs", c.runs}});
    json row{{"method", r.method}, {"cells", cells}, {"average", r.average}};
    if (!r.transforms.empty()) row["transforms"] = r.transforms;
    rows_j.push_back(row);
  }
  return json{{"domains", domains}, {"ablation", ablation}, {"rows", rows_j}};
}

std::size_t resolve_jobs(std::size_t flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("FEATAUG_JOBS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return v;
  }
  return 1;
}

ProtocolResult run_protocol(const ExperimentConfig& cfg, const data::Dataset& ds, const fs::path& checkpoint_root,
                            const Progress& progress) {
  cfg.validate();
  if (ds.manifest.domains.size() < 2) throw InvalidArgument("the protocol needs at least two domains");
  const auto targets = cfg.resolved_targets(ds);

  struct Task {
    const Method* method;
    std::string target;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (const auto& m : cfg.methods)
    for (const auto& t : targets)
      for (auto s : cfg.seeds) tasks.push_back({&m, t, s});

  std::vector<RunResult> results(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < tasks.size();) {
      {
        std::lock_guard lock(mu);
        if (failure) return;
      }
      try {
        const auto& task = tasks[i];
        TrainedRun run = train(*task.method, cfg, ds, task.target, task.seed);
        if (!checkpoint_root.empty())
          save_checkpoint(checkpoint_root / "runs" / task.target / std::to_string(task.seed) / task.method->name, run,
                          ds.manifest.classes);
        std::lock_guard lock(mu);
        results[i] = run.result;
        if (progress) progress(results[i]);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, tasks.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return {results, MetricsTable::from_runs(results, targets)};
}

std::vector<Method> ablation_methods(const std::vector<augment::AugmentationLayerConfig>& base) {
  using augment::Transform;
  constexpr Transform optional[4] = {Transform::RHF, Transform::RR, Transform::GB, Transform::GN};
  std::vector<Method> out;
  for (unsigned mask = 0; mask < 16; ++mask) {
    auto set = augment::TransformSet::none().with(Transform::RRC);
    for (unsigned k = 0; k < 4; ++k)
      if (mask & (8u >> k)) set = set.with(optional[k]);
    Method m{"", base};
    for (auto& layer : m.aug_layers) layer.enabled = set;
    for (const auto& n : set.names()) m.name += (m.name.empty() ? "" : "+") + n;
    out.push_back(std::move(m));
  }
  return out;
}

ProtocolResult run_ablation(const ExperimentConfig& cfg, const data::Dataset& ds, const fs::path& checkpoint_root,
                            const Progress& progress) {
  ExperimentConfig grid = cfg;
  grid.methods = ablation_methods(cfg.ablation_layers);
  ProtocolResult r = run_protocol(grid, ds, checkpoint_root, progress);
  r.table.ablation = true;
  for (std::size_t i = 0; i < r.table.rows.size(); ++i) {
    const auto set = grid.methods[i].aug_layers.front().enabled;
    for (auto t : augment::kAllTransforms) r.table.rows[i].transforms.push_back(set.has(t));
  }
  return r;
}

void write_results(const fs::path& dir, const ExperimentConfig& cfg, const ProtocolResult& r) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  json runs = json::array();
  for (const auto& run : r.runs) runs.push_back(run.to_json());
  const json doc{{"format", "feataug-results"},
                 {"version", 1},
                 {"config", cfg.to_json()},
                 {"domains", r.table.domains},
                 {"ablation", r.table.ablation},
                 {"runs", runs},
                 {"table", r.table.to_json()}};
  auto write = [&](const fs::path& p, const std::string& text) {
    std::ofstream f(p);
    f << text;
    if (!f) throw IoError("cannot write " + p.string());
  };
  write(dir / "results.json", doc.dump(1) + "\n");
  write(dir / "table.csv", report::render_csv(r.table));
  write(dir / "table.md", report::render_markdown(r.table));
}

}  // namespace feataug::harness
