#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "doctest.h"
#include "feataug/config.hpp"
#include "feataug/harness.hpp"
#include "feataug/report.hpp"

using namespace feataug;
using namespace feataug::harness;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("feataug_test_harness_" + name);
  fs::remove_all(p);
  return p;
}

// 4 domains x 4 classes x 4 images, shared by every case.
const data::Dataset& tiny_dataset() {
  static const data::Dataset ds = [] {
    auto spec = data::DatasetSpec::defaults();
    spec.per_cell = 4;
    spec.seed = 5;
    const auto dir = scratch_dir("data");
    data::generate_dataset(spec, dir);
    return data::load_dataset(dir);
  }();
  return ds;
}

ExperimentConfig quick_config() {
  ExperimentConfig cfg;
  cfg.dataset = "unused";
  cfg.sgd = {0.01, 0.9, 8, 2};
  cfg.seeds = {1, 2};
  return cfg;
}

RunResult fake_run(const std::string& method, const std::string& target, std::uint64_t seed, double acc) {
  RunResult r;
  r.method = method;
  r.target = target;
  r.seed = seed;
  r.target_accuracy = acc;
  return r;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

}  // namespace

TEST_CASE("ERM and all-zero p train identically") {
  const auto& ds = tiny_dataset();
  const auto cfg = quick_config();
  Method zero = Method::feataug();
  zero.name = "p0";
  for (auto& l : zero.aug_layers) l.p = 0.0;
  const auto a = train(Method::erm(), cfg, ds, "sketch", 3).result;
  const auto b = train(zero, cfg, ds, "sketch", 3).result;
  CHECK(bit_equal(a.epoch_loss, b.epoch_loss));
  CHECK(a.train_accuracy == b.train_accuracy);
  CHECK(a.target_accuracy == b.target_accuracy);
}

TEST_CASE("training is deterministic per seed") {
  const auto& ds = tiny_dataset();
  const auto cfg = quick_config();
  const auto a = train(Method::feataug(), cfg, ds, "art", 7).result;
  const auto b = train(Method::feataug(), cfg, ds, "art", 7).result;
  CHECK(a.same_outcome(b));
  CHECK(bit_equal(a.epoch_loss, b.epoch_loss));
  CHECK(a.epoch_loss.size() == cfg.sgd.epochs);
  const auto c = train(Method::feataug(), cfg, ds, "art", 8).result;
  CHECK_FALSE(bit_equal(a.epoch_loss, c.epoch_loss));
  CHECK(a.eval_aug_calls == 0);
  for (double acc : {a.train_accuracy, a.target_accuracy}) {
    CHECK(acc >= 0.0);
    CHECK(acc <= 100.0);
  }
}

TEST_CASE("evaluate never augments") {
  const auto& ds = tiny_dataset();
  Model m(BackboneConfig::mini_cnn(4, true), 2);
  const auto norm = data::Normalization::of(ds.images);
  const auto x = normalized(ds.images, norm);
  const auto r = evaluate(m, x, ds.labels);
  CHECK(r.aug_calls == 0);
  CHECK_THROWS_AS(evaluate(m, x, ds.labels, augment::Mode::train), StateError);
  const std::vector<int> short_labels(3, 0);
  CHECK_THROWS_AS(evaluate(m, x, short_labels), ShapeError);
  const std::vector<int> bad_labels(ds.size(), 7);
  CHECK_THROWS_AS(evaluate(m, x, bad_labels), InvalidArgument);
}

TEST_CASE("constant logits score the class-0 frequency") {
  const auto& ds = tiny_dataset();
  Model m(BackboneConfig::mini_cnn(4, false), 2);
  for (auto& p : m.params()) std::fill(p.value.begin(), p.value.end(), 0.0f);
  const auto x = normalized(ds.images, data::Normalization::of(ds.images));
  // Balanced 4-class data: argmax ties go to class 0, a quarter of the rows.
  CHECK(evaluate(m, x, ds.labels).accuracy == 25.0);
  std::vector<int> skewed(ds.size(), 1);
  for (std::size_t i = 0; i < 10; ++i) skewed[i] = 0;
  CHECK(evaluate(m, x, skewed).accuracy == doctest::Approx(100.0 * 10 / double(ds.size())).epsilon(1e-12));
}

TEST_CASE("memorised split scores 100") {
  // One image per class, trained until the loss is tiny.
  const auto& ds = tiny_dataset();
  Tensor4 x({4, 3, 32, 32});
  std::vector<int> y{0, 1, 2, 3};
  for (std::size_t c = 0; c < 4; ++c) {
    const auto src = ds.images.sample(c * 4);  // first domain, class c
    std::copy(src.begin(), src.end(), x.sample(c).begin());
    REQUIRE(ds.labels[c * 4] == int(c));
  }
  const auto norm = data::Normalization::of(x);
  x = normalized(x, norm);
  Model m(BackboneConfig::mini_cnn(4, false), 4);
  const nn::SgdConfig sgd{0.01, 0.9, 4, 1};
  for (int step = 0; step < 300; ++step) {
    Graph g;
    const auto loss = g.softmax_cross_entropy(m.forward(g, g.input(x, false), {}), y);
    nn::zero_grads(m.params());
    g.backward(loss);
    nn::sgd_step(m.params(), sgd);
  }
  CHECK(evaluate(m, x, y).accuracy == 100.0);
}

TEST_CASE("metrics table aggregation") {
  const std::vector<RunResult> runs{
      fake_run("ERM", "a", 1, 50.0),  fake_run("ERM", "a", 2, 60.0),  fake_run("ERM", "b", 1, 70.0),
      fake_run("ERM", "b", 2, 71.0),  fake_run("Aug", "a", 1, 55.5),  fake_run("Aug", "a", 2, 54.25),
      fake_run("Aug", "b", 1, 80.125), fake_run("Aug", "b", 2, 79.0),
  };
  const auto t = MetricsTable::from_runs(runs, {"a", "b"});
  REQUIRE(t.rows.size() == 2);
  CHECK(t.rows[0].method == "ERM");
  CHECK(t.rows[1].method == "Aug");
  CHECK(t.rows[0].cells[0].mean == doctest::Approx(55.0).epsilon(1e-12));
  CHECK(t.rows[0].cells[0].std == doctest::Approx(std::sqrt(50.0)).epsilon(1e-12));
  CHECK(t.rows[0].cells[0].runs == 2);
  for (const auto& r : t.rows) {
    double sum = 0;
    for (const auto& c : r.cells) sum += c.mean;
    CHECK(std::abs(r.average - sum / 2.0) <= 1e-9);
  }
  // Recomputable from the stored runs.
  json doc = json::array();
  for (const auto& r : runs) doc.push_back(r.to_json());
  std::vector<RunResult> back;
  for (const auto& j : doc) back.push_back(RunResult::from_json(j));
  CHECK(MetricsTable::from_runs(back, {"a", "b"}) == t);
}

TEST_CASE("protocol over four domains") {
  const auto& ds = tiny_dataset();
  auto cfg = quick_config();
  cfg.sgd.epochs = 1;
  cfg.seeds = {1};
  cfg.targets = {"photo", "cartoon"};
  const auto root = scratch_dir("protocol");
  const auto r = run_protocol(cfg, ds, root);
  CHECK(r.runs.size() == 4);
  REQUIRE(r.table.rows.size() == 2);
  CHECK(r.table.rows[0].method == "ERM");
  CHECK(r.table.rows[1].method == "FeatAug");
  CHECK(r.table.domains == std::vector<std::string>{"photo", "cartoon"});
  for (const auto& run : r.runs) CHECK(fs::exists(root / "runs" / run.target / "1" / run.method / "index.json"));

  // More workers, same answer in the same order.
  cfg.jobs = 3;
  const auto p = run_protocol(cfg, ds);
  REQUIRE(p.runs.size() == r.runs.size());
  for (std::size_t i = 0; i < p.runs.size(); ++i) CHECK(p.runs[i].same_outcome(r.runs[i]));
  CHECK(p.table == r.table);

  cfg.targets = {"watercolor"};
  CHECK_THROWS_AS(run_protocol(cfg, ds), InvalidArgument);
}

TEST_CASE("protocol counting with all targets") {
  auto cfg = quick_config();
  cfg.seeds = {1, 2, 3};
  const auto& ds = tiny_dataset();
  CHECK(cfg.resolved_targets(ds).size() == 4);
  // 4 targets x 3 seeds per method, 4 domain cells + an average per row.
  std::vector<RunResult> runs;
  for (const auto& m : cfg.methods)
    for (const auto& t : cfg.resolved_targets(ds))
      for (auto s : cfg.seeds) runs.push_back(fake_run(m.name, t, s, double(s)));
  const auto t = MetricsTable::from_runs(runs, cfg.resolved_targets(ds));
  CHECK(runs.size() == 24);
  for (const auto& r : t.rows) {
    CHECK(r.cells.size() == 4);
    for (const auto& c : r.cells) CHECK(c.runs == 3);
  }
}

TEST_CASE("ablation grid") {
  const auto grid = ablation_methods(BackboneConfig::default_aug_layers());
  REQUIRE(grid.size() == 16);
  CHECK(grid.front().name == "RRC");
  CHECK(grid.back().name == "RRC+RHF+RR+GB+GN");
  std::set<std::string> names;
  std::string prev;
  for (const auto& m : grid) {
    names.insert(m.name);
    REQUIRE(m.aug_layers.size() == 2);
    CHECK(m.aug_layers[0].enabled == m.aug_layers[1].enabled);
    CHECK(m.aug_layers[0].enabled.has(augment::Transform::RRC));
    CHECK(m.aug_layers[0].p == 0.3);
    CHECK(m.aug_layers[1].p == 0.2);
    // Indicator pattern over (RHF, RR, GB, GN) increases row by row.
    std::string pattern;
    for (auto t : {augment::Transform::RHF, augment::Transform::RR, augment::Transform::GB, augment::Transform::GN})
      pattern += m.aug_layers[0].enabled.has(t) ? '1' : '0';
    CHECK(pattern > prev);
    prev = pattern;
  }
  CHECK(names.size() == 16);
  CHECK(grid[0].aug_layers[0].enabled == augment::TransformSet::none().with(augment::Transform::RRC));
  CHECK(grid[15].aug_layers[0].enabled == augment::TransformSet::all());
}

TEST_CASE("ablation table on a tiny run") {
  const auto& ds = tiny_dataset();
  auto cfg = quick_config();
  cfg.sgd = {0.01, 0.9, 16, 1};
  cfg.seeds = {1};
  cfg.targets = {"sketch"};
  const auto r = run_ablation(cfg, ds);
  CHECK(r.table.ablation);
  REQUIRE(r.table.rows.size() == 16);
  for (const auto& row : r.table.rows) {
    REQUIRE(row.transforms.size() == 5);
    CHECK(row.transforms[0]);
  }
  CHECK(r.table.rows.back().transforms == std::vector<bool>(5, true));
  const auto md = report::render_markdown(r.table);
  CHECK(md.find("| Method | RRC | RHF | RR | GB | GN | sketch | Average |") == 0);
}

TEST_CASE("checkpoint round trip") {
  const auto& ds = tiny_dataset();
  auto cfg = quick_config();
  cfg.sgd.epochs = 1;
  const auto run = train(Method::feataug(), cfg, ds, "photo", 4);
  const auto dir = scratch_dir("ckpt");
  save_checkpoint(dir, run, ds.manifest.classes);
  auto ck = load_checkpoint(dir);
  CHECK(ck.classes == ds.manifest.classes);
  CHECK(ck.model.config() == run.model.config());
  CHECK(ck.normalization.mean == run.normalization.mean);
  CHECK(ck.normalization.std == run.normalization.std);
  CHECK(ck.index.at("seed") == 4);
  CHECK(ck.index.at("method") == "FeatAug");
  REQUIRE(ck.model.params().size() == run.model.params().size());
  for (std::size_t i = 0; i < ck.model.params().size(); ++i) CHECK(ck.model.params()[i].value == run.model.params()[i].value);
  const auto x = normalized(ds.images, ck.normalization);
  const auto a = ck.model.predict(x), b = run.model.predict(x);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));

  CHECK_THROWS_AS(load_checkpoint(dir / "missing"), FormatError);
  {
    std::ofstream f(dir / "index.json");
    f << "{\"format\": \"feataug-checkpoint\"}";
  }
  CHECK_THROWS_AS(load_checkpoint(dir), FormatError);
}

TEST_CASE("results files re-render") {
  const std::vector<RunResult> runs{fake_run("ERM", "a", 1, 50.0), fake_run("ERM", "b", 1, 70.0),
                                    fake_run("Aug", "a", 1, 52.0), fake_run("Aug", "b", 1, 70.0)};
  ProtocolResult r{runs, MetricsTable::from_runs(runs, {"a", "b"})};
  auto cfg = quick_config();
  const auto dir = scratch_dir("results");
  write_results(dir, cfg, r);
  for (const char* f : {"results.json", "table.csv", "table.md"}) CHECK(fs::exists(dir / f));
  const auto t = report::load_table(dir);
  CHECK(t == r.table);
  std::ifstream md(dir / "table.md");
  const std::string text{std::istreambuf_iterator<char>(md), std::istreambuf_iterator<char>()};
  CHECK(text == report::render_markdown(t));
  CHECK(report::parse_csv(report::render_csv(t)) == t);
}

TEST_CASE("config validation") {
  auto cfg = quick_config();
  cfg.seeds.clear();
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = quick_config();
  cfg.methods.push_back(Method::erm());
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = quick_config();
  cfg.methods[0].name = "a/b";
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = quick_config();
  cfg.seeds = {1, 1};
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = quick_config();
  cfg.methods[1].aug_layers[0].p = 1.5;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("jobs resolution") {
  CHECK(resolve_jobs(3) == 3);
  ::setenv("FEATAUG_JOBS", "5", 1);
  CHECK(resolve_jobs(0) == 5);
  CHECK(resolve_jobs(2) == 2);
  ::setenv("FEATAUG_JOBS", "lots", 1);
  CHECK(resolve_jobs(0) == 1);
  ::unsetenv("FEATAUG_JOBS");
  CHECK(resolve_jobs(0) == 1);
}
