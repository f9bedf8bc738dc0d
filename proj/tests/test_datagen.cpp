#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "feataug/datagen.hpp"
#include "feataug/fmat.hpp"

using namespace feataug;
using namespace feataug::data;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("feataug_test_datagen_" + name);
  fs::remove_all(p);
  return p;
}

DatasetSpec small_spec(std::size_t per_cell = 3) {
  DatasetSpec s = DatasetSpec::defaults();
  s.per_cell = per_cell;
  s.seed = 9;
  return s;
}

bool bit_equal(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) return false;
  return true;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("default dataset has 2000 images in 16 cells") {
  const auto dir = scratch_dir("default");
  const auto m = generate_dataset(DatasetSpec::defaults(), dir);
  CHECK(m.samples.size() == 2000);
  std::map<std::pair<std::size_t, std::size_t>, int> cells;
  for (const auto& s : m.samples) ++cells[{s.domain, s.cls}];
  CHECK(cells.size() == 16);
  for (const auto& [key, count] : cells) CHECK(count == 125);

  const Dataset ds = load_dataset(dir);
  CHECK(ds.images.dims() == Dims4{2000, 3, 32, 32});
  const auto px = ds.images.data();
  CHECK(std::all_of(px.begin(), px.end(), [](float v) { return v >= 0.0f && v <= 1.0f; }));
  // Domain shift is real: channel means alone identify the domain.
  const double acc = domain_separability(ds);
  MESSAGE("domain separability " << acc << "%");
  CHECK(acc > 90.0);
}

TEST_CASE("generation is deterministic and round trips bit exactly") {
  const auto a = scratch_dir("det_a"), b = scratch_dir("det_b");
  generate_dataset(small_spec(), a);
  generate_dataset(small_spec(), b);
  for (const auto& entry : fs::directory_iterator(a))
    CHECK(slurp(entry.path()) == slurp(b / entry.path().filename()));

  DatasetSpec other = small_spec();
  other.seed = 10;
  const auto c = scratch_dir("det_c");
  generate_dataset(other, c);
  CHECK(slurp(a / "photo_square.fmat") != slurp(c / "photo_square.fmat"));

  // Pixels loaded back equal the rendered images.
  const Dataset ds = load_dataset(a);
  const auto& s = ds.manifest.samples[5];
  const auto img = render_image(ds.manifest.domains[s.domain], s.cls, RngStream(9, {0xda7a, s.domain, s.cls}).derive(s.index));
  CHECK(bit_equal(ds.images.sample(5), img));
}

TEST_CASE("spec validation") {
  DatasetSpec s = small_spec();
  s.domains[1] = s.domains[0];
  s.domains[1].name = "copy";
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  CHECK_THROWS_AS(generate_dataset(s, scratch_dir("dup")), InvalidArgument);

  s = small_spec();
  s.classes = 9;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s.classes = 1;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s = small_spec();
  s.per_cell = 0;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s = small_spec();
  s.domains[2].name = s.domains[0].name;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);

  s = small_spec();
  s.classes = 8;
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("generation into an unwritable location fails") {
  const auto dir = scratch_dir("unwritable");
  fs::create_directories(dir);
  std::ofstream(dir / "file") << "x";
  CHECK_THROWS_AS(generate_dataset(small_spec(), dir / "file" / "sub"), IoError);
}

TEST_CASE("load rejects corrupted or missing blobs") {
  const auto dir = scratch_dir("corrupt");
  generate_dataset(small_spec(), dir);
  CHECK_NOTHROW(load_dataset(dir));

  {
    auto bytes = slurp(dir / "art_circle.fmat");
    bytes.resize(bytes.size() - 4);
    std::ofstream(dir / "art_circle.fmat", std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));
  }
  CHECK_THROWS_AS(load_dataset(dir), FormatError);

  generate_dataset(small_spec(), dir);
  fs::remove(dir / "sketch_cross.fmat");
  CHECK_THROWS_AS(load_dataset(dir), FormatError);

  generate_dataset(small_spec(), dir);
  fmat::write_tensor(dir / "photo_triangle.fmat", Tensor4({3, 1, 32, 32}, 0.5f));
  CHECK_THROWS_AS(load_dataset(dir), FormatError);

  CHECK_THROWS_AS(load_dataset(scratch_dir("empty")), FormatError);
  const auto bad = scratch_dir("badjson");
  fs::create_directories(bad);
  std::ofstream(bad / "manifest.json") << "{\"format\": ";
  CHECK_THROWS_AS(load_dataset(bad), FormatError);
}

TEST_CASE("leave-one-domain-out partitions the dataset") {
  const auto dir = scratch_dir("split");
  generate_dataset(small_spec(5), dir);
  const Dataset ds = load_dataset(dir);
  const auto [train, test] = split_leave_one_domain_out(ds, "sketch");
  CHECK(train.size() == 60);
  CHECK(test.size() == 20);
  std::set<std::size_t> seen;
  for (auto i : train.indices) {
    CHECK(ds.domain[i] != 3);
    seen.insert(i);
  }
  for (auto i : test.indices) {
    CHECK(ds.domain[i] == 3);
    CHECK(seen.insert(i).second);
  }
  CHECK(seen.size() == ds.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    CHECK(test.labels[i] == ds.labels[test.indices[i]]);
    CHECK(bit_equal(test.images.sample(i), ds.images.sample(test.indices[i])));
  }
  CHECK_THROWS_AS(split_leave_one_domain_out(ds, "clipart"), InvalidArgument);

  DatasetSpec one = small_spec();
  one.domains.resize(1);
  const auto single = scratch_dir("single");
  generate_dataset(one, single);
  CHECK_THROWS_AS(split_leave_one_domain_out(load_dataset(single), "photo"), InvalidArgument);
}

TEST_CASE("default domains split 1500 / 500") {
  const auto dir = scratch_dir("default_split");
  generate_dataset(DatasetSpec::defaults(), dir);
  const auto [train, test] = split_leave_one_domain_out(load_dataset(dir), "sketch");
  CHECK(train.size() == 1500);
  CHECK(test.size() == 500);
}

TEST_CASE("standard input augmentation") {
  const auto dir = scratch_dir("inaug");
  generate_dataset(small_spec(), dir);
  const Dataset ds = load_dataset(dir);
  const Normalization norm = Normalization::of(ds.images);
  const auto img = ds.images.sample(0);

  SUBCASE("with every random step off only normalisation remains") {
    RngStream r(1);
    const auto out = standard_input_augment(img, InputAugmentConfig::none(), norm, r);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 1024; ++i)
        CHECK(out[c * 1024 + i] == (img[c * 1024 + i] - norm.mean[c]) / norm.std[c]);
  }
  SUBCASE("normalise then invert recovers the input") {
    std::vector<float> v(img.begin(), img.end());
    norm.apply(v);
    norm.invert(v);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::abs(v[i] - img[i]) <= 1e-6);
  }
  SUBCASE("grayscale makes the channels equal") {
    InputAugmentConfig cfg = InputAugmentConfig::none();
    cfg.grayscale_prob = 1.0;
    cfg.jitter = true;
    RngStream r(2);
    auto out = standard_input_augment(img, cfg, Normalization{}, r);
    for (std::size_t i = 0; i < 1024; ++i) {
      CHECK(out[i] == out[1024 + i]);
      CHECK(out[i] == out[2048 + i]);
    }
  }
  SUBCASE("full pipeline stays in range before normalisation and is seeded") {
    RngStream r1(3), r2(3);
    const auto a = standard_input_augment(img, InputAugmentConfig{}, Normalization{}, r1);
    const auto b = standard_input_augment(img, InputAugmentConfig{}, Normalization{}, r2);
    CHECK(a == b);
    for (float v : a) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  SUBCASE("statistics come from the images given") {
    const Tensor4 t({2, 3, 1, 2}, std::vector<float>{0, 2, 1, 1, 5, 5, 0, 2, 1, 1, 5, 5});
    const auto n = Normalization::of(t);
    CHECK(n.mean[0] == 1.0f);
    CHECK(n.std[0] == 1.0f);
    CHECK(n.mean[1] == 1.0f);
    CHECK(n.std[1] == 1.0f);  // zero variance falls back to 1
    CHECK(n.mean[2] == 5.0f);
  }
}

TEST_CASE("domain json round trip") {
  const auto spec = DatasetSpec::defaults();
  for (const auto& d : spec.domains) {
    nlohmann::json j = d;
    CHECK(j.get<DomainSpec>() == d);
  }
  nlohmann::json bad = spec.domains[0];
  bad["background"] = "plaid";
  CHECK_THROWS_AS(bad.get<DomainSpec>(), InvalidArgument);
}
