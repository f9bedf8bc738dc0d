#include "feataug/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#include "feataug/fmat.hpp"

namespace feataug::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::string name(Background b) {
  switch (b) {
    case Background::flat: return "flat";
    case Background::texture: return "texture";
    case Background::gradient: return "gradient";
  }
  return "?";
}

std::string name(Foreground f) { return f == Foreground::filled ? "filled" : "outline"; }

Background parse_background(const std::string& s) {
  if (s == "flat") return Background::flat;
  if (s == "texture") return Background::texture;
  if (s == "gradient") return Background::gradient;
  throw InvalidArgument("unknown background mode '" + s + "' (flat | texture | gradient)");
}

Foreground parse_foreground(const std::string& s) {
  if (s == "filled") return Foreground::filled;
  if (s == "outline") return Foreground::outline;
  throw InvalidArgument("unknown foreground mode '" + s + "' (filled | outline)");
}

bool DomainSpec::same_style(const DomainSpec& o) const {
  return background == o.background && foreground == o.foreground && palette_seed == o.palette_seed &&
         noise == o.noise && brightness == o.brightness;
}

const std::vector<std::string>& shape_names() {
  static const std::vector<std::string> names{"square", "circle", "triangle", "cross",
                                              "ring",   "diamond", "bar",     "crescent"};
  return names;
}

void DatasetSpec::validate() const {
  const std::size_t max_classes = shape_names().size();
  if (classes < 2 || classes > max_classes)
    throw InvalidArgument("classes must be in [2, " + std::to_string(max_classes) + "], got " +
                          std::to_string(classes));
  if (per_cell < 1) throw InvalidArgument("per_cell must be >= 1");
  if (domains.empty()) throw InvalidArgument("at least one domain is required");
  std::set<std::string> names;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    const auto& d = domains[i];
    if (d.name.empty()) throw InvalidArgument("domain name must not be empty");
    if (!names.insert(d.name).second) throw InvalidArgument("duplicate domain name '" + d.name + "'");
    if (!(d.noise >= 0.0 && d.noise <= 1.0)) throw InvalidArgument("domain noise must be in [0, 1]");
    if (!(std::abs(d.brightness) <= 1.0)) throw InvalidArgument("domain brightness must be in [-1, 1]");
    for (std::size_t j = 0; j < i; ++j)
      if (d.same_style(domains[j]))
        throw InvalidArgument("domains '" + domains[j].name + "' and '" + d.name + "' have identical style");
  }
}

DatasetSpec DatasetSpec::defaults() {
  DatasetSpec s;
  s.classes = 4;
  s.per_cell = 125;
  s.seed = 0;
  s.domains = {
      {"photo", Background::texture, Foreground::filled, 11, 0.04, 0.0},
      {"art", Background::gradient, Foreground::filled, 23, 0.02, 0.05},
      {"cartoon", Background::flat, Foreground::filled, 37, 0.0, 0.1},
      {"sketch", Background::flat, Foreground::outline, 41, 0.01, 0.15},
  };
  return s;
}

void to_json(json& j, const DomainSpec& d) {
  j = json{{"name", d.name},
           {"background", name(d.background)},
           {"foreground", name(d.foreground)},
           {"palette_seed", d.palette_seed},
           {"noise", d.noise},
           {"brightness", d.brightness}};
}

void from_json(const json& j, DomainSpec& d) {
  d.name = j.at("name").get<std::string>();
  d.background = parse_background(j.at("background").get<std::string>());
  d.foreground = parse_foreground(j.at("foreground").get<std::string>());
  d.palette_seed = j.at("palette_seed").get<std::uint64_t>();
  d.noise = j.at("noise").get<double>();
  d.brightness = j.at("brightness").get<double>();
}

json DatasetManifest::to_json() const {
  json cells = json::array();
  json samples_j = json::array();
  for (const auto& s : samples)
    samples_j.push_back({{"domain", s.domain}, {"class", s.cls}, {"file", s.file}, {"index", s.index}});
  return json{{"format", "feataug-dataset"},
              {"version", 1},
              {"seed", seed},
              {"image_shape", {kImageChannels, kImageSize, kImageSize}},
              {"per_cell", per_cell},
              {"classes", classes},
              {"domains", domains},
              {"samples", samples_j}};
}

DatasetManifest DatasetManifest::from_json(const json& j) {
  try {
    if (j.at("format") != "feataug-dataset" || j.at("version") != 1)
      throw FormatError("manifest: unsupported format or version");
    const auto shape = j.at("image_shape").get<std::vector<std::size_t>>();
    if (shape != std::vector<std::size_t>{kImageChannels, kImageSize, kImageSize})
      throw FormatError("manifest: image_shape must be [3, 32, 32]");
    DatasetManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.per_cell = j.at("per_cell").get<std::size_t>();
    m.classes = j.at("classes").get<std::vector<std::string>>();
    m.domains = j.at("domains").get<std::vector<DomainSpec>>();
    for (const auto& s : j.at("samples"))
      m.samples.push_back({s.at("domain").get<std::size_t>(), s.at("class").get<std::size_t>(),
                           s.at("file").get<std::string>(), s.at("index").get<std::size_t>()});
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
}

namespace {

struct Rgb {
  double r = 0, g = 0, b = 0;
};

double luminance(const Rgb& c) { return 0.299 * c.r + 0.587 * c.g + 0.114 * c.b; }

Rgb random_color(RngStream& r) { return {r.uniform(0.05, 0.95), r.uniform(0.05, 0.95), r.uniform(0.05, 0.95)}; }

Rgb mix(const Rgb& a, const Rgb& b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

struct Palette {
  Rgb bg_a, bg_b, fg;
};

Palette palette_of(std::uint64_t seed) {
  RngStream r(seed, {0x9a1e77e});
  Palette p{random_color(r), random_color(r), {}};
  const double bg_lum = 0.5 * (luminance(p.bg_a) + luminance(p.bg_b));
  // Keep the shape visible against its background.
  for (int tries = 0; tries < 1000; ++tries) {
    p.fg = random_color(r);
    if (std::abs(luminance(p.fg) - bg_lum) >= 0.3) return p;
  }
  p.fg = bg_lum > 0.5 ? Rgb{0.05, 0.05, 0.05} : Rgb{0.95, 0.95, 0.95};
  return p;
}

// Shapes live in [-1,1]^2.
bool inside(std::size_t shape, double u, double v) {
  const double r2 = u * u + v * v;
  switch (shape) {
    case 0: return std::max(std::abs(u), std::abs(v)) <= 0.75;
    case 1: return r2 <= 0.81;
    case 2: return v <= 0.6 && v >= -0.9 + 1.5 * std::abs(u);
    case 3: return (std::abs(u) <= 0.3 && std::abs(v) <= 0.9) || (std::abs(v) <= 0.3 && std::abs(u) <= 0.9);
    case 4: return r2 <= 0.81 && r2 >= 0.25;
    case 5: return std::abs(u) + std::abs(v) <= 0.95;
    case 6: return std::abs(u) <= 0.95 && std::abs(v) <= 0.3;
    case 7: return r2 <= 0.81 && (u - 0.4) * (u - 0.4) + v * v > 0.5;
    default: return false;
  }
}

bool covers(std::size_t shape, Foreground fg, double u, double v) {
  if (!inside(shape, u, v)) return false;
  return fg == Foreground::filled || !inside(shape, u / 0.6, v / 0.6);
}

}  // namespace

std::vector<float> render_image(const DomainSpec& domain, std::size_t cls, RngStream rng) {
  constexpr std::size_t n = kImageSize;
  constexpr double mid = (n - 1) / 2.0;
  const Palette pal = palette_of(domain.palette_seed);
  auto jittered = [&](const Rgb& c) {
    return Rgb{std::clamp(c.r + rng.uniform(-0.08, 0.08), 0.0, 1.0), std::clamp(c.g + rng.uniform(-0.08, 0.08), 0.0, 1.0),
               std::clamp(c.b + rng.uniform(-0.08, 0.08), 0.0, 1.0)};
  };
  const Rgb bg_a = jittered(pal.bg_a), bg_b = jittered(pal.bg_b), fg = jittered(pal.fg);

  const double cx = mid + rng.uniform(-4.0, 4.0), cy = mid + rng.uniform(-4.0, 4.0);
  const double size = rng.uniform(8.0, 12.0);
  const double theta = rng.uniform(-20.0, 20.0) * std::numbers::pi / 180.0;
  const double ct = std::cos(theta), st = std::sin(theta);

  // Background field parameters.
  const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double f1 = rng.uniform(0.3, 1.0), f2 = rng.uniform(0.3, 1.0), f3 = rng.uniform(0.3, 1.0);
  const double p1 = rng.uniform(0.0, 6.3), p2 = rng.uniform(0.0, 6.3), p3 = rng.uniform(0.0, 6.3);
  RngStream noise = rng.derive(0x4015e);

  std::vector<float> img(kImageChannels * n * n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double fx = double(x), fy = double(y);
      double t = 0.0;
      switch (domain.background) {
        case Background::flat: break;
        case Background::gradient:
          t = std::clamp(0.5 + ((fx - mid) * std::cos(dir) + (fy - mid) * std::sin(dir)) / double(n), 0.0, 1.0);
          break;
        case Background::texture:
          t = 0.5 + 0.25 * std::sin(f1 * fx + p1) * std::sin(f2 * fy + p2) +
              0.25 * std::sin(f3 * (fx * std::cos(dir) + fy * std::sin(dir)) + p3);
          break;
      }
      const Rgb bg = mix(bg_a, bg_b, t);

      // 3x3 supersampled coverage.
      int hits = 0;
      for (int sy = 0; sy < 3; ++sy)
        for (int sx = 0; sx < 3; ++sx) {
          const double dx = fx + (sx - 1) / 3.0 - cx, dy = fy + (sy - 1) / 3.0 - cy;
          const double u = (ct * dx + st * dy) / size, v = (-st * dx + ct * dy) / size;
          hits += covers(cls, domain.foreground, u, v);
        }
      const Rgb c = mix(bg, fg, hits / 9.0);
      const double rgb[3] = {c.r, c.g, c.b};
      for (std::size_t ch = 0; ch < kImageChannels; ++ch) {
        double v = rgb[ch] + domain.brightness;
        if (domain.noise > 0.0) v += domain.noise * noise.normal();
        img[(ch * n + y) * n + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  return img;
}

DatasetManifest generate_dataset(const DatasetSpec& spec, const fs::path& out_dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  DatasetManifest m;
  m.seed = spec.seed;
  m.per_cell = spec.per_cell;
  m.classes.assign(shape_names().begin(), shape_names().begin() + static_cast<long>(spec.classes));
  m.domains = spec.domains;
  constexpr std::size_t pixels = kImageChannels * kImageSize * kImageSize;
  for (std::size_t d = 0; d < spec.domains.size(); ++d)
    for (std::size_t c = 0; c < spec.classes; ++c) {
      const std::string file = spec.domains[d].name + "_" + m.classes[c] + ".fmat";
      Tensor4 cell({spec.per_cell, kImageChannels, kImageSize, kImageSize});
      const RngStream cell_rng(spec.seed, {0xda7a, d, c});
      for (std::size_t i = 0; i < spec.per_cell; ++i) {
        const auto img = render_image(spec.domains[d], c, cell_rng.derive(i));
        std::copy(img.begin(), img.end(), cell.data().begin() + static_cast<long>(i * pixels));
        m.samples.push_back({d, c, file, i});
      }
      fmat::write_tensor(out_dir / file, cell);
    }
  std::ofstream f(out_dir / "manifest.json");
  if (!f) throw IoError("cannot write " + (out_dir / "manifest.json").string());
  f << m.to_json().dump(1) << "\n";
  if (!f) throw IoError("write failed: " + (out_dir / "manifest.json").string());
  return m;
}

std::size_t Dataset::domain_index(const std::string& name) const {
  for (std::size_t i = 0; i < manifest.domains.size(); ++i)
    if (manifest.domains[i].name == name) return i;
  std::string valid;
  for (const auto& d : manifest.domains) valid += (valid.empty() ? "" : ", ") + d.name;
  throw InvalidArgument("unknown domain '" + name + "'; valid domains: " + valid);
}

Dataset load_dataset(const fs::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw FormatError("missing manifest: " + (dir / "manifest.json").string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  Dataset ds{DatasetManifest::from_json(j), Tensor4{}, {}, {}};
  const auto& m = ds.manifest;
  if (m.samples.empty()) throw FormatError("manifest lists no samples");

  std::map<std::pair<std::size_t, std::size_t>, std::size_t> cell_counts;
  std::map<std::string, Tensor4> blobs;
  for (const auto& s : m.samples) {
    if (s.domain >= m.domains.size() || s.cls >= m.classes.size())
      throw FormatError("manifest sample references an out-of-range domain or class");
    if (s.file.find('/') != std::string::npos || s.file.find("..") != std::string::npos)
      throw FormatError("manifest file names must be plain file names: " + s.file);
    ++cell_counts[{s.domain, s.cls}];
    if (!blobs.contains(s.file)) {
      Tensor4 t = fmat::read_tensor(dir / s.file);
      const auto& d = t.dims();
      if (d.c != kImageChannels || d.h != kImageSize || d.w != kImageSize)
        throw FormatError(s.file + ": expected (n, 3, 32, 32), got " + to_string(d));
      blobs.emplace(s.file, std::move(t));
    }
    if (s.index >= blobs.at(s.file).dims().b) throw FormatError(s.file + ": sample index out of range");
  }
  if (cell_counts.size() != m.domains.size() * m.classes.size())
    throw FormatError("manifest: every (domain, class) cell needs at least one sample");

  ds.images = Tensor4({m.samples.size(), kImageChannels, kImageSize, kImageSize});
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    const auto& s = m.samples[i];
    const auto src = blobs.at(s.file).sample(s.index);
    std::copy(src.begin(), src.end(), ds.images.sample(i).begin());
    ds.labels.push_back(static_cast<int>(s.cls));
    ds.domain.push_back(s.domain);
  }
  return ds;
}

namespace {

Split gather(const Dataset& ds, const std::vector<std::size_t>& rows) {
  const auto& d = ds.images.dims();
  Split s{Tensor4({rows.size(), d.c, d.h, d.w}), {}, rows};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = ds.images.sample(rows[i]);
    std::copy(src.begin(), src.end(), s.images.sample(i).begin());
    s.labels.push_back(ds.labels[rows[i]]);
  }
  return s;
}

}  // namespace

std::pair<Split, Split> split_leave_one_domain_out(const Dataset& ds, const std::string& target) {
  const std::size_t t = ds.domain_index(target);
  if (ds.manifest.domains.size() < 2) throw InvalidArgument("leave-one-domain-out needs at least two domains");
  std::vector<std::size_t> train, test;
  for (std::size_t i = 0; i < ds.size(); ++i) (ds.domain[i] == t ? test : train).push_back(i);
  return {gather(ds, train), gather(ds, test)};
}

Normalization Normalization::of(const Tensor4& images) {
  const auto& d = images.dims();
  if (d.c != kImageChannels) throw ShapeError("normalisation expects 3-channel images");
  Normalization n;
  for (std::size_t c = 0; c < kImageChannels; ++c) {
    double s = 0, ss = 0;
    for (std::size_t b = 0; b < d.b; ++b)
      for (float v : images.channel(b, c).data) s += v, ss += double(v) * v;
    const double cnt = double(d.b * d.plane());
    const double mean = s / cnt;
    const double sd = std::sqrt(std::max(0.0, ss / cnt - mean * mean));
    n.mean[c] = static_cast<float>(mean);
    n.std[c] = static_cast<float>(sd > 1e-6 ? sd : 1.0);
  }
  return n;
}

void Normalization::apply(std::span<float> image) const {
  const std::size_t plane = image.size() / kImageChannels;
  for (std::size_t c = 0; c < kImageChannels; ++c)
    for (float& v : image.subspan(c * plane, plane)) v = (v - mean[c]) / std[c];
}

void Normalization::invert(std::span<float> image) const {
  const std::size_t plane = image.size() / kImageChannels;
  for (std::size_t c = 0; c < kImageChannels; ++c)
    for (float& v : image.subspan(c * plane, plane)) v = v * std[c] + mean[c];
}

InputAugmentConfig InputAugmentConfig::none() {
  InputAugmentConfig c;
  c.crop = c.flip = c.jitter = false;
  c.grayscale_prob = 0.0;
  return c;
}

std::vector<float> standard_input_augment(std::span<const float> image, const InputAugmentConfig& cfg,
                                          const Normalization& norm, RngStream& rng) {
  constexpr std::size_t n = kImageSize, plane = n * n;
  if (image.size() != kImageChannels * plane) throw ShapeError("standard_input_augment expects a 3x32x32 image");
  std::vector<float> out(image.begin(), image.end());
  auto channel = [&](std::size_t c) { return ChannelView{std::span<const float>(out).subspan(c * plane, plane), n, n}; };
  auto store = [&](std::size_t c, const std::vector<float>& v) { std::copy(v.begin(), v.end(), out.begin() + long(c * plane)); };

  if (cfg.crop) {
    augment::CropBox box{0, 0, n, n};
    for (int tries = 0; tries < 10; ++tries) {
      const double area = rng.uniform(cfg.crop_scale.lo, cfg.crop_scale.hi);
      const double aspect = std::exp(rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
      const auto ch = static_cast<std::size_t>(std::lround(double(n) * std::sqrt(area / aspect)));
      const auto cw = static_cast<std::size_t>(std::lround(double(n) * std::sqrt(area * aspect)));
      if (ch < 1 || cw < 1 || ch > n || cw > n) continue;
      box = {static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n - ch))),
             static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n - cw))), ch, cw};
      break;
    }
    for (std::size_t c = 0; c < kImageChannels; ++c) store(c, augment::random_resized_crop(channel(c), box));
  }
  if (cfg.flip && rng.bernoulli(0.5))
    for (std::size_t c = 0; c < kImageChannels; ++c) store(c, augment::horizontal_flip(channel(c)));
  if (cfg.jitter)
    for (std::size_t c = 0; c < kImageChannels; ++c) {
      const double mul = rng.uniform(cfg.jitter_mul.lo, cfg.jitter_mul.hi);
      const double add = rng.uniform(cfg.jitter_add.lo, cfg.jitter_add.hi);
      for (std::size_t i = 0; i < plane; ++i) {
        float& v = out[c * plane + i];
        v = static_cast<float>(std::clamp(v * mul + add, 0.0, 1.0));
      }
    }
  if (cfg.grayscale_prob > 0.0 && rng.bernoulli(cfg.grayscale_prob))
    for (std::size_t i = 0; i < plane; ++i) {
      const float g = 0.299f * out[i] + 0.587f * out[plane + i] + 0.114f * out[2 * plane + i];
      out[i] = out[plane + i] = out[2 * plane + i] = g;
    }
  norm.apply(out);
  return out;
}

double domain_separability(const Dataset& ds) {
  const std::size_t k = ds.manifest.domains.size(), nf = kImageChannels;
  if (k < 2) throw InvalidArgument("domain separability needs at least two domains");
  std::vector<std::array<double, kImageChannels>> feat(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t c = 0; c < nf; ++c) {
      double s = 0;
      for (float v : ds.images.channel(i, c).data) s += v;
      feat[i][c] = s / double(kImageSize * kImageSize);
    }
  // Standardise each feature.
  for (std::size_t c = 0; c < nf; ++c) {
    double s = 0, ss = 0;
    for (const auto& f : feat) s += f[c], ss += f[c] * f[c];
    const double mean = s / double(feat.size());
    const double sd = std::sqrt(std::max(1e-12, ss / double(feat.size()) - mean * mean));
    for (auto& f : feat) f[c] = (f[c] - mean) / sd;
  }

  std::vector<double> w(k * (nf + 1), 0.0);
  auto scores = [&](const std::array<double, kImageChannels>& f) {
    std::vector<double> z(k);
    for (std::size_t j = 0; j < k; ++j) {
      z[j] = w[j * (nf + 1) + nf];
      for (std::size_t c = 0; c < nf; ++c) z[j] += w[j * (nf + 1) + c] * f[c];
    }
    return z;
  };
  std::size_t fit_count = (ds.size() + 1) / 2;
  for (int iter = 0; iter < 500; ++iter) {
    std::vector<double> grad(w.size(), 0.0);
    for (std::size_t i = 0; i < ds.size(); i += 2) {
      auto z = scores(feat[i]);
      const double m = *std::max_element(z.begin(), z.end());
      double sum = 0;
      for (double& v : z) sum += (v = std::exp(v - m));
      for (std::size_t j = 0; j < k; ++j) {
        const double g = z[j] / sum - (j == ds.domain[i] ? 1.0 : 0.0);
        for (std::size_t c = 0; c < nf; ++c) grad[j * (nf + 1) + c] += g * feat[i][c];
        grad[j * (nf + 1) + nf] += g;
      }
    }
    for (std::size_t p = 0; p < w.size(); ++p) w[p] -= 0.5 * grad[p] / double(fit_count);
  }
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 1; i < ds.size(); i += 2, ++total) {
    const auto z = scores(feat[i]);
    correct += static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin()) == ds.domain[i];
  }
  return total == 0 ? 0.0 : 100.0 * double(correct) / double(total);
}

}  // namespace feataug::data
