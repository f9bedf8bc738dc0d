#include "feataug/config.hpp"

#include "feataug/harness.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <sstream>

namespace feataug::config {

using nlohmann::json;

json parse_text(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // e.byte is 1-based and points just past the offending character.
    const std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < end; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string msg = e.what();
    if (const auto p = msg.find("parse error"); p != std::string::npos) msg = msg.substr(p);
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + msg);
  }
}

json read_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_text(ss.str(), path.string());
}

// Helpers shared with the experiment config reader below.
namespace detail {

[[noreturn]] void fail(const std::string& where, const std::string& what) { throw ConfigError(where + ": " + what); }

template <class T>
T convert(const json& v, const std::string& where);

template <>
double convert<double>(const json& v, const std::string& where) {
  if (!v.is_number()) fail(where, "expected a number");
  return v.get<double>();
}

template <>
bool convert<bool>(const json& v, const std::string& where) {
  if (!v.is_boolean()) fail(where, "expected true or false");
  return v.get<bool>();
}

template <>
std::uint64_t convert<std::uint64_t>(const json& v, const std::string& where) {
  if (!v.is_number_unsigned()) fail(where, "expected a non-negative integer");
  return v.get<std::uint64_t>();
}

template <>
std::string convert<std::string>(const json& v, const std::string& where) {
  if (!v.is_string()) fail(where, "expected a string");
  return v.get<std::string>();
}

template <>
augment::Range convert<augment::Range>(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 2) fail(where, "expected [lo, hi]");
  return {convert<double>(v[0], where + "[0]"), convert<double>(v[1], where + "[1]")};
}

/// Object reader that rejects keys outside `allowed` up front.
class Obj {
 public:
  Obj(const json& j, std::string where, std::initializer_list<const char*> allowed) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) fail(where_, "expected an object");
    for (const auto& [key, value] : j.items()) {
      (void)value;
      if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
        std::string list;
        for (const char* a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
        fail(where_ + "." + key, "unknown key (allowed: " + list + ")");
      }
    }
  }

  template <class T>
  bool get(const char* key, T& out) const {
    const auto it = j_.find(key);
    if (it == j_.end()) return false;
    out = convert<T>(*it, path(key));
    return true;
  }

  template <class T>
  T required(const char* key) const {
    const auto it = j_.find(key);
    if (it == j_.end()) fail(path(key), "required key missing");
    return convert<T>(*it, path(key));
  }

  const json* find(const char* key) const {
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const char* key) const { return where_ + "." + key; }

 private:
  const json& j_;
  std::string where_;
};

template <class F>
auto checked(const std::string& where, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    fail(where, e.what());
  }
}

json range_json(const augment::Range& r) { return json::array({r.lo, r.hi}); }

}  // namespace detail

using namespace detail;

augment::AugmentationLayerConfig aug_layer_from_json(const json& j, const std::string& where) {
  Obj o(j, where,
        {"p", "position", "enabled", "crop_scale_range", "rotation_range_deg", "blur_sigma_range", "blur_apply_prob",
         "flip_prob", "noise_rel_sigma", "share_selection_across_batch"});
  augment::AugmentationLayerConfig c;
  o.get("p", c.p);
  o.get("position", c.position);
  if (const json* e = o.find("enabled")) {
    if (!e->is_array()) fail(o.path("enabled"), "expected a list of transform names");
    c.enabled = augment::TransformSet::none();
    for (std::size_t i = 0; i < e->size(); ++i) {
      const auto w = o.path("enabled") + "[" + std::to_string(i) + "]";
      const auto name = convert<std::string>((*e)[i], w);
      const auto t = augment::parse_transform(name);
      if (!t) fail(w, "unknown transform '" + name + "' (RRC | RHF | RR | GB | GN)");
      c.enabled = c.enabled.with(*t);
    }
  }
  o.get("crop_scale_range", c.crop_scale_range);
  o.get("rotation_range_deg", c.rotation_range_deg);
  o.get("blur_sigma_range", c.blur_sigma_range);
  o.get("blur_apply_prob", c.blur_apply_prob);
  o.get("flip_prob", c.flip_prob);
  o.get("noise_rel_sigma", c.noise_rel_sigma);
  o.get("share_selection_across_batch", c.share_selection_across_batch);
  checked(where, [&] {
    c.validate();
    return 0;
  });
  return c;
}

json to_json(const augment::AugmentationLayerConfig& c) {
  return json{{"p", c.p},
              {"position", c.position},
              {"enabled", c.enabled.names()},
              {"crop_scale_range", range_json(c.crop_scale_range)},
              {"rotation_range_deg", range_json(c.rotation_range_deg)},
              {"blur_sigma_range", range_json(c.blur_sigma_range)},
              {"blur_apply_prob", c.blur_apply_prob},
              {"flip_prob", c.flip_prob},
              {"noise_rel_sigma", c.noise_rel_sigma},
              {"share_selection_across_batch", c.share_selection_across_batch}};
}

std::vector<augment::AugmentationLayerConfig> aug_layers_from_json(const json& j, const std::string& where) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "default") return BackboneConfig::default_aug_layers();
    if (s == "none") return {};
    fail(where, "expected a list of layers, \"default\" or \"none\"");
  }
  if (!j.is_array()) fail(where, "expected a list of layers, \"default\" or \"none\"");
  std::vector<augment::AugmentationLayerConfig> out;
  for (std::size_t i = 0; i < j.size(); ++i)
    out.push_back(aug_layer_from_json(j[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

json to_json(const std::vector<augment::AugmentationLayerConfig>& layers) {
  json a = json::array();
  for (const auto& l : layers) a.push_back(to_json(l));
  return a;
}

nn::SgdConfig sgd_from_json(const json& j, const std::string& where) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "desk") return nn::SgdConfig::desk();
    if (s == "paper") return nn::SgdConfig::paper();
    fail(where, "unknown preset '" + s + "' (desk | paper)");
  }
  Obj o(j, where, {"preset", "learning_rate", "momentum", "batch_size", "epochs"});
  nn::SgdConfig c = nn::SgdConfig::desk();
  std::string preset;
  if (o.get("preset", preset)) c = sgd_from_json(json(preset), o.path("preset"));
  o.get("learning_rate", c.learning_rate);
  o.get("momentum", c.momentum);
  o.get("batch_size", c.batch_size);
  o.get("epochs", c.epochs);
  checked(where, [&] {
    c.validate();
    return 0;
  });
  return c;
}

json to_json(const nn::SgdConfig& c) {
  return json{{"learning_rate", c.learning_rate},
              {"momentum", c.momentum},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs}};
}

data::InputAugmentConfig input_augment_from_json(const json& j, const std::string& where) {
  if (j.is_string() && j.get<std::string>() == "none") return data::InputAugmentConfig::none();
  Obj o(j, where, {"crop", "crop_scale", "flip", "jitter", "jitter_mul", "jitter_add", "grayscale_prob"});
  data::InputAugmentConfig c;
  o.get("crop", c.crop);
  o.get("crop_scale", c.crop_scale);
  o.get("flip", c.flip);
  o.get("jitter", c.jitter);
  o.get("jitter_mul", c.jitter_mul);
  o.get("jitter_add", c.jitter_add);
  o.get("grayscale_prob", c.grayscale_prob);
  if (!(c.crop_scale.lo > 0 && c.crop_scale.lo <= c.crop_scale.hi && c.crop_scale.hi <= 1))
    fail(o.path("crop_scale"), "must satisfy 0 < lo <= hi <= 1");
  if (!(c.jitter_mul.lo > 0 && c.jitter_mul.lo <= c.jitter_mul.hi)) fail(o.path("jitter_mul"), "must satisfy 0 < lo <= hi");
  if (!(c.jitter_add.lo <= c.jitter_add.hi)) fail(o.path("jitter_add"), "must satisfy lo <= hi");
  if (!(c.grayscale_prob >= 0 && c.grayscale_prob <= 1)) fail(o.path("grayscale_prob"), "must be in [0, 1]");
  return c;
}

json to_json(const data::InputAugmentConfig& c) {
  return json{{"crop", c.crop},
              {"crop_scale", range_json(c.crop_scale)},
              {"flip", c.flip},
              {"jitter", c.jitter},
              {"jitter_mul", range_json(c.jitter_mul)},
              {"jitter_add", range_json(c.jitter_add)},
              {"grayscale_prob", c.grayscale_prob}};
}

data::DatasetSpec dataset_spec_from_json(const json& j, const std::string& where) {
  Obj o(j, where, {"classes", "per_cell", "seed", "domains"});
  data::DatasetSpec s = data::DatasetSpec::defaults();
  o.get("classes", s.classes);
  o.get("per_cell", s.per_cell);
  o.get("seed", s.seed);
  if (const json* d = o.find("domains")) {
    if (!d->is_array()) fail(o.path("domains"), "expected a list of domains");
    s.domains.clear();
    for (std::size_t i = 0; i < d->size(); ++i) {
      const auto w = o.path("domains") + "[" + std::to_string(i) + "]";
      Obj od((*d)[i], w, {"name", "background", "foreground", "palette_seed", "noise", "brightness"});
      data::DomainSpec ds;
      ds.name = od.required<std::string>("name");
      std::string mode;
      if (od.get("background", mode)) ds.background = checked(od.path("background"), [&] { return data::parse_background(mode); });
      if (od.get("foreground", mode)) ds.foreground = checked(od.path("foreground"), [&] { return data::parse_foreground(mode); });
      od.get("palette_seed", ds.palette_seed);
      od.get("noise", ds.noise);
      od.get("brightness", ds.brightness);
      s.domains.push_back(ds);
    }
  }
  checked(where, [&] {
    s.validate();
    return 0;
  });
  return s;
}

json to_json(const data::DatasetSpec& s) {
  return json{{"classes", s.classes}, {"per_cell", s.per_cell}, {"seed", s.seed}, {"domains", s.domains}};
}

BackboneConfig backbone_from_json(const json& j, const std::string& where) {
  Obj o(j, where, {"input_channels", "stages", "aug_layers"});
  BackboneConfig c;
  c.input_channels = o.required<std::size_t>("input_channels");
  const json* st = o.find("stages");
  if (!st || !st->is_array()) fail(o.path("stages"), "expected a list of stages");
  for (std::size_t i = 0; i < st->size(); ++i) {
    const auto w = o.path("stages") + "[" + std::to_string(i) + "]";
    Obj os((*st)[i], w, {"kind", "in", "out"});
    const auto kind = os.required<std::string>("kind");
    Stage s{StageKind::Conv};
    bool found = false;
    for (auto k : {StageKind::Conv, StageKind::Relu, StageKind::MaxPool, StageKind::GlobalAvgPool, StageKind::Linear})
      if (stage_name(k) == kind) s.kind = k, found = true;
    if (!found) fail(os.path("kind"), "unknown stage kind '" + kind + "'");
    os.get("in", s.in);
    os.get("out", s.out);
    c.stages.push_back(s);
  }
  if (const json* a = o.find("aug_layers")) c.aug_layers = aug_layers_from_json(*a, o.path("aug_layers"));
  checked(where, [&] {
    c.validate();
    return 0;
  });
  return c;
}

json to_json(const BackboneConfig& c) {
  json stages = json::array();
  for (const auto& s : c.stages) {
    json e{{"kind", stage_name(s.kind)}};
    if (s.kind == StageKind::Conv || s.kind == StageKind::Linear) e["in"] = s.in, e["out"] = s.out;
    stages.push_back(e);
  }
  return json{{"input_channels", c.input_channels}, {"stages", stages}, {"aug_layers", to_json(c.aug_layers)}};
}

json to_json(const augment::AugmentRecord& r) {
  json samples = json::array();
  for (const auto& s : r.samples) {
    json channels = json::array();
    for (const auto& t : s.channels)
      channels.push_back({{"channel", t.channel},
                          {"crop", {{"top", t.crop.top}, {"left", t.crop.left}, {"height", t.crop.height}, {"width", t.crop.width}}},
                          {"flip", t.flip},
                          {"angle_deg", t.angle_deg},
                          {"blur_applied", t.blur_applied},
                          {"blur_sigma", t.blur_sigma},
                          {"noise_sigma", t.noise_sigma},
                          {"noise_field", t.noise_field}});
    samples.push_back({{"channels", channels}});
  }
  return json{{"dims", {r.dims.b, r.dims.c, r.dims.h, r.dims.w}}, {"enabled", r.enabled.names()}, {"samples", samples}};
}

augment::AugmentRecord record_from_json(const json& j) {
  try {
    augment::AugmentRecord r;
    const auto d = j.at("dims").get<std::vector<std::size_t>>();
    if (d.size() != 4) throw FormatError("record dims must have 4 entries");
    r.dims = {d[0], d[1], d[2], d[3]};
    r.enabled = augment::TransformSet::none();
    for (const auto& n : j.at("enabled")) {
      const auto t = augment::parse_transform(n.get<std::string>());
      if (!t) throw FormatError("unknown transform in record");
      r.enabled = r.enabled.with(*t);
    }
    for (const auto& s : j.at("samples")) {
      augment::TransformParams p;
      for (const auto& c : s.at("channels")) {
        augment::ChannelTransform t;
        t.channel = c.at("channel").get<std::size_t>();
        const auto& b = c.at("crop");
        t.crop = {b.at("top").get<std::size_t>(), b.at("left").get<std::size_t>(), b.at("height").get<std::size_t>(),
                  b.at("width").get<std::size_t>()};
        t.flip = c.at("flip").get<bool>();
        t.angle_deg = c.at("angle_deg").get<double>();
        t.blur_applied = c.at("blur_applied").get<bool>();
        t.blur_sigma = c.at("blur_sigma").get<double>();
        t.noise_sigma = c.at("noise_sigma").get<float>();
        t.noise_field = c.at("noise_field").get<std::vector<float>>();
        p.channels.push_back(std::move(t));
      }
      r.samples.push_back(std::move(p));
    }
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("augmentation record: ") + e.what());
  }
}

json to_json(const data::Normalization& n) { return json{{"mean", n.mean}, {"std", n.std}}; }

data::Normalization normalization_from_json(const json& j, const std::string& where) {
  Obj o(j, where, {"mean", "std"});
  data::Normalization n;
  for (const char* key : {"mean", "std"}) {
    const json* v = o.find(key);
    if (!v || !v->is_array() || v->size() != data::kImageChannels) fail(o.path(key), "expected 3 numbers");
    auto& dst = std::string(key) == "mean" ? n.mean : n.std;
    for (std::size_t c = 0; c < data::kImageChannels; ++c)
      dst[c] = static_cast<float>(convert<double>((*v)[c], o.path(key)));
  }
  return n;
}

}  // namespace feataug::config

namespace feataug::harness {

using nlohmann::json;

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  using config::ConfigError;
  const std::string where = "config";
  config::detail::Obj o(j, where,
                {"dataset", "methods", "sgd", "seeds", "targets", "input_augment", "ablation_layers", "jobs",
                 "data_spec"});
  ExperimentConfig c;
  c.dataset = o.required<std::string>("dataset");
  if (const json* m = o.find("methods")) {
    if (!m->is_array()) config::detail::fail(o.path("methods"), "expected a list of methods");
    c.methods.clear();
    for (std::size_t i = 0; i < m->size(); ++i) {
      const auto w = o.path("methods") + "[" + std::to_string(i) + "]";
      config::detail::Obj om((*m)[i], w, {"name", "aug_layers"});
      Method method{om.required<std::string>("name"), {}};
      if (const json* a = om.find("aug_layers")) method.aug_layers = config::aug_layers_from_json(*a, om.path("aug_layers"));
      c.methods.push_back(std::move(method));
    }
  }
  if (const json* s = o.find("sgd")) c.sgd = config::sgd_from_json(*s, o.path("sgd"));
  if (const json* s = o.find("seeds")) {
    if (!s->is_array()) config::detail::fail(o.path("seeds"), "expected a list of seeds");
    c.seeds.clear();
    for (std::size_t i = 0; i < s->size(); ++i)
      c.seeds.push_back(config::detail::convert<std::uint64_t>((*s)[i], o.path("seeds") + "[" + std::to_string(i) + "]"));
  }
  if (const json* t = o.find("targets")) {
    if (t->is_string() && t->get<std::string>() == "all") {
      c.targets.clear();
    } else if (t->is_array()) {
      for (std::size_t i = 0; i < t->size(); ++i)
        c.targets.push_back(config::detail::convert<std::string>((*t)[i], o.path("targets") + "[" + std::to_string(i) + "]"));
    } else {
      config::detail::fail(o.path("targets"), "expected \"all\" or a list of domain names");
    }
  }
  if (const json* a = o.find("input_augment")) c.input_augment = config::input_augment_from_json(*a, o.path("input_augment"));
  if (const json* a = o.find("ablation_layers")) c.ablation_layers = config::aug_layers_from_json(*a, o.path("ablation_layers"));
  o.get("jobs", c.jobs);
  if (const json* d = o.find("data_spec")) (void)config::dataset_spec_from_json(*d, o.path("data_spec"));
  config::detail::checked(where, [&] {
    c.validate();
    return 0;
  });
  return c;
}

json ExperimentConfig::to_json() const {
  json methods_j = json::array();
  for (const auto& m : methods) methods_j.push_back({{"name", m.name}, {"aug_layers", config::to_json(m.aug_layers)}});
  return json{{"dataset", dataset.string()},
              {"methods", methods_j},
              {"sgd", config::to_json(sgd)},
              {"seeds", seeds},
              {"targets", targets.empty() ? json("all") : json(targets)},
              {"input_augment", config::to_json(input_augment)},
              {"ablation_layers", config::to_json(ablation_layers)},
              {"jobs", jobs}};
}

}  // namespace feataug::harness
