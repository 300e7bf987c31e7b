#include "mcinet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "mcinet/errors.hpp"
#include "mcinet/random.hpp"

namespace mcinet {

namespace {

using json = nlohmann::json;

void check(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

template <typename E>
struct EnumNames;

template <>
struct EnumNames<LowLevelSource> {
  static constexpr std::pair<LowLevelSource, const char*> table[] = {
      {LowLevelSource::branch, "branch"},
      {LowLevelSource::backbone_block1, "backbone_block1"},
      {LowLevelSource::backbone_block2, "backbone_block2"},
      {LowLevelSource::none, "none"}};
};
template <>
struct EnumNames<Aggregate> {
  static constexpr std::pair<Aggregate, const char*> table[] = {{Aggregate::softmax, "softmax"},
                                                                {Aggregate::raw, "raw"}};
};
template <>
struct EnumNames<SkipSupport> {
  static constexpr std::pair<SkipSupport, const char*> table[] = {
      {SkipSupport::foreground, "foreground"}, {SkipSupport::whole_image, "whole_image"}};
};

template <typename E>
std::string enum_name(E value) {
  for (const auto& [v, name] : EnumNames<E>::table)
    if (v == value) return name;
  return "?";
}

template <typename E>
E parse_enum(const json& j, const std::string& key) {
  check(j.is_string(), key + ": expected a string");
  const auto s = j.get<std::string>();
  std::string allowed;
  for (const auto& [v, name] : EnumNames<E>::table) {
    if (s == name) return v;
    allowed += std::string(allowed.empty() ? "" : ", ") + name;
  }
  throw ConfigError(key + ": unknown value '" + s + "' (allowed: " + allowed + ")");
}

/// Walks one JSON object, rejecting keys that no reader consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    check(j_.is_object(), path_ + ": expected an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key: " + path_ + "." + key);
    }
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    const json* v = find(key);
    if (!v) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        check(v->is_boolean(), "expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        check(v->is_number_integer(), "expected an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        check(v->is_number(), "expected a number");
      }
      out = v->get<T>();
    } catch (const std::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  template <typename E>
  void read_enum(const std::string& key, E& out) {
    if (const json* v = find(key)) out = parse_enum<E>(*v, path_ + "." + key);
  }

  std::string child(const std::string& key) const { return path_ + "." + key; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_backbone(const json& j, BackboneConfig& c) {
  Section s(j, "model.backbone");
  s.read("input_size", c.input_size);
  s.read("num_scales", c.num_scales);
  s.read("layers_per_scale", c.layers_per_scale);
  s.read("channels_per_scale", c.channels_per_scale);
  s.read("freeze", c.freeze);
}

void read_mcfm(const json& j, McfmConfig& c) {
  Section s(j, "model.mcfm");
  s.read("enabled", c.enabled);
  s.read("d", c.d);
  s.read("low_level_channels", c.low_level_channels);
  s.read_enum("low_level_source", c.low_level_source);
}

void read_mlim(const json& j, MlimConfig& c) {
  Section s(j, "model.mlim");
  s.read("heads", c.heads);
  s.read("head_dim", c.head_dim);
  s.read("adjacent", c.adjacent);
  s.read("refine_widths", c.refine_widths);
  s.read("refine_kernel", c.refine_kernel);
  s.read_enum("aggregate", c.aggregate);
}

void read_msmp(const json& j, MsmpConfig& c) {
  Section s(j, "model.msmp");
  s.read("width", c.width);
  s.read("feedback", c.feedback);
  s.read("aspp_rates", c.aspp_rates);
  s.read_enum("skip_support", c.skip_support);
}

}  // namespace

void BackboneConfig::validate() const {
  check(num_scales >= 3, "num_scales >= 3 required (got " + std::to_string(num_scales) + ")");
  check(static_cast<Index>(layers_per_scale.size()) == num_scales,
        "layers_per_scale must list one count per scale");
  check(static_cast<Index>(channels_per_scale.size()) == num_scales,
        "channels_per_scale must list one count per scale");
  for (Index l : layers_per_scale) check(l >= 1, "layers_per_scale entries must be >= 1");
  check(channels_per_scale.front() >= 1, "channels_per_scale entries must be >= 1");
  for (std::size_t i = 1; i < channels_per_scale.size(); ++i) {
    check(channels_per_scale[i] > channels_per_scale[i - 1],
          "channels_per_scale must be strictly increasing");
  }
  const Index divisor = kStemStride << (num_scales - 1);
  check(input_size >= divisor && input_size % divisor == 0,
        "input_size must be a positive multiple of " + std::to_string(divisor));
}

void ModelConfig::validate() const {
  backbone.validate();
  check(mcfm.d >= 1, "mcfm.d must be >= 1");
  check(mcfm.low_level_channels >= 1, "mcfm.low_level_channels must be >= 1");
  check(mlim.heads >= 1, "mlim.heads must be >= 1");
  check(mlim.head_dim >= 0, "mlim.head_dim must be >= 0");
  check(!mlim.refine_widths.empty(), "mlim.refine_widths must not be empty");
  for (Index w : mlim.refine_widths) check(w >= 1, "mlim.refine_widths entries must be >= 1");
  check(mlim.refine_kernel >= 1 && mlim.refine_kernel % 2 == 1, "mlim.refine_kernel must be odd");
  check(msmp.width >= 1, "msmp.width must be >= 1");
  check(!msmp.aspp_rates.empty(), "msmp.aspp_rates must not be empty");
  for (Index r : msmp.aspp_rates) check(r >= 1, "msmp.aspp_rates entries must be >= 1");
}

void RunConfig::validate() const {
  model.validate();
  check(train.lr > 0, "train.lr must be > 0");
  check(train.momentum >= 0 && train.momentum < 1, "train.momentum must be in [0, 1)");
  check(train.steps >= 0, "train.steps must be >= 0");
  check(train.batch_size >= 1, "train.batch_size must be >= 1");
  check(!train.lambda || *train.lambda >= 0, "lambda must be >= 0");
  check(train.k >= 1, "train.k must be >= 1");
  check(train.eval_every >= 0 && train.eval_episodes >= 1, "invalid train evaluation settings");
  check(data.num_folds >= 2, "data.num_folds must be >= 2");
  check(data.num_classes >= data.num_folds && data.num_classes <= 16 &&
            data.num_classes % data.num_folds == 0,
        "data.num_classes must be a multiple of num_folds and at most 16");
  check(train.fold >= 0 && train.fold < data.num_folds, "train.fold out of range");
  check(eval.episodes >= 1 && eval.k >= 1, "invalid eval settings");
}

ModelConfig tiny_model_config() {
  ModelConfig c;
  c.backbone.input_size = 16;
  c.backbone.layers_per_scale = {1, 2, 2};
  c.backbone.channels_per_scale = {4, 6, 8};
  c.mcfm.d = 4;
  c.mcfm.low_level_channels = 8;
  c.mlim.heads = 2;
  c.mlim.refine_widths = {4, 4};
  c.msmp.width = 4;
  return c;
}

std::string to_string(LowLevelSource s) { return enum_name(s); }
std::string to_string(Aggregate a) { return enum_name(a); }
std::string to_string(SkipSupport s) { return enum_name(s); }

json to_json(const RunConfig& c) {
  const auto& m = c.model;
  json j;
  j["model"]["backbone"] = {{"input_size", m.backbone.input_size},
                            {"num_scales", m.backbone.num_scales},
                            {"layers_per_scale", m.backbone.layers_per_scale},
                            {"channels_per_scale", m.backbone.channels_per_scale},
                            {"freeze", m.backbone.freeze}};
  j["model"]["mcfm"] = {{"enabled", m.mcfm.enabled},
                        {"d", m.mcfm.d},
                        {"low_level_channels", m.mcfm.low_level_channels},
                        {"low_level_source", to_string(m.mcfm.low_level_source)}};
  j["model"]["mlim"] = {{"heads", m.mlim.heads},
                        {"head_dim", m.mlim.head_dim},
                        {"adjacent", m.mlim.adjacent},
                        {"refine_widths", m.mlim.refine_widths},
                        {"refine_kernel", m.mlim.refine_kernel},
                        {"aggregate", to_string(m.mlim.aggregate)}};
  j["model"]["msmp"] = {{"width", m.msmp.width},
                        {"feedback", m.msmp.feedback},
                        {"aspp_rates", m.msmp.aspp_rates},
                        {"skip_support", to_string(m.msmp.skip_support)}};
  j["train"] = {{"lr", c.train.lr},
                {"momentum", c.train.momentum},
                {"steps", c.train.steps},
                {"batch_size", c.train.batch_size},
                {"lambda", c.train.lambda ? json(*c.train.lambda) : json(nullptr)},
                {"k", c.train.k},
                {"fold", c.train.fold},
                {"seed", c.train.seed},
                {"eval_every", c.train.eval_every},
                {"eval_episodes", c.train.eval_episodes},
                {"fixed_episode", c.train.fixed_episode}};
  j["data"] = {{"num_classes", c.data.num_classes}, {"num_folds", c.data.num_folds}};
  j["eval"] = {{"episodes", c.eval.episodes}, {"k", c.eval.k}};
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  {
    Section root(j, "config");
    if (const json* model = root.find("model")) {
      Section s(*model, "model");
      if (const json* v = s.find("backbone")) read_backbone(*v, c.model.backbone);
      if (const json* v = s.find("mcfm")) read_mcfm(*v, c.model.mcfm);
      if (const json* v = s.find("mlim")) read_mlim(*v, c.model.mlim);
      if (const json* v = s.find("msmp")) read_msmp(*v, c.model.msmp);
    }
    if (const json* train = root.find("train")) {
      Section s(*train, "train");
      s.read("lr", c.train.lr);
      s.read("momentum", c.train.momentum);
      s.read("steps", c.train.steps);
      s.read("batch_size", c.train.batch_size);
      if (const json* v = s.find("lambda")) {
        if (v->is_null()) {
          c.train.lambda.reset();
        } else {
          check(v->is_number(), "train.lambda: expected a number or null");
          c.train.lambda = v->get<double>();
        }
      }
      s.read("k", c.train.k);
      s.read("fold", c.train.fold);
      s.read("seed", c.train.seed);
      s.read("eval_every", c.train.eval_every);
      s.read("eval_episodes", c.train.eval_episodes);
      s.read("fixed_episode", c.train.fixed_episode);
    }
    if (const json* data = root.find("data")) {
      Section s(*data, "data");
      s.read("num_classes", c.data.num_classes);
      s.read("num_folds", c.data.num_folds);
    }
    if (const json* eval = root.find("eval")) {
      Section s(*eval, "eval");
      s.read("episodes", c.eval.episodes);
      s.read("k", c.eval.k);
    }
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

std::uint64_t config_hash(const RunConfig& cfg) { return fnv1a(to_json(cfg).dump()); }

}  // namespace mcinet
