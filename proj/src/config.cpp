#include "hspk/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "hspk/error.hpp"
#include "hspk/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace hspk {
namespace {

// Pulls typed keys out of one object and rejects whatever is left over.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config: '" + name_ + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    used_.insert(key);
    const std::string where = name_.empty() ? key : name_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError("config: '" + where + "' must be a boolean");
      out = it->template get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_unsigned()) throw ConfigError("config: '" + where + "' must be a non-negative integer");
      out = it->template get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw ConfigError("config: '" + where + "' must be a number");
      out = it->template get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw ConfigError("config: '" + where + "' must be a string");
      out = it->template get<std::string>();
    } else {
      if (!it->is_array()) throw ConfigError("config: '" + where + "' must be an array");
      T v;
      for (const auto& e : *it) {
        typename T::value_type x{};
        if constexpr (std::is_same_v<typename T::value_type, std::string>) {
          if (!e.is_string()) throw ConfigError("config: '" + where + "' must hold strings");
          x = e.template get<std::string>();
        } else {
          if (!e.is_number_unsigned()) throw ConfigError("config: '" + where + "' must hold non-negative integers");
          x = e.template get<typename T::value_type>();
        }
        v.push_back(x);
      }
      out = std::move(v);
    }
  }

  const json* child(const char* key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    used_.insert(key);
    return &*it;
  }

  std::string path(const char* key) const { return name_.empty() ? key : name_ + "." + key; }

  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) {
        throw ConfigError("config: unknown key '" + (name_.empty() ? it.key() : name_ + "." + it.key()) + "'");
      }
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> used_;
};

void read_data(const json& j, DataSection& d) {
  Section s(j, "data");
  s.get("label_extent", d.label_extent);
  s.get("speckle_extent", d.speckle_extent);
  s.get("percentile", d.percentile);
  s.get("configs", d.configs);
  s.get("labels", d.labels);
  s.get("label_count", d.label_count);
  s.get("memory_budget", d.memory_budget);
  if (const json* r = s.child("split_ratios")) {
    Section rs(*r, "data.split_ratios");
    rs.get("train", d.ratios.train);
    rs.get("val", d.ratios.val);
    rs.get("test", d.ratios.test);
    rs.done();
  }
  s.done();
}

void read_train(const json& j, TrainConfig& t) {
  Section s(j, "train");
  std::string variant = variant_name(t.variant), preset = preset_name(t.preset);
  s.get("variant", variant);
  s.get("preset", preset);
  t.variant = parse_variant(variant);
  t.preset = parse_preset(preset);
  s.get("epochs", t.epochs);
  s.get("batch_size", t.batch_size);
  s.get("max_steps", t.max_steps);
  s.get("eval_every", t.eval_every);
  s.get("log_every", t.log_every);
  s.get("val_records", t.val_records);
  s.get("reduced_fraction", t.reduced_fraction);
  s.get("perturbed_per_config", t.perturbed_per_config);
  s.get("test_eval", t.test_eval);
  s.get("freeze_discriminator", t.freeze_discriminator);
  s.get("pix2pix_l1_weight", t.pix2pix_l1_weight);
  if (const json* a = s.child("adam")) {
    Section as(*a, "train.adam");
    as.get("lr", t.adam.lr);
    as.get("beta1", t.adam.beta1);
    as.get("beta2", t.adam.beta2);
    as.get("eps", t.adam.eps);
    as.done();
  }
  s.done();
}

void read_model(const json& j, TrainConfig& t) {
  Section s(j, "model");
  s.get("encoder_channels", t.encoder_channels);
  s.get("decoder_channels", t.decoder_channels);
  s.get("tfrm_hidden", t.tfrm_hidden);
  s.get("tfrm_width", t.tfrm_width);
  s.get("discriminator_channels", t.discriminator_channels);
  s.done();
}

}  // namespace

void RunConfig::validate() const {
  if (data.configs == 0) throw ConfigError("data: configs must be at least 1");
  if (data.label_extent == 0 || data.speckle_extent == 0) throw ConfigError("data: extents must be positive");
  if (!(data.percentile > 0.0 && data.percentile <= 100.0)) throw ConfigError("data: percentile must lie in (0, 100]");
  data.ratios.validate();
  label_source(data, seed);
  train.validate();
  KernelBank(train.hist_bins, train.hist_sigma);
}

RunConfig parse_run_config(const json& j) {
  RunConfig c;
  Section s(j, "");
  s.get("seed", c.seed);
  c.train.seed = c.seed;
  if (const json* d = s.child("data")) read_data(*d, c.data);
  if (const json* t = s.child("train")) read_train(*t, c.train);
  if (const json* m = s.child("model")) read_model(*m, c.train);
  if (const json* h = s.child("hcu")) {
    Section hs(*h, "hcu");
    hs.get("bins", c.train.hist_bins);
    hs.get("sigma", c.train.hist_sigma);
    hs.done();
  }
  if (const json* l = s.child("loss")) {
    Section ls(*l, "loss");
    ls.get("lambda_mi", c.train.weights.lambda_mi);
    ls.get("lambda_ssim", c.train.weights.lambda_ssim);
    ls.done();
  }
  s.get("datasets", c.datasets);
  s.done();
  try {
    c.validate();
  } catch (const ContractError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

json to_json(const RunConfig& c) {
  const auto& t = c.train;
  json j;
  j["seed"] = c.seed;
  j["data"] = {{"label_extent", c.data.label_extent},
               {"speckle_extent", c.data.speckle_extent},
               {"percentile", c.data.percentile},
               {"configs", c.data.configs},
               {"labels", c.data.labels},
               {"label_count", c.data.label_count},
               {"memory_budget", c.data.memory_budget},
               {"split_ratios", {{"train", c.data.ratios.train}, {"val", c.data.ratios.val}, {"test", c.data.ratios.test}}}};
  j["train"] = {{"variant", variant_name(t.variant)},
                {"preset", preset_name(t.preset)},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"max_steps", t.max_steps},
                {"eval_every", t.eval_every},
                {"log_every", t.log_every},
                {"val_records", t.val_records},
                {"reduced_fraction", t.reduced_fraction},
                {"perturbed_per_config", t.perturbed_per_config},
                {"test_eval", t.test_eval},
                {"freeze_discriminator", t.freeze_discriminator},
                {"pix2pix_l1_weight", t.pix2pix_l1_weight},
                {"adam", {{"lr", t.adam.lr}, {"beta1", t.adam.beta1}, {"beta2", t.adam.beta2}, {"eps", t.adam.eps}}}};
  j["model"] = {{"encoder_channels", t.encoder_channels},
                {"decoder_channels", t.decoder_channels},
                {"tfrm_hidden", t.tfrm_hidden},
                {"tfrm_width", t.tfrm_width},
                {"discriminator_channels", t.discriminator_channels}};
  j["hcu"] = {{"bins", t.hist_bins}, {"sigma", t.hist_sigma}};
  j["loss"] = {{"lambda_mi", t.weights.lambda_mi}, {"lambda_ssim", t.weights.lambda_ssim}};
  j["datasets"] = c.datasets;
  return j;
}

json read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config file not found: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str(), nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override '" + assignment + "' has an empty key segment");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

RunConfig resolve_run_config(const fs::path& file, const std::vector<std::string>& overrides) {
  json doc = file.empty() ? json::object() : read_config_file(file);
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_run_config(doc);
}

void write_resolved(const RunConfig& config, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  write_text_file(out_dir / "config.resolved", to_json(config).dump(2) + "\n");
}

LabelSource label_source(const DataSection& data, std::uint64_t seed) {
  LabelSource src;
  src.count = data.label_count;
  if (data.labels == "synthetic") {
    src.kind = "synthetic";
    src.seed = seed;
    if (src.count == 0) throw ConfigError("data: synthetic labels need label_count >= 1");
    return src;
  }
  if (data.labels.rfind("npy:", 0) != 0 || data.labels.size() == 4) {
    throw ConfigError("data: labels must be 'synthetic' or 'npy:<path>[:<key>]', got '" + data.labels + "'");
  }
  src.kind = "npy";
  std::string rest = data.labels.substr(4);
  // An entry name follows the last ':' unless that leaves a bare drive letter.
  const auto colon = rest.rfind(':');
  if (colon != std::string::npos && colon > 1) {
    src.key = rest.substr(colon + 1);
    rest.resize(colon);
  }
  src.path = rest;
  return src;
}

BuildOptions build_options(const RunConfig& config, std::size_t threads) {
  BuildOptions o;
  o.label_extent = config.data.label_extent;
  o.speckle_extent = config.data.speckle_extent;
  o.percentile = config.data.percentile;
  o.base_seed = config.seed;
  o.ratios = config.data.ratios;
  o.threads = threads;
  o.memory_budget = config.data.memory_budget;
  return o;
}

}  // namespace hspk
