#include "vlur/config.hpp"

#include <fstream>

namespace vlur {

using nlohmann::json;

namespace {

// {"a":{"b":1}} -> {"a.b":1}; arrays stay whole values.
void flatten_into(const json& j, const std::string& prefix, json& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it)
      flatten_into(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
  } else {
    out[prefix] = j;
  }
}

}  // namespace

const json& Config::defaults() {
  static const json d = [] {
    json j;
    j["classifier.backend"] = "stub";
    j["classifier.temperature"] = 100.0;
    j["classifier.adapter_lr"] = 1e-3;
    j["classifier.adapter_epochs"] = 60;
    j["classifier.pretrained_path"] = "";
    j["restorer.base_channels"] = 16;
    j["restorer.blocks"] = json::array({2, 2, 2, 2});
    j["restorer.heads"] = json::array({1, 2, 4, 8});
    j["restorer.ffn_expansion"] = 2.0;
    j["restorer.text_guidance"] = "on";
    j["loss.gamma1"] = 0.6;
    j["loss.gamma2"] = 0.3;
    j["loss.gamma3"] = 0.1;
    j["loss.lambda1"] = 1.0;
    j["loss.lambda2"] = 1.0;
    j["loss.smooth_l1_beta"] = 1.0;
    j["loss.msssim_scales"] = 3;  // desk-scale variant; 5 once crops reach 176
    j["loss.msssim_window"] = 11;
    j["loss.vgg_taps"] = json::array({2, 4, 7});
    j["loss.vgg_weights"] = "random";  // "pretrained" needs loss.vgg_weights_path
    j["loss.vgg_weights_path"] = "";
    j["loss.negatives"] = 2;
    j["train.epochs"] = 30;
    j["train.batch_size"] = 2;
    j["train.lr"] = 1e-3;
    j["train.lr_min"] = 1e-6;
    j["train.warmup_steps"] = 0;   // optional linear ramp before the cosine decay
    j["train.clip_grad_norm"] = 0.0;  // optional global-norm clip, 0 disables
    j["train.crop"] = 64;
    j["train.seed"] = 2024;
    j["train.max_steps"] = 0;  // 0 = no cap
    j["train.checkpoint_every_epochs"] = 5;
    j["train.deterministic"] = true;
    j["eval.quantize"] = false;
    j["eval.per_type_mean"] = false;
    return j;
  }();
  return d;
}

Config::Config() : file_(json::object()), overrides_(json::object()) {}

void Config::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("invalid config JSON in " + path + ": " + e.what());
  }
  json flat = json::object();
  flatten_into(j, "", flat);
  for (auto it = flat.begin(); it != flat.end(); ++it) {
    if (!defaults().contains(it.key()))
      throw ConfigError("unknown config key in " + path + ": " + it.key());
    file_[it.key()] = it.value();
  }
}

void Config::set_override(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got: " + kv);
  const std::string key = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;  // plain string
  }
  set(key, value);
}

void Config::set(const std::string& key, const json& value) {
  if (!defaults().contains(key)) throw ConfigError("unknown config key: " + key);
  overrides_[key] = value;
}

const json* Config::find(const std::string& key) const {
  if (overrides_.contains(key)) return &overrides_.at(key);
  if (file_.contains(key)) return &file_.at(key);
  if (defaults().contains(key)) return &defaults().at(key);
  return nullptr;
}

bool Config::has(const std::string& key) const { return find(key) != nullptr; }

double Config::get_double(const std::string& key) const {
  const json* v = find(key);
  if (!v) throw ConfigError("unknown config key: " + key);
  if (!v->is_number()) throw ConfigError("config key " + key + " is not a number");
  return v->get<double>();
}

int64_t Config::get_int(const std::string& key) const {
  const json* v = find(key);
  if (!v) throw ConfigError("unknown config key: " + key);
  if (!v->is_number()) throw ConfigError("config key " + key + " is not a number");
  return v->get<int64_t>();
}

bool Config::get_bool(const std::string& key) const {
  const json* v = find(key);
  if (!v) throw ConfigError("unknown config key: " + key);
  if (v->is_boolean()) return v->get<bool>();
  if (v->is_string()) {
    const std::string s = v->get<std::string>();
    if (s == "on" || s == "true" || s == "1") return true;
    if (s == "off" || s == "false" || s == "0") return false;
  }
  throw ConfigError("config key " + key + " is not a boolean");
}

std::string Config::get_string(const std::string& key) const {
  const json* v = find(key);
  if (!v) throw ConfigError("unknown config key: " + key);
  if (!v->is_string()) throw ConfigError("config key " + key + " is not a string");
  return v->get<std::string>();
}

std::vector<int64_t> Config::get_int_list(const std::string& key) const {
  const json* v = find(key);
  if (!v) throw ConfigError("unknown config key: " + key);
  if (!v->is_array()) throw ConfigError("config key " + key + " is not a list");
  return v->get<std::vector<int64_t>>();
}

json Config::effective() const {
  json out = defaults();
  for (auto it = file_.begin(); it != file_.end(); ++it) out[it.key()] = it.value();
  for (auto it = overrides_.begin(); it != overrides_.end(); ++it) out[it.key()] = it.value();
  return out;
}

restorer::RestorerConfig Config::restorer_config() const {
  restorer::RestorerConfig cfg;
  cfg.base_channels = get_int("restorer.base_channels");
  const auto blocks = get_int_list("restorer.blocks");
  const auto heads = get_int_list("restorer.heads");
  if (blocks.size() != 4 || heads.size() != 4)
    throw ConfigError("restorer.blocks and restorer.heads must have 4 entries");
  for (int i = 0; i < 4; ++i) {
    cfg.blocks_per_level[static_cast<size_t>(i)] = static_cast<int>(blocks[static_cast<size_t>(i)]);
    cfg.heads_per_level[static_cast<size_t>(i)] = static_cast<int>(heads[static_cast<size_t>(i)]);
  }
  cfg.ffn_expansion = get_double("restorer.ffn_expansion");
  cfg.text_guidance = get_bool("restorer.text_guidance");
  cfg.validate();
  return cfg;
}

losses::LossWeights Config::loss_weights() const {
  losses::LossWeights w;
  w.gamma1 = get_double("loss.gamma1");
  w.gamma2 = get_double("loss.gamma2");
  w.gamma3 = get_double("loss.gamma3");
  w.lambda1 = get_double("loss.lambda1");
  w.lambda2 = get_double("loss.lambda2");
  w.smooth_l1_beta = get_double("loss.smooth_l1_beta");
  w.msssim.scales = static_cast<int>(get_int("loss.msssim_scales"));
  w.msssim.window = static_cast<int>(get_int("loss.msssim_window"));
  w.validate();
  return w;
}

}  // namespace vlur
