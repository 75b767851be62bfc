#include "dittryon/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "dittryon/params.hpp"

namespace dittryon {

namespace {

struct Key {
  std::string section, name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint64_t parse_u64(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(key + ": '" + s + "' is not an unsigned integer");
  return v;
}

double parse_double(const std::string& key, const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + s + "' is not a number");
  }
  if (used != s.size() || !std::isfinite(v)) throw ConfigError(key + ": '" + s + "' is not a finite number");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError(key + ": '" + s + "' is not a boolean");
}

template <typename T>
Key size_key(std::string sec, std::string name, T RunConfig::*member) {
  const std::string full = sec + "." + name;
  return Key{sec, name, [=](RunConfig& c, const std::string& s) { c.*member = static_cast<T>(parse_u64(full, s)); },
             [=](const RunConfig& c) { return std::to_string(c.*member); }};
}

Key model_size(std::string name, std::size_t ModelConfig::*member) {
  const std::string full = "model." + name;
  return Key{"model", name, [=](RunConfig& c, const std::string& s) { c.model.*member = parse_u64(full, s); },
             [=](const RunConfig& c) { return std::to_string(c.model.*member); }};
}

Key model_double(std::string name, double ModelConfig::*member) {
  const std::string full = "model." + name;
  return Key{"model", name, [=](RunConfig& c, const std::string& s) { c.model.*member = parse_double(full, s); },
             [=](const RunConfig& c) { return fmt(c.model.*member); }};
}

Key double_key(std::string sec, std::string name, double RunConfig::*member) {
  const std::string full = sec + "." + name;
  return Key{sec, name, [=](RunConfig& c, const std::string& s) { c.*member = parse_double(full, s); },
             [=](const RunConfig& c) { return fmt(c.*member); }};
}

Key opt_double(std::string name, double OptimizerConfig::*member) {
  const std::string full = "train." + name;
  return Key{"train", name, [=](RunConfig& c, const std::string& s) { c.optimizer.*member = parse_double(full, s); },
             [=](const RunConfig& c) { return fmt(c.optimizer.*member); }};
}

Key flag(std::string name, bool AblationFlags::*member) {
  const std::string full = "ablation." + name;
  return Key{"ablation", name, [=](RunConfig& c, const std::string& s) { c.ablation.*member = parse_bool(full, s); },
             [=](const RunConfig& c) { return std::string(c.ablation.*member ? "true" : "false"); }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> k = {
      size_key("run", "seed", &RunConfig::seed),
      size_key("data", "n", &RunConfig::data_n),
      double_key("data", "train_split", &RunConfig::train_split),
      Key{"data", "root", [](RunConfig& c, const std::string& s) { c.data_root = s; },
          [](const RunConfig& c) { return c.data_root; }},
      model_size("image_size", &ModelConfig::image_size),
      model_size("patch_size", &ModelConfig::patch_size),
      model_size("width", &ModelConfig::width),
      model_size("heads", &ModelConfig::heads),
      model_size("depth", &ModelConfig::depth),
      model_size("ff_mult", &ModelConfig::ff_mult),
      model_size("vocab_size", &ModelConfig::vocab_size),
      model_size("max_text_len", &ModelConfig::max_text_len),
      model_size("sem_dim", &ModelConfig::sem_dim),
      model_double("adapter_lambda", &ModelConfig::adapter_lambda),
      model_double("time_scale", &ModelConfig::time_scale),
      model_double("ln_eps", &ModelConfig::ln_eps),
      Key{"model", "codec_seed",
          [](RunConfig& c, const std::string& s) { c.model.codec_seed = parse_u64("model.codec_seed", s); },
          [](const RunConfig& c) { return std::to_string(c.model.codec_seed); }},
      size_key("model", "encoder_seed", &RunConfig::encoder_seed),
      size_key("model", "perceptual_seed", &RunConfig::perceptual_seed),
      size_key("schedule", "steps", &RunConfig::schedule_steps),
      double_key("schedule", "beta_min", &RunConfig::beta_min),
      double_key("schedule", "beta_max", &RunConfig::beta_max),
      Key{"garmentnet", "mode",
          [](RunConfig& c, const std::string& s) {
            if (s != "prefit" && s != "random") throw ConfigError("garmentnet.mode must be prefit or random");
            c.garment_prefit = s == "prefit";
          },
          [](const RunConfig& c) { return std::string(c.garment_prefit ? "prefit" : "random"); }},
      size_key("garmentnet", "prefit_steps", &RunConfig::prefit_steps),
      double_key("garmentnet", "prefit_lr", &RunConfig::prefit_lr),
      size_key("garmentnet", "prefit_batch", &RunConfig::prefit_batch),
      size_key("train", "steps", &RunConfig::train_steps),
      size_key("train", "batch", &RunConfig::batch),
      Key{"train", "optimizer",
          [](RunConfig& c, const std::string& s) {
            if (s == "adam") {
              c.optimizer.kind = OptimizerKind::adam;
            } else if (s == "sgd") {
              c.optimizer.kind = OptimizerKind::sgd_momentum;
            } else {
              throw ConfigError("train.optimizer must be adam or sgd");
            }
          },
          [](const RunConfig& c) { return std::string(c.optimizer.kind == OptimizerKind::adam ? "adam" : "sgd"); }},
      opt_double("lr", &OptimizerConfig::lr),
      opt_double("beta1", &OptimizerConfig::beta1),
      opt_double("beta2", &OptimizerConfig::beta2),
      opt_double("eps", &OptimizerConfig::eps),
      opt_double("momentum", &OptimizerConfig::momentum),
      opt_double("clip_norm", &OptimizerConfig::clip_norm),
      double_key("train", "lambda_pres", &RunConfig::lambda_pres),
      size_key("train", "checkpoint_every", &RunConfig::checkpoint_every),
      size_key("sample", "steps", &RunConfig::sample_steps),
      size_key("sample", "eval_count", &RunConfig::eval_count),
      flag("no_garment_net", &AblationFlags::no_garment_net),
      flag("no_adapter", &AblationFlags::no_adapter),
      flag("no_semantic_encoder", &AblationFlags::no_semantic_encoder),
      flag("no_pres_loss", &AblationFlags::no_pres_loss),
      flag("brief_captions", &AblationFlags::brief_captions),
  };
  return k;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (model.image_size < 16) throw ConfigError("model.image_size must be at least 16");
  if (data_n < 4) throw ConfigError("data.n must be at least 4");
  if (!(train_split > 0.0 && train_split < 1.0)) throw ConfigError("data.train_split must lie in (0, 1)");
  if (schedule_steps == 0 || !(beta_min > 0.0) || beta_min > beta_max || !(beta_max < 1.0)) {
    throw ConfigError("schedule needs steps >= 1 and 0 < beta_min <= beta_max < 1");
  }
  if (batch == 0 || prefit_batch == 0) throw ConfigError("batch sizes must be positive");
  if (lambda_pres < 0.0) throw ConfigError("train.lambda_pres must be >= 0");
  if (sample_steps == 0) throw ConfigError("sample.steps must be at least 1");
  Optimizer check(optimizer);
  (void)check;
}

std::string RunConfig::canonical() const {
  std::vector<std::string> lines;
  for (const Key& k : keys()) lines.push_back(k.section + "." + k.name + "=" + k.get(*this));
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

std::string RunConfig::hash() const { return sha256_hex(canonical()); }

std::string RunConfig::model_hash() const {
  std::string out;
  std::istringstream in(canonical());
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("sample.", 0) == 0 || line.rfind("data.root=", 0) == 0) continue;
    out += line + "\n";
  }
  return sha256_hex(out);
}

RunConfig parse_config_text(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  RunConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("key '" + section + "' must live inside a section");
    for (const auto& [name, value] : body) {
      auto it = std::find_if(keys().begin(), keys().end(),
                             [&](const Key& k) { return k.section == section && k.name == name; });
      if (it == keys().end()) throw ConfigError("unknown config key " + section + "." + name);
      it->set(cfg, value.get_value<std::string>());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file " + path.string() + " does not exist");
  return parse_config_text(read_file(path));
}

}  // namespace dittryon
