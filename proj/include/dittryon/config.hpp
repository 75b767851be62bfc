#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "dittryon/model_config.hpp"
#include "dittryon/optim.hpp"
#include "dittryon/tryon_net.hpp"

namespace dittryon {

struct AblationFlags {
  bool no_garment_net = false;
  bool no_adapter = false;
  bool no_semantic_encoder = false;
  bool no_pres_loss = false;
  bool brief_captions = false;

  Variant variant() const { return Variant{!no_garment_net, !no_adapter, no_semantic_encoder}; }
};

/// Every setting of a run. Parsed from an INI file with sections
/// [run] [data] [model] [schedule] [garmentnet] [train] [sample] [ablation];
/// unknown sections or keys are errors.
struct RunConfig {
  std::uint64_t seed = 7;

  std::size_t data_n = 320;
  double train_split = 0.8;
  std::string data_root;  // empty: <out>/dataset

  ModelConfig model;
  std::uint64_t encoder_seed = 99;
  std::uint64_t perceptual_seed = 4242;

  std::size_t schedule_steps = 1000;
  double beta_min = 1e-4;
  double beta_max = 0.02;

  bool garment_prefit = true;
  std::size_t prefit_steps = 300;
  double prefit_lr = 2e-3;
  std::size_t prefit_batch = 8;

  std::size_t train_steps = 2000;
  std::size_t batch = 8;
  OptimizerConfig optimizer;
  double lambda_pres = 0.1;
  std::size_t checkpoint_every = 500;

  std::size_t sample_steps = 20;
  std::size_t eval_count = 32;

  AblationFlags ablation;

  /// Throws ConfigError on inconsistent values.
  void validate() const;

  /// Canonical "section.key=value" lines, sorted.
  std::string canonical() const;
  /// SHA-256 of canonical().
  std::string hash() const;
  /// Hash of everything that shapes a checkpoint (all but [sample]).
  std::string model_hash() const;
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace dittryon
