#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dittryon/config.hpp"
#include "dittryon/metrics.hpp"
#include "dittryon/synth_data.hpp"
#include "dittryon/tryon_net.hpp"

namespace dittryon {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitNumeric = 3,
  kExitCheckpoint = 4,
  kExitMissingId = 5,
  kExitIdMismatch = 6,
};

class MissingIdError : public Error {
 public:
  explicit MissingIdError(std::vector<std::string> ids);
  std::vector<std::string> ids;
};

class IdMismatchError : public Error {
 public:
  using Error::Error;
};

int exit_code_for(const std::exception& e);

std::filesystem::path dataset_root(const RunConfig& cfg, const std::filesystem::path& out);

FrozenModules make_frozen(const RunConfig& cfg);

/// Caption used for a sample under the run's caption-detail setting.
TokenIds caption_tokens(const SampleRecord& r, const RunConfig& cfg);

/// Text table and garment stack (pre-fit unless garmentnet.mode = random),
/// the try-on net initialized from it, adapter, frozen encoder export and
/// run metadata.
ParamStore initial_params(const RunConfig& cfg, const Dataset& ds, const FrozenModules& frozen);

std::vector<TrainExample> make_examples(const std::vector<SampleRecord>& records, const ParamStore& params,
                                        const FrozenModules& frozen, const RunConfig& cfg);

/// Mean l_cfm over `batches` fixed batches, without updating weights.
double evaluate_cfm(const ParamStore& params, const std::vector<TrainExample>& data, const RunConfig& cfg,
                    std::size_t batches, std::uint64_t seed);

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  std::vector<LossBreakdown> history;
};

/// Fine-tunes the try-on net and adapter in place. Writes a JSON line per step
/// to `log` when given, and the checkpoint every checkpoint_every steps when
/// `checkpoint` is non-empty. NaN aborts with NonFiniteStep.
std::vector<LossBreakdown> run_training(const RunConfig& cfg, ParamStore& params,
                                        const std::vector<TrainExample>& data, std::ostream* log,
                                        const std::filesystem::path& checkpoint);

/// Verifies the checkpoint's recorded config hash against `cfg`.
ParamStore load_run_checkpoint(const RunConfig& cfg, const std::filesystem::path& path);

struct DatasetResult {
  std::filesystem::path root;
  std::string hash;
};

DatasetResult cmd_dataset(const RunConfig& cfg, const std::filesystem::path& out);
TrainResult cmd_train(const RunConfig& cfg, const std::filesystem::path& out);

/// Generates one image per id of `split` (all ids when `ids` is empty) into
/// <out>/samples/<split>/<id>.ppm.
std::vector<std::filesystem::path> cmd_sample(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                                              const std::vector<std::string>& ids, const std::filesystem::path& out,
                                              const std::string& split = "test_paired");

/// Compares <generated>/<id>.ppm against <reference>/<id>_person.ppm. Appends
/// the report to <out>/eval/<setting>.jsonl; with `csv`, also writes per-pair
/// scores to <out>/eval/<setting>_pairs.csv.
MetricReport cmd_eval(const RunConfig& cfg, const std::filesystem::path& generated,
                      const std::filesystem::path& reference, const std::string& setting,
                      const std::filesystem::path& out, bool csv = false);

struct PairedStats {
  double mean = 0.0;
  double se = 0.0;
};
PairedStats paired_stats(const std::vector<double>& values);

struct AblationRow {
  std::string variant;
  std::vector<double> glyph;  // per evaluation sample
  std::vector<double> ssim;
};

struct AblationResult {
  std::vector<AblationRow> rows;  // rows[0] is the full model
  bool glyph_pass = false;
  bool ssim_pass = false;
  std::filesystem::path table;
};

/// Ordering rule: mean(full - variant) >= -SE over the paired samples.
bool ordering_holds(const std::vector<double>& full, const std::vector<double>& variant);

/// The ablation flag set per variant name, in table order.
std::vector<std::pair<std::string, AblationFlags>> ablation_variants();

AblationResult cmd_ablate(const RunConfig& cfg, const std::filesystem::path& out);

/// Records a command entry in <out>/manifest.json (atomic rewrite).
void update_manifest(const std::filesystem::path& out, const std::string& command, nlohmann::json entry);

/// Training log line minus wall_time, for determinism comparisons.
std::string strip_wall_time(const std::string& log_text);

}  // namespace dittryon
