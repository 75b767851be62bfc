#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dittryon/pipeline.hpp"

using namespace dittryon;

int main(int argc, char** argv) {
  CLI::App app{"Synthetic virtual try-on with a flow-matching diffusion transformer"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "INI run config")->required();
    sub->add_option("--seed", seed, "Override run.seed");
    sub->add_option("--out", out, "Run directory");
  };

  auto* dataset = app.add_subcommand("dataset", "Generate the synthetic dataset");
  common(dataset);
  auto* train = app.add_subcommand("train", "Pre-fit the garment net, then fine-tune the try-on net and adapter");
  common(train);
  auto* sample = app.add_subcommand("sample", "Generate try-on images from a checkpoint");
  common(sample);
  std::string checkpoint, split = "test_paired";
  std::vector<std::string> ids;
  sample->add_option("--checkpoint", checkpoint, "Checkpoint (default <out>/checkpoint.tvtw)");
  sample->add_option("--ids", ids, "Sample ids (default: whole split)")->delimiter(',');
  sample->add_option("--split", split, "train, test_paired or test_unpaired");
  auto* eval = app.add_subcommand("eval", "Score generated images against references");
  common(eval);
  std::string generated, reference, setting = "paired";
  bool csv = false;
  eval->add_option("--generated", generated, "Directory of <id>.ppm")->required();
  eval->add_option("--reference", reference, "Dataset split directory with <id>_person.ppm")->required();
  eval->add_option("--setting", setting, "paired or unpaired");
  eval->add_flag("--csv", csv, "Also write per-pair scores as CSV");
  auto* ablate = app.add_subcommand("ablate", "Train and compare the full model against each ablation");
  common(ablate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    RunConfig cfg = load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (dataset->parsed()) {
      const DatasetResult r = cmd_dataset(cfg, out);
      std::cout << "dataset " << r.root.string() << " sha256 " << r.hash << "\n";
    } else if (train->parsed()) {
      const TrainResult r = cmd_train(cfg, out);
      if (!r.history.empty()) {
        std::cout << "steps " << r.history.size() << " l_cfm " << r.history.front().l_cfm << " -> "
                  << r.history.back().l_cfm << "\n";
      }
      std::cout << "checkpoint " << r.checkpoint.string() << "\n";
    } else if (sample->parsed()) {
      const auto ckpt = checkpoint.empty() ? std::filesystem::path(out) / "checkpoint.tvtw" : std::filesystem::path(checkpoint);
      const auto files = cmd_sample(cfg, ckpt, ids, out, split);
      std::cout << "wrote " << files.size() << " images\n";
    } else if (eval->parsed()) {
      const MetricReport r = cmd_eval(cfg, generated, reference, setting, out, csv);
      std::cout << r.to_json().dump() << "\n";
    } else if (ablate->parsed()) {
      const AblationResult r = cmd_ablate(cfg, out);
      std::cout << read_file(r.table);
      std::cout << "glyph ordering " << (r.glyph_pass ? "PASS" : "FAIL") << "\n";
      std::cout << "ssim ordering " << (r.ssim_pass ? "PASS" : "FAIL") << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitOk;
}
