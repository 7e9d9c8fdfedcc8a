#include <CLI11.hpp>
#include <iostream>
#include <optional>

#include "diffpad/cli.hpp"
#include "diffpad/config.hpp"
#include "diffpad/error.hpp"

namespace fs = std::filesystem;
using namespace diffpad;

int main(int argc, char** argv) {
  CLI::App app{"Reconstruction-based presentation attack detection with a bona fide diffusion prior."};
  app.require_subcommand(0, 1);
  app.footer("Config defaults (INI):\n\n" + format_config(RunConfig{}));

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  bool deterministic = false;
  bool dump_config = false;
  app.add_option("--config", config_path, "INI config file");
  app.add_option("--seed", seed, "Run seed (overrides [run] seed)");
  app.add_option("--jobs", jobs, "Scoring worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--deterministic", deterministic, "Single-threaded, bit-exact execution");
  app.add_flag("--dump-config", dump_config, "Print the effective config and exit");

  std::string out, manifest, checkpoint, image_in, metric;
  std::optional<int> restarts;
  std::vector<std::string> scores;

  auto* synth = app.add_subcommand("synth", "Generate the synthetic ridge dataset");
  synth->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train the model named by [model] kind on bona fide images");
  train->add_option("--manifest", manifest, "Training manifest (default: [data] manifest)");
  train->add_option("--out", out, "Checkpoint path")->required();

  auto* score = app.add_subcommand("score", "Score every manifest entry");
  score->add_option("--checkpoint", checkpoint)->required();
  score->add_option("--manifest", manifest)->required();
  score->add_option("--out", out, "Scores CSV")->required();
  score->add_option("--metric", metric, "mse, ssim or lpips (overrides [pipeline] metric)");
  score->add_option("--restarts", restarts, "Average over this many restoration seeds")
      ->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("eval", "BPCER at the target APCER per PAI and pooled");
  eval->add_option("scores", scores, "Scores CSV files, one dataset each")->required();
  eval->add_option("--out", out, "Report prefix (.txt and .json are appended)")->required();

  auto* fid = app.add_subcommand("fid", "FID of originals vs reconstructions per image group");
  fid->add_option("--checkpoint", checkpoint)->required();
  fid->add_option("--manifest", manifest)->required();
  fid->add_option("--out", out, "Optional JSON output");

  auto* recon = app.add_subcommand("reconstruct", "Reconstruct a single image");
  recon->add_option("--checkpoint", checkpoint)->required();
  recon->add_option("--in", image_in)->required();
  recon->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (jobs) cfg.jobs = *jobs;
    if (deterministic) cfg.deterministic = true;
    if (!metric.empty()) cfg.pipeline.metric = parse_metric(metric);
    if (restarts) cfg.pipeline.restarts = *restarts;
    cfg.validate();

    if (dump_config) {
      std::cout << format_config(cfg);
      return 0;
    }
    if (app.got_subcommand(synth)) {
      std::cout << cmd_synth(cfg, out).string() << "\n";
    } else if (app.got_subcommand(train)) {
      if (manifest.empty()) {
        if (cfg.data.manifest.empty()) throw Error(ErrorCode::kInvalidConfig, "train needs --manifest or [data] manifest");
        fs::path p = cfg.data.manifest;
        if (p.is_relative() && !config_path.empty()) p = fs::path(config_path).parent_path() / p;
        manifest = p.string();
      }
      std::cout << cmd_train(cfg, manifest, out).string() << "\n";
    } else if (app.got_subcommand(score)) {
      std::cout << cmd_score(cfg, checkpoint, manifest, out).string() << "\n";
    } else if (app.got_subcommand(eval)) {
      std::vector<fs::path> paths(scores.begin(), scores.end());
      const EvalOutputs r = cmd_eval(cfg, paths, out);
      std::cout << format_report_text(r.report);
    } else if (app.got_subcommand(fid)) {
      cmd_fid(cfg, checkpoint, manifest, out);
    } else if (app.got_subcommand(recon)) {
      std::cout << cmd_reconstruct(cfg, checkpoint, image_in, out).string() << "\n";
    } else {
      std::cout << app.help();
      return static_cast<int>(ExitCode::kConfig);
    }
  } catch (const std::exception& e) {
    std::cerr << "diffpad: " << e.what() << "\n";
    return static_cast<int>(exit_code_for(e));
  }
  return 0;
}
