#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sys/wait.h>

#include "diffpad/cli.hpp"
#include "diffpad/config.hpp"
#include "diffpad/error.hpp"
#include "diffpad/io.hpp"
#include "support.hpp"

using namespace diffpad;
using namespace diffpad::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kGolden = fs::path(DIFFPAD_TEST_DATA) / "golden";

ErrorCode config_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("accepted: " << text);
  return ErrorCode::kIoError;
}

RunConfig tiny_config(std::uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  c.model.net.base_channels = 8;
  c.model.net.depth = 1;
  c.model.net.time_embed_dim = 16;
  c.model.net.norm_groups = 4;
  c.model.net.image_height = 16;
  c.model.net.image_width = 32;
  c.model.steps = 20;
  c.train.epochs = 1;
  c.train.batch_size = 8;
  c.train.learning_rate = 1e-3;
  c.pipeline.metric = Metric::kMse;
  c.data.synth.n_bonafide = 40;
  c.data.synth.n_attack_per_pai = 4;
  c.data.synth.images_per_subject = 5;
  c.data.train_fraction = 0.5;
  return c;
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + DIFFPAD_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("format and parse round trip") {
  const RunConfig d;
  CHECK(format_config(parse_config(format_config(d))) == format_config(d));

  RunConfig c = tiny_config(42);
  c.jobs = 3;
  c.deterministic = true;
  c.model.kind = "vae";
  c.model.truncation = 7;
  c.pipeline.metric = Metric::kSsim;
  c.pipeline.restarts = 4;
  c.pipeline.features = "trained";
  c.eval.target_apcer = 5.5;
  c.eval.pooled = true;
  c.data.manifest = "some/where.csv";
  c.data.synth.pai_types = {PaiType::kMoire, PaiType::kBlur};
  c.data.synth.noise_sigma = 0.0125;
  c.train.learning_rate = 3.5e-4;
  const std::string text = format_config(c);
  CHECK(format_config(parse_config(text)) == text);
  const RunConfig back = parse_config(text);
  CHECK(back.seed == 42);
  CHECK(back.model.kind == "vae");
  CHECK(back.pipeline.metric == Metric::kSsim);
  CHECK(back.data.synth.pai_types == c.data.synth.pai_types);
  CHECK(back.train.learning_rate == 3.5e-4);
  CHECK(back.synth_config().height == 16);
  CHECK(back.synth_config().seed == back.synth_seed());
}

TEST_CASE("partial files fall back to defaults") {
  const RunConfig c = parse_config("; comment\n[run]\nseed = 5\n\n[eval]\ntarget_apcer = 1\n");
  CHECK(c.seed == 5);
  CHECK(c.eval.target_apcer == 1.0);
  CHECK(c.model.steps == RunConfig{}.model.steps);
  CHECK(parse_config("").seed == 0);
}

TEST_CASE("invalid configs") {
  CHECK(config_error("[run]\nsede = 1\n") == ErrorCode::kInvalidConfig);
  CHECK(config_error("[runn]\nseed = 1\n") == ErrorCode::kInvalidConfig);
  CHECK(config_error("[model]\nsteps = 0\n") == ErrorCode::kInvalidConfig);
  CHECK(config_error("[model]\nsteps = ten\n") == ErrorCode::kInvalidConfig);
  CHECK(config_error("[model]\nkind = gan\n") == ErrorCode::kInvalidConfig);
  CHECK(config_error("[model]\nsteps = 10\ntruncation = 10\n") == ErrorCode::kInvalidConfig);
  CHECK(config_error("[pipeline]\nmetric = psnr\n") == ErrorCode::kInvalidConfig);
  CHECK(config_error("[eval]\ntarget_apcer = 0\n") == ErrorCode::kInvalidConfig);
  CHECK(config_error("[data]\npai_types = blur,glossy\n") == ErrorCode::kInvalidConfig);
  CHECK(config_error("[train]\nbatch_size = -1\n") == ErrorCode::kInvalidConfig);
}

TEST_CASE("digest and seeds") {
  RunConfig a = tiny_config(1);
  RunConfig b = a;
  b.jobs = 8;
  b.deterministic = true;
  CHECK(config_digest(a) == config_digest(b));
  b.seed = 2;
  CHECK(config_digest(a) != config_digest(b));
  CHECK(config_digest(a).size() == 64);

  const std::set<std::uint64_t> seeds = {a.synth_seed(), a.init_seed(), a.train_seed(), a.split_seed(),
                                         a.score_seed()};
  CHECK(seeds.size() == 5);
  CHECK(a.score_seed() == derive_seed(1, 5));

  // The fixture is already canonical, so its digest is its own hash.
  const std::string text = read_file(kGolden / "run.ini");
  CHECK(format_config(load_config(kGolden / "run.ini")) == text);
  CHECK(config_digest(load_config(kGolden / "run.ini")) == sha256_hex(text));
}

}  // TEST_SUITE

TEST_SUITE("cli") {

TEST_CASE("exit codes") {
  auto code = [](ErrorCode c) { return exit_code_for(Error(c, "x")); };
  CHECK(code(ErrorCode::kInvalidConfig) == ExitCode::kConfig);
  CHECK(code(ErrorCode::kInvalidSchedule) == ExitCode::kConfig);
  CHECK(code(ErrorCode::kWrongVariant) == ExitCode::kConfig);
  for (ErrorCode c : {ErrorCode::kIoError, ErrorCode::kDecodeError, ErrorCode::kBadCheckpoint,
                      ErrorCode::kParseError, ErrorCode::kDuplicateId, ErrorCode::kMissingField,
                      ErrorCode::kMissingSubject, ErrorCode::kEmptyDataset, ErrorCode::kImageTooSmall}) {
    CHECK(code(c) == ExitCode::kIo);
  }
  CHECK(code(ErrorCode::kNonFiniteLoss) == ExitCode::kNumerical);
  CHECK(exit_code_for(fs::filesystem_error("x", std::error_code())) == ExitCode::kIo);
  CHECK(exit_code_for(std::runtime_error("x")) == ExitCode::kFailure);
}

TEST_CASE("eval report matches the golden file") {
  set_progress_stream(nullptr);
  TempDir dir("golden");
  const RunConfig cfg = load_config(kGolden / "run.ini");
  const EvalOutputs out = cmd_eval(cfg, {kGolden / "devA.csv", kGolden / "devB.csv"}, dir / "report");
  const json got = json::parse(read_file(out.json_path));
  const json expected = json::parse(read_file(kGolden / "expected_eval.json"));
  CHECK(got == expected);
  if (got != expected) MESSAGE(got.dump(2));
  CHECK(fs::exists(out.text_path));

  const EvalOutputs twice = cmd_eval(cfg, {kGolden / "devB.csv", kGolden / "devB.csv"}, dir / "twice");
  CHECK(twice.report.per_pai[1].dataset == "devB#2");
}

TEST_CASE("commands agree with direct library calls") {
  set_progress_stream(nullptr);
  TempDir dir("cmd");
  const RunConfig cfg = tiny_config(3);
  const fs::path manifest = cmd_synth(cfg, dir / "data");
  CHECK(load_manifest(manifest).size() == 56);
  CHECK(load_manifest(dir / "data/train.csv").size() + load_manifest(dir / "data/test.csv").size() == 56);

  const fs::path ckpt = cmd_train(cfg, dir / "data/train.csv", dir / "m.ckpt");
  const Checkpoint loaded = load_checkpoint(ckpt);
  CHECK(loaded.meta["seeds"]["init"] == cfg.init_seed());
  CHECK(loaded.meta["loss_trace"].size() == 1);

  const fs::path csv = cmd_score(cfg, ckpt, dir / "data/test.csv", dir / "test.csv");
  const DiffusionModel model = diffusion_from_checkpoint(loaded);
  const DiffusionReconstructor rec(model.net, {1, 16, 32}, model.schedule, 5);
  ScoreOptions opt;
  opt.metric = Metric::kMse;
  const BatchScores direct = score_batch(load_manifest(dir / "data/test.csv"), rec, opt, cfg.score_seed());
  const auto from_file = load_scores(csv);
  REQUIRE(from_file.size() == direct.scores.size());
  for (std::size_t i = 0; i < direct.scores.size(); ++i) {
    CHECK(from_file[i].sample_id == direct.scores[i].sample_id);
    CHECK(from_file[i].score == doctest::Approx(direct.scores[i].score).epsilon(1e-8));
  }
  const json meta = load_scores_meta(csv);
  CHECK(meta["truncation"] == 5);
  CHECK(meta["checkpoint_id"] == sha256_hex(read_file(ckpt)).substr(0, 16));

  const EvalOutputs out = cmd_eval(cfg, {csv}, dir / "report");
  EvalReport manual;
  evaluate_scores(manual, "test", from_file);
  REQUIRE(out.report.per_pai.size() == manual.per_pai.size());
  for (std::size_t i = 0; i < manual.per_pai.size(); ++i) {
    CHECK(out.report.per_pai[i].threshold == manual.per_pai[i].threshold);
    CHECK(out.report.per_pai[i].bpcer == manual.per_pai[i].bpcer);
  }

  CHECK_NOTHROW(LoadedModel::load(cfg, ckpt));
  RunConfig deep = cfg;
  deep.model.truncation = 20;
  CHECK_THROWS_AS(LoadedModel::load(deep, ckpt), Error);
}

TEST_CASE("command line tool") {
  TempDir dir("tool");
  const fs::path log = dir / "log.txt";
  CHECK(run_cli("--help", log) == 0);
  CHECK(read_file(log).find("synth") != std::string::npos);
  CHECK(run_cli("--bogus", log) == 2);
  CHECK(run_cli("--config " + (dir / "absent.ini").string() + " synth --out x", log) == 2);
  {
    std::ofstream(dir / "bad.ini") << "[model]\nwidth = 3\n";
  }
  CHECK(run_cli("--config " + (dir / "bad.ini").string() + " synth --out " + (dir / "x").string(), log) == 2);
  CHECK(run_cli("score --checkpoint " + (dir / "none.ckpt").string() + " --manifest m.csv --out s.csv", log) == 3);
  CHECK(run_cli("eval " + (dir / "none.csv").string() + " --out " + (dir / "r").string(), log) == 3);

  {
    std::ofstream(dir / "run.ini") << format_config(tiny_config(4));
  }
  const std::string c = "--config " + (dir / "run.ini").string() + " ";
  const std::string d = dir.path().string();
  REQUIRE(run_cli(c + "synth --out " + d + "/data", log) == 0);
  REQUIRE(run_cli(c + "train --manifest " + d + "/data/train.csv --out " + d + "/m.ckpt", log) == 0);
  REQUIRE(run_cli(c + "score --checkpoint " + d + "/m.ckpt --manifest " + d + "/data/test.csv --out " + d +
                      "/test.csv",
                  log) == 0);
  REQUIRE(run_cli(c + "eval " + d + "/test.csv --out " + d + "/report", log) == 0);
  const json report = json::parse(read_file(dir / "report.json"));
  std::multiset<std::string> pais;
  for (const auto& r : report["per_pai"]) pais.insert(r["pai"].get<std::string>());
  CHECK(pais == std::multiset<std::string>{"blur", "flatten", "halftone", "moire"});
  const std::string text = read_file(dir / "report.txt");
  for (const char* p : {"blur", "flatten", "halftone", "moire"}) {
    const std::string cell = std::string("| ") + p + " ";
    CHECK(text.find(cell) != std::string::npos);
    CHECK(text.find(cell) == text.rfind(cell));
  }
  CHECK(run_cli(c + "fid --checkpoint " + d + "/m.ckpt --manifest " + d + "/data/test.csv", log) == 0);
  CHECK(read_file(log).find("bonafide") != std::string::npos);
  CHECK(read_file(log).find("attack ") != std::string::npos);
  CHECK(run_cli(c + "reconstruct --checkpoint " + d + "/m.ckpt --in " + d + "/data/images/bf_00000.png --out " +
                    d + "/r.png",
                log) == 0);
  CHECK(load_image(dir / "r.png").shape() == Shape{1, 16, 32});

  // train falls back to [data] manifest, resolved next to the config file.
  RunConfig with_manifest = tiny_config(4);
  with_manifest.data.manifest = "data/train.csv";
  {
    std::ofstream(dir / "with_manifest.ini") << format_config(with_manifest);
  }
  const std::string cm = "--config " + (dir / "with_manifest.ini").string() + " ";
  CHECK(run_cli(cm + "train --out " + d + "/m2.ckpt", log) == 0);
  CHECK(load_checkpoint(dir / "m2.ckpt").params == load_checkpoint(dir / "m.ckpt").params);
  CHECK(run_cli(c + "train --out " + d + "/m3.ckpt", log) == 2);
}

}  // TEST_SUITE
