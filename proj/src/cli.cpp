#include "diffpad/cli.hpp"

#include <cstdio>
#include <iostream>

#include "diffpad/autoencoder.hpp"
#include "diffpad/error.hpp"
#include "diffpad/io.hpp"
#include "diffpad/manifest.hpp"
#include "diffpad/synth.hpp"
#include "diffpad/train.hpp"

namespace diffpad {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::ostream* g_progress = &std::cerr;

void progress(const std::string& line) {
  if (g_progress) *g_progress << line << std::endl;
}

int effective_jobs(const RunConfig& cfg) { return cfg.deterministic ? 1 : cfg.jobs; }

Image load_for_model(const fs::path& path, const Shape& shape) {
  Image img = load_image(path);
  if (img.channels() != shape.channels) {
    throw Error(ErrorCode::kShapeMismatch, path.string() + ": " + std::to_string(img.channels()) +
                                               " channels, model expects " +
                                               std::to_string(shape.channels));
  }
  if (img.height() != shape.height || img.width() != shape.width) {
    img = extract_roi(img, shape.height, shape.width);
  }
  return img;
}

Shape model_shape(const RunConfig& cfg) {
  const int h = cfg.pipeline.roi_height > 0 ? cfg.pipeline.roi_height : cfg.model.net.image_height;
  const int w = cfg.pipeline.roi_width > 0 ? cfg.pipeline.roi_width : cfg.model.net.image_width;
  if (h != cfg.model.net.image_height || w != cfg.model.net.image_width) {
    throw Error(ErrorCode::kInvalidConfig, "pipeline ROI must equal the model image size");
  }
  return {cfg.model.net.in_channels, h, w};
}

}  // namespace

ExitCode exit_code_for(const std::exception& e) {
  const auto* err = dynamic_cast<const Error*>(&e);
  if (!err) return dynamic_cast<const fs::filesystem_error*>(&e) ? ExitCode::kIo : ExitCode::kFailure;
  switch (err->code()) {
    case ErrorCode::kInvalidConfig:
    case ErrorCode::kInvalidSchedule:
    case ErrorCode::kWrongVariant:
      return ExitCode::kConfig;
    case ErrorCode::kIoError:
    case ErrorCode::kDecodeError:
    case ErrorCode::kBadCheckpoint:
    case ErrorCode::kParseError:
    case ErrorCode::kDuplicateId:
    case ErrorCode::kMissingField:
    case ErrorCode::kMissingSubject:
    case ErrorCode::kEmptyDataset:
    case ErrorCode::kImageTooSmall:
      return ExitCode::kIo;
    case ErrorCode::kNonFiniteLoss:
      return ExitCode::kNumerical;
    default:
      return ExitCode::kFailure;
  }
}

void set_progress_stream(std::ostream* out) { g_progress = out; }

json artifact_stamp(const RunConfig& cfg) {
  return {{"tool_version", std::string(kToolVersion)},
          {"config_digest", config_digest(cfg)},
          {"seeds",
           {{"run", cfg.seed},
            {"synth", cfg.synth_seed()},
            {"init", cfg.init_seed()},
            {"train", cfg.train_seed()},
            {"split", cfg.split_seed()},
            {"score", cfg.score_seed()}}}};
}

std::unique_ptr<LoadedModel> LoadedModel::load(const RunConfig& cfg, const fs::path& path) {
  std::unique_ptr<LoadedModel> m(new LoadedModel());
  const std::string bytes = read_file(path);
  m->ckpt_ = decode_checkpoint(bytes);
  m->id_ = sha256_hex(bytes).substr(0, 16);
  const std::string& kind = m->ckpt_.kind;
  if (kind == "diffusion") {
    m->diffusion_.emplace(diffusion_from_checkpoint(m->ckpt_));
    const DiffusionModel& d = *m->diffusion_;
    m->truncation_ = cfg.model.effective_truncation();
    if (m->truncation_ >= d.schedule.steps()) {
      throw Error(ErrorCode::kInvalidConfig, "truncation " + std::to_string(m->truncation_) +
                                                 " must be below the checkpoint's T = " +
                                                 std::to_string(d.schedule.steps()));
    }
    const NetConfig& n = d.net.config();
    m->rec_ = std::make_unique<DiffusionReconstructor>(
        d.net, Shape{n.in_channels, n.image_height, n.image_width}, d.schedule, m->truncation_);
  } else if (kind == "cae" || kind == "vae") {
    m->ae_.emplace(autoencoder_from_checkpoint(m->ckpt_));
    m->rec_ = std::make_unique<AutoencoderReconstructor>(*m->ae_);
  } else {
    throw Error(ErrorCode::kBadCheckpoint, path.string() + ": cannot score with a '" + kind + "' checkpoint");
  }
  return m;
}

FeatureExtractor pipeline_features(const RunConfig& cfg, const Checkpoint* ckpt) {
  const std::string& f = cfg.pipeline.features;
  if (f == "fixed_random") {
    return build_feature_extractor(FeatureSource::fixed_random(cfg.pipeline.feature_seed,
                                                               cfg.model.net.in_channels));
  }
  if (f == "trained") {
    if (!ckpt || ckpt->kind != "diffusion") {
      throw Error(ErrorCode::kInvalidConfig, "features = trained needs a diffusion checkpoint");
    }
    return feature_extractor_from_diffusion(*ckpt);
  }
  return build_feature_extractor(FeatureSource::trained(f));
}

fs::path cmd_synth(const RunConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const SynthConfig syn = cfg.synth_config();
  progress("synth: " + std::to_string(syn.n_bonafide) + " bona fide, " +
           std::to_string(syn.n_attack_per_pai) + " attacks per PAI -> " + out_dir.string());
  const DatasetManifest m = generate_synthetic(syn, out_dir);
  const auto [train, test] = partition_by_subject(m, cfg.data.train_fraction, cfg.split_seed());
  save_manifest(train, out_dir / "train.csv");
  save_manifest(test, out_dir / "test.csv");
  progress("synth: train " + std::to_string(train.size()) + ", test " + std::to_string(test.size()));
  return out_dir / "manifest.csv";
}

fs::path cmd_train(const RunConfig& cfg, const fs::path& manifest_path, const fs::path& out_ckpt) {
  cfg.validate();
  const DatasetManifest manifest = load_manifest(manifest_path);
  const Shape shape = model_shape(cfg);
  std::vector<Image> data;
  for (const ManifestEntry& e : manifest.entries) {
    if (e.label != Label::kBonafide) continue;
    data.push_back(to_model_space(load_for_model(manifest.resolve(e), shape)));
  }
  if (data.empty()) throw Error(ErrorCode::kEmptyDataset, manifest_path.string() + ": no bona fide entries");

  TrainConfig tc = cfg.train;
  tc.seed = cfg.train_seed();
  json meta = artifact_stamp(cfg);
  meta["n_train"] = data.size();
  std::vector<double> trace;

  progress("train: " + cfg.model.kind + " on " + std::to_string(data.size()) + " images, " +
           std::to_string(tc.epochs) + " epochs");

  if (cfg.model.kind == "diffusion") {
    DenoiserNetwork net = init_network(cfg.model.net, cfg.init_seed());
    const NoiseSchedule schedule = cfg.schedule();
    auto snapshot = [&](int epoch, const AdamState* opt) {
      meta["loss_trace"] = trace;
      DiffusionModel model{net, schedule, cfg.model.effective_truncation(), epoch,
                           opt ? std::optional<AdamState>(*opt) : std::nullopt, meta};
      save_checkpoint(to_checkpoint(model), out_ckpt);
    };
    train(net, data, schedule, tc, [&](const TrainProgress& p) {
      trace.push_back(p.mean_loss);
      char buf[96];
      std::snprintf(buf, sizeof(buf), "train: epoch %d/%d loss %.6f", p.epoch, tc.epochs, p.mean_loss);
      progress(buf);
      if (p.epoch % tc.checkpoint_every == 0 || p.epoch == tc.epochs) snapshot(p.epoch, p.optimizer);
    });
  } else {
    AutoencoderNetwork net = init_autoencoder(cfg.model.autoencoder(), cfg.init_seed());
    train_autoencoder(net, data, tc, [&](const TrainProgress& p) {
      trace.push_back(p.mean_loss);
      char buf[96];
      std::snprintf(buf, sizeof(buf), "train: epoch %d/%d loss %.6f", p.epoch, tc.epochs, p.mean_loss);
      progress(buf);
      if (p.epoch % tc.checkpoint_every == 0 || p.epoch == tc.epochs) {
        meta["loss_trace"] = trace;
        save_checkpoint(to_checkpoint(net, p.epoch,
                                      p.optimizer ? std::optional<AdamState>(*p.optimizer) : std::nullopt,
                                      meta),
                        out_ckpt);
      }
    });
  }
  return out_ckpt;
}

fs::path cmd_score(const RunConfig& cfg, const fs::path& ckpt_path, const fs::path& manifest_path,
                   const fs::path& out_csv) {
  cfg.validate();
  const auto model = LoadedModel::load(cfg, ckpt_path);
  const DatasetManifest manifest = load_manifest(manifest_path);
  std::optional<FeatureExtractor> features;
  if (cfg.pipeline.metric == Metric::kLpips) features.emplace(pipeline_features(cfg, &model->checkpoint()));

  ScoreOptions opt;
  opt.metric = cfg.pipeline.metric;
  opt.features = features ? &*features : nullptr;
  opt.restarts = cfg.pipeline.restarts;

  progress("score: " + std::to_string(manifest.size()) + " samples with " + model->checkpoint().kind +
           " / " + std::string(to_string(opt.metric)));
  const BatchScores result =
      score_batch(manifest, model->reconstructor(), opt, cfg.score_seed(), effective_jobs(cfg));
  for (const ScoreFailure& f : result.failures) progress("score: failed " + f.sample_id + ": " + f.message);

  json meta = artifact_stamp(cfg);
  meta["checkpoint_id"] = model->checkpoint_id();
  meta["checkpoint_kind"] = model->checkpoint().kind;
  meta["metric"] = std::string(to_string(opt.metric));
  meta["restarts"] = opt.restarts;
  if (model->checkpoint().kind == "diffusion") meta["truncation"] = model->truncation();
  if (features) meta["features"] = features->source();
  meta["n_scored"] = result.scores.size();
  meta["failures"] = json::array();
  for (const ScoreFailure& f : result.failures) {
    meta["failures"].push_back({{"sample_id", f.sample_id}, {"message", f.message}});
  }
  save_scores(result.scores, out_csv, meta);
  return out_csv;
}

EvalOutputs cmd_eval(const RunConfig& cfg, const std::vector<fs::path>& scores_csvs,
                     const fs::path& out_prefix) {
  cfg.validate();
  if (scores_csvs.empty()) throw Error(ErrorCode::kInvalidConfig, "eval needs at least one scores file");
  EvalOutputs out;
  EvalReport& report = out.report;
  report.target_apcer = cfg.eval.target_apcer;
  report.pooled_threshold = cfg.eval.pooled;
  report.meta = artifact_stamp(cfg);
  report.meta["inputs"] = json::array();

  std::map<std::string, int> seen;
  for (const fs::path& path : scores_csvs) {
    std::string name = path.stem().string();
    if (int n = ++seen[name]; n > 1) name += "#" + std::to_string(n);
    const std::vector<PadScore> scores = load_scores(path);
    const json meta = load_scores_meta(path);
    evaluate_scores(report, name, scores);
    if (meta.contains("failures")) {
      for (const json& f : meta["failures"]) {
        report.failures.push_back({f.value("sample_id", ""), f.value("message", "")});
      }
    }
    report.meta["inputs"].push_back({{"dataset", name},
                                     {"file", path.filename().string()},
                                     {"sha256", sha256_hex(read_file(path))},
                                     {"scores_meta", meta}});
  }

  out.text_path = out_prefix;
  out.text_path += ".txt";
  out.json_path = out_prefix;
  out.json_path += ".json";
  write_file_atomic(out.text_path, format_report_text(report));
  write_file_atomic(out.json_path, report_to_json(report).dump(2) + "\n");
  return out;
}

std::map<std::string, double> cmd_fid(const RunConfig& cfg, const fs::path& ckpt_path,
                                      const fs::path& manifest_path, const fs::path& out_json) {
  cfg.validate();
  const auto model = LoadedModel::load(cfg, ckpt_path);
  const DatasetManifest manifest = load_manifest(manifest_path);
  const FeatureExtractor features = pipeline_features(cfg, &model->checkpoint());
  const Reconstructor& rec = model->reconstructor();

  std::map<std::string, std::pair<std::vector<Image>, std::vector<Image>>> groups;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const ManifestEntry& e = manifest.entries[i];
    const std::string group = e.label == Label::kBonafide ? "bonafide" : e.pai_type;
    Image img = load_for_model(manifest.resolve(e), rec.input_shape());
    Image r = rec.reconstruct(img, derive_seed(cfg.score_seed(), i));
    if (e.label == Label::kAttack) {
      groups["attack"].first.push_back(img);
      groups["attack"].second.push_back(r);
    }
    groups[group].second.push_back(std::move(r));
    groups[group].first.push_back(std::move(img));
  }

  std::map<std::string, double> out;
  for (const auto& [name, g] : groups) {
    if (g.first.size() < 2) {
      progress("fid: skipping " + name + " (fewer than 2 images)");
      continue;
    }
    out[name] = fid_images(g.first, g.second, features);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%-12s %10.4f  (n=%zu)", name.c_str(), out[name], g.first.size());
    std::cout << buf << "\n";
  }
  if (!out_json.empty()) {
    json j = artifact_stamp(cfg);
    j["checkpoint_id"] = model->checkpoint_id();
    j["features"] = features.source();
    j["fid"] = out;
    write_file_atomic(out_json, j.dump(2) + "\n");
  }
  return out;
}

fs::path cmd_reconstruct(const RunConfig& cfg, const fs::path& ckpt_path, const fs::path& image_in,
                         const fs::path& image_out) {
  cfg.validate();
  const auto model = LoadedModel::load(cfg, ckpt_path);
  const Reconstructor& rec = model->reconstructor();
  const Image img = load_for_model(image_in, rec.input_shape());
  save_image(rec.reconstruct(img, cfg.score_seed()), image_out);
  return image_out;
}

}  // namespace diffpad
