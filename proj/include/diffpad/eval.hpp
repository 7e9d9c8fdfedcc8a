#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "diffpad/pad.hpp"
#include "diffpad/similarity.hpp"

namespace diffpad {

// Percentages over decisions already restricted to one class. EmptySubset.
double apcer(std::span<const PadDecision> attack_decisions);
double bpcer(std::span<const PadDecision> bonafide_decisions);

struct OperatingPoint {
  double bpcer = 0.0;
  double threshold = 0.0;
};

// Threshold from calibrate_threshold on the attack scores; BPCER is the
// percentage of bona fide scores above it. EmptyScores.
OperatingPoint bpcer_at_apcer(std::span<const double> bona_scores,
                              std::span<const double> attack_scores, double target_apcer);

struct DetPoint {
  double threshold = 0.0;
  double apcer = 0.0;
  double bpcer = 0.0;
};

// One point per distinct score plus -inf and +inf sentinels, in increasing
// threshold order. EmptyScores.
std::vector<DetPoint> det_curve(std::span<const double> bona_scores,
                                std::span<const double> attack_scores);

// Fréchet distance between Gaussian fits (unbiased covariances) of two
// sets of equal-length vectors. DimensionMismatch, TooFewSamples.
double fid(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b);

// FID over spatially pooled final-tap features.
double fid_images(std::span<const Image> a, std::span<const Image> b, const FeatureExtractor& f);

struct PaiRates {
  std::string dataset;
  std::string pai;
  double apcer = 0.0;
  double bpcer = 0.0;
  double threshold = 0.0;
  std::size_t n_attack = 0;
  std::size_t n_bonafide = 0;
};

struct DetSeries {
  std::string dataset;
  std::string pai;
  std::vector<DetPoint> points;
};

struct EvalReport {
  double target_apcer = 10.0;
  bool pooled_threshold = false;
  std::vector<PaiRates> per_pai;  // one row per (dataset, PAI)
  std::vector<PaiRates> pooled;   // one row per dataset, all PAIs together
  std::vector<DetSeries> det;
  std::map<std::string, double> fid;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<ScoreFailure> failures;
};

// Adds one dataset's rows. Each PAI is evaluated against all bona fide
// scores, with its own threshold unless `report.pooled_threshold`.
// Unlabeled scores are ignored. EmptyScores when a class is missing.
void evaluate_scores(EvalReport& report, const std::string& dataset,
                     std::span<const PadScore> scores);

// Aligned table in the layout Dataset | PAI | APCER | BPCER | threshold | n.
std::string format_report_text(const EvalReport& report);
// {operating_point, per_pai, pooled, det, fid, meta, failures}; rates at 2 decimals,
// a -inf threshold as null.
nlohmann::json report_to_json(const EvalReport& report);

}  // namespace diffpad
