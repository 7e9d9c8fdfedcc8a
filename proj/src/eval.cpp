#include "diffpad/eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "diffpad/error.hpp"

namespace diffpad {

using nlohmann::json;

namespace {

double percent(std::size_t count, std::size_t total) {
  return 100.0 * static_cast<double>(count) / static_cast<double>(total);
}

}  // namespace

double apcer(std::span<const PadDecision> attack_decisions) {
  if (attack_decisions.empty()) throw Error(ErrorCode::kEmptySubset, "apcer: no attack decisions");
  const auto accepted = std::count_if(attack_decisions.begin(), attack_decisions.end(),
                                      [](const PadDecision& d) { return !d.attack; });
  return percent(static_cast<std::size_t>(accepted), attack_decisions.size());
}

double bpcer(std::span<const PadDecision> bonafide_decisions) {
  if (bonafide_decisions.empty()) throw Error(ErrorCode::kEmptySubset, "bpcer: no bona fide decisions");
  const auto rejected = std::count_if(bonafide_decisions.begin(), bonafide_decisions.end(),
                                      [](const PadDecision& d) { return d.attack; });
  return percent(static_cast<std::size_t>(rejected), bonafide_decisions.size());
}

OperatingPoint bpcer_at_apcer(std::span<const double> bona_scores,
                              std::span<const double> attack_scores, double target_apcer) {
  if (bona_scores.empty()) throw Error(ErrorCode::kEmptyScores, "no bona fide scores");
  OperatingPoint op;
  op.threshold = calibrate_threshold(attack_scores, target_apcer);
  const auto above = std::count_if(bona_scores.begin(), bona_scores.end(),
                                   [&](double s) { return s > op.threshold; });
  op.bpcer = percent(static_cast<std::size_t>(above), bona_scores.size());
  return op;
}

std::vector<DetPoint> det_curve(std::span<const double> bona_scores,
                                std::span<const double> attack_scores) {
  if (bona_scores.empty() || attack_scores.empty()) {
    throw Error(ErrorCode::kEmptyScores, "det_curve needs both classes");
  }
  std::vector<double> bona(bona_scores.begin(), bona_scores.end());
  std::vector<double> att(attack_scores.begin(), attack_scores.end());
  std::sort(bona.begin(), bona.end());
  std::sort(att.begin(), att.end());
  std::set<double> thresholds(bona.begin(), bona.end());
  thresholds.insert(att.begin(), att.end());

  std::vector<DetPoint> out;
  auto add = [&](double t) {
    const auto att_le = std::upper_bound(att.begin(), att.end(), t) - att.begin();
    const auto bona_le = std::upper_bound(bona.begin(), bona.end(), t) - bona.begin();
    out.push_back({t, percent(static_cast<std::size_t>(att_le), att.size()),
                   percent(bona.size() - static_cast<std::size_t>(bona_le), bona.size())});
  };
  add(-std::numeric_limits<double>::infinity());
  for (double t : thresholds) add(t);
  add(std::numeric_limits<double>::infinity());
  return out;
}

namespace {

void moments(const std::vector<std::vector<double>>& v, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
  const auto n = static_cast<Eigen::Index>(v.size());
  const auto d = static_cast<Eigen::Index>(v.front().size());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = v[i][j];
  mu = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
  cov = centered.transpose() * centered / static_cast<double>(n - 1);
}

}  // namespace

double fid(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  if (a.size() < 2 || b.size() < 2) {
    throw Error(ErrorCode::kTooFewSamples, "fid needs at least 2 vectors per set");
  }
  const std::size_t d = a.front().size();
  for (const auto* set : {&a, &b})
    for (const auto& v : *set)
      if (v.size() != d) throw Error(ErrorCode::kDimensionMismatch, "feature vectors differ in length");
  if (d == 0) throw Error(ErrorCode::kDimensionMismatch, "empty feature vectors");

  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd cov_a, cov_b;
  moments(a, mu_a, cov_a);
  moments(b, mu_b, cov_b);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(cov_a);
  const Eigen::VectorXd la = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd sqrt_a = ea.eigenvectors() * la.asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd m = sqrt_a * cov_b * sqrt_a;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd lm = em.eigenvalues();
  const double cutoff = 1e-10 * std::max(lm.maxCoeff(), 0.0);
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < lm.size(); ++i)
    if (lm[i] > cutoff) tr_sqrt += std::sqrt(lm[i]);

  const double value = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
  return std::max(value, 0.0);
}

double fid_images(std::span<const Image> a, std::span<const Image> b, const FeatureExtractor& f) {
  std::vector<std::vector<double>> fa, fb;
  fa.reserve(a.size());
  fb.reserve(b.size());
  for (const Image& img : a) fa.push_back(f.pooled_features(img));
  for (const Image& img : b) fb.push_back(f.pooled_features(img));
  return fid(fa, fb);
}

void evaluate_scores(EvalReport& report, const std::string& dataset,
                     std::span<const PadScore> scores) {
  std::vector<double> bona, all_attacks;
  std::map<std::string, std::vector<double>> by_pai;
  for (const PadScore& s : scores) {
    if (!s.label) continue;
    if (*s.label == Label::kBonafide) {
      bona.push_back(s.score);
    } else {
      all_attacks.push_back(s.score);
      by_pai[s.pai_type].push_back(s.score);
    }
  }
  if (bona.empty()) throw Error(ErrorCode::kEmptyScores, dataset + ": no bona fide scores");
  if (all_attacks.empty()) throw Error(ErrorCode::kEmptyScores, dataset + ": no attack scores");

  auto rates_at = [&](const std::string& pai, std::span<const double> att, double threshold) {
    PaiRates r{dataset, pai, 0.0, 0.0, threshold, att.size(), bona.size()};
    const auto accepted = std::count_if(att.begin(), att.end(), [&](double s) { return s <= threshold; });
    const auto rejected = std::count_if(bona.begin(), bona.end(), [&](double s) { return s > threshold; });
    r.apcer = percent(static_cast<std::size_t>(accepted), att.size());
    r.bpcer = percent(static_cast<std::size_t>(rejected), bona.size());
    return r;
  };

  const double pooled_tau = calibrate_threshold(all_attacks, report.target_apcer);
  report.pooled.push_back(rates_at("pooled", all_attacks, pooled_tau));
  for (const auto& [pai, att] : by_pai) {
    const double tau =
        report.pooled_threshold ? pooled_tau : calibrate_threshold(att, report.target_apcer);
    report.per_pai.push_back(rates_at(pai, att, tau));
    report.det.push_back({dataset, pai, det_curve(bona, att)});
  }
  report.det.push_back({dataset, "pooled", det_curve(bona, all_attacks)});
}

namespace {

double round2(double v) { return std::round(v * 100.0) / 100.0; }

json threshold_json(double t) {
  if (!std::isfinite(t)) return nullptr;
  return t;
}

json rates_json(const PaiRates& r) {
  return {{"dataset", r.dataset},
          {"pai", r.pai},
          {"apcer", round2(r.apcer)},
          {"bpcer", round2(r.bpcer)},
          {"threshold", threshold_json(r.threshold)},
          {"n", {{"attack", r.n_attack}, {"bonafide", r.n_bonafide}}}};
}

std::string threshold_text(double t) {
  if (std::isinf(t)) return t < 0 ? "-inf" : "inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", t);
  return buf;
}

}  // namespace

std::string format_report_text(const EvalReport& report) {
  struct Row {
    std::string cells[6];
  };
  std::vector<Row> rows;
  rows.push_back({{"Dataset", "PAI", "APCER(%)", "BPCER(%)", "Threshold", "N(att/bf)"}});
  auto add = [&](const PaiRates& r) {
    char a[32], b[32];
    std::snprintf(a, sizeof(a), "%.2f", r.apcer);
    std::snprintf(b, sizeof(b), "%.2f", r.bpcer);
    rows.push_back({{r.dataset, r.pai, a, b, threshold_text(r.threshold),
                     std::to_string(r.n_attack) + "/" + std::to_string(r.n_bonafide)}});
  };
  for (const PaiRates& r : report.per_pai) add(r);
  for (const PaiRates& r : report.pooled) add(r);

  std::size_t width[6] = {};
  for (const Row& r : rows)
    for (int i = 0; i < 6; ++i) width[i] = std::max(width[i], r.cells[i].size());

  char head[96];
  std::snprintf(head, sizeof(head), "BPCER @ APCER = %.2f%% (%s thresholds, calibrated on evaluation attacks)\n",
                report.target_apcer, report.pooled_threshold ? "pooled" : "per-PAI");
  std::string out = head;
  auto rule = [&] {
    for (int i = 0; i < 6; ++i) out += std::string(width[i] + 2, '-') + (i < 5 ? "+" : "\n");
  };
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (k == 1 || k == 1 + report.per_pai.size()) rule();
    for (int i = 0; i < 6; ++i) {
      const std::string& c = rows[k].cells[i];
      const bool right = i >= 2;
      const bool last = i == 5;
      const std::string pad(width[i] - c.size(), ' ');
      out += ' ' + (right ? pad + c : c + pad) + (last ? "\n" : " |");
    }
  }
  if (!report.fid.empty()) {
    out += "\nFID\n";
    for (const auto& [name, value] : report.fid) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.4f", value);
      out += "  " + name + ": " + buf + "\n";
    }
  }
  if (!report.failures.empty()) {
    out += "\nFailures: " + std::to_string(report.failures.size()) + "\n";
    for (const ScoreFailure& f : report.failures) out += "  " + f.sample_id + ": " + f.message + "\n";
  }
  return out;
}

json report_to_json(const EvalReport& report) {
  json j;
  j["operating_point"] = {{"target_apcer", report.target_apcer},
                          {"threshold_mode", report.pooled_threshold ? "pooled" : "per_pai"},
                          {"calibration", "evaluation_attack_scores"}};
  j["per_pai"] = json::array();
  for (const PaiRates& r : report.per_pai) j["per_pai"].push_back(rates_json(r));
  j["pooled"] = json::array();
  for (const PaiRates& r : report.pooled) j["pooled"].push_back(rates_json(r));
  j["det"] = json::array();
  for (const DetSeries& d : report.det) {
    json pts = json::array();
    for (const DetPoint& p : d.points) pts.push_back({round2(p.apcer), round2(p.bpcer)});
    j["det"].push_back({{"dataset", d.dataset}, {"pai", d.pai}, {"points", std::move(pts)}});
  }
  j["fid"] = json::object();
  for (const auto& [name, value] : report.fid) j["fid"][name] = value;
  j["meta"] = report.meta;
  j["failures"] = json::array();
  for (const ScoreFailure& f : report.failures) {
    j["failures"].push_back({{"sample_id", f.sample_id}, {"message", f.message}});
  }
  return j;
}

}  // namespace diffpad
