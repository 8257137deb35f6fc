#pragma once

// Test-time metrics: FPR at a fixed TPR level, AUROC (Mann-Whitney with tie
// halving), ID accuracy, and the post-hoc mode that reuses the filtering
// score directly as a detector. All scores passed to the metric functions
// are ID-ness scores: higher means more in-distribution.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sal/erm.hpp"
#include "sal/filter.hpp"
#include "sal/model.hpp"
#include "sal/numerics.hpp"

namespace sal {

struct MetricsReport {
  double fpr_at_95tpr = 0.0;
  double auroc = 0.0;
  double id_accuracy = 0.0;
  double lambda = 0.0;  // the test threshold realizing the TPR level
  std::optional<double> err_in;
  std::optional<double> err_out;
  std::optional<double> contamination;
};

// lambda = the largest observed ID score such that the fraction of ID scores
// strictly above it still meets `tpr_level`; when even the smallest ID score
// fails that (heavy ties at the minimum), lambda steps just below the
// minimum so every ID score counts as above. fpr = fraction of OOD scores
// strictly above lambda.
inline std::pair<double, double> fpr_at_tpr(const Vectord& id_scores,
                                            const Vectord& ood_scores,
                                            double tpr_level) {
  if (id_scores.empty() || ood_scores.empty())
    throw std::invalid_argument("fpr_at_tpr: empty score list");
  if (!(tpr_level > 0.0) || tpr_level > 1.0)
    throw std::invalid_argument("fpr_at_tpr: tpr_level outside (0,1]");

  Vectord sorted = id_scores;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double need = tpr_level * static_cast<double>(n);

  double lambda = std::nextafter(sorted.front(),
                                 -std::numeric_limits<double>::infinity());
  // Sweep candidate thresholds (distinct ID scores) from the largest down;
  // the first that keeps enough ID mass strictly above wins.
  for (std::size_t i = n; i-- > 0;) {
    if (i + 1 < n && sorted[i] == sorted[i + 1]) continue;  // same candidate
    const std::size_t above =
        n - static_cast<std::size_t>(
                std::upper_bound(sorted.begin(), sorted.end(), sorted[i]) -
                sorted.begin());
    if (static_cast<double>(above) >= need) {
      lambda = sorted[i];
      break;
    }
  }

  std::size_t fp = 0;
  for (double s : ood_scores)
    if (s > lambda) ++fp;
  const double fpr =
      static_cast<double>(fp) / static_cast<double>(ood_scores.size());
  return {fpr, lambda};
}

// P(random ID score > random OOD score) with ties counted 1/2, computed by
// average-rank summation over the pooled sorted scores.
inline double auroc(const Vectord& id_scores, const Vectord& ood_scores) {
  if (id_scores.empty() || ood_scores.empty())
    throw std::invalid_argument("auroc: empty score list");
  const std::size_t n = id_scores.size(), m = ood_scores.size();
  // (score, is_id)
  std::vector<std::pair<double, bool>> all;
  all.reserve(n + m);
  for (double s : id_scores) all.emplace_back(s, true);
  for (double s : ood_scores) all.emplace_back(s, false);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  double rank_sum_id = 0.0;  // 1-based average ranks of the ID scores
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of i+1..j
    for (std::size_t k = i; k < j; ++k)
      if (all[k].second) rank_sum_id += avg_rank;
    i = j;
  }
  const double u = rank_sum_id -
                   0.5 * static_cast<double>(n) * static_cast<double>(n + 1);
  return u / (static_cast<double>(n) * static_cast<double>(m));
}

inline double id_accuracy(const MlpParams& p, const LabeledSet& s_test) {
  return accuracy(p, s_test);  // nonempty check inside
}

// Metrics for the trained binary classifier: g(x) is already an ID-ness
// score (positive label = ID).
inline MetricsReport evaluate_binary(const MlpParams& p,
                                     const BinaryHeadParams& head,
                                     const LabeledSet& test_id,
                                     const Matrixd& test_ood,
                                     double tpr_level = 0.95) {
  Vectord sid(test_id.size()), sood(test_ood.rows());
  for (std::size_t i = 0; i < test_id.size(); ++i)
    sid[i] = binary_score(p, head, test_id.points.row(i));
  for (std::size_t i = 0; i < test_ood.rows(); ++i)
    sood[i] = binary_score(p, head, test_ood.row(i));
  MetricsReport r;
  const auto [fpr, lam] = fpr_at_tpr(sid, sood, tpr_level);
  r.fpr_at_95tpr = fpr;
  r.lambda = lam;
  r.auroc = auroc(sid, sood);
  r.id_accuracy = id_accuracy(p, test_id);
  return r;
}

// Post-hoc mode: the filtering score tau itself is the detector, no binary
// head involved. tau is an OOD-ness score, so -tau enters the metrics.
inline MetricsReport posthoc_eval(const MlpParams& p,
                                  const std::vector<Vectord>& vs,
                                  const Vectord& ref,
                                  const LabeledSet& test_id,
                                  const Matrixd& test_ood,
                                  double tpr_level = 0.95,
                                  GradientScope scope =
                                      GradientScope::kLastLayer) {
  const std::vector<Vectord> refs{ref};
  const std::vector<std::vector<Vectord>> group_vs{vs};
  Vectord sid(test_id.size()), sood(test_ood.rows());
  for (std::size_t i = 0; i < test_id.size(); ++i)
    sid[i] = -detail::projection_score(p, test_id.points.row(i), refs,
                                       group_vs, false, scope);
  for (std::size_t i = 0; i < test_ood.rows(); ++i)
    sood[i] = -detail::projection_score(p, test_ood.row(i), refs, group_vs,
                                        false, scope);
  MetricsReport r;
  const auto [fpr, lam] = fpr_at_tpr(sid, sood, tpr_level);
  r.fpr_at_95tpr = fpr;
  r.lambda = lam;
  r.auroc = auroc(sid, sood);
  r.id_accuracy = id_accuracy(p, test_id);
  return r;
}

// --------------------------------------------------------------------------
// Report serialization: `key: value` lines, %.17g, fixed order — reruns of
// the same experiment produce byte-identical files.

namespace detail {

inline void write_kv(std::ofstream& f, const char* key, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  f << key << ": " << buf << '\n';
}

}  // namespace detail

inline void save_metrics(const MetricsReport& r, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  detail::write_kv(f, "fpr_at_95tpr", r.fpr_at_95tpr);
  detail::write_kv(f, "auroc", r.auroc);
  detail::write_kv(f, "id_accuracy", r.id_accuracy);
  detail::write_kv(f, "lambda", r.lambda);
  if (r.err_in) detail::write_kv(f, "err_in", *r.err_in);
  if (r.err_out) detail::write_kv(f, "err_out", *r.err_out);
  if (r.contamination) detail::write_kv(f, "contamination", *r.contamination);
}

inline MetricsReport load_metrics(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open metrics file: " + path);
  MetricsReport r;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos)
      throw std::runtime_error("metrics file " + path + ": bad line '" +
                               line + "'");
    const std::string key = line.substr(0, colon);
    const double v = std::strtod(line.c_str() + colon + 1, nullptr);
    if (key == "fpr_at_95tpr") r.fpr_at_95tpr = v;
    else if (key == "auroc") r.auroc = v;
    else if (key == "id_accuracy") r.id_accuracy = v;
    else if (key == "lambda") r.lambda = v;
    else if (key == "err_in") r.err_in = v;
    else if (key == "err_out") r.err_out = v;
    else if (key == "contamination") r.contamination = v;
    else
      throw std::runtime_error("metrics file " + path + ": unknown key '" +
                               key + "'");
  }
  return r;
}

}  // namespace sal
