#pragma once

// The filtering stage: score every unlabeled wild point by how far its loss
// gradient sits from the ID reference gradient along the wild gradient
// matrix's top singular direction(s), pick a threshold from the ID score
// distribution, and keep the strictly-above points as candidate outliers.

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sal/datagen.hpp"
#include "sal/model.hpp"
#include "sal/numerics.hpp"

namespace sal {

enum class ScoreKind { kSalProjection, kGradNorm };
enum class GradientScope { kLastLayer, kFull };

struct FilterConfig {
  double percentile = 0.95;     // ID fraction kept below the threshold
  bool class_conditional = false;
  std::size_t num_vectors = 1;  // c: singular directions averaged per score
  ScoreKind score_kind = ScoreKind::kSalProjection;
  GradientScope gradient_scope = GradientScope::kLastLayer;
};

struct FilterOutcome {
  Vectord scores;                       // tau_i, one per wild point
  double threshold = 0.0;               // T
  std::vector<std::size_t> candidates;  // S_T = {i : tau_i > T}, ascending
  bool svd_converged = true;
  // The projection machinery (empty under the GradNorm score kind): one
  // reference gradient per group and that group's singular vectors. Global
  // mode has exactly one group.
  std::vector<Vectord> refs;
  std::vector<std::vector<Vectord>> group_vectors;
  // Populated only when ground truth is supplied.
  std::optional<double> err_in;         // inliers flagged / total inliers
  std::optional<double> err_out;        // outliers missed / total outliers
  std::optional<double> contamination;  // inliers inside S_T / |S_T|
};

inline Vectord sample_gradient(const MlpParams& p, const double* x, int y,
                               GradientScope scope) {
  return scope == GradientScope::kFull ? grad_full(p, x, y)
                                       : grad_last_layer(p, x, y);
}

// Mean loss gradient over the labeled ID set (true labels). Global mode
// returns one vector; class-conditional mode returns one per class, erroring
// on any class with no samples.
inline std::vector<Vectord> reference_gradient(
    const MlpParams& p, const LabeledSet& s_in, bool class_conditional,
    GradientScope scope = GradientScope::kLastLayer) {
  if (s_in.size() == 0)
    throw std::invalid_argument("reference_gradient: empty ID set");
  const std::size_t groups =
      class_conditional ? static_cast<std::size_t>(s_in.num_classes) : 1;
  std::vector<Vectord> refs(groups);
  std::vector<std::size_t> counts(groups, 0);
  for (std::size_t i = 0; i < s_in.size(); ++i) {
    const int y = s_in.labels[i];
    const std::size_t g = class_conditional ? static_cast<std::size_t>(y) : 0;
    Vectord grad = sample_gradient(p, s_in.points.row(i), y, scope);
    if (refs[g].empty()) refs[g].assign(grad.size(), 0.0);
    for (std::size_t k = 0; k < grad.size(); ++k) refs[g][k] += grad[k];
    ++counts[g];
  }
  for (std::size_t g = 0; g < groups; ++g) {
    if (counts[g] == 0)
      throw std::invalid_argument(
          "reference_gradient: class " + std::to_string(g) +
          " has no ID samples (class-conditional mode needs every class)");
    for (auto& v : refs[g]) v /= static_cast<double>(counts[g]);
  }
  return refs;
}

// Row i = gradient of the loss at (x_i, predicted label) minus `ref`.
// Labels here are always the model's own predictions.
inline Matrixd gradient_matrix(const MlpParams& p, const Matrixd& wild_points,
                               const Vectord& ref,
                               GradientScope scope = GradientScope::kLastLayer) {
  const std::size_t n = wild_points.rows();
  Matrixd g(n, ref.size());
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = wild_points.row(i);
    const Vectord grad = sample_gradient(p, x, predict_label(p, x), scope);
    if (grad.size() != ref.size())
      throw std::invalid_argument(
          "gradient_matrix: reference dimension mismatch");
    double* row = g.row(i);
    for (std::size_t k = 0; k < grad.size(); ++k) row[k] = grad[k] - ref[k];
  }
  return g;
}

// tau_i = (1/c) * sum_j <row_i, v_j>^2. Every v_j must be unit norm.
inline Vectord filtering_scores(const Matrixd& g,
                                const std::vector<Vectord>& vs) {
  if (vs.empty())
    throw std::invalid_argument("filtering_scores: no singular vectors");
  for (const auto& v : vs) {
    if (v.size() != g.cols())
      throw std::invalid_argument("filtering_scores: vector dimension "
                                  "mismatch");
    if (std::abs(l2_norm(v) - 1.0) > 1e-6)
      throw std::invalid_argument(
          "filtering_scores: vectors must be unit norm");
  }
  Vectord tau(g.rows(), 0.0);
  for (std::size_t i = 0; i < g.rows(); ++i) {
    const double* row = g.row(i);
    double s = 0.0;
    for (const auto& v : vs) {
      const double pr = dot(row, v.data(), v.size());
      s += pr * pr;
    }
    tau[i] = s / static_cast<double>(vs.size());
  }
  return tau;
}

inline Vectord gradnorm_scores(const MlpParams& p, const Matrixd& points) {
  Vectord out(points.rows());
  for (std::size_t i = 0; i < points.rows(); ++i)
    out[i] = gradnorm_score(p, points.row(i));
  return out;
}

namespace detail {

// Scores one point the way the wild set is scored: gradient at the model's
// own predicted label, minus that prediction's group reference, projected
// onto the group's singular vectors. A group that ended up with no singular
// vectors (possible only when no wild point was predicted into it) scores 0.
inline double projection_score(const MlpParams& p, const double* x,
                               const std::vector<Vectord>& refs,
                               const std::vector<std::vector<Vectord>>& group_vs,
                               bool class_conditional, GradientScope scope) {
  const int yhat = predict_label(p, x);
  const std::size_t g =
      class_conditional ? static_cast<std::size_t>(yhat) : 0;
  if (group_vs[g].empty()) return 0.0;
  Vectord grad = sample_gradient(p, x, yhat, scope);
  const Vectord& ref = refs[g];
  double s = 0.0;
  for (const auto& v : group_vs[g]) {
    double pr = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k)
      pr += (grad[k] - ref[k]) * v[k];
    s += pr * pr;
  }
  return s / static_cast<double>(group_vs[g].size());
}

}  // namespace detail

// Threshold from the ID set's own score distribution: the smallest ID score
// with at least `percentile` of ID scores at or below it (nearest rank).
// ID points are scored with predicted labels so that one identical scoring
// function covers ID and wild points.
inline double select_threshold(const MlpParams& p, const LabeledSet& s_in,
                               const std::vector<Vectord>& vs,
                               const Vectord& ref, const FilterConfig& cfg) {
  if (s_in.size() == 0)
    throw std::invalid_argument("select_threshold: empty ID set");
  Vectord id_scores(s_in.size());
  if (cfg.score_kind == ScoreKind::kGradNorm) {
    for (std::size_t i = 0; i < s_in.size(); ++i)
      id_scores[i] = gradnorm_score(p, s_in.points.row(i));
  } else {
    const std::vector<Vectord> refs{ref};
    const std::vector<std::vector<Vectord>> group_vs{vs};
    for (std::size_t i = 0; i < s_in.size(); ++i)
      id_scores[i] = detail::projection_score(
          p, s_in.points.row(i), refs, group_vs, false, cfg.gradient_scope);
  }
  return percentile_threshold(id_scores, cfg.percentile);
}

inline std::vector<std::size_t> filter_candidates(const Vectord& scores,
                                                  double threshold) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] > threshold) out.push_back(i);
  return out;
}

struct FilterErrors {
  double err_in = 0.0;
  double err_out = 0.0;
  double contamination = 0.0;
};

inline FilterErrors filtering_errors(const std::vector<std::size_t>& candidates,
                                     const std::vector<Truth>& truth) {
  std::size_t total_in = 0, total_out = 0;
  for (Truth t : truth) (t == Truth::kInlier ? total_in : total_out)++;
  std::size_t flagged_in = 0, flagged_out = 0;
  for (std::size_t i : candidates) {
    if (i >= truth.size())
      throw std::invalid_argument("filtering_errors: candidate index out of "
                                  "range");
    (truth[i] == Truth::kInlier ? flagged_in : flagged_out)++;
  }
  FilterErrors e;
  if (total_in > 0)
    e.err_in = static_cast<double>(flagged_in) / static_cast<double>(total_in);
  if (total_out > 0)
    e.err_out = static_cast<double>(total_out - flagged_out) /
                static_cast<double>(total_out);
  if (!candidates.empty())
    e.contamination =
        static_cast<double>(flagged_in) / static_cast<double>(candidates.size());
  return e;
}

// Full filtering pass. Global mode runs as the one-group special case of the
// class-conditional driver, which makes class-conditional filtering on a
// single-class problem bitwise identical to global filtering. The rng seeds
// the singular-vector iterations (groups processed in ascending class
// order).
inline FilterOutcome run_filter(const MlpParams& p, const LabeledSet& s_in,
                                const Matrixd& wild_points,
                                const FilterConfig& cfg, Rng& rng) {
  if (!(cfg.percentile > 0.0) || cfg.percentile > 1.0)
    throw std::invalid_argument("run_filter: percentile outside (0,1]");
  if (cfg.num_vectors < 1)
    throw std::invalid_argument("run_filter: num_vectors must be >= 1");
  if (wild_points.rows() == 0)
    throw std::invalid_argument("run_filter: empty wild set");

  FilterOutcome out;
  const std::size_t m = wild_points.rows();

  if (cfg.score_kind == ScoreKind::kGradNorm) {
    // Same selection machinery, per-sample score swapped out.
    out.scores = gradnorm_scores(p, wild_points);
    Vectord id_scores(s_in.size());
    for (std::size_t i = 0; i < s_in.size(); ++i)
      id_scores[i] = gradnorm_score(p, s_in.points.row(i));
    out.threshold = percentile_threshold(id_scores, cfg.percentile);
    out.candidates = filter_candidates(out.scores, out.threshold);
    return out;
  }

  const std::size_t groups =
      cfg.class_conditional ? static_cast<std::size_t>(s_in.num_classes) : 1;
  const std::vector<Vectord> refs =
      reference_gradient(p, s_in, cfg.class_conditional, cfg.gradient_scope);

  // Group wild points by predicted class (single group in global mode),
  // preserving original order within each group.
  std::vector<int> yhat(m);
  std::vector<std::vector<std::size_t>> members(groups);
  for (std::size_t i = 0; i < m; ++i) {
    yhat[i] = predict_label(p, wild_points.row(i));
    const std::size_t g =
        cfg.class_conditional ? static_cast<std::size_t>(yhat[i]) : 0;
    members[g].push_back(i);
  }

  std::vector<std::vector<Vectord>> group_vs(groups);
  out.scores.assign(m, 0.0);
  for (std::size_t g = 0; g < groups; ++g) {
    if (members[g].empty()) continue;  // no wild point predicted this class
    Matrixd gm(members[g].size(), refs[g].size());
    for (std::size_t r = 0; r < members[g].size(); ++r) {
      const std::size_t i = members[g][r];
      const Vectord grad = sample_gradient(p, wild_points.row(i), yhat[i],
                                           cfg.gradient_scope);
      double* row = gm.row(r);
      for (std::size_t k = 0; k < grad.size(); ++k)
        row[k] = grad[k] - refs[g][k];
    }
    auto top = top_singular_vectors(gm, cfg.num_vectors, rng);
    if (!top.converged) out.svd_converged = false;
    group_vs[g] = std::move(top.vectors);
    const Vectord tau = filtering_scores(gm, group_vs[g]);
    for (std::size_t r = 0; r < members[g].size(); ++r)
      out.scores[members[g][r]] = tau[r];
  }

  // Threshold from ID scores, computed with the same per-point rule.
  Vectord id_scores(s_in.size());
  for (std::size_t i = 0; i < s_in.size(); ++i)
    id_scores[i] =
        detail::projection_score(p, s_in.points.row(i), refs, group_vs,
                                 cfg.class_conditional, cfg.gradient_scope);
  out.threshold = percentile_threshold(id_scores, cfg.percentile);
  out.candidates = filter_candidates(out.scores, out.threshold);
  out.refs = refs;
  out.group_vectors = std::move(group_vs);
  return out;
}

// Convenience overload: also fills the error diagnostics from ground truth.
inline FilterOutcome run_filter(const MlpParams& p, const LabeledSet& s_in,
                                const WildSet& wild, const FilterConfig& cfg,
                                Rng& rng) {
  FilterOutcome out = run_filter(p, s_in, wild.points, cfg, rng);
  const FilterErrors e = filtering_errors(out.candidates, wild.truth);
  out.err_in = e.err_in;
  out.err_out = e.err_out;
  out.contamination = e.contamination;
  return out;
}

struct ScoreDump {
  Vectord scores;
  std::vector<Truth> truth;  // empty when the dump had no truth column
};

inline ScoreDump load_scores_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open scores file: " + path);
  std::string line;
  if (!std::getline(f, line))
    throw std::runtime_error("scores file " + path + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const bool with_truth = line == "index,score,truth_flag";
  if (!with_truth && line != "index,score")
    throw std::runtime_error("scores file " + path + ": unexpected header '" +
                             line + "'");
  ScoreDump out;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const char* s = line.c_str();
    char* end = nullptr;
    std::strtoull(s, &end, 10);  // index column (implicit, ignored)
    if (*end != ',')
      throw std::runtime_error("scores file " + path + ": bad row '" + line +
                               "'");
    out.scores.push_back(std::strtod(end + 1, &end));
    if (with_truth) {
      if (*end != ',')
        throw std::runtime_error("scores file " + path + ": missing truth in '" +
                                 line + "'");
      out.truth.push_back(std::strtol(end + 1, nullptr, 10) != 0
                              ? Truth::kOutlier
                              : Truth::kInlier);
    }
  }
  return out;
}

// Score dump for density plots: `index,score[,truth_flag]`.
inline void save_scores_csv(const Vectord& scores,
                            const std::vector<Truth>* truth,
                            const std::string& path) {
  if (truth && truth->size() != scores.size())
    throw std::invalid_argument("save_scores_csv: truth size mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << (truth ? "index,score,truth_flag\n" : "index,score\n");
  char buf[32];
  for (std::size_t i = 0; i < scores.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", scores[i]);
    f << i << ',' << buf;
    if (truth) f << ',' << ((*truth)[i] == Truth::kOutlier ? 1 : 0);
    f << '\n';
  }
}

}  // namespace sal
