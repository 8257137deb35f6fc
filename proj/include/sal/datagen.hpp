#pragma once

// Synthetic data: three-Gaussian ID clusters, the two wild-outlier scenarios,
// Huber-style pool mixing, and CSV (de)serialization for all of it.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sal/numerics.hpp"

namespace sal {

inline constexpr std::size_t kInputDim = 2;
inline constexpr std::size_t kNumClasses = 3;

struct LabeledSet {
  Matrixd points;           // n x kInputDim
  std::vector<int> labels;  // each in [0, num_classes)
  std::size_t num_classes = kNumClasses;

  std::size_t size() const { return labels.size(); }
};

enum class Truth : std::uint8_t { kInlier = 0, kOutlier = 1 };

// Unlabeled deployment-time sample. `truth` records which mixture component
// produced each point; it exists for evaluation only and is never handed to
// training or filtering code (those receive `points` alone).
struct WildSet {
  Matrixd points;
  std::vector<Truth> truth;

  std::size_t size() const { return truth.size(); }
};

enum class Scenario { kOne = 1, kTwo = 2 };

namespace toy {
// Cluster means for the three ID classes; shared covariance 0.25*I.
inline constexpr double kIdMeans[kNumClasses][kInputDim] = {
    {-2.0, 0.0}, {2.0, 0.0}, {0.0, 3.4641016151377543864}};  // [0, 2*sqrt(3)]
inline constexpr double kIdStd = 0.5;
// Outlier generation: both scenarios are anchored at [0 or 10, 2/sqrt(3)].
inline constexpr double kCenterY = 1.1547005383792515290;  // 2/sqrt(3)
inline constexpr double kScenarioOneStd = 2.6457513110645905905;  // sqrt(7)
inline constexpr std::size_t kScenarioOneDraws = 100000;
inline constexpr double kScenarioTwoMeanX = 10.0;
inline constexpr std::size_t kOutlierCount = 1000;
inline constexpr std::size_t kIdPerClass = 1000;
inline constexpr std::size_t kWildInlierPerClass = 3000;
}  // namespace toy

// per_class samples from each of the three Gaussian classes, class-major.
inline LabeledSet gen_gaussian_id(std::size_t per_class, Rng& rng) {
  LabeledSet s;
  s.points = Matrixd(per_class * kNumClasses, kInputDim);
  s.labels.resize(per_class * kNumClasses);
  std::size_t r = 0;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    for (std::size_t i = 0; i < per_class; ++i, ++r) {
      for (std::size_t d = 0; d < kInputDim; ++d)
        s.points(r, d) = toy::kIdMeans[k][d] + toy::kIdStd * rng.normal();
      s.labels[r] = static_cast<int>(k);
    }
  }
  return s;
}

// Scenario ONE: of 100,000 draws from N([0, 2/sqrt(3)], 7*I), keep the 1,000
// farthest from the mean (ties broken by draw order). Scenario TWO: 1,000
// draws from N([10, 2/sqrt(3)], 0.25*I).
inline Matrixd gen_outlier_pool(Scenario scenario, Rng& rng) {
  Matrixd out(toy::kOutlierCount, kInputDim);
  if (scenario == Scenario::kTwo) {
    for (std::size_t i = 0; i < toy::kOutlierCount; ++i) {
      out(i, 0) = toy::kScenarioTwoMeanX + toy::kIdStd * rng.normal();
      out(i, 1) = toy::kCenterY + toy::kIdStd * rng.normal();
    }
    return out;
  }
  const std::size_t n = toy::kScenarioOneDraws;
  Matrixd draws(n, kInputDim);
  std::vector<double> dist2(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = toy::kScenarioOneStd * rng.normal();
    const double y = toy::kCenterY + toy::kScenarioOneStd * rng.normal();
    draws(i, 0) = x;
    draws(i, 1) = y;
    const double dy = y - toy::kCenterY;
    dist2[i] = x * x + dy * dy;
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return dist2[a] > dist2[b];
  });
  idx.resize(toy::kOutlierCount);
  std::sort(idx.begin(), idx.end());  // emit kept points in draw order
  for (std::size_t i = 0; i < toy::kOutlierCount; ++i)
    for (std::size_t d = 0; d < kInputDim; ++d)
      out(i, d) = draws(idx[i], d);
  return out;
}

// Wild-side pools: 3,000 labeled inliers per class from the ID Gaussians
// (fresh draws, disjoint from any ID training set), plus the scenario's
// outlier pool.
inline void gen_wild_scenario(Scenario scenario, Rng& rng,
                              LabeledSet& inlier_pool, Matrixd& outlier_pool) {
  inlier_pool = gen_gaussian_id(toy::kWildInlierPerClass, rng);
  outlier_pool = gen_outlier_pool(scenario, rng);
}

namespace detail {

inline std::vector<std::size_t> sample_without_replacement(std::size_t pool,
                                                           std::size_t take,
                                                           Rng& rng) {
  std::vector<std::size_t> idx(pool);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < take; ++i) {
    std::size_t j = i + rng.below(pool - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(take);
  return idx;
}

}  // namespace detail

// m points: exactly round(pi*m) outliers and the rest inliers, each sampled
// without replacement from its pool, then shuffled together.
inline WildSet mix_huber(const Matrixd& inliers, const Matrixd& outliers,
                         double pi, std::size_t m, Rng& rng) {
  if (pi < 0.0 || pi > 1.0)
    throw std::invalid_argument("mix_huber: pi outside [0,1]");
  const std::size_t n_out = static_cast<std::size_t>(
      std::llround(pi * static_cast<double>(m)));
  const std::size_t n_in = m - n_out;
  if (n_out > outliers.rows())
    throw std::invalid_argument(
        "mix_huber: outlier pool too small (need " + std::to_string(n_out) +
        ", have " + std::to_string(outliers.rows()) + ")");
  if (n_in > inliers.rows())
    throw std::invalid_argument(
        "mix_huber: inlier pool too small (need " + std::to_string(n_in) +
        ", have " + std::to_string(inliers.rows()) + ")");

  const auto in_idx = detail::sample_without_replacement(inliers.rows(), n_in, rng);
  const auto out_idx =
      detail::sample_without_replacement(outliers.rows(), n_out, rng);

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order.begin(), order.end());

  WildSet w;
  w.points = Matrixd(m, inliers.cols());
  w.truth.resize(m);
  for (std::size_t slot = 0; slot < m; ++slot) {
    const std::size_t src = order[slot];
    if (src < n_in) {
      const std::size_t i = in_idx[src];
      for (std::size_t d = 0; d < inliers.cols(); ++d)
        w.points(slot, d) = inliers(i, d);
      w.truth[slot] = Truth::kInlier;
    } else {
      const std::size_t i = out_idx[src - n_in];
      for (std::size_t d = 0; d < outliers.cols(); ++d)
        w.points(slot, d) = outliers(i, d);
      w.truth[slot] = Truth::kOutlier;
    }
  }
  return w;
}

// --------------------------------------------------------------------------
// CSV: header `x1,...,xD,label` for labeled sets, `x1,...,xD` for bare point
// dumps, `x1,...,xD,truth` for wild sets. %.17g formatting round-trips
// doubles exactly; LF line endings.

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& tok, std::size_t line_no) {
  const char* s = tok.c_str();
  char* end = nullptr;
  double v = std::strtod(s, &end);
  if (end == s || *end != '\0')
    throw std::runtime_error("CSV line " + std::to_string(line_no) +
                             ": bad number '" + tok + "'");
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

inline void expect_columns(const std::vector<std::string>& toks,
                           std::size_t want, std::size_t line_no) {
  if (toks.size() != want)
    throw std::runtime_error("CSV line " + std::to_string(line_no) + ": got " +
                             std::to_string(toks.size()) + " columns, want " +
                             std::to_string(want));
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);  // binary: LF endings everywhere
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  return f;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for reading: " + path);
  return f;
}

inline void write_point_header(std::ofstream& f, std::size_t dim,
                               const char* extra) {
  for (std::size_t d = 0; d < dim; ++d) {
    if (d) f << ',';
    f << 'x' << (d + 1);
  }
  if (extra) f << ',' << extra;
  f << '\n';
}

inline void write_point_row(std::ofstream& f, const Matrixd& pts,
                            std::size_t r) {
  for (std::size_t d = 0; d < pts.cols(); ++d) {
    if (d) f << ',';
    f << format_double(pts(r, d));
  }
}

}  // namespace detail

inline void save_labeled_csv(const LabeledSet& s, const std::string& path) {
  auto f = detail::open_out(path);
  detail::write_point_header(f, s.points.cols(), "label");
  for (std::size_t r = 0; r < s.size(); ++r) {
    detail::write_point_row(f, s.points, r);
    f << ',' << s.labels[r] << '\n';
  }
}

inline LabeledSet load_labeled_csv(const std::string& path) {
  auto f = detail::open_in(path);
  std::string line;
  if (!std::getline(f, line))
    throw std::runtime_error("empty CSV (no header): " + path);
  auto header = detail::split_csv_line(line);
  if (header.empty() || header.back() != "label")
    throw std::runtime_error("expected trailing 'label' column in " + path);
  const std::size_t dim = header.size() - 1;
  std::vector<double> vals;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto toks = detail::split_csv_line(line);
    detail::expect_columns(toks, dim + 1, line_no);
    for (std::size_t d = 0; d < dim; ++d)
      vals.push_back(detail::parse_double(toks[d], line_no));
    labels.push_back(
        static_cast<int>(detail::parse_double(toks[dim], line_no)));
  }
  LabeledSet s;
  s.points = Matrixd(labels.size(), dim);
  s.points.data() = std::move(vals);
  s.labels = std::move(labels);
  int maxl = -1;
  for (int l : s.labels) maxl = std::max(maxl, l);
  s.num_classes = std::max<std::size_t>(kNumClasses,
                                        static_cast<std::size_t>(maxl + 1));
  return s;
}

inline void save_points_csv(const Matrixd& pts, const std::string& path) {
  auto f = detail::open_out(path);
  detail::write_point_header(f, pts.cols(), nullptr);
  for (std::size_t r = 0; r < pts.rows(); ++r) {
    detail::write_point_row(f, pts, r);
    f << '\n';
  }
}

inline Matrixd load_points_csv(const std::string& path) {
  auto f = detail::open_in(path);
  std::string line;
  if (!std::getline(f, line))
    throw std::runtime_error("empty CSV (no header): " + path);
  auto header = detail::split_csv_line(line);
  const std::size_t dim = header.size();
  std::vector<double> vals;
  std::size_t rows = 0, line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto toks = detail::split_csv_line(line);
    detail::expect_columns(toks, dim, line_no);
    for (std::size_t d = 0; d < dim; ++d)
      vals.push_back(detail::parse_double(toks[d], line_no));
    ++rows;
  }
  Matrixd pts(rows, dim);
  pts.data() = std::move(vals);
  return pts;
}

inline void save_wild_csv(const WildSet& w, const std::string& path) {
  auto f = detail::open_out(path);
  detail::write_point_header(f, w.points.cols(), "truth");
  for (std::size_t r = 0; r < w.size(); ++r) {
    detail::write_point_row(f, w.points, r);
    f << ',' << (w.truth[r] == Truth::kOutlier ? 1 : 0) << '\n';
  }
}

inline WildSet load_wild_csv(const std::string& path) {
  auto f = detail::open_in(path);
  std::string line;
  if (!std::getline(f, line))
    throw std::runtime_error("empty CSV (no header): " + path);
  auto header = detail::split_csv_line(line);
  if (header.empty() || header.back() != "truth")
    throw std::runtime_error("expected trailing 'truth' column in " + path);
  const std::size_t dim = header.size() - 1;
  std::vector<double> vals;
  std::vector<Truth> truth;
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto toks = detail::split_csv_line(line);
    detail::expect_columns(toks, dim + 1, line_no);
    for (std::size_t d = 0; d < dim; ++d)
      vals.push_back(detail::parse_double(toks[d], line_no));
    const double t = detail::parse_double(toks[dim], line_no);
    truth.push_back(t != 0.0 ? Truth::kOutlier : Truth::kInlier);
  }
  WildSet w;
  w.points = Matrixd(truth.size(), dim);
  w.points.data() = std::move(vals);
  w.truth = std::move(truth);
  return w;
}

}  // namespace sal
