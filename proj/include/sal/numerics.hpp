#pragma once

// Dense vector/matrix arithmetic, top-singular-vector extraction by power
// iteration, percentile selection, and seeded randomness. Everything here is
// deterministic: the RNG produces the same draw sequence for the same seed on
// every platform (fixed integer engine, hand-rolled floating-point
// transformations, no std::*_distribution).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace sal {

template <class T = double>
using Vector = std::vector<T>;

using Vectord = Vector<double>;

// Row-major dense matrix.
template <class T = double>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  T* row(std::size_t r) { return data_.data() + r * cols_; }
  const T* row(std::size_t r) const { return data_.data() + r * cols_; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool operator==(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrixd = Matrix<double>;

template <class T>
T dot(const Vector<T>& a, const Vector<T>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("dot: dimension mismatch (" +
                                std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  T s{};
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
  T s{};
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <class T>
T l2_norm(const Vector<T>& a) {
  T s{};
  for (T x : a) s += x * x;
  return std::sqrt(s);
}

// Nearest-rank percentile: smallest element t with
// |{v : v <= t}| / |values| >= fraction.
template <class T>
T percentile_threshold(const Vector<T>& values, double fraction) {
  if (values.empty())
    throw std::invalid_argument("percentile_threshold: empty input");
  if (!(fraction > 0.0) || fraction > 1.0)
    throw std::invalid_argument("percentile_threshold: fraction outside (0,1]");
  Vector<T> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  std::size_t rank = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(n)));
  if (rank == 0) rank = 1;
  if (rank > n) rank = n;
  return sorted[rank - 1];
}

// --------------------------------------------------------------------------
// Seeded randomness

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derive an independent stage seed from a root seed and a label, so changing
// one stage's draw count never shifts another stage's stream.
inline std::uint64_t sub_seed(std::uint64_t root, const std::string& label) {
  return splitmix64(root ^ fnv1a64(label));
}

// Deterministic RNG: canonical splitmix64 stream for integers, explicit
// transformations for floats (std::uniform_real_distribution and
// std::normal_distribution are not bit-identical across standard libraries).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t x = state_;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller (pair cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]: keeps log() finite
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Unbiased integer in [0, n) by rejection.
  std::size_t below(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    const std::uint64_t nn = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % nn;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return static_cast<std::size_t>(x % nn);
  }

  // Fisher-Yates.
  template <class It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::size_t>(std::distance(first, last));
    for (std::size_t i = n; i > 1; --i)
      std::iter_swap(first + static_cast<std::ptrdiff_t>(i - 1),
                     first + static_cast<std::ptrdiff_t>(below(i)));
  }

  template <class Container>
  void shuffle(Container& c) {
    shuffle(c.begin(), c.end());
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// --------------------------------------------------------------------------
// Top right singular vectors by power iteration on m^T m with deflation.

template <class T>
struct TopVectors {
  std::vector<Vector<T>> vectors;        // unit right singular vectors
  Vector<T> singular_values;             // descending
  bool converged = true;                 // false: max_iter hit (tied spectrum)
};

namespace detail {

// C <- m^T m without materializing anything bigger than d x d.
template <class T>
Matrix<T> gram(const Matrix<T>& m) {
  const std::size_t n = m.rows(), d = m.cols();
  Matrix<T> c(d, d, T{});
  for (std::size_t i = 0; i < n; ++i) {
    const T* r = m.row(i);
    for (std::size_t a = 0; a < d; ++a) {
      const T ra = r[a];
      if (ra == T{}) continue;
      T* crow = c.row(a);
      for (std::size_t b = 0; b < d; ++b) crow[b] += ra * r[b];
    }
  }
  return c;
}

}  // namespace detail

// Right singular vectors of m (descending singular value), each unit norm,
// via power iteration on the Gram matrix; previously found components are
// deflated by subtracting their rank-1 projections. On a tied/degenerate
// spectrum the iteration may stall before tol; that is reported through
// `converged`, not an error (any vector of a tied subspace is acceptable to
// callers averaging over the subspace).
template <class T>
TopVectors<T> top_singular_vectors(const Matrix<T>& m, std::size_t c,
                                   Rng& rng, T tol = T(1e-10),
                                   std::size_t max_iter = 1000) {
  const std::size_t d = m.cols();
  if (c < 1) throw std::invalid_argument("top_singular_vectors: c must be >= 1");
  if (c > d)
    throw std::invalid_argument("top_singular_vectors: c exceeds column count");
  if (!(tol > T{}))
    throw std::invalid_argument("top_singular_vectors: tol must be positive");

  Matrix<T> gram = detail::gram(m);
  TopVectors<T> out;
  out.vectors.reserve(c);
  out.singular_values.reserve(c);

  std::vector<Vector<T>> found;
  Vector<T> eigvals;  // of the Gram matrix, for deflation

  for (std::size_t j = 0; j < c; ++j) {
    Vector<T> v(d);
    for (auto& x : v) x = static_cast<T>(rng.normal());
    // Project out found components from the start.
    for (std::size_t k = 0; k < found.size(); ++k) {
      T p = dot(v, found[k]);
      for (std::size_t i = 0; i < d; ++i) v[i] -= p * found[k][i];
    }
    T nv = l2_norm(v);
    if (nv == T{}) {  // astronomically unlikely; re-seed deterministically
      v.assign(d, T{});
      v[j % d] = T(1);
      nv = T(1);
    }
    for (auto& x : v) x /= nv;

    bool hit_max = true;
    for (std::size_t it = 0; it < max_iter; ++it) {
      Vector<T> w(d, T{});
      for (std::size_t a = 0; a < d; ++a) {
        const T va = v[a];
        if (va == T{}) continue;
        const T* grow = gram.row(a);
        for (std::size_t b = 0; b < d; ++b) w[b] += va * grow[b];
      }
      // Deflate: w <- w - sum_k lambda_k <v, u_k> u_k
      for (std::size_t k = 0; k < found.size(); ++k) {
        T p = eigvals[k] * dot(v, found[k]);
        for (std::size_t i = 0; i < d; ++i) w[i] -= p * found[k][i];
      }
      // Re-orthogonalize for numerical hygiene.
      for (std::size_t k = 0; k < found.size(); ++k) {
        T p = dot(w, found[k]);
        for (std::size_t i = 0; i < d; ++i) w[i] -= p * found[k][i];
      }
      T nw = l2_norm(w);
      if (nw == T{}) break;  // in the null space: any unit vector qualifies
      for (auto& x : w) x /= nw;
      T align = std::abs(dot(w, v));
      v = std::move(w);
      if (T(1) - align < tol) {
        hit_max = false;
        break;
      }
    }
    if (hit_max) out.converged = false;

    // Rayleigh quotient on the *undeflated* Gram matrix gives sigma^2.
    Vector<T> gv(d, T{});
    for (std::size_t a = 0; a < d; ++a) {
      const T va = v[a];
      if (va == T{}) continue;
      const T* grow = gram.row(a);
      for (std::size_t b = 0; b < d; ++b) gv[b] += va * grow[b];
    }
    T lambda = dot(v, gv);
    if (lambda < T{}) lambda = T{};
    eigvals.push_back(lambda);
    found.push_back(v);
    out.vectors.push_back(std::move(v));
    out.singular_values.push_back(std::sqrt(lambda));
  }
  return out;
}

}  // namespace sal
