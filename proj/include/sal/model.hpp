#pragma once

// The K-class predictor (two-layer network with a smooth localized activation
// + softmax head), the scalar binary head used for OOD detection, their
// losses, and exact analytic gradients — including the last-layer gradient
// slice the filtering stage projects.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sal/numerics.hpp"

namespace sal {

// Hidden-unit activation: a smooth Gaussian bump, phi(t) = exp(-t^2).
// Each unit responds only near the slab |w.x + b| < ~1 of input space, so far
// from the training data every unit's response decays to zero and the logits
// collapse to the output bias. That keeps the network's softmax close to the
// class prior on far-away points instead of extrapolating confidently the way
// monotone (sigmoid/tanh/relu) units do — which is exactly the behavior the
// gradient-filtering stage needs: uncertain predictions keep loss gradients
// alive on outliers.
inline double bump(double t) { return std::exp(-t * t); }
inline double bump_derivative(double t, double value) {
  return -2.0 * t * value;  // d/dt exp(-t^2), reusing the forward value
}

struct MlpParams {
  Matrixd W1;   // hidden x input
  Vectord b1;   // hidden
  Matrixd W2;   // classes x hidden
  Vectord b2;   // classes

  std::size_t input_dim() const { return W1.cols(); }
  std::size_t hidden_dim() const { return b1.size(); }
  std::size_t num_classes() const { return b2.size(); }
};

// g(x) = <u, penult(x)> + c; higher means more ID.
struct BinaryHeadParams {
  Vectord u;  // hidden
  double c = 0.0;
};

// First layer: uniform(+-w1_scale) weights, uniform(+-b1_scale) biases — the
// weight scale sets each unit's receptive-field width, the bias range
// scatters unit centers across the data domain. Second layer: the usual
// uniform(+-1/sqrt(fan_in)).
inline MlpParams init_mlp(std::size_t input_dim, std::size_t hidden_dim,
                          std::size_t num_classes, double w1_scale,
                          double b1_scale, Rng& rng) {
  MlpParams p;
  p.W1 = Matrixd(hidden_dim, input_dim);
  p.b1.resize(hidden_dim);
  p.W2 = Matrixd(num_classes, hidden_dim);
  p.b2.resize(num_classes);
  for (auto& v : p.W1.data()) v = rng.uniform(-w1_scale, w1_scale);
  for (auto& v : p.b1) v = rng.uniform(-b1_scale, b1_scale);
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  for (auto& v : p.W2.data()) v = rng.uniform(-s2, s2);
  for (auto& v : p.b2) v = rng.uniform(-s2, s2);
  return p;
}

struct ForwardPass {
  Vectord preact;  // W1.x + b1 (kept for backprop through the activation)
  Vectord penult;  // bump(preact)
  Vectord logits;  // W2.penult + b2
};

inline ForwardPass forward(const MlpParams& p, const double* x) {
  const std::size_t h = p.hidden_dim(), d = p.input_dim(), k = p.num_classes();
  ForwardPass f;
  f.preact.resize(h);
  f.penult.resize(h);
  for (std::size_t j = 0; j < h; ++j) {
    double t = p.b1[j];
    const double* wrow = p.W1.row(j);
    for (std::size_t i = 0; i < d; ++i) t += wrow[i] * x[i];
    f.preact[j] = t;
    f.penult[j] = bump(t);
  }
  f.logits.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    double t = p.b2[c];
    const double* wrow = p.W2.row(c);
    for (std::size_t j = 0; j < h; ++j) t += wrow[j] * f.penult[j];
    f.logits[c] = t;
  }
  return f;
}

inline ForwardPass forward(const MlpParams& p, const Vectord& x) {
  if (x.size() != p.input_dim())
    throw std::invalid_argument("forward: input dimension mismatch");
  return forward(p, x.data());
}

// softmax with the max subtracted; sums to 1 within 1e-12.
inline Vectord softmax(const Vectord& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  Vectord p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

inline double log_sum_exp(const Vectord& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  return mx + std::log(z);
}

inline double xent_loss(const Vectord& logits, int y) {
  if (y < 0 || static_cast<std::size_t>(y) >= logits.size())
    throw std::invalid_argument("xent_loss: label out of range");
  return log_sum_exp(logits) - logits[static_cast<std::size_t>(y)];
}

// argmax, ties broken by lowest index.
inline int predict_label(const MlpParams& p, const double* x) {
  const Vectord logits = forward(p, x).logits;
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return static_cast<int>(best);
}

inline int predict_label(const MlpParams& p, const Vectord& x) {
  return predict_label(p, x.data());
}

// dL/dlogits for cross-entropy: softmax(logits) - onehot(y).
inline Vectord xent_dlogits(const Vectord& logits, int y) {
  Vectord d = softmax(logits);
  d[static_cast<std::size_t>(y)] -= 1.0;
  return d;
}

// Gradient of xent_loss w.r.t. the last-layer weights W2 only, flattened
// row-major to length K*hidden: (softmax(logits) - onehot(y)) (x) penult.
inline Vectord grad_last_layer(const MlpParams& p, const double* x, int y) {
  const ForwardPass f = forward(p, x);
  const Vectord d = xent_dlogits(f.logits, y);
  const std::size_t h = p.hidden_dim(), k = p.num_classes();
  Vectord g(k * h);
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t j = 0; j < h; ++j) g[c * h + j] = d[c] * f.penult[j];
  return g;
}

inline Vectord grad_last_layer(const MlpParams& p, const Vectord& x, int y) {
  return grad_last_layer(p, x.data(), y);
}

// Gradient accumulator shaped like the parameters.
struct MlpGrads {
  Matrixd W1;
  Vectord b1;
  Matrixd W2;
  Vectord b2;

  explicit MlpGrads(const MlpParams& p)
      : W1(p.W1.rows(), p.W1.cols()),
        b1(p.b1.size(), 0.0),
        W2(p.W2.rows(), p.W2.cols()),
        b2(p.b2.size(), 0.0) {}

  void scale(double s) {
    for (auto& v : W1.data()) v *= s;
    for (auto& v : b1) v *= s;
    for (auto& v : W2.data()) v *= s;
    for (auto& v : b2) v *= s;
  }
};

// Adds this sample's full-parameter cross-entropy gradient into `g`;
// returns the sample's loss.
inline double accumulate_xent_grads(const MlpParams& p, const double* x, int y,
                                    MlpGrads& g) {
  const std::size_t h = p.hidden_dim(), d = p.input_dim(), k = p.num_classes();
  const ForwardPass f = forward(p, x);
  const Vectord dl = xent_dlogits(f.logits, y);
  for (std::size_t c = 0; c < k; ++c) {
    double* grow = g.W2.row(c);
    for (std::size_t j = 0; j < h; ++j) grow[j] += dl[c] * f.penult[j];
    g.b2[c] += dl[c];
  }
  for (std::size_t j = 0; j < h; ++j) {
    double dpen = 0.0;
    for (std::size_t c = 0; c < k; ++c) dpen += dl[c] * p.W2(c, j);
    const double dpre = dpen * bump_derivative(f.preact[j], f.penult[j]);
    double* grow = g.W1.row(j);
    for (std::size_t i = 0; i < d; ++i) grow[i] += dpre * x[i];
    g.b1[j] += dpre;
  }
  return xent_loss(f.logits, y);
}

// Full-parameter gradient flattened in [W1 | b1 | W2 | b2] order, each block
// row-major — the FULL gradient-scope ablation and the finite-difference
// tests use this layout.
inline std::size_t flat_param_size(const MlpParams& p) {
  return p.W1.data().size() + p.b1.size() + p.W2.data().size() + p.b2.size();
}

inline Vectord grad_full(const MlpParams& p, const double* x, int y) {
  MlpGrads g(p);
  accumulate_xent_grads(p, x, y, g);
  Vectord out;
  out.reserve(flat_param_size(p));
  out.insert(out.end(), g.W1.data().begin(), g.W1.data().end());
  out.insert(out.end(), g.b1.begin(), g.b1.end());
  out.insert(out.end(), g.W2.data().begin(), g.W2.data().end());
  out.insert(out.end(), g.b2.begin(), g.b2.end());
  return out;
}

inline double binary_score(const MlpParams& p, const BinaryHeadParams& head,
                           const double* x) {
  const ForwardPass f = forward(p, x);
  return dot(head.u.data(), f.penult.data(), f.penult.size()) + head.c;
}

inline double binary_score(const MlpParams& p, const BinaryHeadParams& head,
                           const Vectord& x) {
  return binary_score(p, head, x.data());
}

// ln(1 + exp(-y*score)), numerically stable for |score| up to ~1e4.
inline double sigmoid_loss(double score, int label) {
  if (label != 1 && label != -1)
    throw std::invalid_argument("sigmoid_loss: label must be +1 or -1");
  const double t = static_cast<double>(label) * score;
  if (t >= 0.0) return std::log1p(std::exp(-t));
  return -t + std::log1p(std::exp(t));
}

// d sigmoid_loss / d score = -y * sigma(-y*score).
inline double sigmoid_loss_dscore(double score, int label) {
  const double t = static_cast<double>(label) * score;
  double sig_neg;  // sigma(-t), computed without overflow
  if (t >= 0.0) {
    const double e = std::exp(-t);
    sig_neg = e / (1.0 + e);
  } else {
    sig_neg = 1.0 / (1.0 + std::exp(t));
  }
  return -static_cast<double>(label) * sig_neg;
}

// l2 norm of the gradient (w.r.t. W2) of KL(uniform || softmax(logits(x))).
// dKL/dlogits = softmax - uniform, so the W2 gradient is that vector outer
// the penultimate features.
inline double gradnorm_score(const MlpParams& p, const double* x) {
  const ForwardPass f = forward(p, x);
  Vectord d = softmax(f.logits);
  const double u = 1.0 / static_cast<double>(d.size());
  for (auto& v : d) v -= u;
  double s = 0.0;
  for (std::size_t c = 0; c < d.size(); ++c)
    for (std::size_t j = 0; j < f.penult.size(); ++j) {
      const double g = d[c] * f.penult[j];
      s += g * g;
    }
  return std::sqrt(s);
}

inline double gradnorm_score(const MlpParams& p, const Vectord& x) {
  return gradnorm_score(p, x.data());
}

// --------------------------------------------------------------------------
// Parameter serialization: named tensors, shapes, row-major %.17g values.
// Round-trip exact. A file holds the backbone and, optionally, the binary
// head (written by the OOD training stage).

namespace detail {

inline void write_tensor(std::ofstream& f, const char* name,
                         const double* data, std::size_t rows,
                         std::size_t cols) {
  f << "tensor " << name << ' ' << rows << ' ' << cols << '\n';
  char buf[32];
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (c) f << ' ';
      std::snprintf(buf, sizeof(buf), "%.17g", data[r * cols + c]);
      f << buf;
    }
    f << '\n';
  }
}

struct NamedTensor {
  std::string name;
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;
};

inline std::vector<NamedTensor> read_tensors(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open params file: " + path);
  std::vector<NamedTensor> out;
  std::string word;
  while (f >> word) {
    if (word != "tensor")
      throw std::runtime_error("params file " + path +
                               ": expected 'tensor', got '" + word + "'");
    NamedTensor t;
    if (!(f >> t.name >> t.rows >> t.cols))
      throw std::runtime_error("params file " + path + ": bad tensor header");
    t.values.resize(t.rows * t.cols);
    for (auto& v : t.values)
      if (!(f >> v))
        throw std::runtime_error("params file " + path +
                                 ": truncated tensor '" + t.name + "'");
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace detail

inline void save_params(const std::string& path, const MlpParams& p,
                        const BinaryHeadParams* head = nullptr) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.precision(17);
  detail::write_tensor(f, "W1", p.W1.data().data(), p.W1.rows(), p.W1.cols());
  detail::write_tensor(f, "b1", p.b1.data(), p.b1.size(), 1);
  detail::write_tensor(f, "W2", p.W2.data().data(), p.W2.rows(), p.W2.cols());
  detail::write_tensor(f, "b2", p.b2.data(), p.b2.size(), 1);
  if (head) {
    detail::write_tensor(f, "head_u", head->u.data(), head->u.size(), 1);
    detail::write_tensor(f, "head_c", &head->c, 1, 1);
  }
}

struct LoadedParams {
  MlpParams mlp;
  std::optional<BinaryHeadParams> head;
};

inline LoadedParams load_params(const std::string& path) {
  LoadedParams out;
  bool have_w1 = false, have_b1 = false, have_w2 = false, have_b2 = false;
  Vectord head_u;
  std::optional<double> head_c;
  for (auto& t : detail::read_tensors(path)) {
    if (t.name == "W1") {
      out.mlp.W1 = Matrixd(t.rows, t.cols);
      out.mlp.W1.data() = std::move(t.values);
      have_w1 = true;
    } else if (t.name == "b1") {
      out.mlp.b1 = std::move(t.values);
      have_b1 = true;
    } else if (t.name == "W2") {
      out.mlp.W2 = Matrixd(t.rows, t.cols);
      out.mlp.W2.data() = std::move(t.values);
      have_w2 = true;
    } else if (t.name == "b2") {
      out.mlp.b2 = std::move(t.values);
      have_b2 = true;
    } else if (t.name == "head_u") {
      head_u = std::move(t.values);
    } else if (t.name == "head_c") {
      head_c = t.values.at(0);
    } else {
      throw std::runtime_error("params file " + path + ": unknown tensor '" +
                               t.name + "'");
    }
  }
  if (!(have_w1 && have_b1 && have_w2 && have_b2))
    throw std::runtime_error("params file " + path + ": missing tensors");
  if (!head_u.empty() || head_c) {
    if (head_u.empty() || !head_c)
      throw std::runtime_error("params file " + path +
                               ": incomplete binary head");
    BinaryHeadParams h;
    h.u = std::move(head_u);
    h.c = *head_c;
    out.head = std::move(h);
  }
  return out;
}

}  // namespace sal
