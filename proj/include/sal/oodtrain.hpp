#pragma once

// Training of the binary OOD classifier: starting from the pretrained
// backbone plus a zero-initialized scalar head, minimize the ID
// cross-entropy risk jointly with weighted sigmoid losses pushing the head
// score positive on labeled ID data and negative on the filtered candidate
// outliers. The decision level-set sits at score 0.

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "sal/datagen.hpp"
#include "sal/model.hpp"
#include "sal/numerics.hpp"

namespace sal {

struct OodHyper {
  double learning_rate = 0.001;
  std::size_t epochs = 100;
  std::size_t batch_size = 128;      // ID batch; candidate batch scales with
                                     // the set-size ratio
  double binary_loss_weight = 10.0;  // weight on both sigmoid terms
};

struct OodClassifier {
  MlpParams backbone;
  BinaryHeadParams head;
};

// Joint objective over full sets: mean xent on s_in plus
// binary_loss_weight * (mean sigmoid_loss(+1) on s_in + mean
// sigmoid_loss(-1) on s_t).
inline double ood_objective(const MlpParams& p, const BinaryHeadParams& head,
                            const LabeledSet& s_in, const Matrixd& s_t,
                            double binary_loss_weight) {
  if (s_in.size() == 0 || s_t.rows() == 0)
    throw std::invalid_argument("ood_objective: empty set");
  double xent = 0.0, sig_in = 0.0, sig_out = 0.0;
  for (std::size_t i = 0; i < s_in.size(); ++i) {
    const ForwardPass f = forward(p, s_in.points.row(i));
    xent += xent_loss(f.logits, s_in.labels[i]);
    const double s =
        dot(head.u.data(), f.penult.data(), f.penult.size()) + head.c;
    sig_in += sigmoid_loss(s, +1);
  }
  for (std::size_t i = 0; i < s_t.rows(); ++i)
    sig_out += sigmoid_loss(binary_score(p, head, s_t.row(i)), -1);
  return xent / static_cast<double>(s_in.size()) +
         binary_loss_weight * (sig_in / static_cast<double>(s_in.size()) +
                               sig_out / static_cast<double>(s_t.rows()));
}

namespace detail {

// Adds weight * d(sigmoid_loss(g(x), label))/d(params) into the backbone and
// head gradient buffers; returns the unweighted sample loss.
inline double accumulate_binary_grads(const MlpParams& p,
                                      const BinaryHeadParams& head,
                                      const double* x, int label,
                                      double weight, MlpGrads& g, Vectord& gu,
                                      double& gc) {
  const std::size_t h = p.hidden_dim(), d = p.input_dim();
  const ForwardPass f = forward(p, x);
  const double score = dot(head.u.data(), f.penult.data(), h) + head.c;
  const double ds = weight * sigmoid_loss_dscore(score, label);
  for (std::size_t j = 0; j < h; ++j) gu[j] += ds * f.penult[j];
  gc += ds;
  for (std::size_t j = 0; j < h; ++j) {
    const double dpen = ds * head.u[j];
    if (dpen == 0.0) continue;  // zero-init head: first pass touches nothing
    const double dpre = dpen * bump_derivative(f.preact[j], f.penult[j]);
    double* grow = g.W1.row(j);
    for (std::size_t i = 0; i < d; ++i) grow[i] += dpre * x[i];
    g.b1[j] += dpre;
  }
  return sigmoid_loss(score, label);
}

inline void add_scaled(MlpGrads& dst, const MlpGrads& src, double s) {
  for (std::size_t i = 0; i < dst.W1.data().size(); ++i)
    dst.W1.data()[i] += s * src.W1.data()[i];
  for (std::size_t i = 0; i < dst.b1.size(); ++i) dst.b1[i] += s * src.b1[i];
  for (std::size_t i = 0; i < dst.W2.data().size(); ++i)
    dst.W2.data()[i] += s * src.W2.data()[i];
  for (std::size_t i = 0; i < dst.b2.size(); ++i) dst.b2[i] += s * src.b2[i];
}

}  // namespace detail

// One ID batch and one candidate batch per step, sizes proportional to the
// two set sizes, both orders reshuffled each epoch (the candidate order is
// walked cyclically so rounding never yields an empty batch). Plain SGD.
inline OodClassifier train_ood_classifier(const LabeledSet& s_in,
                                          const Matrixd& s_t,
                                          const MlpParams& pretrained,
                                          const OodHyper& h, Rng& rng) {
  if (s_in.size() == 0)
    throw std::invalid_argument("train_ood_classifier: empty ID set");
  if (s_t.rows() == 0)
    throw std::runtime_error(
        "train_ood_classifier: candidate outlier set is empty — lower the "
        "filtering threshold percentile or check the filtering stage");
  if (h.batch_size == 0 || !(h.learning_rate > 0.0) ||
      !(h.binary_loss_weight > 0.0))
    throw std::invalid_argument("train_ood_classifier: bad hyperparameters");

  OodClassifier c;
  c.backbone = pretrained;
  c.head.u.assign(c.backbone.hidden_dim(), 0.0);
  c.head.c = 0.0;

  const std::size_t n = s_in.size(), nt = s_t.rows();
  const std::size_t bs = std::min(h.batch_size, n);
  const std::size_t bs_t = std::max<std::size_t>(
      1, static_cast<std::size_t>(
             std::llround(static_cast<double>(bs) * static_cast<double>(nt) /
                          static_cast<double>(n))));

  std::vector<std::size_t> order_in(n), order_t(nt);
  std::iota(order_in.begin(), order_in.end(), std::size_t{0});
  std::iota(order_t.begin(), order_t.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < h.epochs; ++epoch) {
    rng.shuffle(order_in);
    rng.shuffle(order_t);
    std::size_t step = 0;
    for (std::size_t start = 0; start < n; start += bs, ++step) {
      const std::size_t stop = std::min(start + bs, n);
      const std::size_t nb = stop - start;

      MlpGrads g(c.backbone);    // binary-loss grads, weighted as they come
      MlpGrads gx(c.backbone);   // xent grads, scaled to the mean afterwards
      Vectord gu(c.head.u.size(), 0.0);
      double gc = 0.0;
      double batch_loss = 0.0;

      const double w_in = h.binary_loss_weight / static_cast<double>(nb);
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t i = order_in[k];
        const double* x = s_in.points.row(i);
        batch_loss += accumulate_xent_grads(c.backbone, x, s_in.labels[i], gx);
        batch_loss += h.binary_loss_weight *
                      detail::accumulate_binary_grads(c.backbone, c.head, x,
                                                      +1, w_in, g, gu, gc);
      }
      detail::add_scaled(g, gx, 1.0 / static_cast<double>(nb));

      const double w_t = h.binary_loss_weight / static_cast<double>(bs_t);
      for (std::size_t k = 0; k < bs_t; ++k) {
        const std::size_t i = order_t[(step * bs_t + k) % nt];
        batch_loss += h.binary_loss_weight *
                      detail::accumulate_binary_grads(c.backbone, c.head,
                                                      s_t.row(i), -1, w_t, g,
                                                      gu, gc);
      }

      if (!std::isfinite(batch_loss))
        throw std::runtime_error(
            "train_ood_classifier: non-finite loss at epoch " +
            std::to_string(epoch) + ", step " + std::to_string(step));

      const double lr = h.learning_rate;
      auto& w1 = c.backbone.W1.data();
      const auto& g1 = g.W1.data();
      for (std::size_t i = 0; i < w1.size(); ++i) w1[i] -= lr * g1[i];
      for (std::size_t i = 0; i < c.backbone.b1.size(); ++i)
        c.backbone.b1[i] -= lr * g.b1[i];
      auto& w2 = c.backbone.W2.data();
      const auto& g2 = g.W2.data();
      for (std::size_t i = 0; i < w2.size(); ++i) w2[i] -= lr * g2[i];
      for (std::size_t i = 0; i < c.backbone.b2.size(); ++i)
        c.backbone.b2[i] -= lr * g.b2[i];
      for (std::size_t i = 0; i < c.head.u.size(); ++i)
        c.head.u[i] -= lr * gu[i];
      c.head.c -= lr * gc;
    }
  }
  return c;
}

}  // namespace sal
