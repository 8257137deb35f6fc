#pragma once

// Supervised training of the K-class predictor on labeled ID data:
// minibatch SGD with momentum and weight decay on the cross-entropy risk.

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "sal/datagen.hpp"
#include "sal/model.hpp"
#include "sal/numerics.hpp"

namespace sal {

struct ErmConfig {
  std::size_t hidden_dim = 64;
  double w1_scale = 0.15;    // first-layer weight init range (+-)
  double b1_scale = 1.0;     // first-layer bias init range (+-)
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 128;
  std::size_t epochs = 100;
};

inline double empirical_risk(const MlpParams& p, const LabeledSet& set) {
  if (set.size() == 0) throw std::invalid_argument("empirical_risk: empty set");
  double total = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i)
    total += xent_loss(forward(p, set.points.row(i)).logits, set.labels[i]);
  return total / static_cast<double>(set.size());
}

inline double accuracy(const MlpParams& p, const LabeledSet& set) {
  if (set.size() == 0) throw std::invalid_argument("accuracy: empty set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < set.size(); ++i)
    if (predict_label(p, set.points.row(i)) == set.labels[i]) ++hit;
  return static_cast<double>(hit) / static_cast<double>(set.size());
}

// Trains from a fresh init drawn from `rng`; the same rng then drives the
// epoch shuffles, so one (seed, config, data) triple fixes the whole run.
// epochs == 0 returns the untouched init.
inline MlpParams train_erm(const LabeledSet& train, const ErmConfig& cfg,
                           Rng& rng) {
  if (train.size() == 0) throw std::invalid_argument("train_erm: empty set");
  if (cfg.batch_size == 0)
    throw std::invalid_argument("train_erm: batch_size must be positive");
  if (cfg.hidden_dim == 0)
    throw std::invalid_argument("train_erm: hidden_dim must be positive");

  MlpParams p =
      init_mlp(train.points.cols(), cfg.hidden_dim,
               static_cast<std::size_t>(train.num_classes), cfg.w1_scale,
               cfg.b1_scale, rng);
  MlpGrads vel(p);  // momentum buffers, zero-initialized

  const std::size_t n = train.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    std::size_t step = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size, ++step) {
      const std::size_t stop = std::min(start + cfg.batch_size, n);
      MlpGrads g(p);
      double batch_loss = 0.0;
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t i = order[k];
        batch_loss +=
            accumulate_xent_grads(p, train.points.row(i), train.labels[i], g);
      }
      if (!std::isfinite(batch_loss))
        throw std::runtime_error(
            "train_erm: non-finite loss at epoch " + std::to_string(epoch) +
            ", step " + std::to_string(step) + " (learning rate too high?)");
      g.scale(1.0 / static_cast<double>(stop - start));

      const double lr = cfg.learning_rate, mom = cfg.momentum,
                   wd = cfg.weight_decay;
      auto step = [&](Matrixd& param, Matrixd& v, const Matrixd& grad) {
        auto& pv = param.data();
        auto& vv = v.data();
        const auto& gv = grad.data();
        for (std::size_t i = 0; i < pv.size(); ++i) {
          vv[i] = mom * vv[i] + (gv[i] + wd * pv[i]);
          pv[i] -= lr * vv[i];
        }
      };
      auto step_vec = [&](Vectord& param, Vectord& v, const Vectord& grad) {
        for (std::size_t i = 0; i < param.size(); ++i) {
          v[i] = mom * v[i] + (grad[i] + wd * param[i]);
          param[i] -= lr * v[i];
        }
      };
      step(p.W1, vel.W1, g.W1);
      step_vec(p.b1, vel.b1, g.b1);
      step(p.W2, vel.W2, g.W2);
      step_vec(p.b2, vel.b2, g.b2);
    }
  }
  return p;
}

}  // namespace sal
