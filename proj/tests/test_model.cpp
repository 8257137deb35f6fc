#include "sal/model.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "oracles.hpp"

using Catch::Approx;
using Catch::Matchers::ContainsSubstring;
using namespace sal;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

MlpParams random_mlp(std::size_t input, std::size_t hidden, std::size_t classes,
                     Rng& rng) {
  return init_mlp(input, hidden, classes, 0.8, 0.8, rng);
}

// Flat [W1 | b1 | W2 | b2] view used to drive the finite-difference oracle.
Vectord flatten(const MlpParams& p) {
  Vectord out;
  out.insert(out.end(), p.W1.data().begin(), p.W1.data().end());
  out.insert(out.end(), p.b1.begin(), p.b1.end());
  out.insert(out.end(), p.W2.data().begin(), p.W2.data().end());
  out.insert(out.end(), p.b2.begin(), p.b2.end());
  return out;
}

MlpParams unflatten(const MlpParams& shape, const Vectord& flat) {
  MlpParams p = shape;
  std::size_t k = 0;
  for (auto& v : p.W1.data()) v = flat[k++];
  for (auto& v : p.b1) v = flat[k++];
  for (auto& v : p.W2.data()) v = flat[k++];
  for (auto& v : p.b2) v = flat[k++];
  return p;
}

}  // namespace

TEST_CASE("localized activation", "[model]") {
  CHECK(bump(0.0) == 1.0);
  CHECK(bump(1.0) == Approx(std::exp(-1.0)));
  CHECK(bump(-1.0) == bump(1.0));
  CHECK(bump(6.0) < 1e-15);  // far-field responses vanish
  // derivative identity d/dt exp(-t^2) = -2t exp(-t^2)
  for (double t : {-1.5, -0.3, 0.0, 0.7, 2.0}) {
    const double v = bump(t);
    CHECK(bump_derivative(t, v) == Approx(-2.0 * t * v).margin(1e-15));
  }
}

TEST_CASE("forward pass", "[model]") {
  SECTION("all-zero parameters give zero logits") {
    MlpParams p;
    p.W1 = Matrixd(4, 2, 0.0);
    p.b1.assign(4, 0.0);
    p.W2 = Matrixd(3, 4, 0.0);
    p.b2.assign(3, 0.0);
    const ForwardPass f = forward(p, Vectord{1.0, -2.0});
    for (double l : f.logits) CHECK(l == 0.0);
    // every hidden unit sits at the center of its slab: full response
    for (double h : f.penult) CHECK(h == 1.0);
  }
  SECTION("1-1-1 net at the slab center passes the unit response through") {
    MlpParams p;
    p.W1 = Matrixd(1, 1);
    p.W1(0, 0) = 1.0;
    p.b1 = {0.0};
    p.W2 = Matrixd(1, 1);
    p.W2(0, 0) = 1.0;
    p.b2 = {0.0};
    const ForwardPass f = forward(p, Vectord{0.0});
    CHECK(f.penult[0] == 1.0);   // activation value at preactivation 0
    CHECK(f.logits[0] == 1.0);
  }
  SECTION("2-2-2 net matches a hand evaluation") {
    MlpParams p;
    p.W1 = Matrixd(2, 2);
    p.W1(0, 0) = 1.0; p.W1(0, 1) = 0.0;
    p.W1(1, 0) = 0.0; p.W1(1, 1) = 1.0;
    p.b1 = {0.5, -0.5};
    p.W2 = Matrixd(2, 2);
    p.W2(0, 0) = 1.0; p.W2(0, 1) = 2.0;
    p.W2(1, 0) = 3.0; p.W2(1, 1) = 4.0;
    p.b2 = {0.1, 0.2};
    const ForwardPass f = forward(p, Vectord{0.25, 0.25});
    const double h0 = std::exp(-0.75 * 0.75);   // pre = 0.25 + 0.5
    const double h1 = std::exp(-0.25 * 0.25);   // pre = 0.25 - 0.5
    CHECK(f.preact[0] == Approx(0.75));
    CHECK(f.preact[1] == Approx(-0.25));
    CHECK(f.logits[0] == Approx(0.1 + h0 + 2.0 * h1).epsilon(1e-14));
    CHECK(f.logits[1] == Approx(0.2 + 3.0 * h0 + 4.0 * h1).epsilon(1e-14));
  }
  SECTION("input dimension mismatch") {
    Rng rng(1);
    const MlpParams p = random_mlp(2, 4, 3, rng);
    CHECK_THROWS_AS(forward(p, Vectord{1.0, 2.0, 3.0}), std::invalid_argument);
  }
}

TEST_CASE("softmax and cross-entropy", "[model]") {
  SECTION("softmax sums to one") {
    Rng rng(2);
    for (int rep = 0; rep < 50; ++rep) {
      Vectord logits(5);
      for (auto& v : logits) v = 10.0 * rng.normal();
      const Vectord p = softmax(logits);
      double s = 0.0;
      for (double v : p) s += v;
      REQUIRE(std::abs(s - 1.0) < 1e-12);
      for (double v : p) REQUIRE(v >= 0.0);
    }
  }
  SECTION("uniform logits cost ln K") {
    CHECK(xent_loss({0.7, 0.7, 0.7}, 1) == Approx(std::log(3.0)).epsilon(1e-12));
  }
  SECTION("saturated correct class costs nearly nothing") {
    const double l = xent_loss({10.0, -10.0}, 0);
    CHECK(l > 0.0);
    CHECK(l < 1e-8);
  }
  SECTION("cross-entropy is non-negative and matches log-sum-exp form") {
    Rng rng(3);
    for (int rep = 0; rep < 50; ++rep) {
      Vectord logits(4);
      for (auto& v : logits) v = 5.0 * rng.normal();
      const int y = static_cast<int>(rng.below(4));
      const double l = xent_loss(logits, y);
      REQUIRE(l >= 0.0);
      // margin absorbs the cancellation in -log(p) when p is within eps of 1
      REQUIRE(l == Approx(-std::log(softmax(logits)[static_cast<std::size_t>(
                       y)])).epsilon(1e-10).margin(1e-12));
    }
  }
  SECTION("label out of range") {
    CHECK_THROWS_AS(xent_loss({1.0, 2.0}, 2), std::invalid_argument);
    CHECK_THROWS_AS(xent_loss({1.0, 2.0}, -1), std::invalid_argument);
  }
}

TEST_CASE("label prediction", "[model]") {
  // Nets with zero W1/W2 and a chosen output bias produce constant logits
  // equal to b2, which pins the argmax exactly.
  auto net_with_logits = [](Vectord logits) {
    MlpParams p;
    p.W1 = Matrixd(2, 2, 0.0);
    p.b1.assign(2, 0.0);
    p.W2 = Matrixd(logits.size(), 2, 0.0);
    p.b2 = std::move(logits);
    return p;
  };
  const Vectord x{0.0, 0.0};
  CHECK(predict_label(net_with_logits({0.1, 3.0, -1.0}), x) == 1);
  CHECK(predict_label(net_with_logits({2.0, 2.0, 0.0}), x) == 0);  // tie rule
  SECTION("agrees with a linear max-scan oracle") {
    Rng rng(4);
    for (int rep = 0; rep < 50; ++rep) {
      Vectord logits(6);
      for (auto& v : logits) v = rng.normal();
      const MlpParams p = net_with_logits(logits);
      std::size_t best = 0;
      for (std::size_t i = 0; i < logits.size(); ++i)
        if (logits[i] > logits[best]) best = i;
      REQUIRE(predict_label(p, x) == static_cast<int>(best));
    }
  }
}

TEST_CASE("last-layer gradient", "[model][grad]") {
  Rng rng(5);
  SECTION("saturated correct prediction has a vanishing gradient") {
    MlpParams p = random_mlp(2, 3, 3, rng);
    p.b2 = {100.0, 0.0, 0.0};  // softmax is one-hot to double precision
    const Vectord g = grad_last_layer(p, Vectord{0.1, 0.2}, 0);
    for (double v : g) CHECK(std::abs(v) < 1e-40);
  }
  SECTION("length is classes times hidden") {
    const MlpParams p = random_mlp(2, 5, 4, rng);
    CHECK(grad_last_layer(p, Vectord{0.3, -0.4}, 2).size() == 20);
  }
  SECTION("equals the last-layer slice of the full gradient") {
    for (int rep = 0; rep < 10; ++rep) {
      const MlpParams p = random_mlp(3, 4, 3, rng);
      Vectord x(3);
      for (auto& v : x) v = rng.normal();
      const int y = static_cast<int>(rng.below(3));
      const Vectord slice = grad_last_layer(p, x, y);
      const Vectord full = grad_full(p, x.data(), y);
      const std::size_t off = p.W1.data().size() + p.b1.size();
      for (std::size_t k = 0; k < slice.size(); ++k)
        REQUIRE(slice[k] == Approx(full[off + k]).margin(1e-15));
    }
  }
  SECTION("matches central finite differences over the last layer") {
    for (int rep = 0; rep < 10; ++rep) {
      MlpParams p = random_mlp(2, 4, 3, rng);
      Vectord x(2);
      for (auto& v : x) v = rng.normal();
      const int y = static_cast<int>(rng.below(3));
      const Vectord analytic = grad_last_layer(p, x, y);
      auto f = [&](const Vectord& w2flat) {
        MlpParams q = p;
        q.W2.data() = w2flat;
        return xent_loss(forward(q, x).logits, y);
      };
      const Vectord fd = oracle::fd_gradient(f, p.W2.data());
      REQUIRE(oracle::rel_error(analytic, fd) <= 1e-4);
    }
  }
}

TEST_CASE("full-parameter gradient matches finite differences",
          "[model][grad]") {
  Rng rng(6);
  for (int rep = 0; rep < 10; ++rep) {
    const MlpParams p = random_mlp(2, 4, 3, rng);
    Vectord x(2);
    for (auto& v : x) v = rng.normal();
    const int y = static_cast<int>(rng.below(3));
    const Vectord analytic = grad_full(p, x.data(), y);
    auto f = [&](const Vectord& flat) {
      return xent_loss(forward(unflatten(p, flat), x).logits, y);
    };
    const Vectord fd = oracle::fd_gradient(f, flatten(p));
    REQUIRE(analytic.size() == fd.size());
    REQUIRE(oracle::rel_error(analytic, fd) <= 1e-4);
  }
}

TEST_CASE("binary head score", "[model]") {
  Rng rng(7);
  const MlpParams p = random_mlp(2, 3, 3, rng);
  SECTION("zero head scores zero everywhere") {
    BinaryHeadParams h;
    h.u.assign(3, 0.0);
    h.c = 0.0;
    for (int rep = 0; rep < 5; ++rep) {
      Vectord x{rng.normal(), rng.normal()};
      CHECK(binary_score(p, h, x) == 0.0);
    }
  }
  SECTION("constant head scores its bias") {
    BinaryHeadParams h;
    h.u.assign(3, 0.0);
    h.c = 5.0;
    CHECK(binary_score(p, h, Vectord{0.4, -0.1}) == 5.0);
  }
  SECTION("matches hand arithmetic on the penultimate features") {
    BinaryHeadParams h;
    h.u = {1.0, -2.0, 0.5};
    h.c = 0.25;
    const Vectord x{0.3, 0.6};
    const ForwardPass f = forward(p, x);
    const double want =
        1.0 * f.penult[0] - 2.0 * f.penult[1] + 0.5 * f.penult[2] + 0.25;
    CHECK(binary_score(p, h, x) == Approx(want).epsilon(1e-14));
  }
}

TEST_CASE("sigmoid loss", "[model]") {
  SECTION("score zero costs ln 2 for both labels") {
    CHECK(sigmoid_loss(0.0, +1) == Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(sigmoid_loss(0.0, -1) == Approx(std::log(2.0)).epsilon(1e-12));
  }
  SECTION("saturation without overflow") {
    const double l = sigmoid_loss(50.0, +1);
    CHECK(l > 0.0);
    CHECK(l < 1e-20);
    CHECK(std::isfinite(sigmoid_loss(1e4, -1)));
    CHECK(std::isfinite(sigmoid_loss(-1e4, +1)));
  }
  SECTION("label-sign symmetry") {
    Rng rng(8);
    for (int rep = 0; rep < 30; ++rep) {
      const double s = 20.0 * rng.normal();
      REQUIRE(sigmoid_loss(s, +1) == Approx(sigmoid_loss(-s, -1)).epsilon(1e-12));
    }
  }
  SECTION("derivative matches finite differences") {
    Rng rng(9);
    for (int rep = 0; rep < 30; ++rep) {
      const double s = 5.0 * rng.normal();
      const int y = rng.below(2) == 0 ? +1 : -1;
      const double h = 1e-5;
      const double fd =
          (sigmoid_loss(s + h, y) - sigmoid_loss(s - h, y)) / (2.0 * h);
      const double an = sigmoid_loss_dscore(s, y);
      REQUIRE(std::abs(an - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
  SECTION("labels outside {-1,+1} are rejected") {
    CHECK_THROWS_AS(sigmoid_loss(0.0, 0), std::invalid_argument);
    CHECK_THROWS_AS(sigmoid_loss(0.0, 2), std::invalid_argument);
  }
}

TEST_CASE("uniform-divergence gradient score", "[model]") {
  Rng rng(10);
  SECTION("exactly uniform output scores zero") {
    MlpParams p = random_mlp(2, 3, 3, rng);
    p.W2 = Matrixd(3, 3, 0.0);
    p.b2.assign(3, 0.7);  // constant logits: softmax is exactly uniform
    CHECK(gradnorm_score(p, Vectord{0.2, -0.3}) == 0.0);
  }
  SECTION("non-negative") {
    const MlpParams p = random_mlp(2, 4, 3, rng);
    for (int rep = 0; rep < 10; ++rep)
      CHECK(gradnorm_score(p, Vectord{rng.normal(), rng.normal()}) >= 0.0);
  }
  SECTION("analytic gradient matches finite differences of the divergence") {
    for (int rep = 0; rep < 10; ++rep) {
      MlpParams p = random_mlp(2, 3, 3, rng);
      Vectord x{rng.normal(), rng.normal()};
      // KL(uniform || softmax(logits)) as a function of the last layer
      auto kl = [&](const Vectord& w2flat) {
        MlpParams q = p;
        q.W2.data() = w2flat;
        const Vectord sm = softmax(forward(q, x).logits);
        const double u = 1.0 / static_cast<double>(sm.size());
        double s = 0.0;
        for (double v : sm) s += u * (std::log(u) - std::log(v));
        return s;
      };
      const Vectord fd = oracle::fd_gradient(kl, p.W2.data());
      // analytic gradient: (softmax - uniform) outer penult
      const ForwardPass f = forward(p, x);
      Vectord d = softmax(f.logits);
      for (auto& v : d) v -= 1.0 / 3.0;
      Vectord analytic(9);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t j = 0; j < 3; ++j)
          analytic[c * 3 + j] = d[c] * f.penult[j];
      REQUIRE(oracle::rel_error(analytic, fd) <= 1e-4);
      REQUIRE(gradnorm_score(p, x) == Approx(l2_norm(analytic)).epsilon(1e-12));
    }
  }
}

TEST_CASE("parameter serialization", "[model][io]") {
  Rng rng(11);
  const MlpParams p = random_mlp(2, 4, 3, rng);
  SECTION("backbone round-trips exactly") {
    const std::string path = temp_path("sal_test_params.txt");
    save_params(path, p);
    const LoadedParams r = load_params(path);
    CHECK(r.mlp.W1 == p.W1);
    CHECK(r.mlp.b1 == p.b1);
    CHECK(r.mlp.W2 == p.W2);
    CHECK(r.mlp.b2 == p.b2);
    CHECK_FALSE(r.head.has_value());
    std::filesystem::remove(path);
  }
  SECTION("backbone plus head round-trips exactly") {
    BinaryHeadParams h;
    h.u = {1.0 / 3.0, -2.25, 1e-300, 0.5};
    h.c = -7.125;
    const std::string path = temp_path("sal_test_params_head.txt");
    save_params(path, p, &h);
    const LoadedParams r = load_params(path);
    REQUIRE(r.head.has_value());
    CHECK(r.head->u == h.u);
    CHECK(r.head->c == h.c);
    std::filesystem::remove(path);
  }
  SECTION("missing tensors are detected") {
    const std::string path = temp_path("sal_test_params_missing.txt");
    {
      std::ofstream f(path, std::ios::binary);
      f << "tensor W1 1 1\n0.5\n";
    }
    CHECK_THROWS_WITH(load_params(path), ContainsSubstring("missing tensors"));
    std::filesystem::remove(path);
  }
  SECTION("unknown tensors are detected") {
    const std::string path = temp_path("sal_test_params_unknown.txt");
    {
      std::ofstream f(path, std::ios::binary);
      f << "tensor W9 1 1\n0.5\n";
    }
    CHECK_THROWS_WITH(load_params(path), ContainsSubstring("unknown tensor"));
    std::filesystem::remove(path);
  }
  SECTION("half a head is detected") {
    const std::string path = temp_path("sal_test_params_halfhead.txt");
    save_params(path, p);
    {
      std::ofstream f(path, std::ios::binary | std::ios::app);
      f << "tensor head_u 4 1\n0.1\n0.2\n0.3\n0.4\n";
    }
    CHECK_THROWS_WITH(load_params(path),
                      ContainsSubstring("incomplete binary head"));
    std::filesystem::remove(path);
  }
}
