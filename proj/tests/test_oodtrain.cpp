#include "sal/oodtrain.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <cstddef>

#include "sal/datagen.hpp"
#include "sal/erm.hpp"

using Catch::Approx;
using Catch::Matchers::ContainsSubstring;
using namespace sal;

namespace {

Matrixd shifted_cloud(std::size_t n, double shift, Rng& rng) {
  Matrixd m(n, 2);
  for (auto& v : m.data()) v = rng.normal() + shift;
  return m;
}

struct Fixture {
  LabeledSet id;
  Matrixd candidates;
  MlpParams pretrained;
};

Fixture make_fixture(std::uint64_t seed) {
  Fixture f;
  Rng data_rng(seed);
  f.id = gen_gaussian_id(100, data_rng);
  f.candidates = shifted_cloud(60, 6.0, data_rng);
  ErmConfig cfg;
  cfg.hidden_dim = 8;
  cfg.epochs = 10;
  cfg.batch_size = 64;
  Rng erm_rng(seed + 1);
  f.pretrained = train_erm(f.id, cfg, erm_rng);
  return f;
}

}  // namespace

TEST_CASE("joint objective", "[oodtrain]") {
  const Fixture f = make_fixture(1);
  SECTION("a zero head contributes twice ln 2 times the weight") {
    BinaryHeadParams head;
    head.u.assign(f.pretrained.hidden_dim(), 0.0);
    head.c = 0.0;
    const double got =
        ood_objective(f.pretrained, head, f.id, f.candidates, 10.0);
    const double want =
        empirical_risk(f.pretrained, f.id) + 10.0 * 2.0 * std::log(2.0);
    CHECK(got == Approx(want).epsilon(1e-12));
  }
  SECTION("empty sets are rejected") {
    BinaryHeadParams head;
    head.u.assign(f.pretrained.hidden_dim(), 0.0);
    head.c = 0.0;
    LabeledSet empty;
    empty.points = Matrixd(0, 2);
    Matrixd none(0, 2);
    CHECK_THROWS_AS(
        ood_objective(f.pretrained, head, empty, f.candidates, 10.0),
        std::invalid_argument);
    CHECK_THROWS_AS(ood_objective(f.pretrained, head, f.id, none, 10.0),
                    std::invalid_argument);
  }
}

TEST_CASE("classifier training validation", "[oodtrain]") {
  const Fixture f = make_fixture(2);
  Rng rng(3);
  SECTION("an empty candidate set names the remedy") {
    Matrixd none(0, 2);
    CHECK_THROWS_WITH(
        train_ood_classifier(f.id, none, f.pretrained, OodHyper{}, rng),
        ContainsSubstring("lower the filtering threshold"));
  }
  SECTION("an empty ID set is a usage error") {
    LabeledSet empty;
    empty.points = Matrixd(0, 2);
    CHECK_THROWS_AS(
        train_ood_classifier(empty, f.candidates, f.pretrained, OodHyper{},
                             rng),
        std::invalid_argument);
  }
  SECTION("bad hyperparameters") {
    OodHyper h;
    h.batch_size = 0;
    CHECK_THROWS_AS(
        train_ood_classifier(f.id, f.candidates, f.pretrained, h, rng),
        std::invalid_argument);
    h = OodHyper{};
    h.learning_rate = 0.0;
    CHECK_THROWS_AS(
        train_ood_classifier(f.id, f.candidates, f.pretrained, h, rng),
        std::invalid_argument);
    h = OodHyper{};
    h.binary_loss_weight = -1.0;
    CHECK_THROWS_AS(
        train_ood_classifier(f.id, f.candidates, f.pretrained, h, rng),
        std::invalid_argument);
  }
}

TEST_CASE("zero epochs keep the backbone and a silent head", "[oodtrain]") {
  const Fixture f = make_fixture(4);
  OodHyper h;
  h.epochs = 0;
  Rng rng(5);
  const OodClassifier c =
      train_ood_classifier(f.id, f.candidates, f.pretrained, h, rng);
  CHECK(c.backbone.W1 == f.pretrained.W1);
  CHECK(c.backbone.b1 == f.pretrained.b1);
  CHECK(c.backbone.W2 == f.pretrained.W2);
  CHECK(c.backbone.b2 == f.pretrained.b2);
  REQUIRE(c.head.u.size() == f.pretrained.hidden_dim());
  for (double v : c.head.u) CHECK(v == 0.0);
  CHECK(c.head.c == 0.0);
  for (std::size_t i = 0; i < f.id.size(); ++i)
    REQUIRE(binary_score(c.backbone, c.head, f.id.points.row(i)) == 0.0);
}

TEST_CASE("training is deterministic", "[oodtrain]") {
  const Fixture f = make_fixture(6);
  OodHyper h;
  h.epochs = 5;
  h.batch_size = 64;
  Rng ra(7), rb(7);
  const OodClassifier a =
      train_ood_classifier(f.id, f.candidates, f.pretrained, h, ra);
  const OodClassifier b =
      train_ood_classifier(f.id, f.candidates, f.pretrained, h, rb);
  CHECK(a.backbone.W1 == b.backbone.W1);
  CHECK(a.backbone.b1 == b.backbone.b1);
  CHECK(a.backbone.W2 == b.backbone.W2);
  CHECK(a.backbone.b2 == b.backbone.b2);
  CHECK(a.head.u == b.head.u);
  CHECK(a.head.c == b.head.c);
}

TEST_CASE("training lowers the joint objective", "[oodtrain]") {
  const Fixture f = make_fixture(8);
  OodHyper h;
  h.epochs = 30;
  h.learning_rate = 0.01;
  h.batch_size = 64;
  BinaryHeadParams zero_head;
  zero_head.u.assign(f.pretrained.hidden_dim(), 0.0);
  zero_head.c = 0.0;
  const double before = ood_objective(f.pretrained, zero_head, f.id,
                                      f.candidates, h.binary_loss_weight);
  Rng rng(9);
  const OodClassifier c =
      train_ood_classifier(f.id, f.candidates, f.pretrained, h, rng);
  const double after = ood_objective(c.backbone, c.head, f.id, f.candidates,
                                     h.binary_loss_weight);
  CHECK(after < before);
}

TEST_CASE("the level set separates ID from candidates", "[oodtrain][slow]") {
  const Fixture f = make_fixture(10);
  OodHyper h;
  h.epochs = 100;
  h.learning_rate = 0.01;
  h.batch_size = 64;
  Rng rng(11);
  const OodClassifier c =
      train_ood_classifier(f.id, f.candidates, f.pretrained, h, rng);
  double mean_in = 0.0, mean_out = 0.0;
  for (std::size_t i = 0; i < f.id.size(); ++i)
    mean_in += binary_score(c.backbone, c.head, f.id.points.row(i));
  mean_in /= static_cast<double>(f.id.size());
  for (std::size_t i = 0; i < f.candidates.rows(); ++i)
    mean_out += binary_score(c.backbone, c.head, f.candidates.row(i));
  mean_out /= static_cast<double>(f.candidates.rows());
  CHECK(mean_in > 0.0);
  CHECK(mean_out < 0.0);
  SECTION("without wrecking the ID classifier") {
    CHECK(accuracy(c.backbone, f.id) >= accuracy(f.pretrained, f.id) - 0.05);
  }
}

TEST_CASE("a single candidate point still trains", "[oodtrain]") {
  const Fixture f = make_fixture(12);
  Matrixd one(1, 2);
  one(0, 0) = 7.0;
  one(0, 1) = 7.0;
  OodHyper h;
  h.epochs = 3;
  h.batch_size = 64;
  Rng rng(13);
  const OodClassifier c =
      train_ood_classifier(f.id, one, f.pretrained, h, rng);
  REQUIRE(c.head.u.size() == f.pretrained.hidden_dim());
  bool moved = c.head.c != 0.0;
  for (double v : c.head.u) moved = moved || v != 0.0;
  CHECK(moved);
}
