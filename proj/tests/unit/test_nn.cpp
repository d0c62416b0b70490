#include <doctest.h>

#include <cmath>
#include <random>

#include "../support/gradcheck.hpp"
#include "pafforge/catalog.hpp"
#include "pafforge/errors.hpp"
#include "pafforge/nn.hpp"
#include "pafforge/train.hpp"

using namespace pafforge;
using pafforge::testing::gradient_check;
using pafforge::testing::separated_input;

namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(shape);
  for (auto& v : t.data) v = n(rng);
  return t;
}

const nlohmann::json kMlp = {
    {"input", {6}},
    {"layers",
     {{{"type", "linear"}, {"out", 8}}, {{"type", "relu"}}, {{"type", "dropout"}},
      {{"type", "linear"}, {"out", 8}}, {{"type", "relu"}}, {{"type", "linear"}, {"out", 3}}}}};

// one hidden activation between two linear layers
const nlohmann::json kTwoLayer = {
    {"input", {6}},
    {"layers", {{{"type", "linear"}, {"out", 8}}, {{"type", "relu"}}, {{"type", "linear"}, {"out", 3}}}}};

const nlohmann::json kCnn = {
    {"input", {2, 4, 4}},
    {"layers",
     {{{"type", "conv2d"}, {"out_channels", 3}}, {{"type", "maxpool2x2"}},
      {{"type", "flatten"}}, {{"type", "linear"}, {"out", 3}}}}};

}  // namespace

TEST_CASE("identity linear and max pool") {
  Linear lin(3, 3);
  for (std::size_t i = 0; i < 3; ++i) lin.weight().value[i * 3 + i] = 1.0;
  const Tensor x({2, 3}, {1.0, -2.0, 3.0, 0.5, 0.0, -7.0});
  CHECK(lin.forward(x, {}) == x);

  MaxPool2x2 pool;
  const Tensor img({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(pool.forward(img, {}).data == std::vector<double>{4.0});
}

TEST_CASE("shape errors") {
  auto m = build_model(kMlp, 1);
  CHECK(m.nonpoly_count() == 2);
  CHECK(m.output_shape() == Shape{3});
  CHECK_THROWS_AS(m.forward(Tensor({2, 5}), {}), DataError);
  ModelGraph g(Shape{4});
  CHECK_THROWS_AS(g.add(std::make_unique<Linear>(5, 2)), DataError);
  CHECK_THROWS_AS(g.add(std::make_unique<MaxPool2x2>()), DataError);
}

TEST_CASE("dropout only in engaged training") {
  auto m = build_model(kMlp, 2);
  const Tensor x = random_tensor({4, 6}, 3);
  m.set_dropout(true);
  CHECK(m.forward(x, {Phase::kEval, nullptr}) == m.forward(x, {Phase::kEval, nullptr}));
  std::mt19937_64 rng(1);
  const Tensor a = m.forward(x, {Phase::kTrain, &rng});
  const Tensor b = m.forward(x, {Phase::kTrain, &rng});
  CHECK(a != b);
  m.set_dropout(false);
  CHECK(m.forward(x, {Phase::kTrain, &rng}) == m.forward(x, {Phase::kEval, nullptr}));
}

TEST_CASE("coefficient gradient of a single-stage PAF") {
  // relu_paf with p(u) = c1 u at x = 2, static scale 1: d out / d c1 = x^2 / 2.
  const CompositePaf paf("lin", {OddPolynomial({0.5})});
  PafActivation act(paf, 0, PafActivation::Variant::kReLU, ScaleMode::fixed(1.0));
  const Tensor x({1, 1}, {2.0});
  act.forward(x, {});
  act.backward(Tensor({1, 1}, {1.0}));
  CHECK(act.parameters()[0]->grad[0] == doctest::Approx(2.0));
}

TEST_CASE("frozen parameters get zero gradients") {
  auto m = build_model(kMlp, 5);
  auto params = m.parameters();
  params[0]->frozen = true;
  const Tensor x = random_tensor({3, 6}, 6);
  const Tensor y = m.forward(x, {});
  m.backward(Tensor(y.shape, 1.0));
  for (double g : params[0]->grad) CHECK(g == 0.0);
  bool any = false;
  for (double g : params[2]->grad) any = any || g != 0.0;
  CHECK(any);
}

namespace {

// Replaces the non-polynomial layers at `positions` in order, each with a
// static scale equal to the batch value dynamic scaling would pick there.
void replace_with_batch_scales(ModelGraph& m, const Tensor& x, const CompositePaf& paf,
                               const std::vector<std::size_t>& positions) {
  for (std::size_t pos : positions) {
    std::vector<ActivationTap> taps;
    m.forward(x, {}, &taps);
    for (const auto& tap : taps) {
      if (tap.position != pos) continue;
      const auto s = ScaleMode::fixed(dynamic_scale(tap.input.data).scale);
      m.replace(pos, make_replacement(m, pos, &paf, s));
    }
  }
}

}  // namespace

TEST_CASE("finite-difference gradients of linear, conv and max pool") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    CAPTURE(seed);
    auto mlp = build_model(kMlp, seed);
    CHECK(gradient_check(mlp, random_tensor({4, 6}, seed + 10), seed).max_rel_error < 1e-4);
    auto cnn = build_model(kCnn, seed);
    CHECK(gradient_check(cnn, separated_input({2, 2, 4, 4}, seed), seed).max_rel_error < 1e-4);
  }
}

TEST_CASE("finite-difference gradients of PAF coefficients") {
  const auto catalog = load_catalog(default_catalog_path());
  for (const auto& paf : catalog.entries()) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      CAPTURE(paf.name());
      CAPTURE(seed);
      auto mlp = build_model(kTwoLayer, seed);
      const Tensor x = random_tensor({4, 6}, seed + 20);
      replace_with_batch_scales(mlp, x, paf, {1});
      CHECK(gradient_check(mlp, x, seed, 1e-4, ParamGroup::kPaf).max_rel_error < 1e-4);

      auto cnn = build_model(kCnn, seed);
      const Tensor xc = separated_input({2, 2, 4, 4}, seed);
      replace_with_batch_scales(cnn, xc, paf, {1});
      CHECK(gradient_check(cnn, xc, seed, 1e-4, ParamGroup::kPaf).max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("weights feeding a PAF: difference quotient converges to the analytic gradient") {
  // Steep sign approximations give the central difference an O(eps^2) bias
  // that can exceed 1e-4 at eps = 1e-4 when two PAFs are stacked. A correct
  // gradient shows the bias shrinking a hundredfold for a tenfold smaller step.
  const auto catalog = load_catalog(default_catalog_path());
  for (const auto& paf : catalog.entries()) {
    CAPTURE(paf.name());
    auto mlp = build_model(kMlp, 2);
    const Tensor x = random_tensor({4, 6}, 22);
    replace_with_batch_scales(mlp, x, paf, {1, 4});
    const double coarse = gradient_check(mlp, x, 2, 1e-4).max_rel_error;
    const double fine = gradient_check(mlp, x, 2, 1e-5).max_rel_error;
    if (coarse > 1e-6) {
      CHECK(coarse / fine > 50.0);
      CHECK(coarse / fine < 200.0);
    }
  }
}

TEST_CASE("exact-sign replacement keeps outputs bit-equal") {
  auto m = build_model(kCnn, 9);
  const Tensor x = random_tensor({5, 2, 4, 4}, 10, 3.0);
  const Tensor ref = m.forward(x, {});
  auto r = m;
  r.replace(1, make_replacement(r, 1, nullptr, ScaleMode::dynamic()));
  CHECK(r.nonpoly_count() == 0);
  CHECK(r.forward(x, {}) == ref);

  auto mlp = build_model(kMlp, 9);
  const Tensor xm = random_tensor({7, 6}, 11, 5.0);
  const Tensor ref2 = mlp.forward(xm, {});
  for (std::size_t pos : {1u, 4u}) {
    mlp.replace(pos, make_replacement(mlp, pos, nullptr, ScaleMode::fixed(0.5)));
  }
  CHECK(mlp.forward(xm, {}) == ref2);
}

TEST_CASE("model JSON round trip") {
  const auto catalog = load_catalog(default_catalog_path());
  auto m = build_model(kMlp, 3);
  m.replace(1, make_replacement(m, 1, &catalog.get("f1∘g2"), ScaleMode::fixed(2.5)));
  const auto j = m.to_json();
  auto back = ModelGraph::from_json(j);
  CHECK(back.to_json() == j);
  const Tensor x = random_tensor({3, 6}, 4);
  CHECK(back.forward(x, {}) == m.forward(x, {}));
  CHECK(back.nonpoly_count() == 1);
}

TEST_CASE("snapshots load into identical structures only") {
  auto m = build_model(kMlp, 3);
  auto snap = m.snapshot();
  auto other = build_model(kCnn, 3);
  CHECK_THROWS_AS(other.load(snap), DataError);
  m.parameters()[0]->value[0] += 1.0;
  m.load(snap);
  CHECK(m.snapshot().params == snap.params);
}
