#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "pafforge/catalog.hpp"
#include "pafforge/ct.hpp"
#include "pafforge/errors.hpp"

using namespace pafforge;

namespace {

const nlohmann::json kWidth8 = {
    {"input", {3}},
    {"layers",
     {{{"type", "linear"}, {"out", 8}}, {{"type", "relu"}}, {{"type", "linear"}, {"out", 8}},
      {{"type", "relu"}}, {{"type", "linear"}, {"out", 2}}}}};

CtLayer uniform_slice(int layer, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  CtLayer l{layer, {}, {}};
  for (std::size_t i = 0; i < n; ++i) {
    const double x = u(rng);
    l.inputs.push_back(x);
    l.refs.push_back(std::max(x, 0.0));
  }
  return l;
}

}  // namespace

TEST_CASE("collect a CT dataset") {
  auto model = build_model(kWidth8, 3);
  const auto data = make_blobs(10, 2, 3, 4);
  const auto ds = collect_ct_dataset(model, data, 1);
  REQUIRE(ds.layers.size() == 2);
  CHECK(ds.layers[0].layer == 0);
  CHECK(ds.layers[1].layer == 1);
  for (const auto& l : ds.layers) {
    CHECK(l.inputs.size() == 80);
    for (std::size_t i = 0; i < l.inputs.size(); ++i) CHECK(l.refs[i] == std::max(l.inputs[i], 0.0));
  }
  ds.validate();
  const auto again = collect_ct_dataset(model, data, 1);
  CHECK(again.layers[1].inputs == ds.layers[1].inputs);

  const auto sub = collect_ct_dataset(model, data, 7, 30);
  CHECK(sub.layers[0].inputs.size() == 30);
  CHECK(collect_ct_dataset(model, data, 7, 30).layers[0].inputs == sub.layers[0].inputs);

  // replaced layers are skipped
  model.replace(1, make_replacement(model, 1, nullptr, ScaleMode::dynamic()));
  const auto rest = collect_ct_dataset(model, data, 1);
  REQUIRE(rest.layers.size() == 1);
  CHECK(rest.layers[0].layer == 1);
  model.replace(3, make_replacement(model, 3, nullptr, ScaleMode::dynamic()));
  CHECK_THROWS_AS(collect_ct_dataset(model, data, 1), ConfigError);
}

TEST_CASE("max-pool layers contribute window differences") {
  const nlohmann::json spec = {
      {"input", {1, 2, 2}},
      {"layers", {{{"type", "maxpool2x2"}}, {{"type", "flatten"}}, {{"type", "linear"}, {"out", 2}}}}};
  auto model = build_model(spec, 1);
  Dataset d;
  d.classes = 2;
  d.features = Tensor({1, 1, 2, 2}, {1.0, 4.0, -2.0, 0.5});
  d.labels = {0};
  const auto ds = collect_ct_dataset(model, d, 0);
  CHECK(ds.layers[0].inputs == std::vector<double>{-3.0, -2.5});
  CHECK(ds.layers[0].refs == std::vector<double>{0.0, 0.0});
}

TEST_CASE("CT split") {
  CtDataset ds{{uniform_slice(0, 100, 1), uniform_slice(2, 11, 2)}};
  const auto split = split_ct(ds, 0.9, 5);
  CHECK(split.train.layers[0].inputs.size() == 90);
  CHECK(split.val.layers[0].inputs.size() == 10);
  CHECK(split.train.layers[1].inputs.size() == 10);
  const std::set<double> tr(split.train.layers[0].inputs.begin(), split.train.layers[0].inputs.end());
  for (double v : split.val.layers[0].inputs) CHECK(tr.count(v) == 0);
  CHECK(split_ct(ds, 0.9, 5).val.layers[0].inputs == split.val.layers[0].inputs);
  CHECK(split_ct(ds, 0.9, 6).val.layers[0].inputs != split.val.layers[0].inputs);
  CHECK_THROWS_AS(split_ct(ds, 1.0, 5), ConfigError);
  CHECK_THROWS_AS(split_ct(ds, 0.0, 5), ConfigError);
  CtDataset tiny{{CtLayer{0, {1.0}, {1.0}}}};
  CHECK_THROWS_AS(split_ct(tiny, 0.5, 1), DataError);
}

TEST_CASE("activation profile") {
  const auto l = uniform_slice(0, 1000, 9);
  const auto p = profile(l.inputs, 10);
  CHECK(p.total() == 1000);
  CHECK(p.counts.size() == 10);
  CHECK(std::is_sorted(p.edges.begin(), p.edges.end()));
  const auto one = profile({3.5});
  CHECK(one.min == 3.5);
  CHECK(one.max == 3.5);
  CHECK(one.max_abs == 3.5);
  CHECK(one.total() == 1);
  CHECK(profile({-4.0, 2.0}).max_abs == 4.0);
  CHECK(profile({-4.0, 2.0}).counts.size() == 64);
  CHECK_THROWS_AS(profile({}), DataError);
}

TEST_CASE("CT config defaults") {
  const CtConfig c;
  CHECK(c.epochs == 40);
  CHECK(c.split == 0.9);
  CHECK(c.lr == 1e-2);
  CHECK(c.patience == 5);
  CHECK(c.decay == 0.5);
  CHECK(ct_config_from_json(nlohmann::json::object()).epochs == 40);
  CHECK_THROWS_AS(ct_config_from_json({{"epoch", 3}}), ConfigError);
  CHECK_THROWS_AS(ct_config_from_json({{"split", 1.5}}), ConfigError);
}

TEST_CASE("single-record tuning") {
  const auto catalog = load_catalog(default_catalog_path());
  const CtLayer rec{0, {0.5}, {0.5}};
  CtConfig cfg;
  cfg.lr = 0.1;
  const auto r = tune_coefficients(catalog.get("f2∘g3").uniform(), 0, rec, rec, cfg);
  CHECK(r.val_loss.size() == 40);
  CHECK(r.best_val_loss < 1e-6);
  CHECK(r.initial_val_loss > 1e-3);
}

TEST_CASE("self-generated references give zero loss and no change") {
  const auto catalog = load_catalog(default_catalog_path());
  const auto& paf = catalog.get("f1∘g2");
  CtLayer l{3, {-1.0, -0.5, 0.2, 0.7, 1.0}, {}};
  // max |x| = 1, so the scaled inputs are the raw ones
  for (double x : l.inputs) l.refs.push_back((x + x * eval_stages(paf.stages_for(3), x)) / 2.0);
  const auto r = tune_coefficients(paf, 3, l, l, CtConfig{});
  CHECK(r.val_loss[0] == 0.0);
  CHECK(r.best_val_loss == 0.0);
  CHECK(r.tuned.stages_for(3) == paf.stages_for(3));
}

TEST_CASE("best-so-far validation loss never increases and other layers stay put") {
  const auto catalog = load_catalog(default_catalog_path());
  const auto& paf = catalog.get("f2∘g2");
  const auto tr = uniform_slice(4, 400, 1);
  const auto va = uniform_slice(4, 60, 2);
  const auto r = tune_coefficients(paf, 4, tr, va, CtConfig{});
  double best = r.initial_val_loss;
  for (double v : r.val_loss) {
    const double next = std::min(best, v);
    CHECK(next <= best);
    best = next;
  }
  CHECK(best == r.best_val_loss);
  CHECK(r.best_val_loss <= r.initial_val_loss);
  for (const auto& [layer, stages] : paf.per_layer()) {
    if (layer != 4) CHECK(r.tuned.stages_for(layer) == stages);
  }
  CHECK(r.tuned.stages() == paf.stages());
}

TEST_CASE("single-stage tuning reaches the least-squares optimum") {
  // relu_paf with p(u) = c1 u + c3 u^3 is linear in (c1, c3):
  // pred = u / 2 + c1 u^2 / 2 + c3 u^4 / 2.
  const auto slice = uniform_slice(0, 200, 17);
  double scale = 0.0;
  for (double x : slice.inputs) scale = std::max(scale, std::abs(x));
  Eigen::MatrixXd a(200, 2);
  Eigen::VectorXd b(200);
  for (int i = 0; i < 200; ++i) {
    const double u = slice.inputs[static_cast<std::size_t>(i)] / scale;
    a(i, 0) = u * u / 2.0;
    a(i, 1) = u * u * u * u / 2.0;
    b(i) = slice.refs[static_cast<std::size_t>(i)] / scale - u / 2.0;
  }
  const Eigen::VectorXd c = a.colPivHouseholderQr().solve(b);
  const double optimum = (a * c - b).squaredNorm() / 200.0;

  const CompositePaf paf("single", {OddPolynomial({1.5, -0.5})});
  CtConfig cfg;
  cfg.epochs = 5000;
  cfg.lr = 4.0;
  cfg.batch_size = 0;
  cfg.patience = 50;
  const auto r = tune_coefficients(paf, 0, slice, slice, cfg);
  CHECK(r.best_val_loss >= optimum - 1e-12);
  CHECK(r.best_val_loss - optimum < 1e-6);
}

TEST_CASE("divergence carries the last finite state") {
  const auto catalog = load_catalog(default_catalog_path());
  const auto tr = uniform_slice(0, 50, 3);
  CtConfig cfg;
  cfg.lr = 1e6;
  try {
    tune_coefficients(catalog.get("alpha7"), 0, tr, tr, cfg);
    FAIL("expected divergence");
  } catch (const CtDivergence& e) {
    CHECK(e.last_finite().size() == 2);
    CHECK(e.exit_code() == ExitCode::kDivergence);
  }
}

TEST_CASE("CT dataset file round trip") {
  CtDataset ds{{uniform_slice(0, 20, 1), uniform_slice(1, 5, 2)}};
  const auto path = std::filesystem::temp_directory_path() / "pafforge_ct_test.json";
  save_ct_dataset(ds, path);
  const auto back = load_ct_dataset(path);
  CHECK(back.layers[0].inputs == ds.layers[0].inputs);
  CHECK(back.layers[1].refs == ds.layers[1].refs);
  std::filesystem::remove(path);
  CtDataset bad{{CtLayer{0, {-1.0}, {-1.0}}}};
  CHECK_THROWS_AS(bad.validate(), DataError);
}
