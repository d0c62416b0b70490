#include <doctest.h>

#include <cmath>
#include <map>
#include <random>
#include <set>

#include "pafforge/catalog.hpp"
#include "pafforge/errors.hpp"
#include "pafforge/plan.hpp"

using namespace pafforge;

TEST_CASE("stage depth formula") {
  CHECK(stage_depth(1) == 1);
  CHECK(stage_depth(3) == 2);
  CHECK(stage_depth(5) == 3);
  CHECK(stage_depth(7) == 3);
  CHECK(stage_depth(9) == 4);
  CHECK(stage_depth(15) == 4);
  CHECK_THROWS_AS(stage_depth(4), ConfigError);
  CHECK_THROWS_AS(stage_depth(-1), ConfigError);
}

TEST_CASE("degree-3 stage computes x^2 then x^3") {
  const StagePlan sp = build_stage_plan(3);
  CHECK(sp.depth == 2);
  CHECK(sp.nonscalar_mults == 2);
  std::vector<int> powers;
  for (const auto& s : sp.steps) {
    if (s.op == PlanStep::Op::kProduct && s.power > 0) powers.push_back(s.power);
  }
  CHECK(powers == std::vector<int>{2, 3});
  CHECK(build_stage_plan(5).nonscalar_mults == 3);
  CHECK(build_stage_plan(7).nonscalar_mults == 4);
}

TEST_CASE("every product uses previously available registers") {
  for (int degree = 1; degree <= 63; degree += 2) {
    CAPTURE(degree);
    const StagePlan sp = build_stage_plan(degree);
    CHECK(sp.depth == stage_depth(degree));
    std::set<int> ready = {0};
    int products = 0;
    for (const auto& s : sp.steps) {
      if (s.op == PlanStep::Op::kProduct) {
        ++products;
        CHECK(ready.count(s.lhs) == 1);
        CHECK(ready.count(s.rhs) == 1);
      } else {
        for (auto [k, reg] : s.terms) CHECK(ready.count(reg) == 1);
        for (int reg : s.addends) CHECK(ready.count(reg) == 1);
      }
      ready.insert(s.out);
    }
    CHECK(products == sp.nonscalar_mults);
  }
}

TEST_CASE("plan evaluation equals a naive power sum for large degrees") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int degree : {9, 15, 17, 27, 31, 33, 63}) {
    std::vector<double> c((degree + 1) / 2);
    for (auto& v : c) v = u(rng);
    const StagePlan sp = build_stage_plan(degree);
    for (int i = 0; i < 50; ++i) {
      const double x = u(rng);
      double ref = 0.0;
      for (std::size_t k = 0; k < c.size(); ++k) ref += c[k] * std::pow(x, 2.0 * k + 1.0);
      CHECK(sp.evaluate(c, x) == doctest::Approx(ref).epsilon(1e-11));
    }
  }
}

TEST_CASE("catalog depths and multiplication counts") {
  const auto catalog = load_catalog(default_catalog_path());
  const std::map<std::string, std::pair<int, int>> expected = {
      {"alpha7", {6, 8}}, {"f1^2∘g1^2", {8, 8}}, {"f2∘g3", {6, 7}},
      {"f2∘g2", {6, 6}},  {"f1∘g2", {5, 5}},
  };
  for (const auto& [name, dm] : expected) {
    CAPTURE(name);
    const auto plan = build_plan(catalog.get(name));
    CHECK(plan.total_depth == dm.first);
    CHECK(plan.nonscalar_mults == dm.second);
    int sum = 0;
    for (int d : catalog.get(name).stage_degrees()) sum += stage_depth(d);
    CHECK(plan.total_depth == sum);
    CHECK(plan.level_trace.back().level == plan.total_depth);
  }
}

TEST_CASE("f1∘g2 level trace") {
  const auto catalog = load_catalog(default_catalog_path());
  const auto plan = build_plan(catalog.get("f1∘g2"));
  const std::vector<std::vector<std::string>> expected = {
      {"c3", "x"}, {"c3*x", "x^2"}, {"c3*x^3", "y=f1(x)"},
      {"d5*y", "y^2"}, {"y^4"}, {"d5*y^5"},
  };
  REQUIRE(plan.level_trace.size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) {
    CHECK(plan.level_trace[i].level == static_cast<int>(i));
    CHECK(plan.level_trace[i].variables == expected[i]);
  }
}

TEST_CASE("plan vs Horner on random points") {
  const auto catalog = load_catalog(default_catalog_path());
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (const auto& paf : catalog.entries()) {
    CAPTURE(paf.name());
    const auto plan = build_plan(paf);
    for (int i = 0; i < 1000; ++i) {
      const double x = u(rng);
      const double h = eval_stages(paf.stages(), x);
      const double p = plan.evaluate(paf.stages(), x);
      CHECK(std::abs(p - h) <= 1e-9 * std::max(1.0, std::abs(h)));
    }
  }
}
