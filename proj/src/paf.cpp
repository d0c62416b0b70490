#include "pafforge/paf.hpp"

#include <cmath>
#include <mutex>
#include <numeric>

#include "pafforge/errors.hpp"
#include "pafforge/plan.hpp"

namespace pafforge {

OddPolynomial::OddPolynomial(std::vector<double> coefficients)
    : coefficients_(std::move(coefficients)) {
  if (coefficients_.empty()) {
    throw ConfigError("odd polynomial needs at least one coefficient");
  }
  for (double c : coefficients_) {
    if (!std::isfinite(c)) throw DomainError("non-finite polynomial coefficient");
  }
}

double OddPolynomial::horner(double x) const {
  const double x2 = x * x;
  double acc = 0.0;
  for (auto it = coefficients_.rbegin(); it != coefficients_.rend(); ++it) {
    acc = acc * x2 + *it;
  }
  return acc * x;
}

double OddPolynomial::derivative(double x) const {
  const double x2 = x * x;
  double acc = 0.0;
  for (std::size_t k = coefficients_.size(); k-- > 0;) {
    acc = acc * x2 + static_cast<double>(2 * k + 1) * coefficients_[k];
  }
  return acc;
}

CompositePaf::CompositePaf(std::string name, Stages stages,
                           std::map<int, Stages> per_layer)
    : name_(std::move(name)), stages_(std::move(stages)) {
  if (stages_.empty()) throw ConfigError("PAF '" + name_ + "' has no stages");
  for (auto& [layer, override_stages] : per_layer) {
    if (layer < 0) throw ConfigError("negative layer index in PAF '" + name_ + "'");
    check_shape(override_stages);
  }
  per_layer_ = std::move(per_layer);
}

void CompositePaf::check_shape(const Stages& stages) const {
  if (stages.size() != stages_.size()) {
    throw ConfigError("PAF '" + name_ + "': override has " +
                      std::to_string(stages.size()) + " stages, expected " +
                      std::to_string(stages_.size()));
  }
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (stages[i].size() != stages_[i].size()) {
      throw ConfigError("PAF '" + name_ + "': stage " + std::to_string(i) +
                        " override has degree " +
                        std::to_string(stages[i].degree()) + ", expected " +
                        std::to_string(stages_[i].degree()));
    }
  }
}

const Stages& CompositePaf::stages_for(std::optional<int> layer) const {
  if (!layer) return stages_;
  if (*layer < 0) {
    throw LookupError("PAF '" + name_ + "': invalid layer index " + std::to_string(*layer));
  }
  if (per_layer_.empty()) return stages_;
  auto it = per_layer_.find(*layer);
  if (it == per_layer_.end()) {
    throw LookupError("PAF '" + name_ + "' has no coefficients for layer " +
                      std::to_string(*layer));
  }
  return it->second;
}

const Stages& CompositePaf::stages_or_default(int layer) const {
  auto it = per_layer_.find(layer);
  return it == per_layer_.end() ? stages_ : it->second;
}

std::vector<int> CompositePaf::stage_degrees() const {
  std::vector<int> out;
  out.reserve(stages_.size());
  for (const auto& s : stages_) out.push_back(s.degree());
  return out;
}

long long CompositePaf::product_degree() const {
  long long d = 1;
  for (const auto& s : stages_) d *= s.degree();
  return d;
}

std::size_t CompositePaf::coefficient_count() const {
  return std::accumulate(stages_.begin(), stages_.end(), std::size_t{0},
                         [](std::size_t n, const OddPolynomial& p) { return n + p.size(); });
}

CompositePaf CompositePaf::with_layer(int layer, Stages stages) const {
  check_shape(stages);
  if (layer < 0) throw LookupError("invalid layer index " + std::to_string(layer));
  CompositePaf copy = *this;
  copy.per_layer_[layer] = std::move(stages);
  return copy;
}

CompositePaf CompositePaf::uniform() const {
  CompositePaf copy = *this;
  copy.per_layer_.clear();
  return copy;
}

CompositePaf CompositePaf::with_defaults(Stages stages) const {
  check_shape(stages);
  CompositePaf copy = *this;
  copy.stages_ = std::move(stages);
  return copy;
}

double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

namespace {

void require_finite(double x) {
  if (!std::isfinite(x)) throw DomainError("PAF input is not finite");
}

const StagePlan& cached_stage_plan(int degree) {
  static std::mutex mutex;
  static std::map<int, StagePlan> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(degree);
  if (it == cache.end()) it = cache.emplace(degree, build_stage_plan(degree)).first;
  return it->second;
}

}  // namespace

double eval_odd_poly(const OddPolynomial& p, double x) {
  require_finite(x);
  return cached_stage_plan(p.degree()).evaluate(p.coefficients(), x);
}

double eval_stages(const Stages& stages, double x) {
  for (const auto& s : stages) x = s.horner(x);
  return x;
}

double eval_stages_backprop(const Stages& stages, double x, double weight,
                            std::vector<std::vector<double>>& grads, double* dx) {
  thread_local std::vector<double> chain;
  chain.assign(stages.size() + 1, 0.0);
  chain[0] = x;
  for (std::size_t i = 0; i < stages.size(); ++i) chain[i + 1] = stages[i].horner(chain[i]);
  double delta = weight;
  double slope_total = 1.0;
  for (std::size_t i = stages.size(); i-- > 0;) {
    const auto c = stages[i].coefficients();
    auto& g = grads[i];
    const double z = chain[i];
    const double z2 = z * z;
    double power = z;
    for (std::size_t k = 0; k < c.size(); ++k) {
      g[k] += delta * power;
      power *= z2;
    }
    const double slope = stages[i].derivative(z);
    delta *= slope;
    slope_total *= slope;
  }
  if (dx) *dx = slope_total;
  return chain.back();
}

double eval_composite(const CompositePaf& paf, double x, std::optional<int> layer) {
  require_finite(x);
  const Stages& stages = paf.stages_for(layer);
  for (const auto& s : stages) x = eval_odd_poly(s, x);
  return x;
}

double relu_paf(const CompositePaf& paf, double x, std::optional<int> layer) {
  return (x + eval_composite(paf, x, layer) * x) / 2.0;
}

double relu_paf(ExactSign, double x) {
  require_finite(x);
  return (x + sign_of(x) * x) / 2.0;
}

double max_paf(const CompositePaf& paf, double x, double y, std::optional<int> layer) {
  require_finite(x);
  require_finite(y);
  const double d = x - y;
  return ((x + y) + d * eval_composite(paf, d, layer)) / 2.0;
}

double max_paf(ExactSign, double x, double y) {
  require_finite(x);
  require_finite(y);
  return sign_of(x - y) < 0.0 ? y : x;
}

}  // namespace pafforge
