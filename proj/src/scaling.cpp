#include "pafforge/scaling.hpp"

#include <algorithm>
#include <cmath>

#include "pafforge/errors.hpp"

namespace pafforge {

ScaleMode ScaleMode::dynamic() { return ScaleMode{}; }

ScaleMode ScaleMode::fixed(double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw ConfigError("static scale must be positive and finite");
  }
  ScaleMode m;
  m.variant_ = Variant::kStatic;
  m.scale_ = scale;
  m.running_max_ = scale;
  m.observed_ = true;
  return m;
}

double ScaleMode::static_scale() const {
  if (!is_static()) throw ConfigError("scale is dynamic");
  return scale_;
}

double ScaleMode::scale_for(std::span<const double> batch) const {
  if (is_static()) return scale_;
  const double m = max_abs(batch);
  return m > 0.0 ? m : 1.0;
}

void ScaleMode::observe(std::span<const double> batch) {
  if (is_static()) throw ConfigError("running max update after the scale was frozen");
  running_max_ = std::max(running_max_, max_abs(batch));
  observed_ = true;
}

void ScaleMode::set_running_max(double value, bool observed) {
  if (!(value >= 0.0)) throw DataError("running max must be nonnegative");
  running_max_ = value;
  observed_ = observed;
}

double max_abs(std::span<const double> values) {
  double m = 0.0;
  for (double v : values) m = std::max(m, std::abs(v));
  return m;
}

ScaledBatch dynamic_scale(std::span<const double> batch) {
  if (batch.empty()) throw DataError("dynamic scaling of an empty batch");
  ScaledBatch out;
  const double m = max_abs(batch);
  out.scale = m > 0.0 ? m : 1.0;
  out.values.reserve(batch.size());
  for (double v : batch) out.values.push_back(v / out.scale);
  return out;
}

ScaleMode update_running_max(ScaleMode mode, std::span<const double> batch) {
  mode.observe(batch);
  return mode;
}

ScaleMode freeze_static(const ScaleMode& mode) {
  if (mode.is_static()) return mode;
  if (!mode.observed()) throw ConfigError("cannot freeze a scale that never observed a batch");
  if (!(mode.running_max() > 0.0)) throw ConfigError("cannot freeze a zero running max");
  return ScaleMode::fixed(mode.running_max());
}

namespace {

template <class Sign>
std::vector<double> apply(std::span<const double> batch, const ScaleMode& mode, Sign sign) {
  const double s = mode.scale_for(batch);
  if (!(s > 0.0)) throw ConfigError("scale must be positive");
  std::vector<double> out;
  out.reserve(batch.size());
  for (double x : batch) out.push_back((x + x * sign(x / s)) / 2.0);
  return out;
}

}  // namespace

std::vector<double> paf_activation(const CompositePaf& paf, std::span<const double> batch,
                                   const ScaleMode& mode, std::optional<int> layer) {
  const Stages& stages = paf.stages_for(layer);
  for (double x : batch) {
    if (!std::isfinite(x)) throw DomainError("PAF input is not finite");
  }
  return apply(batch, mode, [&](double u) { return eval_stages(stages, u); });
}

std::vector<double> paf_activation(ExactSign, std::span<const double> batch,
                                   const ScaleMode& mode) {
  return apply(batch, mode, [](double u) { return sign_of(u); });
}

}  // namespace pafforge
