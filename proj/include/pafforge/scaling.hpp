#pragma once

#include <optional>
#include <span>
#include <vector>

#include "pafforge/paf.hpp"

namespace pafforge {

/// Input scale of one PAF activation.
///
/// Dynamic: every batch is divided by its own max |x| while the running max
/// is tracked. Static: a frozen constant, independent of the input values.
class ScaleMode {
 public:
  enum class Variant { kDynamic, kStatic };

  static ScaleMode dynamic();
  /// Throws ConfigError unless scale > 0 and finite.
  static ScaleMode fixed(double scale);

  Variant variant() const { return variant_; }
  bool is_static() const { return variant_ == Variant::kStatic; }
  /// The frozen scale; throws ConfigError in dynamic mode.
  double static_scale() const;
  double running_max() const { return running_max_; }
  bool observed() const { return observed_; }

  /// Scale applied to `batch`: the frozen value, or the batch max |x|.
  double scale_for(std::span<const double> batch) const;

  /// Folds a training batch into the running max. Throws ConfigError once
  /// frozen.
  void observe(std::span<const double> batch);
  /// Restores a tracked maximum (checkpoint loading).
  void set_running_max(double value, bool observed);

  bool operator==(const ScaleMode&) const = default;

 private:
  Variant variant_ = Variant::kDynamic;
  double scale_ = 0.0;
  double running_max_ = 0.0;
  bool observed_ = false;
};

struct ScaledBatch {
  std::vector<double> values;
  double scale = 1.0;
};

double max_abs(std::span<const double> values);

/// x / max|x|; a scale of 1 is used for an all-zero batch. Throws
/// DataError for an empty batch.
ScaledBatch dynamic_scale(std::span<const double> batch);

ScaleMode update_running_max(ScaleMode mode, std::span<const double> batch);

/// Static(running max). Throws ConfigError when nothing was observed or the
/// maximum is zero.
ScaleMode freeze_static(const ScaleMode& mode);

/// out_i = s * relu_paf(x_i / s), written as (x + x * p(x / s)) / 2 so that
/// the exact-sign variant reproduces ReLU bit for bit.
std::vector<double> paf_activation(const CompositePaf& paf, std::span<const double> batch,
                                   const ScaleMode& mode,
                                   std::optional<int> layer = std::nullopt);
std::vector<double> paf_activation(ExactSign, std::span<const double> batch,
                                   const ScaleMode& mode);

}  // namespace pafforge
