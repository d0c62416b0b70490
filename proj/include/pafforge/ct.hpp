#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "pafforge/dataset.hpp"
#include "pafforge/errors.hpp"
#include "pafforge/nn.hpp"
#include "pafforge/paf.hpp"

namespace pafforge {

/// Captured inputs of one non-polynomial layer with exact ReLU references.
/// For a max pool the records are the window differences a - b and c - d,
/// since max(a, b) = b + relu(a - b).
struct CtLayer {
  int layer = 0;
  std::vector<double> inputs;
  std::vector<double> refs;
};

struct CtDataset {
  std::vector<CtLayer> layers;

  const CtLayer& layer(int index) const;
  /// Equal lengths, refs = ReLU(inputs), indices strictly increasing.
  void validate() const;
};

nlohmann::json ct_dataset_to_json(const CtDataset& ds);
CtDataset ct_dataset_from_json(const nlohmann::json& j);
void save_ct_dataset(const CtDataset& ds, const std::filesystem::path& path);
CtDataset load_ct_dataset(const std::filesystem::path& path);

/// One entry per remaining ReLU/MaxPool layer, from an eval-phase pass over
/// `data`. With max_records > 0 each layer keeps a seeded random subset of
/// that size. Throws ConfigError when nothing is left to replace.
CtDataset collect_ct_dataset(ModelGraph& model, const Dataset& data, std::uint64_t seed,
                             std::size_t max_records = 0);

struct CtSplit {
  CtDataset train;
  CtDataset val;
};

/// Per-layer random disjoint split with round(ratio * n) training records.
CtSplit split_ct(const CtDataset& ds, double ratio, std::uint64_t seed);

struct ActivationProfile {
  std::vector<double> edges;  // bins + 1 sorted values
  std::vector<std::size_t> counts;
  double min = 0.0;
  double max = 0.0;
  double max_abs = 0.0;
  std::size_t total() const;
};

/// Equal-width histogram over [min, max]. Throws DataError when empty.
ActivationProfile profile(const std::vector<double>& samples, std::size_t bins = 64);

struct CtConfig {
  int epochs = 40;
  double lr = 1e-2;
  int patience = 5;
  double decay = 0.5;
  double split = 0.9;
  std::size_t batch_size = 128;  // 0 = full batch
  std::uint64_t seed = 0;

  void validate() const;
};

CtConfig ct_config_from_json(const nlohmann::json& j);
nlohmann::json ct_config_to_json(const CtConfig& cfg);

struct CtResult {
  CompositePaf tuned;
  int layer = 0;
  std::vector<double> train_loss;  // one entry per epoch
  std::vector<double> val_loss;    // one entry per epoch
  std::vector<double> lr;          // rate used in each epoch
  double initial_val_loss = 0.0;
  double best_val_loss = 0.0;
  int best_epoch = -1;  // -1: the starting coefficients were best
  double input_scale = 1.0;
};

/// Raised when the loss stops being finite; carries the last finite state.
class CtDivergence : public NumericDivergence {
 public:
  CtDivergence(const std::string& what, Stages last_finite, int epoch)
      : NumericDivergence(what), last_finite_(std::move(last_finite)), epoch_(epoch) {}
  const Stages& last_finite() const { return last_finite_; }
  int epoch() const { return epoch_; }

 private:
  Stages last_finite_;
  int epoch_;
};

/// Gradient descent on the mean squared error between relu_paf(x / s) and
/// ReLU(x) / s, s being the max |x| of the training slice. Starts from the
/// coefficients stored for `layer` and returns the best-validation ones as
/// that layer's override (other layers untouched).
CtResult tune_coefficients(const CompositePaf& paf, int layer, const CtLayer& train,
                           const CtLayer& val, const CtConfig& cfg);

/// Scaled mean squared error of the given stages on a slice.
double ct_loss(const Stages& stages, const CtLayer& slice, double scale);

struct CtRun {
  CompositePaf tuned;
  std::vector<CtResult> layers;
};

/// split_ct + tune_coefficients for every layer of `ds`.
CtRun tune_all_layers(const CompositePaf& paf, const CtDataset& ds, const CtConfig& cfg);

}  // namespace pafforge
