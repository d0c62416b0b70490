#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "pafforge/dataset.hpp"
#include "pafforge/nn.hpp"

namespace pafforge {

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  AdamParams adam;
  double lr_paf = 1e-4;
  double lr_other = 1e-5;
  double wd_paf = 0.01;
  double wd_other = 0.1;
  int group_epochs = 20;
  std::size_t batch_size = 64;
  double dropout_p = 0.5;
  std::uint64_t seed = 0;

  double lr(ParamGroup g) const { return g == ParamGroup::kPaf ? lr_paf : lr_other; }
  double weight_decay(ParamGroup g) const { return g == ParamGroup::kPaf ? wd_paf : wd_other; }
  /// Throws ConfigError for non-positive rates, negative decay, E < 1 or a
  /// zero batch size.
  void validate() const;
};

TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& cfg);

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  long long t = 0;
};

/// One Adam update with decoupled weight decay:
/// p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
void adam_update(std::span<double> params, std::span<const double> grads, AdamState& state,
                 double lr, double weight_decay, const AdamParams& adam);

/// Adam over a fixed parameter list; frozen parameters are skipped and the
/// learning rate and decay follow each parameter's group.
class AdamW {
 public:
  explicit AdamW(TrainConfig cfg) : cfg_(std::move(cfg)) {}
  void step(const std::vector<Parameter*>& params);
  const std::vector<AdamState>& state() const { return state_; }

 private:
  TrainConfig cfg_;
  std::vector<AdamState> state_;
};

struct LossResult {
  double loss = 0.0;      // mean over the batch
  std::size_t correct = 0;
  Tensor grad;            // d mean loss / d logits
};

/// Fused softmax + cross-entropy on [N, classes] logits.
LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

/// Eval-phase accuracy and mean loss over fixed batches of `batch_size`.
/// Throws DataError for an empty dataset.
EvalResult evaluate(ModelGraph& model, const Dataset& data, std::size_t batch_size = 256);

/// One shuffled pass of mini-batch Adam; returns the mean training loss.
/// Throws NumericDivergence on a non-finite loss.
double train_epoch(ModelGraph& model, const Dataset& data, AdamW& optimizer,
                   std::size_t batch_size, std::mt19937_64& rng);

/// Elementwise mean of parameters; running maxima are combined by max.
/// Sums are formed over sorted values so the result does not depend on the
/// order of the list. Throws DataError on structural mismatch or an empty
/// list.
Snapshot swa_average(const std::vector<Snapshot>& snapshots);

/// Model file with metadata and the {layer index -> scale} table.
struct Checkpoint {
  ModelGraph model;
  int epoch = -1;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Writes text atomically (temporary file + rename).
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace pafforge
