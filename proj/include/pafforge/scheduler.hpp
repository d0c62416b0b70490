#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pafforge/ct.hpp"
#include "pafforge/dataset.hpp"
#include "pafforge/nn.hpp"
#include "pafforge/paf.hpp"
#include "pafforge/train.hpp"

namespace pafforge {

/// Parameters updated by a training group. kBoth is used when alternation
/// is switched off.
enum class TrainableSet { kPaf, kOther, kBoth };

const char* to_string(TrainableSet set);
TrainableSet trainable_set_from_string(const std::string& name);

/// kPaf <-> kOther; kBoth is left unchanged.
TrainableSet alternate_swap(TrainableSet set);

struct Techniques {
  bool ct = true;     // coefficient tuning before replacement
  bool pa = true;     // replace one layer per step
  bool at = true;     // alternate PAF / other parameter groups
  bool ds_ss = true;  // dynamic scales while training, frozen afterwards
};

enum class CoefficientSource { kUniform, kPerLayer };

struct ScheduleConfig {
  TrainConfig train;
  CtConfig ct;
  Techniques techniques;
  CoefficientSource coefficients = CoefficientSource::kUniform;
  std::size_t ct_max_records = 20000;  // per layer, 0 = all
  int max_groups_per_step = 8;
  double improvement_threshold = 1e-4;
  double overfit_margin = 0.10;

  void validate() const;
};

struct EpochEntry {
  int epoch = 0;  // -1 for the SWA candidate
  double train_acc = 0.0;
  double val_acc = 0.0;
};

struct TrainingGroupRecord {
  int group = 0;
  TrainableSet trainable = TrainableSet::kPaf;
  std::vector<EpochEntry> epochs;
  EpochEntry swa{-1, 0.0, 0.0};
  int selected = -1;  // epoch number, or -1 when SWA was selected
  double selected_train_acc = 0.0;
  double selected_val_acc = 0.0;
  bool dropout = false;  // dropout engaged while this group trained
  bool at_swap = false;  // trainable set was swapped before this group
  bool improved = false;
  bool overfitting = false;
};

struct StepState {
  int step = 0;                // replaced-layer count before this step
  std::size_t position = 0;    // model position of the newest replacement
  TrainableSet trainable = TrainableSet::kPaf;
  bool dropout_engaged = false;
  bool at_tried = false;       // swap used since the last improvement
  std::vector<TrainingGroupRecord> groups;
  double start_val_acc = 0.0;  // right after the replacement
  double best_val_acc = 0.0;
  double best_train_acc = 0.0;
  bool cap_reached = false;
  bool finished = false;
  std::string termination;     // "no_improvement", "group_cap", "budget"
};

struct CtLayerSummary {
  int layer = 0;
  std::size_t records = 0;
  double input_scale = 1.0;
  double initial_val_loss = 0.0;
  double best_val_loss = 0.0;
  int best_epoch = -1;
};

struct ScheduleReport {
  std::string kind;  // "framework" or "baseline"
  std::string paf;
  std::string config_hash;
  std::uint64_t seed = 0;
  int group_epochs = 0;
  int initial_nonpoly = 0;
  Techniques techniques;
  std::vector<CtLayerSummary> ct;
  std::vector<StepState> steps;
  double pretrained_val_acc = 0.0;
  double global_best_val_acc = 0.0;
  double final_val_acc = 0.0;  // after freezing scales
  int total_epochs = 0;
  bool complete = false;

  int group_count() const;
};

nlohmann::json report_to_json(const ScheduleReport& report);
ScheduleReport report_from_json(const nlohmann::json& j);
/// One row per training group.
std::string report_to_csv(const ScheduleReport& report);

struct ScheduleOptions {
  std::string config_hash;
  /// Progress is saved here after every completed group and picked up by
  /// the next call with the same config hash.
  std::optional<std::filesystem::path> checkpoint_dir;
  /// Stop after this many newly trained groups (-1: run to completion,
  /// 0: stop once CT and the first replacement are done).
  int stop_after_groups = -1;
};

/// Replaces the earliest remaining ReLU/MaxPool with a PAF activation
/// carrying that layer's coefficients. Returns its position, or nothing
/// when the model is fully replaced.
std::optional<std::size_t> replace_next_nonpoly(ModelGraph& model, const CompositePaf& paf,
                                                ScaleMode mode = ScaleMode::dynamic());

/// Sets the frozen flags: PAF coefficients train only at `paf_positions`,
/// other parameters only at positions <= `scope_end`.
void apply_trainable(ModelGraph& model, TrainableSet set,
                     const std::vector<std::size_t>& paf_positions, std::size_t scope_end);

/// E epochs on the unfrozen parameters, then SWA over the E snapshots; the
/// best-validation candidate (SWA on ties) is installed into the model.
/// `epochs` overrides cfg.group_epochs.
TrainingGroupRecord run_training_group(ModelGraph& model, const TrainConfig& cfg,
                                       const DataSplit& data, std::uint64_t seed,
                                       std::optional<int> epochs = std::nullopt);

/// Selected train accuracy above selected validation accuracy + margin,
/// strictly (an exact tie at the margin does not count).
bool detect_overfitting(const TrainingGroupRecord& record, double margin = 0.10);

struct StepDecision {
  bool improved = false;        // best val acc beaten by more than the threshold
  bool engage_dropout = false;  // first overfitting signal of the run
  bool swap = false;            // alternate the trainable set and retry
  bool terminate = false;
};

/// What follows a finished group: another group after an improvement or a
/// first overfitting signal, one swap retry if alternation is on and none
/// was tried since the last improvement, otherwise the end of the step.
StepDecision next_action(const StepState& state, const TrainingGroupRecord& record,
                         bool dropout_run, const ScheduleConfig& cfg);

/// Called after each completed group with the step state and the
/// step-best weights; returning false stops the run.
using GroupCallback = std::function<bool(const StepState&, const Snapshot&)>;

/// Trains one group; run_training_group unless replaced (tests script it).
using GroupRunner = std::function<TrainingGroupRecord(ModelGraph&, const TrainConfig&,
                                                      const DataSplit&, std::uint64_t seed)>;

/// Runs groups for the layer replaced at state.position until neither an
/// improvement, a first overfitting signal nor an untried swap remains.
/// Continues from the groups already in `state`; `dropout_run` carries the
/// run-wide dropout flag.
void run_step(ModelGraph& model, const ScheduleConfig& cfg, const DataSplit& data,
              const std::vector<std::size_t>& paf_positions, std::size_t scope_end,
              StepState& state, Snapshot& step_best, bool& dropout_run,
              const GroupCallback& on_group = {}, const GroupRunner& runner = {});

/// CT, then one step per non-polynomial layer, then frozen scales.
ScheduleReport run_framework(ModelGraph& model, const CompositePaf& paf, const DataSplit& data,
                             const ScheduleConfig& cfg, const ScheduleOptions& options = {});

/// Replaces every layer at once with the shared coefficients, freezes them
/// and trains all other parameters for `epoch_budget` epochs.
ScheduleReport run_baseline(ModelGraph& model, const CompositePaf& paf, const DataSplit& data,
                            const ScheduleConfig& cfg, int epoch_budget,
                            const ScheduleOptions& options = {});

/// Freezes every dynamic PAF scale at its running maximum.
void freeze_scales(ModelGraph& model);

}  // namespace pafforge
