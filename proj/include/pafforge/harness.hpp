#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "pafforge/catalog.hpp"
#include "pafforge/ct.hpp"
#include "pafforge/dataset.hpp"
#include "pafforge/nn.hpp"
#include "pafforge/scheduler.hpp"
#include "pafforge/train.hpp"

namespace pafforge {

/// Supervised training of a fresh model before any replacement.
struct PretrainConfig {
  int epochs = 30;
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::size_t batch_size = 64;
};

/// One experiment: model, data, PAF, technique toggles and budgets.
///
/// Keys: model, dataset, paf, paf_coefficients ("uniform" | "per_layer"),
/// techniques {ct, pa, at, ds_ss}, train, ct, pretrain, pretrained (checkpoint
/// path), split, ct_max_records, max_groups_per_step, epoch_budget,
/// paired_report, seed, output, catalog. Unknown keys are rejected.
struct ExperimentConfig {
  nlohmann::json model;
  DatasetSpec dataset;
  std::string paf;
  ScheduleConfig schedule;
  PretrainConfig pretrain;
  std::optional<std::filesystem::path> pretrained;
  double split = 0.8;
  std::optional<int> epoch_budget;
  std::optional<std::filesystem::path> paired_report;
  std::uint64_t seed = 0;
  std::filesystem::path output = "pafforge_out";
  std::optional<std::filesystem::path> catalog;

  /// Effective configuration; the basis of the config hash.
  nlohmann::json to_json() const;
};

/// Relative paths are resolved against `base_dir`. Throws ConfigError.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j,
                                             const std::filesystem::path& base_dir = {});
/// Reads a config file; PAFFORGE_SEED, when set, replaces the seed.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// FNV-1a, 64 bit.
std::uint64_t fnv1a64(const std::string& bytes);
/// 16 hex digits of fnv1a64 over the compact effective config.
std::string config_hash(const ExperimentConfig& cfg);

PafCatalog experiment_catalog(const ExperimentConfig& cfg);
DataSplit experiment_data(const ExperimentConfig& cfg);

struct PretrainResult {
  double train_acc = 0.0;
  double val_acc = 0.0;
  std::vector<double> loss;  // per epoch
};

PretrainResult pretrain(ModelGraph& model, const DataSplit& data, const PretrainConfig& cfg,
                        std::uint64_t seed);

/// Freshly initialised model from the config's layer list.
ModelGraph initial_model(const ExperimentConfig& cfg);

/// The checkpoint named by `pretrained`, or a freshly built and pretrained
/// model.
ModelGraph experiment_model(const ExperimentConfig& cfg, const DataSplit& data);

enum class ReportFormat { kJson, kCsv };
/// "json" or "csv"; anything else is a usage error (ConfigError).
ReportFormat report_format_from_string(const std::string& name);
/// Format from the file extension, defaulting to JSON.
ReportFormat report_format_for(const std::filesystem::path& path);

void emit_report(const ScheduleReport& report, const std::filesystem::path& path,
                 ReportFormat format);
ScheduleReport load_report(const std::filesystem::path& path);

}  // namespace pafforge
