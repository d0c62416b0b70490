#include "pafforge/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>

#include "pafforge/errors.hpp"
#include "pafforge/rng.hpp"

namespace pafforge {

using nlohmann::json;

namespace {

constexpr std::uint64_t kSplitStream = 0x5b11;
constexpr std::uint64_t kInitStream = 0x1a17;
constexpr std::uint64_t kPretrainStream = 0x7e57;

void check_keys(const json& j, const std::vector<std::string>& known, const std::string& what) {
  if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
  for (auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown " + what + " key '" + key + "'");
    }
  }
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return (base / p).lexically_normal();
}

Techniques techniques_from(const json& j) {
  check_keys(j, {"ct", "pa", "at", "ds_ss"}, "techniques");
  Techniques t;
  t.ct = j.value("ct", t.ct);
  t.pa = j.value("pa", t.pa);
  t.at = j.value("at", t.at);
  t.ds_ss = j.value("ds_ss", t.ds_ss);
  return t;
}

PretrainConfig pretrain_from(const json& j) {
  check_keys(j, {"epochs", "lr", "weight_decay", "batch_size"}, "pretrain");
  PretrainConfig p;
  p.epochs = j.value("epochs", p.epochs);
  p.lr = j.value("lr", p.lr);
  p.weight_decay = j.value("weight_decay", p.weight_decay);
  p.batch_size = j.value("batch_size", p.batch_size);
  if (p.epochs < 0 || !(p.lr > 0.0) || p.weight_decay < 0.0 || p.batch_size == 0) {
    throw ConfigError("invalid pretrain settings");
  }
  return p;
}

std::optional<std::filesystem::path> optional_path(const json& j, const char* key,
                                                   const std::filesystem::path& base) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return resolve(j[key].get<std::string>(), base);
}

}  // namespace

json ExperimentConfig::to_json() const {
  auto path_or_null = [](const std::optional<std::filesystem::path>& p) {
    return p ? json(p->generic_string()) : json(nullptr);
  };
  const Techniques& t = schedule.techniques;
  json train = train_config_to_json(schedule.train);
  train.erase("seed");
  json ct = ct_config_to_json(schedule.ct);
  ct.erase("seed");
  return {{"model", model},
          {"dataset", dataset_spec_to_json(dataset)},
          {"paf", paf},
          {"paf_coefficients",
           schedule.coefficients == CoefficientSource::kUniform ? "uniform" : "per_layer"},
          {"techniques", {{"ct", t.ct}, {"pa", t.pa}, {"at", t.at}, {"ds_ss", t.ds_ss}}},
          {"train", train},
          {"ct", ct},
          {"pretrain",
           {{"epochs", pretrain.epochs},
            {"lr", pretrain.lr},
            {"weight_decay", pretrain.weight_decay},
            {"batch_size", pretrain.batch_size}}},
          {"pretrained", path_or_null(pretrained)},
          {"split", split},
          {"ct_max_records", schedule.ct_max_records},
          {"max_groups_per_step", schedule.max_groups_per_step},
          {"epoch_budget", epoch_budget ? json(*epoch_budget) : json(nullptr)},
          {"paired_report", path_or_null(paired_report)},
          {"seed", seed},
          {"output", output.generic_string()},
          {"catalog", path_or_null(catalog)}};
}

ExperimentConfig experiment_config_from_json(const json& j, const std::filesystem::path& base) {
  check_keys(j,
             {"model", "dataset", "paf", "paf_coefficients", "techniques", "train", "ct",
              "pretrain", "pretrained", "split", "ct_max_records", "max_groups_per_step",
              "epoch_budget", "paired_report", "seed", "output", "catalog"},
             "config");
  ExperimentConfig c;
  try {
    c.model = j.at("model");
    c.dataset = dataset_spec_from_json(j.at("dataset"));
    c.dataset.images = resolve(c.dataset.images, base);
    c.dataset.labels_path = resolve(c.dataset.labels_path, base);
    c.dataset.csv = resolve(c.dataset.csv, base);
    c.paf = j.at("paf").get<std::string>();
    const std::string source = j.value("paf_coefficients", "uniform");
    if (source == "uniform") {
      c.schedule.coefficients = CoefficientSource::kUniform;
    } else if (source == "per_layer") {
      c.schedule.coefficients = CoefficientSource::kPerLayer;
    } else {
      throw ConfigError("paf_coefficients must be \"uniform\" or \"per_layer\"");
    }
    if (j.contains("techniques")) c.schedule.techniques = techniques_from(j["techniques"]);
    if (j.contains("train")) c.schedule.train = train_config_from_json(j["train"]);
    if (j.contains("ct")) c.schedule.ct = ct_config_from_json(j["ct"]);
    if (j.contains("pretrain")) c.pretrain = pretrain_from(j["pretrain"]);
    c.pretrained = optional_path(j, "pretrained", base);
    c.split = j.value("split", c.split);
    c.schedule.ct_max_records = j.value("ct_max_records", c.schedule.ct_max_records);
    c.schedule.max_groups_per_step =
        j.value("max_groups_per_step", c.schedule.max_groups_per_step);
    if (j.contains("epoch_budget") && !j["epoch_budget"].is_null()) {
      c.epoch_budget = j["epoch_budget"].get<int>();
      if (*c.epoch_budget < 1) throw ConfigError("epoch_budget must be at least 1");
    }
    c.paired_report = optional_path(j, "paired_report", base);
    c.seed = j.value("seed", c.seed);
    if (j.contains("output")) c.output = resolve(j["output"].get<std::string>(), base);
    c.catalog = optional_path(j, "catalog", base);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  if (!(c.split > 0.0 && c.split < 1.0)) throw ConfigError("split must be in (0, 1)");
  c.schedule.train.seed = c.seed;
  c.schedule.ct.seed = c.seed;
  c.schedule.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": malformed JSON: " + e.what());
  }
  ExperimentConfig c = experiment_config_from_json(j, path.parent_path());
  if (const char* env = std::getenv("PAFFORGE_SEED"); env && *env) {
    std::size_t used = 0;
    unsigned long long seed = 0;
    try {
      seed = std::stoull(env, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || env[used] != '\0') throw ConfigError("PAFFORGE_SEED must be an integer");
    c.seed = seed;
    c.schedule.train.seed = seed;
    c.schedule.ct.seed = seed;
  }
  return c;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const ExperimentConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(cfg.to_json().dump())));
  return buf;
}

PafCatalog experiment_catalog(const ExperimentConfig& cfg) {
  return load_catalog(cfg.catalog.value_or(default_catalog_path()));
}

DataSplit experiment_data(const ExperimentConfig& cfg) {
  return prepare_data(cfg.dataset, cfg.split, derive_seed(cfg.seed, {kSplitStream}));
}

PretrainResult pretrain(ModelGraph& model, const DataSplit& data, const PretrainConfig& cfg,
                        std::uint64_t seed) {
  TrainConfig tc;
  tc.lr_paf = tc.lr_other = cfg.lr;
  tc.wd_paf = tc.wd_other = cfg.weight_decay;
  tc.batch_size = cfg.batch_size;
  for (Parameter* p : model.parameters()) p->frozen = false;
  AdamW optimizer(tc);
  std::mt19937_64 rng(derive_seed(seed, {kPretrainStream}));
  PretrainResult r;
  for (int e = 0; e < cfg.epochs; ++e) {
    r.loss.push_back(train_epoch(model, data.train, optimizer, cfg.batch_size, rng));
  }
  r.train_acc = evaluate(model, data.train).accuracy;
  r.val_acc = evaluate(model, data.val).accuracy;
  return r;
}

ModelGraph initial_model(const ExperimentConfig& cfg) {
  try {
    return build_model(cfg.model, derive_seed(cfg.seed, {kInitStream}));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid model spec: ") + e.what());
  }
}

ModelGraph experiment_model(const ExperimentConfig& cfg, const DataSplit& data) {
  if (cfg.pretrained) return load_checkpoint(*cfg.pretrained).model;
  ModelGraph model = initial_model(cfg);
  pretrain(model, data, cfg.pretrain, cfg.seed);
  return model;
}

ReportFormat report_format_from_string(const std::string& name) {
  if (name == "json") return ReportFormat::kJson;
  if (name == "csv") return ReportFormat::kCsv;
  throw ConfigError("unknown report format '" + name + "' (expected json or csv)");
}

ReportFormat report_format_for(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? ReportFormat::kCsv : ReportFormat::kJson;
}

void emit_report(const ScheduleReport& report, const std::filesystem::path& path,
                 ReportFormat format) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_text_file(path, format == ReportFormat::kJson ? report_to_json(report).dump(2) + "\n"
                                                      : report_to_csv(report));
}

ScheduleReport load_report(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("report not found: " + path.string());
  try {
    return report_from_json(json::parse(read_text_file(path)));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace pafforge
