// pafforge command line: catalog inspection, cost estimates, CT, training,
// scheduling and report conversion.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "pafforge/catalog.hpp"
#include "pafforge/cost.hpp"
#include "pafforge/ct.hpp"
#include "pafforge/errors.hpp"
#include "pafforge/harness.hpp"
#include "pafforge/plan.hpp"
#include "pafforge/scheduler.hpp"
#include "pafforge/train.hpp"

namespace fs = std::filesystem;
namespace pf = pafforge;
using nlohmann::json;

namespace {

std::string join_degrees(const std::vector<int>& degrees) {
  std::string out;
  for (std::size_t i = 0; i < degrees.size(); ++i) {
    out += (i ? "," : "") + std::to_string(degrees[i]);
  }
  return out;
}

pf::PafCatalog open_catalog(const std::string& path) {
  return pf::load_catalog(path.empty() ? pf::default_catalog_path() : fs::path(path));
}

void cmd_catalog_list(const std::string& catalog_path) {
  const auto catalog = open_catalog(catalog_path);
  std::printf("%-12s %-10s %-8s %6s %6s %5s\n", "name", "degrees", "display", "depth", "mults",
              "rows");
  for (const auto& paf : catalog.entries()) {
    const auto plan = pf::build_plan(paf);
    std::printf("%-12s %-10s %-8s %6d %6d %5zu\n", paf.name().c_str(),
                join_degrees(paf.stage_degrees()).c_str(), paf.display_name.c_str(),
                plan.total_depth, plan.nonscalar_mults, pf::PafCatalog::table_rows(paf));
  }
}

void cmd_catalog_show(const std::string& catalog_path, const std::string& name) {
  std::cout << pf::paf_to_json(open_catalog(catalog_path).get(name)).dump(2) << "\n";
}

void cmd_depth(const std::string& catalog_path, const std::string& name) {
  const auto& catalog = open_catalog(catalog_path);
  const auto& paf = catalog.get(name);
  const auto plan = pf::build_plan(paf);
  std::printf("%s depth %d (stages %s, per-stage depth %s), nonscalar mults %d\n",
              paf.name().c_str(), plan.total_depth, join_degrees(paf.stage_degrees()).c_str(),
              join_degrees(plan.depth_per_stage).c_str(), plan.nonscalar_mults);
  for (const auto& row : plan.level_trace) {
    std::printf("  level %d:", row.level);
    for (const auto& v : row.variables) std::printf(" %s", v.c_str());
    std::printf("\n");
  }
}

void cmd_eval(const std::string& catalog_path, const std::string& name, double x,
              std::optional<int> layer) {
  const auto catalog = open_catalog(catalog_path);
  const auto& paf = catalog.get(name);
  const double sign = pf::eval_composite(paf, x, layer);
  const double relu = pf::relu_paf(paf, x, layer);
  const json out = {{"paf", paf.name()},
                    {"layer", layer ? json(*layer) : json(nullptr)},
                    {"x", x},
                    {"sign", sign},
                    {"relu", relu},
                    {"relu_exact", x > 0.0 ? x : 0.0},
                    {"abs_error", std::fabs(relu - (x > 0.0 ? x : 0.0))}};
  std::cout << out.dump(2) << "\n";
}

void cmd_cost(const std::string& catalog_path, const std::string& name, bool calibrate,
              const std::string& latency_path) {
  const auto catalog = open_catalog(catalog_path);
  const auto& paf = catalog.get(name);
  json out;
  if (calibrate) {
    const auto table = pf::load_latency_table(latency_path.empty() ? pf::default_latency_path()
                                                                   : fs::path(latency_path));
    const auto cal = pf::calibrate_latency(catalog, table);
    out = pf::cost_to_json(pf::estimate_cost(paf, &cal));
    out["calibration"] = pf::calibration_to_json(cal);
    if (const auto* entry = table.find(paf.name())) out["reference_latency_ms"] = entry->latency_ms;
  } else {
    out = pf::cost_to_json(pf::estimate_cost(paf));
  }
  std::cout << out.dump(2) << "\n";
}

struct RunContext {
  pf::ExperimentConfig cfg;
  std::string hash;
  pf::PafCatalog catalog;
  pf::DataSplit data;
};

RunContext open_run(const std::string& config_path) {
  RunContext ctx{pf::load_experiment_config(config_path), "", {}, {}};
  ctx.hash = pf::config_hash(ctx.cfg);
  ctx.catalog = pf::experiment_catalog(ctx.cfg);
  ctx.catalog.get(ctx.cfg.paf);
  ctx.data = pf::experiment_data(ctx.cfg);
  return ctx;
}

void cmd_ct_collect(const std::string& config_path, std::string out, std::size_t max_records) {
  auto ctx = open_run(config_path);
  pf::ModelGraph model = pf::experiment_model(ctx.cfg, ctx.data);
  const auto ds = pf::collect_ct_dataset(model, ctx.data.train, ctx.cfg.seed,
                                         max_records ? max_records : ctx.cfg.schedule.ct_max_records);
  if (out.empty()) out = (ctx.cfg.output / "ct_dataset.json").string();
  pf::save_ct_dataset(ds, out);
  for (const auto& l : ds.layers) {
    const auto prof = pf::profile(l.inputs);
    std::printf("layer %d: %zu records, range [%.6g, %.6g]\n", l.layer, l.inputs.size(), prof.min,
                prof.max);
  }
  std::printf("wrote %s\n", out.c_str());
}

void cmd_ct_tune(const std::string& config_path, std::string dataset, std::string out) {
  auto ctx = open_run(config_path);
  if (dataset.empty()) dataset = (ctx.cfg.output / "ct_dataset.json").string();
  const auto ds = pf::load_ct_dataset(dataset);
  const auto& base = ctx.catalog.get(ctx.cfg.paf);
  const auto start = ctx.cfg.schedule.coefficients == pf::CoefficientSource::kUniform
                         ? base.uniform()
                         : base;
  const auto run = pf::tune_all_layers(start, ds, ctx.cfg.schedule.ct);
  json summary = json::array();
  for (const auto& l : run.layers) {
    summary.push_back({{"layer", l.layer},
                       {"input_scale", l.input_scale},
                       {"initial_val_loss", l.initial_val_loss},
                       {"best_val_loss", l.best_val_loss},
                       {"best_epoch", l.best_epoch}});
    std::printf("layer %d: val loss %.6g -> %.6g (best epoch %d)\n", l.layer, l.initial_val_loss,
                l.best_val_loss, l.best_epoch);
  }
  if (out.empty()) out = (ctx.cfg.output / "tuned_paf.json").string();
  json doc = {{"schema_version", 1}, {"paf", pf::paf_to_json(run.tuned)}, {"ct", summary}};
  pf::write_text_file(out, doc.dump(2) + "\n");
  std::printf("wrote %s\n", out.c_str());
}

void cmd_train(const std::string& config_path, std::string out) {
  auto ctx = open_run(config_path);
  pf::ModelGraph model = pf::initial_model(ctx.cfg);
  const auto r = pf::pretrain(model, ctx.data, ctx.cfg.pretrain, ctx.cfg.seed);
  if (out.empty()) out = (ctx.cfg.output / "pretrained.json").string();
  pf::save_checkpoint({model, ctx.cfg.pretrain.epochs, r.train_acc, r.val_acc}, out);
  std::printf("pretrained %d epochs: train acc %.4f, val acc %.4f\nwrote %s\n",
              ctx.cfg.pretrain.epochs, r.train_acc, r.val_acc, out.c_str());
}

void write_outputs(const pf::ScheduleReport& report, const pf::ModelGraph& model,
                   const fs::path& dir, const std::string& stem) {
  pf::emit_report(report, dir / (stem + ".json"), pf::ReportFormat::kJson);
  pf::emit_report(report, dir / (stem + ".csv"), pf::ReportFormat::kCsv);
  if (report.complete) {
    pf::save_checkpoint({model, report.total_epochs, 0.0, report.final_val_acc},
                        dir / (stem + "_model.json"));
  }
}

void print_summary(const pf::ScheduleReport& r, const fs::path& dir, const std::string& stem) {
  std::printf("%s %s: %zu steps, %d groups, %d epochs\n", r.kind.c_str(), r.paf.c_str(),
              r.steps.size(), r.group_count(), r.total_epochs);
  std::printf("pretrained val acc %.4f, best val acc %.4f", r.pretrained_val_acc,
              r.global_best_val_acc);
  if (r.complete) {
    std::printf(", final (static scales) %.4f\n", r.final_val_acc);
  } else {
    std::printf("\npaused; run the same command again to resume\n");
  }
  for (const auto& s : r.steps) {
    if (s.cap_reached) std::printf("step %d reached the group cap\n", s.step);
  }
  std::printf("wrote %s\n", (dir / (stem + ".json")).string().c_str());
}

void cmd_schedule(const std::string& config_path, int max_groups, bool fresh) {
  auto ctx = open_run(config_path);
  const fs::path state_dir = ctx.cfg.output / "schedule_state";
  if (fresh) fs::remove_all(state_dir);
  pf::ModelGraph model = pf::experiment_model(ctx.cfg, ctx.data);
  pf::ScheduleOptions opts{ctx.hash, state_dir, max_groups};
  const auto report =
      pf::run_framework(model, ctx.catalog.get(ctx.cfg.paf), ctx.data, ctx.cfg.schedule, opts);
  write_outputs(report, model, ctx.cfg.output, "report");
  print_summary(report, ctx.cfg.output, "report");
}

void cmd_baseline(const std::string& config_path, int budget, int max_groups, bool fresh) {
  auto ctx = open_run(config_path);
  if (budget <= 0 && ctx.cfg.epoch_budget) budget = *ctx.cfg.epoch_budget;
  if (budget <= 0) {
    const fs::path paired = ctx.cfg.paired_report.value_or(ctx.cfg.output / "report.json");
    if (!fs::exists(paired)) {
      throw pf::ConfigError("no epoch budget: pass --budget, set epoch_budget or run schedule first");
    }
    const auto framework = pf::load_report(paired);
    if (!framework.complete) throw pf::ConfigError("paired report " + paired.string() + " is incomplete");
    budget = framework.total_epochs;
  }
  const fs::path state_dir = ctx.cfg.output / "baseline_state";
  if (fresh) fs::remove_all(state_dir);
  pf::ModelGraph model = pf::experiment_model(ctx.cfg, ctx.data);
  pf::ScheduleOptions opts{ctx.hash, state_dir, max_groups};
  const auto report = pf::run_baseline(model, ctx.catalog.get(ctx.cfg.paf), ctx.data,
                                       ctx.cfg.schedule, budget, opts);
  write_outputs(report, model, ctx.cfg.output, "baseline_report");
  print_summary(report, ctx.cfg.output, "baseline_report");
}

void cmd_report_convert(const std::string& in, const std::string& out, const std::string& format) {
  const auto fmt = format.empty() ? pf::report_format_for(out) : pf::report_format_from_string(format);
  const auto report = pf::load_report(in);
  pf::emit_report(report, out, fmt);
  std::printf("wrote %s\n", out.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pafforge: polynomial activation replacement for encrypted inference"};
  app.require_subcommand(1);
  std::string catalog_path;
  app.add_option("--catalog", catalog_path, "PAF catalog JSON (default: shipped catalog)");

  std::string paf_name;
  auto* catalog = app.add_subcommand("catalog", "list or show catalog PAFs");
  catalog->require_subcommand(1);
  auto* catalog_list = catalog->add_subcommand("list", "list PAFs with depth and cost");
  auto* catalog_show = catalog->add_subcommand("show", "print one PAF as JSON");
  catalog_show->add_option("paf", paf_name, "PAF name or alias")->required();

  auto* depth = app.add_subcommand("depth", "multiplication depth and level trace");
  depth->add_option("paf", paf_name, "PAF name or alias")->required();

  double x = 0.0;
  std::optional<int> layer;
  auto* eval = app.add_subcommand("eval", "evaluate the sign and ReLU approximations");
  eval->add_option("paf", paf_name, "PAF name or alias")->required();
  eval->add_option("--x", x, "input value")->required();
  eval->add_option("--layer", layer, "use the coefficients of this layer");

  bool calibrate = false;
  std::string latency_path;
  auto* cost = app.add_subcommand("cost", "depth, multiplication counts and latency proxy");
  cost->add_option("paf", paf_name, "PAF name or alias")->required();
  cost->add_flag("--calibrate", calibrate, "fit the latency proxy to the reference latencies");
  cost->add_option("--latencies", latency_path, "reference latency table JSON");

  std::string config_path, out_path, dataset_path;
  std::size_t max_records = 0;
  auto* ct = app.add_subcommand("ct", "coefficient tuning");
  ct->require_subcommand(1);
  auto* ct_collect = ct->add_subcommand("collect", "capture pre-activation records");
  ct_collect->add_option("--config", config_path, "experiment config")->required();
  ct_collect->add_option("--out", out_path, "CT dataset path (default: <output>/ct_dataset.json)");
  ct_collect->add_option("--max-records", max_records, "records kept per layer");
  auto* ct_tune = ct->add_subcommand("tune", "tune per-layer coefficients");
  ct_tune->add_option("--config", config_path, "experiment config")->required();
  ct_tune->add_option("--dataset", dataset_path, "CT dataset (default: <output>/ct_dataset.json)");
  ct_tune->add_option("--out", out_path, "tuned PAF path (default: <output>/tuned_paf.json)");

  auto* train = app.add_subcommand("train", "pretrain the ReLU model and save a checkpoint");
  train->add_option("--config", config_path, "experiment config")->required();
  train->add_option("--out", out_path, "checkpoint path (default: <output>/pretrained.json)");

  int max_groups = -1;
  int budget = 0;
  bool fresh = false;
  auto* schedule = app.add_subcommand("schedule", "run the replacement schedule");
  schedule->add_option("--config", config_path, "experiment config")->required();
  schedule->add_option("--max-groups", max_groups, "pause after this many new groups");
  schedule->add_flag("--fresh", fresh, "discard saved progress");
  auto* baseline = app.add_subcommand("baseline", "replace everything at once and fine-tune");
  baseline->add_option("--config", config_path, "experiment config")->required();
  baseline->add_option("--budget", budget, "epoch budget (default: the paired schedule total)");
  baseline->add_option("--max-groups", max_groups, "pause after this many new groups");
  baseline->add_flag("--fresh", fresh, "discard saved progress");

  std::string report_in, format;
  auto* report = app.add_subcommand("report", "report utilities");
  report->require_subcommand(1);
  auto* convert = report->add_subcommand("convert", "convert a report between JSON and CSV");
  convert->add_option("input", report_in, "report JSON")->required();
  convert->add_option("output", out_path, "output path")->required();
  convert->add_option("--format", format, "json or csv (default: from the extension)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(pf::ExitCode::kConfig);
  }

  try {
    if (*catalog_list) cmd_catalog_list(catalog_path);
    else if (*catalog_show) cmd_catalog_show(catalog_path, paf_name);
    else if (*depth) cmd_depth(catalog_path, paf_name);
    else if (*eval) cmd_eval(catalog_path, paf_name, x, layer);
    else if (*cost) cmd_cost(catalog_path, paf_name, calibrate, latency_path);
    else if (*ct_collect) cmd_ct_collect(config_path, out_path, max_records);
    else if (*ct_tune) cmd_ct_tune(config_path, dataset_path, out_path);
    else if (*train) cmd_train(config_path, out_path);
    else if (*schedule) cmd_schedule(config_path, max_groups, fresh);
    else if (*baseline) cmd_baseline(config_path, budget, max_groups, fresh);
    else if (*convert) cmd_report_convert(report_in, out_path, format);
  } catch (const pf::Error& e) {
    std::cerr << "pafforge: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "pafforge: " << e.what() << "\n";
    return static_cast<int>(pf::ExitCode::kData);
  } catch (const std::exception& e) {
    std::cerr << "pafforge: " << e.what() << "\n";
    return static_cast<int>(pf::ExitCode::kFailure);
  }
  return 0;
}
