#include "pafforge/scheduler.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "pafforge/catalog.hpp"
#include "pafforge/errors.hpp"
#include "pafforge/rng.hpp"
#include "pafforge/scaling.hpp"

namespace pafforge {

using nlohmann::json;

namespace {

constexpr int kReportSchema = 1;
constexpr int kStateSchema = 1;
constexpr std::uint64_t kBaselineStream = 0xba5e;
// Accuracies are count ratios; differences within this are treated as equal.
constexpr double kAccuracySlack = 1e-9;
constexpr const char* kStateFile = "schedule_state.json";

PafActivation& paf_at(ModelGraph& model, std::size_t pos) {
  return dynamic_cast<PafActivation&>(model.layer(pos));
}

/// Max |input| of the layer at `pos` over the training set, eval phase.
double layer_input_max(ModelGraph& model, std::size_t pos, const Dataset& data) {
  const ForwardContext ctx{Phase::kEval, nullptr};
  double m = 0.0;
  for (std::size_t b = 0; b < data.size(); b += 256) {
    const std::size_t e = std::min(data.size(), b + 256);
    std::vector<ActivationTap> taps;
    model.forward(data.features.rows(b, e), ctx, &taps);
    for (const auto& t : taps) {
      if (t.position == pos) m = std::max(m, max_abs(t.input.data));
    }
  }
  return m > 0.0 ? m : 1.0;
}

/// Static scale for a freshly replaced layer when dynamic scaling is off.
void calibrate_static(ModelGraph& model, std::size_t pos, const Dataset& data) {
  paf_at(model, pos).scale_mode() = ScaleMode::fixed(layer_input_max(model, pos, data));
}

/// Loads weights from `snap` while keeping every running max observed so
/// far; the maximum describes inputs already seen, not the weights.
void load_keeping_observed(ModelGraph& model, Snapshot snap) {
  const Snapshot now = model.snapshot();
  for (std::size_t i = 0; i < snap.scales.size() && i < now.scales.size(); ++i) {
    ScaleMode& s = snap.scales[i];
    const ScaleMode& cur = now.scales[i];
    if (s.is_static() || !cur.observed()) continue;
    s.set_running_max(std::max(s.running_max(), cur.running_max()), true);
  }
  model.load(snap);
}

/// Shortest text that reads back to the same double.
std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

json epoch_to_json(const EpochEntry& e) {
  return {{"epoch", e.epoch}, {"train_acc", e.train_acc}, {"val_acc", e.val_acc}};
}

EpochEntry epoch_from_json(const json& j) {
  return {j.at("epoch").get<int>(), j.at("train_acc").get<double>(), j.at("val_acc").get<double>()};
}

json group_to_json(const TrainingGroupRecord& g) {
  json epochs = json::array();
  for (const auto& e : g.epochs) epochs.push_back(epoch_to_json(e));
  return {{"group", g.group},
          {"trainable", to_string(g.trainable)},
          {"epochs", epochs},
          {"swa", epoch_to_json(g.swa)},
          {"selected", g.selected},
          {"selected_train_acc", g.selected_train_acc},
          {"selected_val_acc", g.selected_val_acc},
          {"techniques", {{"swa", g.selected == -1}, {"dropout", g.dropout}, {"at_swap", g.at_swap}}},
          {"improved", g.improved},
          {"overfitting", g.overfitting}};
}

TrainingGroupRecord group_from_json(const json& j) {
  TrainingGroupRecord g;
  g.group = j.at("group").get<int>();
  g.trainable = trainable_set_from_string(j.at("trainable").get<std::string>());
  for (const auto& e : j.at("epochs")) g.epochs.push_back(epoch_from_json(e));
  g.swa = epoch_from_json(j.at("swa"));
  g.selected = j.at("selected").get<int>();
  g.selected_train_acc = j.at("selected_train_acc").get<double>();
  g.selected_val_acc = j.at("selected_val_acc").get<double>();
  g.dropout = j.at("techniques").at("dropout").get<bool>();
  g.at_swap = j.at("techniques").at("at_swap").get<bool>();
  g.improved = j.at("improved").get<bool>();
  g.overfitting = j.at("overfitting").get<bool>();
  return g;
}

json step_to_json(const StepState& s) {
  json groups = json::array();
  for (const auto& g : s.groups) groups.push_back(group_to_json(g));
  return {{"step", s.step},
          {"position", s.position},
          {"trainable", to_string(s.trainable)},
          {"dropout_engaged", s.dropout_engaged},
          {"at_tried", s.at_tried},
          {"groups", groups},
          {"start_val_acc", s.start_val_acc},
          {"best_val_acc", s.best_val_acc},
          {"best_train_acc", s.best_train_acc},
          {"cap_reached", s.cap_reached},
          {"finished", s.finished},
          {"termination", s.termination}};
}

StepState step_from_json(const json& j) {
  StepState s;
  s.step = j.at("step").get<int>();
  s.position = j.at("position").get<std::size_t>();
  s.trainable = trainable_set_from_string(j.at("trainable").get<std::string>());
  s.dropout_engaged = j.at("dropout_engaged").get<bool>();
  s.at_tried = j.at("at_tried").get<bool>();
  for (const auto& g : j.at("groups")) s.groups.push_back(group_from_json(g));
  s.start_val_acc = j.at("start_val_acc").get<double>();
  s.best_val_acc = j.at("best_val_acc").get<double>();
  s.best_train_acc = j.at("best_train_acc").get<double>();
  s.cap_reached = j.at("cap_reached").get<bool>();
  s.finished = j.at("finished").get<bool>();
  s.termination = j.at("termination").get<std::string>();
  return s;
}

json techniques_to_json(const Techniques& t) {
  return {{"ct", t.ct}, {"pa", t.pa}, {"at", t.at}, {"ds_ss", t.ds_ss}};
}

Techniques techniques_from_json(const json& j) {
  return {j.at("ct").get<bool>(), j.at("pa").get<bool>(), j.at("at").get<bool>(),
          j.at("ds_ss").get<bool>()};
}

void refresh_totals(ScheduleReport& r) {
  r.total_epochs = 0;
  r.global_best_val_acc = 0.0;
  for (const auto& s : r.steps) {
    for (const auto& g : s.groups) {
      r.total_epochs += static_cast<int>(g.epochs.size());
      r.global_best_val_acc = std::max(r.global_best_val_acc, g.selected_val_acc);
    }
  }
}

/// Everything needed to continue a run after the last completed group.
struct RunState {
  ScheduleReport report;
  CompositePaf paf;
  ModelGraph model;
  ModelGraph step_best;
  bool dropout_run = false;
};

class Checkpointer {
 public:
  Checkpointer(const ScheduleOptions& options, std::string kind)
      : options_(options), kind_(std::move(kind)) {}

  std::optional<RunState> load() const {
    if (!options_.checkpoint_dir) return std::nullopt;
    const auto path = *options_.checkpoint_dir / kStateFile;
    if (!std::filesystem::exists(path)) return std::nullopt;
    json j;
    try {
      j = json::parse(read_text_file(path));
    } catch (const json::parse_error& e) {
      throw ParseError(path.string() + ": " + e.what());
    }
    if (j.value("schema_version", 0) != kStateSchema || j.value("kind", "") != kind_) {
      throw ConfigError(path.string() + ": not a " + kind_ + " state file");
    }
    if (j.value("config_hash", "") != options_.config_hash) {
      throw ConfigError(path.string() + ": saved run belongs to a different config");
    }
    try {
      return RunState{report_from_json(j.at("report")), paf_from_json(j.at("paf"), path.string()),
                      ModelGraph::from_json(j.at("model")),
                      ModelGraph::from_json(j.at("step_best")), j.at("dropout_run").get<bool>()};
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": " + e.what());
    }
  }

  /// Saves progress; returns false once the new-group allowance is used up.
  bool save(const ScheduleReport& report, const CompositePaf& paf, const ModelGraph& model,
            const Snapshot& best, bool dropout_run) {
    ++new_groups_;
    if (options_.checkpoint_dir) {
      ModelGraph best_model = model;
      best_model.load(best);
      const json j = {{"schema_version", kStateSchema},
                      {"kind", kind_},
                      {"config_hash", options_.config_hash},
                      {"report", report_to_json(report)},
                      {"paf", paf_to_json(paf)},
                      {"model", model.to_json()},
                      {"step_best", best_model.to_json()},
                      {"dropout_run", dropout_run}};
      std::filesystem::create_directories(*options_.checkpoint_dir);
      write_text_file(*options_.checkpoint_dir / kStateFile, j.dump());
    }
    return options_.stop_after_groups < 0 || new_groups_ < options_.stop_after_groups;
  }

 private:
  const ScheduleOptions& options_;
  std::string kind_;
  int new_groups_ = 0;
};

void begin_step(ModelGraph& model, const DataSplit& data, StepState& state,
                Snapshot& step_best) {
  state.start_val_acc = evaluate(model, data.val).accuracy;
  state.best_val_acc = state.start_val_acc;
  state.best_train_acc = evaluate(model, data.train).accuracy;
  step_best = model.snapshot();
}

void finish_run(ModelGraph& model, const DataSplit& data, ScheduleReport& report) {
  freeze_scales(model);
  report.final_val_acc = evaluate(model, data.val).accuracy;
  refresh_totals(report);
  report.complete = true;
}

}  // namespace

const char* to_string(TrainableSet set) {
  switch (set) {
    case TrainableSet::kPaf: return "paf";
    case TrainableSet::kOther: return "other";
    case TrainableSet::kBoth: return "both";
  }
  return "?";
}

TrainableSet trainable_set_from_string(const std::string& name) {
  if (name == "paf") return TrainableSet::kPaf;
  if (name == "other") return TrainableSet::kOther;
  if (name == "both") return TrainableSet::kBoth;
  throw ConfigError("unknown trainable set '" + name + "'");
}

TrainableSet alternate_swap(TrainableSet set) {
  switch (set) {
    case TrainableSet::kPaf: return TrainableSet::kOther;
    case TrainableSet::kOther: return TrainableSet::kPaf;
    case TrainableSet::kBoth: return TrainableSet::kBoth;
  }
  return set;
}

void ScheduleConfig::validate() const {
  train.validate();
  ct.validate();
  if (max_groups_per_step < 1) throw ConfigError("max_groups_per_step must be at least 1");
  if (!(improvement_threshold >= 0.0)) throw ConfigError("improvement threshold must be >= 0");
  if (!(overfit_margin >= 0.0)) throw ConfigError("overfit margin must be >= 0");
}

int ScheduleReport::group_count() const {
  int n = 0;
  for (const auto& s : steps) n += static_cast<int>(s.groups.size());
  return n;
}

json report_to_json(const ScheduleReport& r) {
  json ct = json::array();
  for (const auto& c : r.ct) {
    ct.push_back({{"layer", c.layer},
                  {"records", c.records},
                  {"input_scale", c.input_scale},
                  {"initial_val_loss", c.initial_val_loss},
                  {"best_val_loss", c.best_val_loss},
                  {"best_epoch", c.best_epoch}});
  }
  json steps = json::array();
  for (const auto& s : r.steps) steps.push_back(step_to_json(s));
  return {{"schema_version", kReportSchema},
          {"kind", r.kind},
          {"paf", r.paf},
          {"config_hash", r.config_hash},
          {"seed", r.seed},
          {"group_epochs", r.group_epochs},
          {"initial_nonpoly", r.initial_nonpoly},
          {"techniques", techniques_to_json(r.techniques)},
          {"ct", ct},
          {"steps", steps},
          {"pretrained_val_acc", r.pretrained_val_acc},
          {"global_best_val_acc", r.global_best_val_acc},
          {"final_val_acc", r.final_val_acc},
          {"total_epochs", r.total_epochs},
          {"complete", r.complete}};
}

ScheduleReport report_from_json(const json& j) {
  if (j.value("schema_version", 0) != kReportSchema) {
    throw DataError("unsupported report schema version");
  }
  ScheduleReport r;
  try {
    r.kind = j.at("kind").get<std::string>();
    r.paf = j.at("paf").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.group_epochs = j.at("group_epochs").get<int>();
    r.initial_nonpoly = j.at("initial_nonpoly").get<int>();
    r.techniques = techniques_from_json(j.at("techniques"));
    for (const auto& c : j.at("ct")) {
      r.ct.push_back({c.at("layer").get<int>(), c.at("records").get<std::size_t>(),
                      c.at("input_scale").get<double>(), c.at("initial_val_loss").get<double>(),
                      c.at("best_val_loss").get<double>(), c.at("best_epoch").get<int>()});
    }
    for (const auto& s : j.at("steps")) r.steps.push_back(step_from_json(s));
    r.pretrained_val_acc = j.at("pretrained_val_acc").get<double>();
    r.global_best_val_acc = j.at("global_best_val_acc").get<double>();
    r.final_val_acc = j.at("final_val_acc").get<double>();
    r.total_epochs = j.at("total_epochs").get<int>();
    r.complete = j.at("complete").get<bool>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed report: ") + e.what());
  }
  return r;
}

std::string report_to_csv(const ScheduleReport& r) {
  std::ostringstream out;
  out << "kind,paf,config_hash,seed,step,position,group,trainable,epochs,swa_train_acc,"
         "swa_val_acc,selected,selected_train_acc,selected_val_acc,dropout,at_swap,improved,"
         "overfitting\n";
  for (const auto& s : r.steps) {
    for (const auto& g : s.groups) {
      out << r.kind << ',' << r.paf << ',' << r.config_hash << ',' << r.seed << ',' << s.step
          << ',' << s.position << ',' << g.group << ',' << to_string(g.trainable) << ','
          << g.epochs.size() << ',' << num(g.swa.train_acc) << ',' << num(g.swa.val_acc) << ','
          << (g.selected == -1 ? std::string("swa") : std::to_string(g.selected)) << ','
          << num(g.selected_train_acc) << ',' << num(g.selected_val_acc) << ',' << g.dropout << ','
          << g.at_swap << ',' << g.improved << ',' << g.overfitting << '\n';
    }
  }
  return out.str();
}

std::optional<std::size_t> replace_next_nonpoly(ModelGraph& model, const CompositePaf& paf,
                                                ScaleMode mode) {
  for (std::size_t i = 0; i < model.size(); ++i) {
    if (model.layer(i).is_nonpoly()) {
      model.replace(i, make_replacement(model, i, &paf, mode));
      return i;
    }
  }
  return std::nullopt;
}

void apply_trainable(ModelGraph& model, TrainableSet set,
                     const std::vector<std::size_t>& paf_positions, std::size_t scope_end) {
  const bool paf_on = set != TrainableSet::kOther;
  const bool other_on = set != TrainableSet::kPaf;
  for (std::size_t i = 0; i < model.size(); ++i) {
    const bool paf_here =
        std::find(paf_positions.begin(), paf_positions.end(), i) != paf_positions.end();
    for (Parameter* p : model.layer(i).parameters()) {
      p->frozen = p->group == ParamGroup::kPaf ? !(paf_on && paf_here)
                                               : !(other_on && i <= scope_end);
    }
  }
}

TrainingGroupRecord run_training_group(ModelGraph& model, const TrainConfig& cfg,
                                       const DataSplit& data, std::uint64_t seed,
                                       std::optional<int> epochs) {
  const int count = epochs.value_or(cfg.group_epochs);
  if (count < 1) throw ConfigError("a training group needs at least one epoch");
  AdamW optimizer(cfg);
  std::mt19937_64 rng(seed);
  TrainingGroupRecord rec;
  std::vector<Snapshot> snaps;
  for (int e = 0; e < count; ++e) {
    train_epoch(model, data.train, optimizer, cfg.batch_size, rng);
    Snapshot s = model.snapshot();
    s.epoch = e;
    s.train_acc = evaluate(model, data.train).accuracy;
    s.val_acc = evaluate(model, data.val).accuracy;
    rec.epochs.push_back({e, s.train_acc, s.val_acc});
    snaps.push_back(std::move(s));
  }
  Snapshot swa = swa_average(snaps);
  model.load(swa);
  swa.train_acc = evaluate(model, data.train).accuracy;
  swa.val_acc = evaluate(model, data.val).accuracy;
  rec.swa = {-1, swa.train_acc, swa.val_acc};

  const Snapshot* best = &swa;
  for (const auto& s : snaps) {
    if (s.val_acc > best->val_acc) best = &s;
  }
  rec.selected = best->epoch;
  rec.selected_train_acc = best->train_acc;
  rec.selected_val_acc = best->val_acc;
  if (best != &swa) load_keeping_observed(model, *best);
  return rec;
}

bool detect_overfitting(const TrainingGroupRecord& record, double margin) {
  return record.selected_train_acc - record.selected_val_acc > margin + kAccuracySlack;
}

StepDecision next_action(const StepState& state, const TrainingGroupRecord& rec,
                         bool dropout_run, const ScheduleConfig& cfg) {
  StepDecision d;
  d.improved = rec.selected_val_acc > state.best_val_acc + cfg.improvement_threshold;
  d.engage_dropout = rec.overfitting && !dropout_run;
  if (d.improved || d.engage_dropout) return d;
  if (cfg.techniques.at && !state.at_tried) {
    d.swap = true;
  } else {
    d.terminate = true;
  }
  return d;
}

void run_step(ModelGraph& model, const ScheduleConfig& cfg, const DataSplit& data,
              const std::vector<std::size_t>& paf_positions, std::size_t scope_end,
              StepState& state, Snapshot& step_best, bool& dropout_run,
              const GroupCallback& on_group, const GroupRunner& runner) {
  while (!state.finished) {
    if (static_cast<int>(state.groups.size()) >= cfg.max_groups_per_step) {
      state.finished = true;
      state.cap_reached = true;
      state.termination = "group_cap";
      break;
    }
    const int index = static_cast<int>(state.groups.size());
    const bool swapped_in = index > 0 && state.groups.back().trainable != state.trainable;
    model.set_dropout(dropout_run);
    apply_trainable(model, state.trainable, paf_positions, scope_end);
    const std::uint64_t seed = derive_seed(
        cfg.train.seed, {static_cast<std::uint64_t>(state.step), static_cast<std::uint64_t>(index)});
    TrainingGroupRecord rec = runner ? runner(model, cfg.train, data, seed)
                                     : run_training_group(model, cfg.train, data, seed);
    rec.group = index;
    rec.trainable = state.trainable;
    rec.dropout = dropout_run;
    rec.at_swap = swapped_in;
    rec.overfitting = detect_overfitting(rec, cfg.overfit_margin);

    const StepDecision d = next_action(state, rec, dropout_run, cfg);
    rec.improved = d.improved;
    if (d.engage_dropout) dropout_run = true;
    state.dropout_engaged = dropout_run;
    if (d.improved) {
      state.best_val_acc = rec.selected_val_acc;
      state.best_train_acc = rec.selected_train_acc;
      state.at_tried = false;
      step_best = model.snapshot();
    } else {
      load_keeping_observed(model, step_best);
    }
    if (d.swap) {
      state.trainable = alternate_swap(state.trainable);
      state.at_tried = true;
    }
    if (d.terminate) {
      state.finished = true;
      state.termination = "no_improvement";
    }
    state.groups.push_back(std::move(rec));
    if (on_group && !on_group(state, step_best)) return;
  }
  load_keeping_observed(model, step_best);
}

void freeze_scales(ModelGraph& model) {
  for (std::size_t pos : model.paf_positions()) {
    auto& mode = paf_at(model, pos).scale_mode();
    if (!mode.is_static()) mode = freeze_static(mode);
  }
}

ScheduleReport run_framework(ModelGraph& model, const CompositePaf& paf, const DataSplit& data,
                             const ScheduleConfig& cfg, const ScheduleOptions& options) {
  cfg.validate();
  Checkpointer ckpt(options, "framework");
  const bool ds = cfg.techniques.ds_ss;

  RunState run{ScheduleReport{}, paf, model, model, false};
  Snapshot step_best;
  if (auto saved = ckpt.load()) {
    run = std::move(*saved);
    step_best = run.step_best.snapshot();
  } else {
    if (model.nonpoly_count() == 0) throw ConfigError("model has no ReLU or MaxPool to replace");
    ScheduleReport& r = run.report;
    r.kind = "framework";
    r.paf = paf.name();
    r.config_hash = options.config_hash;
    r.seed = cfg.train.seed;
    r.group_epochs = cfg.train.group_epochs;
    r.initial_nonpoly = model.nonpoly_count();
    r.techniques = cfg.techniques;
    r.pretrained_val_acc = evaluate(model, data.val).accuracy;
    run.paf = cfg.coefficients == CoefficientSource::kUniform ? paf.uniform() : paf;
    if (cfg.techniques.ct) {
      const CtDataset ct_data =
          collect_ct_dataset(model, data.train, derive_seed(cfg.ct.seed, {0}), cfg.ct_max_records);
      const CtRun tuned = tune_all_layers(run.paf, ct_data, cfg.ct);
      run.paf = tuned.tuned;
      for (std::size_t i = 0; i < tuned.layers.size(); ++i) {
        const auto& l = tuned.layers[i];
        r.ct.push_back({l.layer, ct_data.layers[i].inputs.size(), l.input_scale,
                        l.initial_val_loss, l.best_val_loss, l.best_epoch});
      }
    }
  }
  ScheduleReport& report = run.report;
  if (report.complete) {
    model = std::move(run.model);
    return report;
  }
  ModelGraph& m = run.model;

  auto save = [&](const StepState& state, const Snapshot& best) {
    report.steps.back() = state;
    refresh_totals(report);
    return ckpt.save(report, run.paf, m, best, run.dropout_run);
  };

  while (true) {
    if (report.steps.empty() || report.steps.back().finished) {
      if (m.nonpoly_count() == 0) break;
      StepState state;
      state.step = static_cast<int>(report.steps.size());
      if (cfg.techniques.pa) {
        state.position = *replace_next_nonpoly(m, run.paf);
        if (!ds) calibrate_static(m, state.position, data.train);
      } else {
        while (auto pos = replace_next_nonpoly(m, run.paf)) {
          if (!ds) calibrate_static(m, *pos, data.train);
          state.position = *pos;
        }
      }
      state.trainable = cfg.techniques.at ? TrainableSet::kPaf : TrainableSet::kBoth;
      begin_step(m, data, state, step_best);
      report.steps.push_back(state);
    }
    StepState& state = report.steps.back();
    if (options.stop_after_groups == 0) {
      refresh_totals(report);
      ckpt.save(report, run.paf, m, step_best, run.dropout_run);
      model = m;
      return report;
    }
    // New coefficients train only at this step's layer; with all layers
    // replaced at once every PAF trains. Other parameters train up to the
    // replacement point, or everywhere once nothing is left to replace.
    std::vector<std::size_t> paf_positions =
        cfg.techniques.pa ? std::vector<std::size_t>{state.position} : m.paf_positions();
    const std::size_t scope_end = m.nonpoly_count() == 0 ? m.size() : state.position;
    StepState working = state;
    bool keep_going = true;
    run_step(m, cfg, data, paf_positions, scope_end, working, step_best, run.dropout_run,
             [&](const StepState& s, const Snapshot& best) {
               keep_going = save(s, best);
               return keep_going;
             });
    report.steps.back() = working;
    if (!keep_going) {
      if (working.finished && m.nonpoly_count() == 0) break;
      refresh_totals(report);
      model = m;
      return report;
    }
  }
  finish_run(m, data, report);
  if (options.checkpoint_dir) ckpt.save(report, run.paf, m, m.snapshot(), run.dropout_run);
  model = std::move(m);
  return report;
}

ScheduleReport run_baseline(ModelGraph& model, const CompositePaf& paf, const DataSplit& data,
                            const ScheduleConfig& cfg, int epoch_budget,
                            const ScheduleOptions& options) {
  cfg.validate();
  if (epoch_budget < 1) throw ConfigError("epoch budget must be at least 1");
  Checkpointer ckpt(options, "baseline");
  const CompositePaf shared = paf.uniform();

  RunState run{ScheduleReport{}, shared, model, model, false};
  Snapshot step_best;
  if (auto saved = ckpt.load()) {
    run = std::move(*saved);
    step_best = run.step_best.snapshot();
  } else {
    if (model.nonpoly_count() == 0) throw ConfigError("model has no ReLU or MaxPool to replace");
    ScheduleReport& r = run.report;
    r.kind = "baseline";
    r.paf = paf.name();
    r.config_hash = options.config_hash;
    r.seed = cfg.train.seed;
    r.group_epochs = cfg.train.group_epochs;
    r.initial_nonpoly = model.nonpoly_count();
    r.techniques = {false, false, false, cfg.techniques.ds_ss};
    r.pretrained_val_acc = evaluate(model, data.val).accuracy;
    StepState state;
    while (auto pos = replace_next_nonpoly(run.model, shared)) {
      if (!cfg.techniques.ds_ss) calibrate_static(run.model, *pos, data.train);
      state.position = *pos;
    }
    state.trainable = TrainableSet::kOther;
    begin_step(run.model, data, state, step_best);
    r.steps.push_back(state);
  }
  ScheduleReport& report = run.report;
  ModelGraph& m = run.model;
  if (report.complete) {
    model = std::move(m);
    return report;
  }

  StepState& state = report.steps.back();
  apply_trainable(m, TrainableSet::kOther, {}, m.size());
  int used = 0;
  for (const auto& g : state.groups) used += static_cast<int>(g.epochs.size());
  if (options.stop_after_groups == 0) {
    ckpt.save(report, run.paf, m, m.snapshot(), run.dropout_run);
    model = m;
    return report;
  }
  while (used < epoch_budget) {
    const int index = static_cast<int>(state.groups.size());
    const int epochs = std::min(cfg.train.group_epochs, epoch_budget - used);
    m.set_dropout(run.dropout_run);
    TrainingGroupRecord rec = run_training_group(
        m, cfg.train, data,
        derive_seed(cfg.train.seed, {kBaselineStream, static_cast<std::uint64_t>(index)}), epochs);
    rec.group = index;
    rec.trainable = TrainableSet::kOther;
    rec.dropout = run.dropout_run;
    rec.overfitting = detect_overfitting(rec, cfg.overfit_margin);
    rec.improved = rec.selected_val_acc > state.best_val_acc + cfg.improvement_threshold;
    if (rec.overfitting) run.dropout_run = true;
    if (rec.improved) {
      state.best_val_acc = rec.selected_val_acc;
      state.best_train_acc = rec.selected_train_acc;
    }
    state.dropout_engaged = run.dropout_run;
    used += epochs;
    state.groups.push_back(std::move(rec));
    if (used >= epoch_budget) {
      state.finished = true;
      state.termination = "budget";
    }
    refresh_totals(report);
    if (!ckpt.save(report, run.paf, m, m.snapshot(), run.dropout_run) && !state.finished) {
      model = m;
      return report;
    }
  }
  finish_run(m, data, report);
  if (options.checkpoint_dir) ckpt.save(report, run.paf, m, m.snapshot(), run.dropout_run);
  model = std::move(m);
  return report;
}

}  // namespace pafforge
