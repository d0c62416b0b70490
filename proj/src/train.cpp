#include "pafforge/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "pafforge/errors.hpp"

namespace pafforge {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr_paf > 0.0) || !(lr_other > 0.0)) throw ConfigError("learning rates must be positive");
  if (wd_paf < 0.0 || wd_other < 0.0) throw ConfigError("weight decay must be nonnegative");
  if (group_epochs < 1) throw ConfigError("group epochs must be at least 1");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout p must be in [0, 1)");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) ||
      !(adam.eps > 0.0)) {
    throw ConfigError("invalid Adam parameters");
  }
}

TrainConfig train_config_from_json(const json& j) {
  static const std::vector<std::string> known = {
      "lr_paf", "lr_other", "wd_paf", "wd_other", "group_epochs", "batch_size",
      "dropout_p", "beta1", "beta2", "eps", "seed"};
  for (auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown training key '" + key + "'");
    }
  }
  TrainConfig c;
  c.lr_paf = j.value("lr_paf", c.lr_paf);
  c.lr_other = j.value("lr_other", c.lr_other);
  c.wd_paf = j.value("wd_paf", c.wd_paf);
  c.wd_other = j.value("wd_other", c.wd_other);
  c.group_epochs = j.value("group_epochs", c.group_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.dropout_p = j.value("dropout_p", c.dropout_p);
  c.adam.beta1 = j.value("beta1", c.adam.beta1);
  c.adam.beta2 = j.value("beta2", c.adam.beta2);
  c.adam.eps = j.value("eps", c.adam.eps);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

json train_config_to_json(const TrainConfig& c) {
  return {{"lr_paf", c.lr_paf},         {"lr_other", c.lr_other},
          {"wd_paf", c.wd_paf},         {"wd_other", c.wd_other},
          {"group_epochs", c.group_epochs}, {"batch_size", c.batch_size},
          {"dropout_p", c.dropout_p},   {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},      {"eps", c.adam.eps},
          {"seed", c.seed}};
}

void adam_update(std::span<double> params, std::span<const double> grads, AdamState& s,
                 double lr, double weight_decay, const AdamParams& adam) {
  if (params.size() != grads.size()) throw DataError("gradient/parameter size mismatch");
  if (s.m.empty()) {
    s.m.assign(params.size(), 0.0);
    s.v.assign(params.size(), 0.0);
  }
  if (s.m.size() != params.size()) throw DataError("optimizer state size mismatch");
  ++s.t;
  const double c1 = 1.0 - std::pow(adam.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(adam.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    s.m[i] = adam.beta1 * s.m[i] + (1.0 - adam.beta1) * g;
    s.v[i] = adam.beta2 * s.v[i] + (1.0 - adam.beta2) * g * g;
    const double mhat = s.m[i] / c1;
    const double vhat = s.v[i] / c2;
    params[i] -= lr * (mhat / (std::sqrt(vhat) + adam.eps) + weight_decay * params[i]);
  }
}

void AdamW::step(const std::vector<Parameter*>& params) {
  if (state_.empty()) state_.resize(params.size());
  if (state_.size() != params.size()) throw DataError("optimizer used with a different parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (p.frozen) continue;
    adam_update(p.value, p.grad, state_[i], cfg_.lr(p.group), cfg_.weight_decay(p.group), cfg_.adam);
  }
}

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.batch() != labels.size()) {
    throw DataError("logits " + shape_string(logits.shape) + " do not match " +
                    std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.batch(), k = logits.shape[1];
  LossResult r;
  r.grad = Tensor(logits.shape);
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = logits.data.data() + i * k;
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= k) throw DataError("label out of range");
    const double zmax = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) sum += std::exp(z[c] - zmax);
    const double log_sum = std::log(sum) + zmax;
    r.loss += log_sum - z[y];
    std::size_t arg = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (z[c] > z[arg]) arg = c;
    }
    if (arg == static_cast<std::size_t>(y)) ++r.correct;
    for (std::size_t c = 0; c < k; ++c) {
      const double p = std::exp(z[c] - log_sum);
      r.grad.data[i * k + c] = (p - (static_cast<std::size_t>(y) == c ? 1.0 : 0.0)) / static_cast<double>(n);
    }
  }
  r.loss /= static_cast<double>(n);
  return r;
}

EvalResult evaluate(ModelGraph& model, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw DataError("evaluation on an empty dataset");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  const ForwardContext ctx{Phase::kEval, nullptr};
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t b = 0; b < data.size(); b += batch_size) {
    const std::size_t e = std::min(data.size(), b + batch_size);
    const Tensor logits = model.forward(data.features.rows(b, e), ctx);
    const auto r = softmax_cross_entropy(
        logits, std::span<const int>(data.labels.data() + b, e - b));
    correct += r.correct;
    loss += r.loss * static_cast<double>(e - b);
  }
  return {static_cast<double>(correct) / static_cast<double>(data.size()),
          loss / static_cast<double>(data.size())};
}

double train_epoch(ModelGraph& model, const Dataset& data, AdamW& optimizer,
                   std::size_t batch_size, std::mt19937_64& rng) {
  if (data.size() == 0) throw DataError("training on an empty dataset");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const ForwardContext ctx{Phase::kTrain, &rng};
  const auto params = model.parameters();
  double total = 0.0;
  for (std::size_t b = 0; b < order.size(); b += batch_size) {
    const std::size_t e = std::min(order.size(), b + batch_size);
    const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                       order.begin() + static_cast<std::ptrdiff_t>(e));
    const Dataset batch = data.subset(idx);
    model.zero_grad();
    const Tensor logits = model.forward(batch.features, ctx);
    const auto r = softmax_cross_entropy(logits, batch.labels);
    if (!std::isfinite(r.loss)) throw NumericDivergence("training loss became non-finite");
    model.backward(r.grad);
    optimizer.step(params);
    total += r.loss * static_cast<double>(e - b);
  }
  return total / static_cast<double>(data.size());
}

Snapshot swa_average(const std::vector<Snapshot>& snaps) {
  if (snaps.empty()) throw DataError("SWA over an empty checkpoint list");
  const Snapshot& first = snaps.front();
  for (const auto& s : snaps) {
    if (s.params.size() != first.params.size() || s.scales.size() != first.scales.size()) {
      throw DataError("SWA over structurally different checkpoints");
    }
    for (std::size_t i = 0; i < s.params.size(); ++i) {
      if (s.params[i].size() != first.params[i].size()) {
        throw DataError("SWA over structurally different checkpoints");
      }
    }
  }
  Snapshot out;
  out.epoch = -1;
  out.params = first.params;
  std::vector<double> column(snaps.size());
  for (std::size_t i = 0; i < first.params.size(); ++i) {
    for (std::size_t k = 0; k < first.params[i].size(); ++k) {
      for (std::size_t s = 0; s < snaps.size(); ++s) column[s] = snaps[s].params[i][k];
      std::sort(column.begin(), column.end());
      // a value shared by every checkpoint (e.g. a frozen weight) is kept exactly
      if (column.front() == column.back()) {
        out.params[i][k] = column.front();
        continue;
      }
      double sum = 0.0;
      for (double v : column) sum += v;
      out.params[i][k] = sum / static_cast<double>(snaps.size());
    }
  }
  for (std::size_t j = 0; j < first.scales.size(); ++j) {
    ScaleMode m = first.scales[j];
    for (const auto& s : snaps) {
      const ScaleMode& o = s.scales[j];
      if (o.is_static() != m.is_static() ||
          (m.is_static() && o.static_scale() != m.static_scale())) {
        throw DataError("SWA over checkpoints with different static scales");
      }
      if (!m.is_static()) {
        m.set_running_max(std::max(m.running_max(), o.running_max()), m.observed() || o.observed());
      }
    }
    out.scales.push_back(m);
  }
  return out;
}

json checkpoint_to_json(const Checkpoint& c) {
  json scales = json::object();
  for (auto pos : c.model.paf_positions()) {
    const auto& paf = static_cast<const PafActivation&>(c.model.layer(pos));
    if (paf.scale_mode().is_static()) {
      scales[std::to_string(paf.nonpoly_index())] = paf.scale_mode().static_scale();
    }
  }
  return {{"schema_version", 1},     {"epoch", c.epoch},   {"train_acc", c.train_acc},
          {"val_acc", c.val_acc},    {"scales", scales},   {"model", c.model.to_json()}};
}

Checkpoint checkpoint_from_json(const json& j) {
  try {
    if (j.at("schema_version").get<int>() != 1) throw DataError("unsupported checkpoint version");
    Checkpoint c;
    c.model = ModelGraph::from_json(j.at("model"));
    c.epoch = j.value("epoch", -1);
    c.train_acc = j.value("train_acc", 0.0);
    c.val_acc = j.value("val_acc", 0.0);
    return c;
  } catch (const json::exception& e) {
    throw DataError(std::string("invalid checkpoint: ") + e.what());
  }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out << text;
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  write_text_file(path, checkpoint_to_json(c).dump(1) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace pafforge
