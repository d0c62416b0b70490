#include "pafforge/ct.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pafforge/rng.hpp"
#include "pafforge/scaling.hpp"
#include "pafforge/train.hpp"

namespace pafforge {

using nlohmann::json;

const CtLayer& CtDataset::layer(int index) const {
  for (const auto& l : layers) {
    if (l.layer == index) return l;
  }
  throw LookupError("CT dataset has no layer " + std::to_string(index));
}

void CtDataset::validate() const {
  int prev = -1;
  for (const auto& l : layers) {
    if (l.layer <= prev) throw DataError("CT layer indices must be strictly increasing");
    prev = l.layer;
    if (l.inputs.size() != l.refs.size()) {
      throw DataError("CT layer " + std::to_string(l.layer) + " has unequal inputs and refs");
    }
    for (std::size_t i = 0; i < l.inputs.size(); ++i) {
      if (l.refs[i] != std::max(l.inputs[i], 0.0)) {
        throw DataError("CT layer " + std::to_string(l.layer) + " record " + std::to_string(i) +
                        " is not ReLU of its input");
      }
    }
  }
}

json ct_dataset_to_json(const CtDataset& ds) {
  json layers = json::array();
  for (const auto& l : ds.layers) {
    layers.push_back({{"layer", l.layer}, {"inputs", l.inputs}, {"refs", l.refs}});
  }
  return {{"schema_version", 1}, {"layers", layers}};
}

CtDataset ct_dataset_from_json(const json& j) {
  CtDataset ds;
  try {
    if (j.at("schema_version").get<int>() != 1) throw DataError("unsupported CT dataset version");
    for (const auto& l : j.at("layers")) {
      ds.layers.push_back({l.at("layer").get<int>(), l.at("inputs").get<std::vector<double>>(),
                           l.at("refs").get<std::vector<double>>()});
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("invalid CT dataset: ") + e.what());
  }
  ds.validate();
  return ds;
}

void save_ct_dataset(const CtDataset& ds, const std::filesystem::path& path) {
  write_text_file(path, ct_dataset_to_json(ds).dump() + "\n");
}

CtDataset load_ct_dataset(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return ct_dataset_from_json(j);
}

CtDataset collect_ct_dataset(ModelGraph& model, const Dataset& data, std::uint64_t seed,
                             std::size_t max_records) {
  if (model.nonpoly_count() == 0) throw ConfigError("model has no ReLU or MaxPool layer left");
  if (data.size() == 0) throw DataError("CT collection needs data");
  std::vector<CtLayer> layers;
  const ForwardContext ctx{Phase::kEval, nullptr};
  constexpr std::size_t kChunk = 256;
  for (std::size_t b = 0; b < data.size(); b += kChunk) {
    std::vector<ActivationTap> taps;
    model.forward(data.features.rows(b, std::min(data.size(), b + kChunk)), ctx, &taps);
    std::size_t slot = 0;
    for (const auto& tap : taps) {
      if (tap.replaced) continue;
      if (layers.size() <= slot) layers.push_back({tap.nonpoly_index, {}, {}});
      auto& inputs = layers[slot++].inputs;
      if (tap.kind == Layer::Kind::kReLU) {
        inputs.insert(inputs.end(), tap.input.data.begin(), tap.input.data.end());
      } else {
        const auto& x = tap.input;
        const std::size_t h = x.shape[2], w = x.shape[3];
        for (std::size_t plane = 0; plane < x.shape[0] * x.shape[1]; ++plane) {
          for (std::size_t r = 0; r < h; r += 2) {
            for (std::size_t c = 0; c < w; c += 2) {
              const std::size_t top = plane * h * w + r * w + c;
              inputs.push_back(x.data[top] - x.data[top + 1]);
              inputs.push_back(x.data[top + w] - x.data[top + w + 1]);
            }
          }
        }
      }
    }
  }
  CtDataset ds;
  for (auto& l : layers) {
    if (max_records > 0 && l.inputs.size() > max_records) {
      std::vector<std::size_t> idx(l.inputs.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(l.layer)}));
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_records);
      std::sort(idx.begin(), idx.end());
      std::vector<double> kept;
      kept.reserve(max_records);
      for (auto i : idx) kept.push_back(l.inputs[i]);
      l.inputs = std::move(kept);
    }
    l.refs.reserve(l.inputs.size());
    for (double v : l.inputs) l.refs.push_back(std::max(v, 0.0));
    ds.layers.push_back(std::move(l));
  }
  return ds;
}

CtSplit split_ct(const CtDataset& ds, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("CT split ratio must be in (0, 1)");
  CtSplit out;
  for (const auto& l : ds.layers) {
    const std::size_t n = l.inputs.size();
    if (n < 2) throw DataError("CT layer " + std::to_string(l.layer) + " needs at least 2 records");
    auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
    n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(l.layer)}));
    std::shuffle(idx.begin(), idx.end(), rng);
    CtLayer tr{l.layer, {}, {}}, va{l.layer, {}, {}};
    for (std::size_t i = 0; i < n; ++i) {
      CtLayer& dst = i < n_train ? tr : va;
      dst.inputs.push_back(l.inputs[idx[i]]);
      dst.refs.push_back(l.refs[idx[i]]);
    }
    out.train.layers.push_back(std::move(tr));
    out.val.layers.push_back(std::move(va));
  }
  return out;
}

std::size_t ActivationProfile::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

ActivationProfile profile(const std::vector<double>& samples, std::size_t bins) {
  if (samples.empty()) throw DataError("cannot profile an empty sample");
  if (bins == 0) throw ConfigError("profile needs at least one bin");
  ActivationProfile p;
  const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
  p.min = *lo;
  p.max = *hi;
  p.max_abs = std::max(std::abs(p.min), std::abs(p.max));
  p.edges.resize(bins + 1);
  const double width = (p.max - p.min) / static_cast<double>(bins);
  for (std::size_t i = 0; i <= bins; ++i) p.edges[i] = p.min + width * static_cast<double>(i);
  p.edges.back() = p.max;
  p.counts.assign(bins, 0);
  for (double v : samples) {
    std::size_t b = width > 0.0 ? static_cast<std::size_t>((v - p.min) / width) : bins - 1;
    ++p.counts[std::min(b, bins - 1)];
  }
  return p;
}

void CtConfig::validate() const {
  if (epochs < 1) throw ConfigError("CT epochs must be at least 1");
  if (!(lr > 0.0)) throw ConfigError("CT learning rate must be positive");
  if (patience < 0) throw ConfigError("CT patience must be nonnegative");
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("CT decay must be in (0, 1]");
  if (!(split > 0.0 && split < 1.0)) throw ConfigError("CT split ratio must be in (0, 1)");
}

CtConfig ct_config_from_json(const json& j) {
  static const std::vector<std::string> known = {"epochs", "lr", "patience", "decay",
                                                 "split", "batch_size", "seed"};
  for (auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown CT key '" + key + "'");
    }
  }
  CtConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.patience = j.value("patience", c.patience);
  c.decay = j.value("decay", c.decay);
  c.split = j.value("split", c.split);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

json ct_config_to_json(const CtConfig& c) {
  return {{"epochs", c.epochs}, {"lr", c.lr},       {"patience", c.patience},
          {"decay", c.decay},   {"split", c.split}, {"batch_size", c.batch_size},
          {"seed", c.seed}};
}

namespace {

using Coefs = std::vector<std::vector<double>>;

Coefs to_coefs(const Stages& stages) {
  Coefs c;
  for (const auto& s : stages) c.emplace_back(s.coefficients().begin(), s.coefficients().end());
  return c;
}

Stages to_stages(const Coefs& c) {
  Stages s;
  for (const auto& v : c) s.emplace_back(v);
  return s;
}

bool all_finite(const Coefs& c) {
  for (const auto& v : c) {
    for (double x : v) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

}  // namespace

double ct_loss(const Stages& stages, const CtLayer& slice, double scale) {
  if (slice.inputs.empty()) throw DataError("CT loss on an empty slice");
  double acc = 0.0;
  for (std::size_t i = 0; i < slice.inputs.size(); ++i) {
    const double u = slice.inputs[i] / scale;
    const double pred = (u + u * eval_stages(stages, u)) / 2.0;
    const double d = pred - slice.refs[i] / scale;
    acc += d * d;
  }
  return acc / static_cast<double>(slice.inputs.size());
}

CtResult tune_coefficients(const CompositePaf& paf, int layer, const CtLayer& train,
                           const CtLayer& val, const CtConfig& cfg) {
  cfg.validate();
  if (train.inputs.empty() || val.inputs.empty()) throw DataError("CT needs nonempty slices");
  if (train.inputs.size() != train.refs.size() || val.inputs.size() != val.refs.size()) {
    throw DataError("CT slice has unequal inputs and refs");
  }
  const double m = max_abs(train.inputs);
  const double s = m > 0.0 ? m : 1.0;

  Coefs coefs = to_coefs(paf.stages_or_default(layer));
  Coefs grads = coefs;
  CtResult r{paf, layer};
  r.input_scale = s;
  r.initial_val_loss = ct_loss(to_stages(coefs), val, s);
  r.best_val_loss = r.initial_val_loss;
  Coefs best = coefs;

  std::mt19937_64 rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(layer), 0xC7}));
  std::vector<std::size_t> order(train.inputs.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = cfg.batch_size == 0 ? order.size() : cfg.batch_size;
  double lr = cfg.lr;
  double plateau_best = r.initial_val_loss;
  int bad_epochs = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (batch < order.size()) std::shuffle(order.begin(), order.end(), rng);
    r.lr.push_back(lr);
    for (std::size_t b = 0; b < order.size(); b += batch) {
      const std::size_t e = std::min(order.size(), b + batch);
      const Stages stages = to_stages(coefs);
      for (auto& g : grads) std::fill(g.begin(), g.end(), 0.0);
      const double inv = 1.0 / static_cast<double>(e - b);
      for (std::size_t k = b; k < e; ++k) {
        const std::size_t i = order[k];
        const double u = train.inputs[i] / s;
        const double pred = (u + u * eval_stages(stages, u)) / 2.0;
        // d/dc of mean (pred - ref)^2 = 2 (pred - ref) * (u / 2) * dP/dc / B
        const double weight = (pred - train.refs[i] / s) * u * inv;
        eval_stages_backprop(stages, u, weight, grads);
      }
      Coefs next = coefs;
      for (std::size_t st = 0; st < next.size(); ++st) {
        for (std::size_t k = 0; k < next[st].size(); ++k) next[st][k] -= lr * grads[st][k];
      }
      if (!all_finite(next)) {
        throw CtDivergence("coefficient tuning diverged at epoch " + std::to_string(epoch),
                           to_stages(coefs), epoch);
      }
      coefs = std::move(next);
    }
    const Stages stages = to_stages(coefs);
    const double tl = ct_loss(stages, train, s);
    const double vl = ct_loss(stages, val, s);
    if (!std::isfinite(tl) || !std::isfinite(vl)) {
      throw CtDivergence("coefficient tuning loss became non-finite at epoch " +
                             std::to_string(epoch),
                         to_stages(best), epoch);
    }
    r.train_loss.push_back(tl);
    r.val_loss.push_back(vl);
    if (vl < r.best_val_loss) {
      r.best_val_loss = vl;
      r.best_epoch = epoch;
      best = coefs;
    }
    if (vl < plateau_best) {
      plateau_best = vl;
      bad_epochs = 0;
    } else if (++bad_epochs > cfg.patience) {
      lr *= cfg.decay;
      bad_epochs = 0;
    }
  }
  r.tuned = paf.with_layer(layer, to_stages(best));
  return r;
}

CtRun tune_all_layers(const CompositePaf& paf, const CtDataset& ds, const CtConfig& cfg) {
  const CtSplit split = split_ct(ds, cfg.split, cfg.seed);
  CtRun run{paf, {}};
  for (std::size_t i = 0; i < ds.layers.size(); ++i) {
    const int layer = ds.layers[i].layer;
    CtResult r = tune_coefficients(run.tuned, layer, split.train.layers[i], split.val.layers[i], cfg);
    run.tuned = r.tuned;
    run.layers.push_back(std::move(r));
  }
  return run;
}

}  // namespace pafforge
