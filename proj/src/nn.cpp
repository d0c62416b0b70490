#include "pafforge/nn.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "pafforge/errors.hpp"

namespace pafforge {

using nlohmann::json;

const char* to_string(ParamGroup group) { return group == ParamGroup::kPaf ? "paf" : "other"; }

Parameter::Parameter(std::string n, Shape s, ParamGroup g)
    : name(std::move(n)), shape(std::move(s)), value(shape_size(shape), 0.0),
      grad(shape_size(shape), 0.0), group(g) {}

void Parameter::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

namespace {

void expect_rank(const Shape& sample, std::size_t rank, const char* layer) {
  if (sample.size() != rank) {
    throw DataError(std::string(layer) + " expects a rank-" + std::to_string(rank) +
                    " sample, got " + shape_string(sample));
  }
}

Shape sample_shape(const Tensor& x) { return Shape(x.shape.begin() + 1, x.shape.end()); }

Shape with_batch(std::size_t n, const Shape& sample) {
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

void read_values(const json& j, const char* key, Parameter& p) {
  const auto values = j.at(key).get<std::vector<double>>();
  if (values.size() != p.value.size()) {
    throw DataError(std::string("parameter '") + key + "' has " + std::to_string(values.size()) +
                    " values, expected " + std::to_string(p.value.size()));
  }
  p.value = values;
}

void init_uniform(Parameter& p, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  for (auto& v : p.value) v = u(rng);
}

}  // namespace

// ---------------------------------------------------------------- Linear

Linear::Linear(std::size_t in, std::size_t out)
    : in_(in), out_(out), weight_("weight", {out, in}, ParamGroup::kOther),
      bias_("bias", {out}, ParamGroup::kOther) {
  if (in == 0 || out == 0) throw ConfigError("linear layer needs nonzero sizes");
}

void Linear::init(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
  init_uniform(weight_, bound, rng);
  init_uniform(bias_, bound, rng);
}

Shape Linear::output_shape(const Shape& sample) const {
  expect_rank(sample, 1, "linear");
  if (sample[0] != in_) {
    throw DataError("linear expects " + std::to_string(in_) + " features, got " +
                    std::to_string(sample[0]));
  }
  return {out_};
}

Tensor Linear::forward(const Tensor& x, const ForwardContext&) {
  output_shape(sample_shape(x));
  input_ = x;
  const std::size_t n = x.batch();
  Tensor y({n, out_});
  const double* w = weight_.value.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = x.data.data() + i * in_;
    for (std::size_t o = 0; o < out_; ++o) {
      double acc = bias_.value[o];
      const double* wo = w + o * in_;
      for (std::size_t k = 0; k < in_; ++k) acc += wo[k] * xi[k];
      y.data[i * out_ + o] = acc;
    }
  }
  return y;
}

Tensor Linear::backward(const Tensor& g) {
  const std::size_t n = input_.batch();
  Tensor dx({n, in_});
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = input_.data.data() + i * in_;
    double* dxi = dx.data.data() + i * in_;
    for (std::size_t o = 0; o < out_; ++o) {
      const double go = g.data[i * out_ + o];
      if (go == 0.0) continue;
      bias_.grad[o] += go;
      double* gw = weight_.grad.data() + o * in_;
      const double* wo = weight_.value.data() + o * in_;
      for (std::size_t k = 0; k < in_; ++k) {
        gw[k] += go * xi[k];
        dxi[k] += go * wo[k];
      }
    }
  }
  return dx;
}

json Linear::spec() const {
  return {{"type", "linear"}, {"in", in_}, {"out", out_},
          {"weight", weight_.value}, {"bias", bias_.value}};
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels)
    : cin_(in_channels), cout_(out_channels),
      weight_("weight", {out_channels, in_channels, 3, 3}, ParamGroup::kOther),
      bias_("bias", {out_channels}, ParamGroup::kOther) {
  if (cin_ == 0 || cout_ == 0) throw ConfigError("conv2d layer needs nonzero channels");
}

void Conv2d::init(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin_ * 9));
  init_uniform(weight_, bound, rng);
  init_uniform(bias_, bound, rng);
}

Shape Conv2d::output_shape(const Shape& sample) const {
  expect_rank(sample, 3, "conv2d");
  if (sample[0] != cin_) {
    throw DataError("conv2d expects " + std::to_string(cin_) + " channels, got " +
                    std::to_string(sample[0]));
  }
  return {cout_, sample[1], sample[2]};
}

Tensor Conv2d::forward(const Tensor& x, const ForwardContext&) {
  const Shape out_sample = output_shape(sample_shape(x));
  input_ = x;
  const std::size_t n = x.batch(), h = x.shape[2], w = x.shape[3];
  Tensor y(with_batch(n, out_sample));
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t co = 0; co < cout_; ++co) {
      double* yo = y.data.data() + (b * cout_ + co) * h * w;
      std::fill(yo, yo + h * w, bias_.value[co]);
      for (std::size_t ci = 0; ci < cin_; ++ci) {
        const double* xc = x.data.data() + (b * cin_ + ci) * h * w;
        const double* k = weight_.value.data() + (co * cin_ + ci) * 9;
        for (std::size_t r = 0; r < h; ++r) {
          for (std::size_t c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int dr = -1; dr <= 1; ++dr) {
              const auto rr = static_cast<std::ptrdiff_t>(r) + dr;
              if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(h)) continue;
              for (int dc = -1; dc <= 1; ++dc) {
                const auto cc = static_cast<std::ptrdiff_t>(c) + dc;
                if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(w)) continue;
                acc += k[(dr + 1) * 3 + (dc + 1)] * xc[rr * static_cast<std::ptrdiff_t>(w) + cc];
              }
            }
            yo[r * w + c] += acc;
          }
        }
      }
    }
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& g) {
  const std::size_t n = input_.batch(), h = input_.shape[2], w = input_.shape[3];
  Tensor dx(input_.shape);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t co = 0; co < cout_; ++co) {
      const double* go = g.data.data() + (b * cout_ + co) * h * w;
      for (std::size_t p = 0; p < h * w; ++p) bias_.grad[co] += go[p];
      for (std::size_t ci = 0; ci < cin_; ++ci) {
        const double* xc = input_.data.data() + (b * cin_ + ci) * h * w;
        double* dxc = dx.data.data() + (b * cin_ + ci) * h * w;
        const double* k = weight_.value.data() + (co * cin_ + ci) * 9;
        double* gk = weight_.grad.data() + (co * cin_ + ci) * 9;
        for (std::size_t r = 0; r < h; ++r) {
          for (std::size_t c = 0; c < w; ++c) {
            const double gv = go[r * w + c];
            if (gv == 0.0) continue;
            for (int dr = -1; dr <= 1; ++dr) {
              const auto rr = static_cast<std::ptrdiff_t>(r) + dr;
              if (rr < 0 || rr >= static_cast<std::ptrdiff_t>(h)) continue;
              for (int dc = -1; dc <= 1; ++dc) {
                const auto cc = static_cast<std::ptrdiff_t>(c) + dc;
                if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(w)) continue;
                const auto idx = rr * static_cast<std::ptrdiff_t>(w) + cc;
                const int kk = (dr + 1) * 3 + (dc + 1);
                gk[kk] += gv * xc[idx];
                dxc[idx] += gv * k[kk];
              }
            }
          }
        }
      }
    }
  }
  return dx;
}

json Conv2d::spec() const {
  return {{"type", "conv2d"}, {"in_channels", cin_}, {"out_channels", cout_},
          {"weight", weight_.value}, {"bias", bias_.value}};
}

// ---------------------------------------------------------------- ReLU

Tensor ReLU::forward(const Tensor& x, const ForwardContext&) {
  input_ = x;
  Tensor y = x;
  for (auto& v : y.data) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor ReLU::backward(const Tensor& g) {
  Tensor dx = g;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(input_.data[i] > 0.0)) dx.data[i] = 0.0;
  }
  return dx;
}

json ReLU::spec() const { return {{"type", "relu"}}; }

// ---------------------------------------------------------------- MaxPool2x2

Shape MaxPool2x2::output_shape(const Shape& sample) const {
  expect_rank(sample, 3, "maxpool2x2");
  if (sample[1] % 2 != 0 || sample[2] % 2 != 0 || sample[1] == 0 || sample[2] == 0) {
    throw DataError("maxpool2x2 needs even spatial sizes, got " + shape_string(sample));
  }
  return {sample[0], sample[1] / 2, sample[2] / 2};
}

namespace {

// Offsets of the window elements a, b, c, d of output cell (r, c).
std::array<std::size_t, 4> window(std::size_t base, std::size_t r, std::size_t c, std::size_t w) {
  const std::size_t top = base + (2 * r) * w + 2 * c;
  return {top, top + 1, top + w, top + w + 1};
}

}  // namespace

Tensor MaxPool2x2::forward(const Tensor& x, const ForwardContext&) {
  const Shape out_sample = output_shape(sample_shape(x));
  input_shape_ = x.shape;
  const std::size_t n = x.batch(), ch = x.shape[1], h = x.shape[2], w = x.shape[3];
  Tensor y(with_batch(n, out_sample));
  argmax_.assign(y.size(), 0);
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * ch; ++plane) {
    for (std::size_t r = 0; r < h / 2; ++r) {
      for (std::size_t c = 0; c < w / 2; ++c, ++o) {
        const auto idx = window(plane * h * w, r, c, w);
        std::size_t best = idx[0];
        for (std::size_t k = 1; k < 4; ++k) {
          if (x.data[idx[k]] > x.data[best]) best = idx[k];
        }
        y.data[o] = x.data[best];
        argmax_[o] = best;
      }
    }
  }
  return y;
}

Tensor MaxPool2x2::backward(const Tensor& g) {
  Tensor dx(input_shape_);
  for (std::size_t o = 0; o < g.size(); ++o) dx.data[argmax_[o]] += g.data[o];
  return dx;
}

json MaxPool2x2::spec() const { return {{"type", "maxpool2x2"}}; }

// ---------------------------------------------------------------- PafActivation

PafActivation::PafActivation(const CompositePaf& paf, int nonpoly_index, Variant variant,
                             ScaleMode mode)
    : paf_name_(paf.name()), index_(nonpoly_index), variant_(variant), exact_(false),
      mode_(mode) {
  const Stages& stages = paf.stages_or_default(nonpoly_index);
  for (std::size_t i = 0; i < stages.size(); ++i) {
    Parameter p("stage" + std::to_string(i), {stages[i].size()}, ParamGroup::kPaf);
    p.value.assign(stages[i].coefficients().begin(), stages[i].coefficients().end());
    coefs_.push_back(std::move(p));
  }
  chain_len_ = coefs_.size() + 1;
}

PafActivation::PafActivation(ExactSign, int nonpoly_index, Variant variant, ScaleMode mode)
    : paf_name_("exact"), index_(nonpoly_index), variant_(variant), exact_(true), mode_(mode) {}

std::vector<Parameter*> PafActivation::parameters() {
  std::vector<Parameter*> out;
  for (auto& p : coefs_) out.push_back(&p);
  return out;
}

Stages PafActivation::stages() const {
  Stages out;
  for (const auto& p : coefs_) out.emplace_back(p.value);
  return out;
}

void PafActivation::set_stages(const Stages& stages) {
  if (stages.size() != coefs_.size()) throw DataError("PAF stage count mismatch");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (stages[i].size() != coefs_[i].value.size()) throw DataError("PAF stage shape mismatch");
    coefs_[i].value.assign(stages[i].coefficients().begin(), stages[i].coefficients().end());
  }
}

Shape PafActivation::output_shape(const Shape& sample) const {
  if (variant_ == Variant::kReLU) return sample;
  return MaxPool2x2{}.output_shape(sample);
}

double PafActivation::sign_forward(double u, double* chain) const {
  if (exact_) return sign_of(u);
  chain[0] = u;
  for (std::size_t i = 0; i < coefs_.size(); ++i) {
    const auto& c = coefs_[i].value;
    const double z = chain[i];
    const double z2 = z * z;
    double acc = c.back();
    for (std::size_t k = c.size() - 1; k-- > 0;) acc = acc * z2 + c[k];
    chain[i + 1] = acc * z;
  }
  return chain[coefs_.size()];
}

double PafActivation::sign_backward(double delta, const double* chain) {
  if (exact_) return 0.0;
  for (std::size_t i = coefs_.size(); i-- > 0;) {
    const auto& c = coefs_[i].value;
    auto& gc = coefs_[i].grad;
    const double z = chain[i];
    const double z2 = z * z;
    double power = z;
    double slope = 0.0;
    double power_even = 1.0;  // z^(2k)
    for (std::size_t k = 0; k < c.size(); ++k) {
      gc[k] += delta * power;
      slope += c[k] * static_cast<double>(2 * k + 1) * power_even;
      power *= z2;
      power_even *= z2;
    }
    delta *= slope;
  }
  return delta;
}

Tensor PafActivation::forward(const Tensor& x, const ForwardContext& ctx) {
  const Shape out_sample = output_shape(sample_shape(x));
  for (double v : x.data) {
    if (!std::isfinite(v)) throw NumericDivergence("non-finite input to a PAF activation");
  }
  input_shape_ = x.shape;
  input_ = x;
  scale_ = mode_.scale_for(x.data);
  if (ctx.phase == Phase::kTrain && !mode_.is_static()) mode_.observe(x.data);
  const double s = scale_;

  if (variant_ == Variant::kReLU) {
    Tensor y(x.shape);
    chains_.assign(exact_ ? 0 : x.size() * chain_len_, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = x.data[i];
      const double p = sign_forward(v / s, exact_ ? nullptr : &chains_[i * chain_len_]);
      y.data[i] = (v + v * p) / 2.0;
    }
    return y;
  }

  const std::size_t n = x.batch(), ch = x.shape[1], h = x.shape[2], w = x.shape[3];
  Tensor y(with_batch(n, out_sample));
  chains_.assign(exact_ ? 0 : y.size() * 3 * chain_len_, 0.0);
  pairs_.assign(y.size() * 6, 0.0);
  auto reduce = [&](double a, double b, std::size_t slot) {
    pairs_[slot * 2] = a;
    pairs_[slot * 2 + 1] = b;
    if (exact_) return max_paf(exact_sign, a, b);
    const double d = a - b;
    const double p = sign_forward(d / (2.0 * s), &chains_[slot * chain_len_]);
    return ((a + b) + d * p) / 2.0;
  };
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * ch; ++plane) {
    for (std::size_t r = 0; r < h / 2; ++r) {
      for (std::size_t c = 0; c < w / 2; ++c, ++o) {
        const auto idx = window(plane * h * w, r, c, w);
        const double m1 = reduce(x.data[idx[0]], x.data[idx[1]], o * 3);
        const double m2 = reduce(x.data[idx[2]], x.data[idx[3]], o * 3 + 1);
        y.data[o] = reduce(m1, m2, o * 3 + 2);
      }
    }
  }
  return y;
}

Tensor PafActivation::backward(const Tensor& g) {
  const double s = scale_;
  Tensor dx(input_shape_);
  if (variant_ == Variant::kReLU) {
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const double v = input_.data[i];
      const double gi = g.data[i];
      if (exact_) {
        dx.data[i] = gi * (1.0 + sign_of(v)) / 2.0;
        continue;
      }
      const double* chain = &chains_[i * chain_len_];
      const double p = chain[chain_len_ - 1];
      const double t = sign_backward(gi * v / 2.0, chain);
      dx.data[i] = gi * (1.0 + p) / 2.0 + t / s;
    }
    return dx;
  }

  // d m(a, b) / d(a, b) for the reduction stored in `slot`
  auto reduce_back = [&](double gm, std::size_t slot) -> std::pair<double, double> {
    const double a = pairs_[slot * 2];
    const double b = pairs_[slot * 2 + 1];
    if (exact_) return sign_of(a - b) < 0.0 ? std::pair{0.0, gm} : std::pair{gm, 0.0};
    const double* chain = &chains_[slot * chain_len_];
    const double p = chain[chain_len_ - 1];
    const double t = sign_backward(gm * (a - b) / 2.0, chain) / (2.0 * s);
    return {gm * (1.0 + p) / 2.0 + t, gm * (1.0 - p) / 2.0 - t};
  };
  const std::size_t ch = input_shape_[1], h = input_shape_[2], w = input_shape_[3];
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < input_shape_[0] * ch; ++plane) {
    for (std::size_t r = 0; r < h / 2; ++r) {
      for (std::size_t c = 0; c < w / 2; ++c, ++o) {
        const auto idx = window(plane * h * w, r, c, w);
        const auto [g1, g2] = reduce_back(g.data[o], o * 3 + 2);
        const auto [ga, gb] = reduce_back(g1, o * 3);
        const auto [gc, gd] = reduce_back(g2, o * 3 + 1);
        dx.data[idx[0]] += ga;
        dx.data[idx[1]] += gb;
        dx.data[idx[2]] += gc;
        dx.data[idx[3]] += gd;
      }
    }
  }
  return dx;
}

json scale_to_json(const ScaleMode& m) {
  json j = {{"mode", m.is_static() ? "static" : "dynamic"},
            {"running_max", m.running_max()},
            {"observed", m.observed()}};
  if (m.is_static()) j["scale"] = m.static_scale();
  return j;
}

ScaleMode scale_from_json(const json& j) {
  const auto mode = j.at("mode").get<std::string>();
  if (mode == "static") return ScaleMode::fixed(j.at("scale").get<double>());
  if (mode != "dynamic") throw DataError("unknown scale mode '" + mode + "'");
  ScaleMode m = ScaleMode::dynamic();
  m.set_running_max(j.value("running_max", 0.0), j.value("observed", false));
  return m;
}

json PafActivation::spec() const {
  json stages = json::array();
  for (const auto& p : coefs_) stages.push_back(p.value);
  return {{"type", "paf"},
          {"variant", variant_ == Variant::kReLU ? "relu" : "max2x2"},
          {"index", index_},
          {"exact", exact_},
          {"paf", paf_name_},
          {"stages", stages},
          {"scale", scale_to_json(mode_)}};
}

// ---------------------------------------------------------------- Dropout

Dropout::Dropout(double p, bool engaged) : p_(p), engaged_(engaged) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must be in [0, 1)");
}

Tensor Dropout::forward(const Tensor& x, const ForwardContext& ctx) {
  mask_.clear();
  if (!engaged_ || ctx.phase != Phase::kTrain || p_ == 0.0) return x;
  if (!ctx.rng) throw ConfigError("dropout in training needs a random generator");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double keep = 1.0 / (1.0 - p_);
  mask_.resize(x.size());
  Tensor y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask_[i] = u(*ctx.rng) >= p_ ? keep : 0.0;
    y.data[i] *= mask_[i];
  }
  return y;
}

Tensor Dropout::backward(const Tensor& g) {
  if (mask_.empty()) return g;
  Tensor dx = g;
  for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] *= mask_[i];
  return dx;
}

json Dropout::spec() const { return {{"type", "dropout"}, {"p", p_}, {"engaged", engaged_}}; }

// ---------------------------------------------------------------- Flatten

Shape Flatten::output_shape(const Shape& sample) const { return {shape_size(sample)}; }

Tensor Flatten::forward(const Tensor& x, const ForwardContext&) {
  input_shape_ = x.shape;
  return Tensor({x.batch(), x.sample_size()}, x.data);
}

Tensor Flatten::backward(const Tensor& g) { return Tensor(input_shape_, g.data); }

json Flatten::spec() const { return {{"type", "flatten"}}; }

// ---------------------------------------------------------------- ModelGraph

ModelGraph::ModelGraph(Shape input_shape) : input_shape_(std::move(input_shape)) {
  if (input_shape_.empty() || shape_size(input_shape_) == 0) {
    throw ConfigError("model input shape must be nonempty");
  }
}

ModelGraph::ModelGraph(const ModelGraph& other) : input_shape_(other.input_shape_) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

ModelGraph& ModelGraph::operator=(const ModelGraph& other) {
  if (this != &other) {
    ModelGraph tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

Shape ModelGraph::output_shape() const {
  Shape s = input_shape_;
  for (const auto& l : layers_) s = l->output_shape(s);
  return s;
}

Shape ModelGraph::layer_input_shape(std::size_t i) const {
  Shape s = input_shape_;
  for (std::size_t k = 0; k < i && k < layers_.size(); ++k) s = layers_[k]->output_shape(s);
  return s;
}

void ModelGraph::add(std::unique_ptr<Layer> layer) {
  layer->output_shape(output_shape());
  layers_.push_back(std::move(layer));
}

void ModelGraph::replace(std::size_t position, std::unique_ptr<Layer> layer) {
  const Shape in = layer_input_shape(position);
  if (layer->output_shape(in) != layers_.at(position)->output_shape(in)) {
    throw DataError("replacement changes the output shape of layer " + std::to_string(position));
  }
  layers_[position] = std::move(layer);
}

int ModelGraph::nonpoly_count() const {
  return static_cast<int>(std::count_if(layers_.begin(), layers_.end(),
                                        [](const auto& l) { return l->is_nonpoly(); }));
}

int ModelGraph::nonpoly_index(std::size_t position) const {
  int idx = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const bool counted = layers_[i]->is_nonpoly() ||
                         layers_[i]->kind() == Layer::Kind::kPafActivation;
    if (i == position) return counted ? idx : -1;
    if (counted) ++idx;
  }
  return -1;
}

std::vector<std::size_t> ModelGraph::paf_positions() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i]->kind() == Layer::Kind::kPafActivation) out.push_back(i);
  }
  return out;
}

Tensor ModelGraph::forward(const Tensor& x, const ForwardContext& ctx,
                           std::vector<ActivationTap>* taps) {
  if (sample_shape(x) != input_shape_ || x.size() != shape_size(x.shape)) {
    throw DataError("model expects samples of shape " + shape_string(input_shape_) + ", got " +
                    shape_string(x.shape));
  }
  Tensor h = x;
  int ordinal = 0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Layer& l = *layers_[i];
    const bool counted = l.is_nonpoly() || l.kind() == Layer::Kind::kPafActivation;
    if (counted && taps) {
      taps->push_back({i, ordinal, !l.is_nonpoly(), l.kind(), h});
    }
    if (counted) ++ordinal;
    h = l.forward(h, ctx);
  }
  return h;
}

void ModelGraph::backward(const Tensor& grad_output) {
  Tensor g = grad_output;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g);
  for (auto* p : parameters()) {
    if (p->frozen) p->zero_grad();
  }
}

std::vector<Parameter*> ModelGraph::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers_) {
    for (auto* p : l->parameters()) out.push_back(p);
  }
  return out;
}

void ModelGraph::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

void ModelGraph::set_dropout(bool engaged) {
  for (auto& l : layers_) {
    if (auto* d = dynamic_cast<Dropout*>(l.get())) d->set_engaged(engaged);
  }
}

bool ModelGraph::dropout_engaged() const {
  for (const auto& l : layers_) {
    if (const auto* d = dynamic_cast<const Dropout*>(l.get()); d && d->engaged()) return true;
  }
  return false;
}

Snapshot ModelGraph::snapshot() const {
  Snapshot s;
  for (const auto& l : layers_) {
    for (const auto* p : l->parameters()) s.params.push_back(p->value);
    if (const auto* paf = dynamic_cast<const PafActivation*>(l.get())) {
      s.scales.push_back(paf->scale_mode());
    }
  }
  return s;
}

void ModelGraph::load(const Snapshot& snap) {
  auto params = parameters();
  const auto pafs = paf_positions();
  if (params.size() != snap.params.size() || pafs.size() != snap.scales.size()) {
    throw DataError("snapshot does not match the model structure");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->value.size() != snap.params[i].size()) {
      throw DataError("snapshot parameter " + std::to_string(i) + " has the wrong size");
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = snap.params[i];
  for (std::size_t i = 0; i < pafs.size(); ++i) {
    static_cast<PafActivation&>(*layers_[pafs[i]]).scale_mode() = snap.scales[i];
  }
}

json ModelGraph::to_json() const {
  json layers = json::array();
  for (const auto& l : layers_) layers.push_back(l->spec());
  return {{"schema_version", 1}, {"input", input_shape_}, {"layers", layers}};
}

namespace {

std::unique_ptr<Layer> layer_from_json(const json& j, const Shape& in) {
  const auto type = j.at("type").get<std::string>();
  if (type == "linear") {
    auto l = std::make_unique<Linear>(j.at("in").get<std::size_t>(), j.at("out").get<std::size_t>());
    read_values(j, "weight", l->weight());
    read_values(j, "bias", l->bias());
    return l;
  }
  if (type == "conv2d") {
    auto l = std::make_unique<Conv2d>(j.at("in_channels").get<std::size_t>(),
                                      j.at("out_channels").get<std::size_t>());
    read_values(j, "weight", l->weight());
    read_values(j, "bias", l->bias());
    return l;
  }
  if (type == "relu") return std::make_unique<ReLU>();
  if (type == "maxpool2x2") return std::make_unique<MaxPool2x2>();
  if (type == "flatten") return std::make_unique<Flatten>();
  if (type == "dropout") {
    return std::make_unique<Dropout>(j.value("p", 0.5), j.value("engaged", false));
  }
  if (type == "paf") {
    const auto variant = j.at("variant").get<std::string>() == "relu"
                             ? PafActivation::Variant::kReLU
                             : PafActivation::Variant::kMax2x2;
    const int index = j.at("index").get<int>();
    const ScaleMode mode = scale_from_json(j.at("scale"));
    if (j.value("exact", false)) return std::make_unique<PafActivation>(exact_sign, index, variant, mode);
    Stages stages;
    for (const auto& s : j.at("stages")) stages.emplace_back(s.get<std::vector<double>>());
    const CompositePaf paf(j.value("paf", std::string("paf")), stages);
    return std::make_unique<PafActivation>(paf.with_layer(index, stages), index, variant, mode);
  }
  (void)in;
  throw DataError("unknown layer type '" + type + "'");
}

}  // namespace

ModelGraph ModelGraph::from_json(const json& j) {
  try {
    if (j.value("schema_version", 1) != 1) throw DataError("unsupported model schema version");
    ModelGraph m(j.at("input").get<Shape>());
    for (const auto& l : j.at("layers")) m.add(layer_from_json(l, m.output_shape()));
    return m;
  } catch (const json::exception& e) {
    throw DataError(std::string("invalid model description: ") + e.what());
  }
}

ModelGraph build_model(const json& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  try {
    ModelGraph m(spec.at("input").get<Shape>());
    for (const auto& l : spec.at("layers")) {
      const auto type = l.at("type").get<std::string>();
      const Shape in = m.output_shape();
      if (type == "linear") {
        if (in.size() != 1) throw ConfigError("linear layer after a non-flat shape; add a flatten");
        auto layer = std::make_unique<Linear>(in[0], l.at("out").get<std::size_t>());
        layer->init(rng);
        m.add(std::move(layer));
      } else if (type == "conv2d") {
        if (in.size() != 3) throw ConfigError("conv2d needs a [C, H, W] input");
        auto layer = std::make_unique<Conv2d>(in[0], l.at("out_channels").get<std::size_t>());
        layer->init(rng);
        m.add(std::move(layer));
      } else if (type == "relu" || type == "maxpool2x2" || type == "flatten" ||
                 type == "dropout") {
        m.add(layer_from_json(l, in));
      } else {
        throw ConfigError("unknown layer type '" + type + "'");
      }
    }
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid model spec: ") + e.what());
  } catch (const DataError& e) {
    throw ConfigError(std::string("invalid model spec: ") + e.what());
  }
}

std::unique_ptr<Layer> make_replacement(const ModelGraph& model, std::size_t position,
                                        const CompositePaf* paf, ScaleMode mode) {
  const Layer& l = model.layer(position);
  if (!l.is_nonpoly()) {
    throw ConfigError("layer " + std::to_string(position) + " is not a ReLU or MaxPool");
  }
  const auto variant = l.kind() == Layer::Kind::kReLU ? PafActivation::Variant::kReLU
                                                      : PafActivation::Variant::kMax2x2;
  const int index = model.nonpoly_index(position);
  if (!paf) return std::make_unique<PafActivation>(exact_sign, index, variant, mode);
  return std::make_unique<PafActivation>(*paf, index, variant, mode);
}

}  // namespace pafforge
