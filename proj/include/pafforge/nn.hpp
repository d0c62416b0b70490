#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "pafforge/paf.hpp"
#include "pafforge/scaling.hpp"
#include "pafforge/tensor.hpp"

namespace pafforge {

enum class Phase { kTrain, kEval };
enum class ParamGroup { kPaf, kOther };

const char* to_string(ParamGroup group);

struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  ParamGroup group = ParamGroup::kOther;
  bool frozen = false;

  Parameter() = default;
  Parameter(std::string n, Shape s, ParamGroup g);
  void zero_grad();
};

struct ForwardContext {
  Phase phase = Phase::kEval;
  std::mt19937_64* rng = nullptr;  // required when an engaged dropout runs in training
};

class Layer {
 public:
  enum class Kind { kLinear, kConv2d, kReLU, kMaxPool2x2, kPafActivation, kDropout, kFlatten };

  virtual ~Layer() = default;
  virtual Kind kind() const = 0;
  /// Per-sample output shape; throws DataError when the input does not fit.
  virtual Shape output_shape(const Shape& sample) const = 0;
  virtual Tensor forward(const Tensor& x, const ForwardContext& ctx) = 0;
  /// Gradient w.r.t. the input of the last forward; parameter gradients
  /// are accumulated.
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual std::vector<Parameter*> parameters() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;
  /// Full description including parameter values.
  virtual nlohmann::json spec() const = 0;

  /// ReLU or MaxPool, i.e. not yet replaced by a polynomial.
  bool is_nonpoly() const { return kind() == Kind::kReLU || kind() == Kind::kMaxPool2x2; }
};

class Linear final : public Layer {
 public:
  Linear(std::size_t in, std::size_t out);
  Kind kind() const override { return Kind::kLinear; }
  Shape output_shape(const Shape& sample) const override;
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }
  nlohmann::json spec() const override;

  void init(std::mt19937_64& rng);
  Parameter& weight() { return weight_; }  // [out, in]
  Parameter& bias() { return bias_; }
  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }

 private:
  std::size_t in_, out_;
  Parameter weight_, bias_;
  Tensor input_;
};

/// 3x3 convolution, stride 1, zero padding 1, NCHW.
class Conv2d final : public Layer {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels);
  Kind kind() const override { return Kind::kConv2d; }
  Shape output_shape(const Shape& sample) const override;
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
  nlohmann::json spec() const override;

  void init(std::mt19937_64& rng);
  Parameter& weight() { return weight_; }  // [out, in, 3, 3]
  Parameter& bias() { return bias_; }

 private:
  std::size_t cin_, cout_;
  Parameter weight_, bias_;
  Tensor input_;
};

class ReLU final : public Layer {
 public:
  Kind kind() const override { return Kind::kReLU; }
  Shape output_shape(const Shape& sample) const override { return sample; }
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(*this); }
  nlohmann::json spec() const override;

 private:
  Tensor input_;
};

/// 2x2 max pooling with stride 2 over NCHW; gradient goes to the first
/// maximal element of each window.
class MaxPool2x2 final : public Layer {
 public:
  Kind kind() const override { return Kind::kMaxPool2x2; }
  Shape output_shape(const Shape& sample) const override;
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2x2>(*this); }
  nlohmann::json spec() const override;

 private:
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

/// Polynomial replacement of a ReLU or of a 2x2 max pool.
///
/// ReLU variant: y = (x + x * p(x / s)) / 2.
/// Max variant: the window {a, b, c, d} reduces as m(m(a, b), m(c, d)) with
/// m(x, y) = ((x + y) + (x - y) * p((x - y) / (2 s))) / 2, s being the layer
/// input scale. The coefficients of p are trainable (group paf). Without a
/// polynomial the layer runs in exact-sign reference mode.
class PafActivation final : public Layer {
 public:
  enum class Variant { kReLU, kMax2x2 };

  PafActivation(const CompositePaf& paf, int nonpoly_index, Variant variant,
                ScaleMode mode = ScaleMode::dynamic());
  PafActivation(ExactSign, int nonpoly_index, Variant variant,
                ScaleMode mode = ScaleMode::dynamic());

  Kind kind() const override { return Kind::kPafActivation; }
  Shape output_shape(const Shape& sample) const override;
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Parameter*> parameters() override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<PafActivation>(*this); }
  nlohmann::json spec() const override;

  bool exact() const { return exact_; }
  Variant variant() const { return variant_; }
  int nonpoly_index() const { return index_; }
  const std::string& paf_name() const { return paf_name_; }
  /// Current (possibly trained) coefficients.
  Stages stages() const;
  void set_stages(const Stages& stages);
  ScaleMode& scale_mode() { return mode_; }
  const ScaleMode& scale_mode() const { return mode_; }
  /// Scale used by the last forward pass.
  double last_scale() const { return scale_; }

 private:
  double sign_forward(double u, double* chain) const;
  double sign_backward(double delta, const double* chain);

  std::string paf_name_;
  int index_;
  Variant variant_;
  bool exact_;
  std::vector<Parameter> coefs_;
  ScaleMode mode_;

  // forward cache
  Shape input_shape_;
  Tensor input_;
  double scale_ = 1.0;
  std::size_t chain_len_ = 0;
  std::vector<double> chains_;  // stage inputs and output per sign evaluation
  std::vector<double> pairs_;   // max variant: operands of each reduction
};

/// Inverted dropout; active only while engaged and in the training phase.
class Dropout final : public Layer {
 public:
  explicit Dropout(double p = 0.5, bool engaged = false);
  Kind kind() const override { return Kind::kDropout; }
  Shape output_shape(const Shape& sample) const override { return sample; }
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dropout>(*this); }
  nlohmann::json spec() const override;

  double p() const { return p_; }
  bool engaged() const { return engaged_; }
  void set_engaged(bool on) { engaged_ = on; }

 private:
  double p_;
  bool engaged_;
  std::vector<double> mask_;
};

class Flatten final : public Layer {
 public:
  Kind kind() const override { return Kind::kFlatten; }
  Shape output_shape(const Shape& sample) const override;
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override;
  Tensor backward(const Tensor& grad_out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(*this); }
  nlohmann::json spec() const override;

 private:
  Shape input_shape_;
};

/// Input of a non-polynomial (or replaced) layer captured during forward.
struct ActivationTap {
  std::size_t position = 0;  // layer position in the model
  int nonpoly_index = 0;     // ordinal among ReLU/MaxPool/PAF layers
  bool replaced = false;
  Layer::Kind kind = Layer::Kind::kReLU;
  Tensor input;
};

/// Saved parameter values and scale states of a model.
struct Snapshot {
  std::vector<std::vector<double>> params;
  std::vector<ScaleMode> scales;  // one per PAF layer, in model order
  int epoch = -1;                 // -1 for SWA
  double train_acc = 0.0;
  double val_acc = 0.0;
};

class ModelGraph {
 public:
  ModelGraph() = default;
  explicit ModelGraph(Shape input_shape);
  ModelGraph(const ModelGraph& other);
  ModelGraph& operator=(const ModelGraph& other);
  ModelGraph(ModelGraph&&) noexcept = default;
  ModelGraph& operator=(ModelGraph&&) noexcept = default;

  /// Appends a layer; throws DataError when shapes do not chain.
  void add(std::unique_ptr<Layer> layer);
  void replace(std::size_t position, std::unique_ptr<Layer> layer);

  const Shape& input_shape() const { return input_shape_; }
  Shape output_shape() const;
  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }
  /// Per-sample input shape of layer i.
  Shape layer_input_shape(std::size_t i) const;

  /// Remaining ReLU + MaxPool layers.
  int nonpoly_count() const;
  /// Ordinal of layer i among ReLU/MaxPool/PAF layers, or -1.
  int nonpoly_index(std::size_t position) const;
  std::vector<std::size_t> paf_positions() const;

  Tensor forward(const Tensor& x, const ForwardContext& ctx,
                 std::vector<ActivationTap>* taps = nullptr);
  /// Back-propagates from d loss / d output of the last forward. Frozen
  /// parameters end with zero-filled gradients.
  void backward(const Tensor& grad_output);

  std::vector<Parameter*> parameters();
  void zero_grad();
  void set_dropout(bool engaged);
  bool dropout_engaged() const;

  Snapshot snapshot() const;
  /// Throws DataError on structural mismatch.
  void load(const Snapshot& snap);

  nlohmann::json to_json() const;
  static ModelGraph from_json(const nlohmann::json& j);

 private:
  Shape input_shape_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

/// Builds a model from a compact layer list such as
/// {"input": [8], "layers": [{"type": "linear", "out": 64}, {"type": "relu"}]}
/// and initialises weights from `seed`.
ModelGraph build_model(const nlohmann::json& spec, std::uint64_t seed);

nlohmann::json scale_to_json(const ScaleMode& mode);
ScaleMode scale_from_json(const nlohmann::json& j);

/// Straightforward ReLU replacement with exact-sign or polynomial PAFs at
/// every non-polynomial layer (used by tests and the baseline).
std::unique_ptr<Layer> make_replacement(const ModelGraph& model, std::size_t position,
                                        const CompositePaf* paf, ScaleMode mode);

}  // namespace pafforge
