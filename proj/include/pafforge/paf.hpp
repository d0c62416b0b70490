#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pafforge {

/// Odd polynomial sum_k c[k] * x^(2k+1). Entry k of the coefficient list is
/// the coefficient of x^(2k+1); the degree is 2 * size - 1.
class OddPolynomial {
 public:
  explicit OddPolynomial(std::vector<double> coefficients);

  std::span<const double> coefficients() const { return coefficients_; }
  std::size_t size() const { return coefficients_.size(); }
  int degree() const { return 2 * static_cast<int>(coefficients_.size()) - 1; }
  double coefficient(std::size_t k) const { return coefficients_.at(k); }

  /// Horner evaluation in x^2; no finiteness check. Hot-path evaluator.
  double horner(double x) const;
  /// d/dx of the polynomial at x.
  double derivative(double x) const;

  bool operator==(const OddPolynomial&) const = default;

 private:
  std::vector<double> coefficients_;
};

using Stages = std::vector<OddPolynomial>;

/// A composite PAF approximating sign(x): stages applied innermost first.
///
/// `per_layer` optionally overrides the default stage coefficients for a
/// given non-polynomial layer index; overrides always have the same stage
/// shapes as the defaults.
class CompositePaf {
 public:
  CompositePaf(std::string name, Stages stages,
               std::map<int, Stages> per_layer = {});

  const std::string& name() const { return name_; }
  const Stages& stages() const { return stages_; }
  const std::map<int, Stages>& per_layer() const { return per_layer_; }

  /// Stage coefficients used at `layer`; the defaults when `layer` is empty.
  /// Throws LookupError when the layer has no override and the PAF has
  /// per-layer tables but no entry for it.
  const Stages& stages_for(std::optional<int> layer) const;
  /// Like stages_for, but falls back to the defaults for unknown layers.
  const Stages& stages_or_default(int layer) const;

  std::vector<int> stage_degrees() const;
  /// Degree of the fully expanded composite (product of stage degrees).
  long long product_degree() const;
  std::size_t coefficient_count() const;

  /// Copy with an override for one layer (shape-checked).
  CompositePaf with_layer(int layer, Stages stages) const;
  /// Copy with all per-layer overrides dropped.
  CompositePaf uniform() const;
  /// Copy whose defaults are replaced (shape-checked).
  CompositePaf with_defaults(Stages stages) const;

  // Presentation metadata; never used in arithmetic.
  std::string display_name;
  std::vector<std::string> stage_labels;
  std::vector<std::string> symbols;
  std::vector<std::string> aliases;

 private:
  void check_shape(const Stages& stages) const;

  std::string name_;
  Stages stages_;
  std::map<int, Stages> per_layer_;
};

/// Tag selecting the exact sign function instead of a polynomial.
struct ExactSign {};
inline constexpr ExactSign exact_sign{};

double sign_of(double x);

/// Odd polynomial evaluated through its evaluation plan's product schedule.
/// Throws DomainError for non-finite x.
double eval_odd_poly(const OddPolynomial& p, double x);

/// Nested stage evaluation with Horner per stage, no checks.
double eval_stages(const Stages& stages, double x);

/// Returns s(x) for the composite s and adds weight * d s(x) / d c[i][k] to
/// grads[i][k] (grads must have the stage shapes). With `dx`, also stores
/// d s / d x.
double eval_stages_backprop(const Stages& stages, double x, double weight,
                            std::vector<std::vector<double>>& grads, double* dx = nullptr);

/// Composite evaluation at x. Throws DomainError for non-finite x and
/// LookupError for an unresolvable layer.
double eval_composite(const CompositePaf& paf, double x,
                      std::optional<int> layer = std::nullopt);

/// (x + s(x) * x) / 2 with s the PAF sign approximation.
double relu_paf(const CompositePaf& paf, double x,
                std::optional<int> layer = std::nullopt);
double relu_paf(ExactSign, double x);

/// ((x + y) + (x - y) * s(x - y)) / 2.
double max_paf(const CompositePaf& paf, double x, double y,
               std::optional<int> layer = std::nullopt);
/// Reference mode: the same formula with the exact sign, which reduces to
/// selecting the larger operand.
double max_paf(ExactSign, double x, double y);

}  // namespace pafforge
