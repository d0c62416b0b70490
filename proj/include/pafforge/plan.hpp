#pragma once

#include <string>
#include <vector>

#include "pafforge/paf.hpp"

namespace pafforge {

// Straight-line program for one odd-polynomial stage.
//
// Register 0 holds the stage input. `kProduct` multiplies two registers
// (a ciphertext-ciphertext product). `kCombine` forms
// sum(coef[k] * reg) + sum(addends), which only needs plaintext-coefficient
// products and additions and therefore costs no level.
struct PlanStep {
  enum class Op { kProduct, kCombine };

  Op op = Op::kProduct;
  int out = 0;
  int lhs = -1;
  int rhs = -1;
  std::vector<std::pair<int, int>> terms;  // (coefficient index, register)
  std::vector<int> addends;
  int level = 0;      // multiplicative level relative to the stage input
  int power = 0;      // exponent of x when the register is a pure power, else 0
  std::string label;  // e.g. "x^4" or "x^4*B"
};

struct StagePlan {
  int degree = 1;
  std::vector<PlanStep> steps;
  int registers = 1;
  int output = 0;
  int depth = 0;
  int nonscalar_mults = 0;
  int scalar_mults = 0;

  /// Executes the program with the given coefficients at x.
  double evaluate(std::span<const double> coefficients, double x) const;
};

/// One row of the multiplication-depth trace: the variables first available
/// at `level` when the leading term of every stage is computed by
/// exponentiation by squaring with the coefficient folded into the input.
struct TraceRow {
  int level = 0;
  std::vector<std::string> variables;
};

struct EvaluationPlan {
  std::vector<StagePlan> stages;
  std::vector<int> depth_per_stage;
  int total_depth = 0;
  int nonscalar_mults = 0;
  int scalar_mults = 0;
  std::vector<TraceRow> level_trace;

  /// Nested evaluation through the stage programs.
  double evaluate(const Stages& stages, double x) const;
};

/// Depth-optimal product schedule for a single odd polynomial of `degree`.
///
/// Candidates are the flat form sum c_k x^k over precomputed powers and every
/// split A(x) + x^g * B(x) with g a power of two, recursively. Powers are
/// shared between branches. The minimum count of ciphertext products is
/// chosen among candidates of depth ceil(log2(degree + 1)). Above degree 15
/// only the cheapest few sub-candidates per level are kept.
StagePlan build_stage_plan(int degree);

/// ceil(log2(degree + 1)).
int stage_depth(int degree);

EvaluationPlan build_plan(const CompositePaf& paf);

/// Trace for the given stage layout; `symbols` and `labels` name the
/// coefficients and the stage functions (may be empty).
std::vector<TraceRow> build_level_trace(const std::vector<int>& degrees,
                                        const std::vector<std::string>& symbols,
                                        const std::vector<std::string>& labels);

}  // namespace pafforge
