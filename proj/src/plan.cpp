#include "pafforge/plan.hpp"

#include <algorithm>
#include <bit>
#include <map>
#include <memory>
#include <set>

#include "pafforge/errors.hpp"

namespace pafforge {

namespace {

int ceil_log2(int v) {
  int d = 0;
  while ((1 << d) < v) ++d;
  return d;
}

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

int largest_pow2_below(int v) { return static_cast<int>(std::bit_floor(static_cast<unsigned>(v - 1))); }

// x^k is built as x^(2^m) * x^(k - 2^m), squaring for powers of two, which
// puts it at level ceil(log2 k).
void add_power(int k, std::set<int>& powers) {
  if (k <= 1 || powers.contains(k)) return;
  if (is_pow2(k)) {
    add_power(k / 2, powers);
  } else {
    const int m = largest_pow2_below(k);
    add_power(m, powers);
    add_power(k - m, powers);
  }
  powers.insert(k);
}

struct Node {
  int degree = 1;
  int giant = 0;  // 0 for a flat node, else the split power g
  std::shared_ptr<const Node> low;
  std::shared_ptr<const Node> high;
};

struct Candidate {
  std::shared_ptr<const Node> node;
  std::set<int> powers;
  int splits = 0;
  int level = 0;

  int cost() const { return static_cast<int>(powers.size()) + splits; }
};

using CandidateList = std::vector<Candidate>;

constexpr int kExhaustiveLimit = 31;
// Above this degree the candidate list is trimmed to the cheapest entries per level.
constexpr int kFullListLimit = 15;
constexpr std::size_t kKeepPerLevel = 4;

const CandidateList& candidates(int degree, std::map<int, CandidateList>& memo) {
  if (auto it = memo.find(degree); it != memo.end()) return it->second;

  CandidateList out;
  Candidate flat;
  flat.node = std::make_shared<Node>(Node{degree, 0, nullptr, nullptr});
  for (int k = 3; k <= degree; k += 2) add_power(k, flat.powers);
  flat.level = degree == 1 ? 0 : ceil_log2(degree);
  out.push_back(std::move(flat));

  std::vector<int> giants;
  if (degree <= kExhaustiveLimit) {
    for (int g = 2; g < degree; g *= 2) giants.push_back(g);
  } else if (degree > 1) {
    giants.push_back(largest_pow2_below(degree));
  }

  for (int g : giants) {
    const CandidateList& lows = candidates(g - 1, memo);
    const CandidateList& highs = candidates(degree - g, memo);
    for (const auto& lo : lows) {
      for (const auto& hi : highs) {
        Candidate c;
        c.node = std::make_shared<Node>(Node{degree, g, lo.node, hi.node});
        c.powers = lo.powers;
        c.powers.insert(hi.powers.begin(), hi.powers.end());
        add_power(g, c.powers);
        c.splits = lo.splits + hi.splits + 1;
        c.level = std::max(lo.level, std::max(ceil_log2(g), hi.level) + 1);
        const bool duplicate = std::any_of(out.begin(), out.end(), [&](const Candidate& o) {
          return o.powers == c.powers && o.splits == c.splits && o.level == c.level;
        });
        if (!duplicate) out.push_back(std::move(c));
      }
    }
  }
  if (degree > kFullListLimit) {
    std::stable_sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
      return a.level != b.level ? a.level < b.level : a.cost() < b.cost();
    });
    CandidateList kept;
    std::map<int, std::size_t> per_level;
    for (auto& c : out) {
      if (per_level[c.level]++ < kKeepPerLevel) kept.push_back(std::move(c));
    }
    out = std::move(kept);
  }
  return memo.emplace(degree, std::move(out)).first->second;
}

class StageEmitter {
 public:
  explicit StageEmitter(StagePlan& plan) : plan_(plan) {}

  void emit_powers(const std::set<int>& powers) {
    power_reg_[1] = 0;
    level_.push_back(0);
    for (int k : powers) {
      const int a = is_pow2(k) ? k / 2 : largest_pow2_below(k);
      const int b = k - a;
      PlanStep s;
      s.op = PlanStep::Op::kProduct;
      s.lhs = power_reg_.at(a);
      s.rhs = power_reg_.at(b);
      s.power = k;
      s.label = "x^" + std::to_string(k);
      const int lvl = std::max(level_[s.lhs], level_[s.rhs]) + 1;
      power_reg_[k] = push(std::move(s), lvl);
    }
  }

  int emit(const Node& node, int coef_offset) {
    if (node.giant == 0) {
      PlanStep s;
      s.op = PlanStep::Op::kCombine;
      int lvl = 0;
      for (int j = 0; 2 * j + 1 <= node.degree; ++j) {
        const int reg = power_reg_.at(2 * j + 1);
        s.terms.emplace_back(coef_offset + j, reg);
        lvl = std::max(lvl, level_[reg]);
      }
      s.label = "sum_c*x^k";
      return push(std::move(s), lvl);
    }
    const int lo = emit(*node.low, coef_offset);
    const int hi = emit(*node.high, coef_offset + node.giant / 2);
    PlanStep prod;
    prod.op = PlanStep::Op::kProduct;
    prod.lhs = power_reg_.at(node.giant);
    prod.rhs = hi;
    prod.label = "x^" + std::to_string(node.giant) + "*B";
    const int prod_level = std::max(level_[prod.lhs], level_[hi]) + 1;
    const int p = push(std::move(prod), prod_level);
    PlanStep sum;
    sum.op = PlanStep::Op::kCombine;
    sum.addends = {lo, p};
    sum.label = "A+x^" + std::to_string(node.giant) + "*B";
    return push(std::move(sum), std::max(level_[lo], level_[p]));
  }

  int level(int reg) const { return level_[reg]; }

 private:
  int push(PlanStep step, int level) {
    step.out = plan_.registers++;
    step.level = level;
    level_.push_back(level);
    plan_.steps.push_back(std::move(step));
    return plan_.steps.back().out;
  }

  StagePlan& plan_;
  std::map<int, int> power_reg_;
  std::vector<int> level_;
};

std::string coefficient_name(const std::string& symbol, int power) {
  const auto caret = symbol.find('^');
  if (caret == std::string::npos) return symbol + std::to_string(power);
  return symbol.substr(0, caret) + std::to_string(power) + symbol.substr(caret);
}

std::string variable_name(std::size_t stage) {
  static const char* names[] = {"x", "y", "z", "w", "v", "u", "t", "s"};
  if (stage < std::size(names)) return names[stage];
  return "x" + std::to_string(stage);
}

}  // namespace

int stage_depth(int degree) {
  if (degree < 1 || degree % 2 == 0) {
    throw ConfigError("stage degree must be odd and positive, got " + std::to_string(degree));
  }
  return ceil_log2(degree + 1);
}

StagePlan build_stage_plan(int degree) {
  const int target = stage_depth(degree);
  std::map<int, CandidateList> memo;
  const CandidateList& all = candidates(degree, memo);
  const Candidate* best = nullptr;
  for (const auto& c : all) {
    if (c.level > target) continue;
    if (!best || c.cost() < best->cost() || (c.cost() == best->cost() && c.level < best->level)) {
      best = &c;
    }
  }
  // The flat candidate always meets the target depth for odd degrees.
  if (!best) throw Error("no depth-optimal schedule for degree " + std::to_string(degree));

  StagePlan plan;
  plan.degree = degree;
  StageEmitter emitter(plan);
  emitter.emit_powers(best->powers);
  plan.output = emitter.emit(*best->node, 0);
  // A degree-1 stage has no ciphertext product but its coefficient product
  // still consumes one level.
  plan.depth = std::max(emitter.level(plan.output), target);
  plan.nonscalar_mults = best->cost();
  plan.scalar_mults = (degree + 1) / 2;
  return plan;
}

double StagePlan::evaluate(std::span<const double> coefficients, double x) const {
  std::vector<double> regs(static_cast<std::size_t>(registers), 0.0);
  regs[0] = x;
  for (const auto& s : steps) {
    if (s.op == PlanStep::Op::kProduct) {
      regs[s.out] = regs[s.lhs] * regs[s.rhs];
    } else {
      double acc = 0.0;
      for (auto [k, reg] : s.terms) acc += coefficients[k] * regs[reg];
      for (int reg : s.addends) acc += regs[reg];
      regs[s.out] = acc;
    }
  }
  return regs[output];
}

double EvaluationPlan::evaluate(const Stages& coefficients, double x) const {
  if (coefficients.size() != stages.size()) throw ConfigError("plan/stage count mismatch");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (coefficients[i].degree() != stages[i].degree) {
      throw ConfigError("plan/stage degree mismatch");
    }
    x = stages[i].evaluate(coefficients[i].coefficients(), x);
  }
  return x;
}

std::vector<TraceRow> build_level_trace(const std::vector<int>& degrees,
                                        const std::vector<std::string>& symbols,
                                        const std::vector<std::string>& labels) {
  // (level, priority, text): within a level, coefficient products come first,
  // then powers, then stage outputs.
  std::vector<std::tuple<int, int, std::string>> entries;
  int base = 0;
  for (std::size_t i = 0; i < degrees.size(); ++i) {
    const int n = degrees[i];
    stage_depth(n);
    const std::string v = variable_name(i);
    const std::string coef =
        coefficient_name(i < symbols.size() ? symbols[i] : "c", n);
    if (i == 0) {
      entries.emplace_back(0, 0, coef);
      entries.emplace_back(0, 1, v);
    }
    int acc_level = base + 1;
    entries.emplace_back(acc_level, 0, coef + "*" + v);
    for (int j = 1; (1 << j) <= n - 1; ++j) {
      entries.emplace_back(base + j, 1, v + "^" + std::to_string(1 << j));
    }
    int exponent = 1;
    for (int j = 1; (1 << j) <= n - 1; ++j) {
      if (((n - 1) >> j) & 1) {
        exponent += 1 << j;
        acc_level = std::max(acc_level, base + j) + 1;
        entries.emplace_back(acc_level, 0, coef + "*" + v + "^" + std::to_string(exponent));
      }
    }
    if (i + 1 < degrees.size()) {
      const std::string label = i < labels.size() ? labels[i] : "p" + std::to_string(i + 1);
      entries.emplace_back(acc_level, 2, variable_name(i + 1) + "=" + label + "(" + v + ")");
    }
    base = acc_level;
  }
  std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
  });
  std::vector<TraceRow> rows(static_cast<std::size_t>(base + 1));
  for (int l = 0; l <= base; ++l) rows[l].level = l;
  for (auto& [level, priority, text] : entries) rows[level].variables.push_back(std::move(text));
  return rows;
}

EvaluationPlan build_plan(const CompositePaf& paf) {
  EvaluationPlan plan;
  for (const auto& stage : paf.stages()) {
    plan.stages.push_back(build_stage_plan(stage.degree()));
    const StagePlan& sp = plan.stages.back();
    plan.depth_per_stage.push_back(sp.depth);
    plan.total_depth += sp.depth;
    plan.nonscalar_mults += sp.nonscalar_mults;
    plan.scalar_mults += sp.scalar_mults;
  }
  plan.level_trace = build_level_trace(paf.stage_degrees(), paf.symbols, paf.stage_labels);
  return plan;
}

}  // namespace pafforge
