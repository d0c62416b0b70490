#include "pafforge/cost.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "pafforge/errors.hpp"
#include "pafforge/plan.hpp"
#include "pafforge/train.hpp"

namespace pafforge {

using nlohmann::json;

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = (static_cast<double>(i + j) / 2.0) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

const LatencyTable::Entry* LatencyTable::find(const std::string& name) const {
  const std::string key = normalize_paf_name(name);
  for (const auto& e : entries) {
    if (normalize_paf_name(e.paf) == key) return &e;
    for (const auto& a : e.aliases) {
      if (normalize_paf_name(a) == key) return &e;
    }
  }
  return nullptr;
}

LatencyTable parse_latency_table(const std::string& text, const std::string& origin) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(origin + ": malformed latency table: " + e.what());
  }
  LatencyTable table;
  try {
    for (const auto& e : doc.at("entries")) {
      LatencyTable::Entry entry;
      entry.paf = e.at("paf").get<std::string>();
      entry.aliases = e.value("aliases", std::vector<std::string>{});
      entry.latency_ms = e.at("latency_ms").get<double>();
      entry.exclude_from_rank = e.value("exclude_from_rank", false);
      if (!(entry.latency_ms > 0.0)) throw ParseError(origin + ": latency must be positive");
      table.entries.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    throw ParseError(origin + ": invalid latency table: " + e.what());
  }
  return table;
}

LatencyTable load_latency_table(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("cannot open latency table " + path.string());
  return parse_latency_table(read_text_file(path), path.string());
}

std::filesystem::path default_latency_path() { return default_data_dir() / "paper_latency_ms.json"; }

double Calibration::predict(int depth, int mults) const {
  return beta[0] + beta[1] * depth + beta[2] * mults;
}

Calibration calibrate_latency(const PafCatalog& catalog, const LatencyTable& table) {
  Calibration cal;
  std::vector<std::array<double, 3>> rows;
  for (const auto& paf : catalog.entries()) {
    const auto* entry = table.find(paf.name());
    if (!entry || entry->exclude_from_rank) continue;
    const auto plan = build_plan(paf);
    rows.push_back({1.0, static_cast<double>(plan.total_depth),
                    static_cast<double>(plan.nonscalar_mults)});
    cal.pafs.push_back(paf.name());
    cal.observed.push_back(entry->latency_ms);
  }
  if (rows.size() < 3) throw DataError("calibration needs at least 3 PAFs with latencies");
  Eigen::MatrixXd a(static_cast<Eigen::Index>(rows.size()), 3);
  Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int c = 0; c < 3; ++c) a(static_cast<Eigen::Index>(i), c) = rows[i][c];
    y(static_cast<Eigen::Index>(i)) = cal.observed[i];
  }
  const Eigen::VectorXd beta = a.colPivHouseholderQr().solve(y);
  for (int c = 0; c < 3; ++c) cal.beta[c] = beta(c);
  const Eigen::VectorXd fitted = a * beta;
  double ss = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    cal.fitted.push_back(fitted(static_cast<Eigen::Index>(i)));
    cal.residuals.push_back(cal.observed[i] - cal.fitted.back());
    ss += cal.residuals.back() * cal.residuals.back();
  }
  cal.rmse = std::sqrt(ss / static_cast<double>(rows.size()));
  return cal;
}

CostEstimate estimate_cost(const CompositePaf& paf, const Calibration* calibration) {
  const auto plan = build_plan(paf);
  CostEstimate c;
  c.paf = paf.name();
  c.depth_per_stage = plan.depth_per_stage;
  c.depth = plan.total_depth;
  c.nonscalar_mults = plan.nonscalar_mults;
  c.scalar_mults = plan.scalar_mults;
  if (calibration) c.latency_ms = calibration->predict(c.depth, c.nonscalar_mults);
  return c;
}

json cost_to_json(const CostEstimate& c) {
  json j = {{"paf", c.paf},
            {"depth", c.depth},
            {"depth_per_stage", c.depth_per_stage},
            {"nonscalar_mults", c.nonscalar_mults},
            {"scalar_mults", c.scalar_mults}};
  j["latency_ms"] = c.latency_ms ? json(*c.latency_ms) : json(nullptr);
  return j;
}

json calibration_to_json(const Calibration& cal) {
  json points = json::array();
  for (std::size_t i = 0; i < cal.pafs.size(); ++i) {
    points.push_back({{"paf", cal.pafs[i]},
                      {"observed_ms", cal.observed[i]},
                      {"fitted_ms", cal.fitted[i]},
                      {"residual_ms", cal.residuals[i]}});
  }
  return {{"model", "latency_ms = b0 + b1 * depth + b2 * nonscalar_mults"},
          {"beta", cal.beta},
          {"points", points},
          {"rmse_ms", cal.rmse}};
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw DataError("rank correlation needs two equally long lists of at least 2 values");
  }
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw DataError("rank correlation of a constant list");
  return sab / std::sqrt(saa * sbb);
}

}  // namespace pafforge
