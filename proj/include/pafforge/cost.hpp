#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pafforge/catalog.hpp"
#include "pafforge/paf.hpp"

namespace pafforge {

/// Reference per-layer ReLU latencies used to calibrate the cost proxy.
struct LatencyTable {
  struct Entry {
    std::string paf;
    std::vector<std::string> aliases;
    double latency_ms = 0.0;
    bool exclude_from_rank = false;
  };
  std::vector<Entry> entries;

  /// Lookup by name or alias with catalog name normalisation.
  const Entry* find(const std::string& name) const;
};

LatencyTable parse_latency_table(const std::string& json_text,
                                 const std::string& origin = "<string>");
LatencyTable load_latency_table(const std::filesystem::path& path);
std::filesystem::path default_latency_path();

/// Affine fit latency ~ b0 + b1 * depth + b2 * nonscalar_mults.
struct Calibration {
  std::array<double, 3> beta{};
  std::vector<std::string> pafs;
  std::vector<double> observed;
  std::vector<double> fitted;
  std::vector<double> residuals;
  double rmse = 0.0;

  double predict(int depth, int nonscalar_mults) const;
};

/// Least-squares fit over the catalog PAFs present in the table and not
/// excluded from ranking. Throws DataError with fewer than 3 points.
Calibration calibrate_latency(const PafCatalog& catalog, const LatencyTable& table);

struct CostEstimate {
  std::string paf;
  std::vector<int> depth_per_stage;
  int depth = 0;
  int nonscalar_mults = 0;
  int scalar_mults = 0;
  std::optional<double> latency_ms;  // calibrated proxy
};

CostEstimate estimate_cost(const CompositePaf& paf, const Calibration* calibration = nullptr);
nlohmann::json cost_to_json(const CostEstimate& cost);
nlohmann::json calibration_to_json(const Calibration& cal);

/// Spearman rank correlation with average ranks for ties. Throws DataError
/// for mismatched or too short inputs and for constant inputs.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace pafforge
