#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "pafforge/paf.hpp"

namespace pafforge {

/// Named PAFs with their per-layer coefficient tables.
class PafCatalog {
 public:
  PafCatalog() = default;
  explicit PafCatalog(std::vector<CompositePaf> entries);

  /// Lookup by canonical name or alias. Separators are normalised, so
  /// "f1∘g2", "f1og2" and "f1_g2" all resolve. Throws LookupError.
  const CompositePaf& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<CompositePaf>& entries() const { return entries_; }
  std::vector<std::string> names() const;

  /// Number of coefficient rows: the per-layer table size, or 1 for a PAF
  /// whose single row is shared by every layer.
  static std::size_t table_rows(const CompositePaf& paf);

 private:
  const CompositePaf* find(const std::string& name) const;

  std::vector<CompositePaf> entries_;
};

std::string normalize_paf_name(const std::string& name);

/// One catalog entry; per-layer keys are decimal layer indices.
CompositePaf paf_from_json(const nlohmann::json& j, const std::string& origin = "<json>");
nlohmann::json paf_to_json(const CompositePaf& paf);

PafCatalog parse_catalog(const std::string& json_text, const std::string& origin = "<string>");
PafCatalog load_catalog(const std::filesystem::path& path);

/// Directory holding the shipped data files: $PAFFORGE_DATA_DIR if set,
/// otherwise the source tree's data/ directory.
std::filesystem::path default_data_dir();
std::filesystem::path default_catalog_path();

}  // namespace pafforge
