#include "pafforge/catalog.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pafforge/errors.hpp"

#ifndef PAFFORGE_SOURCE_DATA_DIR
#define PAFFORGE_SOURCE_DATA_DIR "data"
#endif

namespace pafforge {

using nlohmann::json;

namespace {

std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t offset) {
  std::size_t line = 1;
  std::size_t column = 1;
  for (std::size_t i = 0; i < std::min(offset, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  return {line, column};
}

Stages parse_stages(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ParseError(where + ": stages must be a non-empty array");
  Stages stages;
  for (const auto& stage : j) {
    if (!stage.is_array() || stage.empty()) {
      throw ParseError(where + ": each stage must be a non-empty array of numbers");
    }
    std::vector<double> coefs;
    for (const auto& c : stage) {
      if (!c.is_number()) throw ParseError(where + ": coefficient is not a number");
      coefs.push_back(c.get<double>());
    }
    stages.emplace_back(std::move(coefs));
  }
  return stages;
}

std::vector<std::string> string_list(const json& j, const char* key) {
  std::vector<std::string> out;
  if (auto it = j.find(key); it != j.end()) {
    for (const auto& s : *it) out.push_back(s.get<std::string>());
  }
  return out;
}

}  // namespace

std::string normalize_paf_name(const std::string& name) {
  std::string out;
  for (std::size_t i = 0; i < name.size(); ++i) {
    const unsigned char ch = static_cast<unsigned char>(name[i]);
    // U+2218 RING OPERATOR and U+25E6 WHITE BULLET, UTF-8 encoded.
    if (name.compare(i, 3, "\xE2\x88\x98") == 0 || name.compare(i, 3, "\xE2\x97\xA6") == 0) {
      out += '_';
      i += 2;
    } else if (std::isspace(ch)) {
      continue;
    } else {
      out += static_cast<char>(std::tolower(ch));
    }
  }
  // "f1og2" style: an 'o' between a digit and 'g' is the composition sign.
  for (std::size_t i = 1; i + 1 < out.size(); ++i) {
    if (out[i] == 'o' && std::isdigit(static_cast<unsigned char>(out[i - 1])) && out[i + 1] == 'g') {
      out[i] = '_';
    }
  }
  return out;
}

PafCatalog::PafCatalog(std::vector<CompositePaf> entries) : entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    for (std::size_t j = i + 1; j < entries_.size(); ++j) {
      if (normalize_paf_name(entries_[i].name()) == normalize_paf_name(entries_[j].name())) {
        throw ConfigError("duplicate PAF name '" + entries_[i].name() + "'");
      }
    }
  }
}

const CompositePaf* PafCatalog::find(const std::string& name) const {
  const std::string key = normalize_paf_name(name);
  for (const auto& e : entries_) {
    if (normalize_paf_name(e.name()) == key) return &e;
  }
  for (const auto& e : entries_) {
    for (const auto& alias : e.aliases) {
      if (normalize_paf_name(alias) == key) return &e;
    }
  }
  return nullptr;
}

const CompositePaf& PafCatalog::get(const std::string& name) const {
  if (const auto* e = find(name)) return *e;
  throw LookupError("unknown PAF '" + name + "'");
}

bool PafCatalog::contains(const std::string& name) const { return find(name) != nullptr; }

std::vector<std::string> PafCatalog::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.name());
  return out;
}

std::size_t PafCatalog::table_rows(const CompositePaf& paf) {
  return paf.per_layer().empty() ? 1 : paf.per_layer().size();
}

CompositePaf paf_from_json(const json& p, const std::string& origin) {
  try {
    const std::string name = p.at("name").get<std::string>();
    const std::string where = origin + ": PAF '" + name + "'";
    Stages stages = parse_stages(p.at("stages"), where);
    std::map<int, Stages> per_layer;
    if (auto it = p.find("per_layer"); it != p.end()) {
      for (auto& [key, value] : it->items()) {
        std::size_t used = 0;
        int layer = -1;
        try {
          layer = std::stoi(key, &used);
        } catch (const std::exception&) {
        }
        if (layer < 0 || used != key.size()) {
          throw ParseError(where + ": bad layer key '" + key + "'");
        }
        per_layer.emplace(layer, parse_stages(value, where + " layer " + key));
      }
    }
    CompositePaf paf(name, std::move(stages), std::move(per_layer));
    paf.display_name = p.value("display", name);
    paf.aliases = string_list(p, "aliases");
    paf.stage_labels = string_list(p, "stage_labels");
    paf.symbols = string_list(p, "symbols");
    return paf;
  } catch (const json::exception& e) {
    throw ParseError(origin + ": invalid PAF entry: " + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(origin + ": " + e.what());
  }
}

json paf_to_json(const CompositePaf& paf) {
  auto stages_json = [](const Stages& stages) {
    json out = json::array();
    for (const auto& st : stages) {
      out.push_back(std::vector<double>(st.coefficients().begin(), st.coefficients().end()));
    }
    return out;
  };
  json per_layer = json::object();
  for (const auto& [layer, stages] : paf.per_layer()) {
    per_layer[std::to_string(layer)] = stages_json(stages);
  }
  return {{"name", paf.name()},
          {"display", paf.display_name.empty() ? paf.name() : paf.display_name},
          {"aliases", paf.aliases},
          {"stage_labels", paf.stage_labels},
          {"symbols", paf.symbols},
          {"stages", stages_json(paf.stages())},
          {"per_layer", per_layer}};
}

PafCatalog parse_catalog(const std::string& text, const std::string& origin) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    auto [line, column] = line_column(text, e.byte == 0 ? 0 : e.byte - 1);
    throw ParseError(origin + ": malformed catalog: " + e.what(), line, column);
  }
  if (!doc.is_object() || !doc.contains("pafs") || !doc["pafs"].is_array()) {
    throw ParseError(origin + ": catalog must be an object with a 'pafs' array");
  }
  std::vector<CompositePaf> entries;
  for (const auto& p : doc["pafs"]) entries.push_back(paf_from_json(p, origin));
  return PafCatalog(std::move(entries));
}

PafCatalog load_catalog(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open catalog file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_catalog(buffer.str(), path.string());
}

std::filesystem::path default_data_dir() {
  if (const char* env = std::getenv("PAFFORGE_DATA_DIR"); env && *env) return env;
  return PAFFORGE_SOURCE_DATA_DIR;
}

std::filesystem::path default_catalog_path() { return default_data_dir() / "paf_catalog.json"; }

}  // namespace pafforge
