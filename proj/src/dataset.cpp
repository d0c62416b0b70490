#include "pafforge/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "pafforge/errors.hpp"

namespace pafforge {

using nlohmann::json;

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out;
  out.features = features.gather(indices);
  out.classes = classes;
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(labels.at(i));
  return out;
}

void Dataset::validate() const {
  if (features.batch() != labels.size()) {
    throw DataError("dataset has " + std::to_string(features.batch()) + " samples but " +
                    std::to_string(labels.size()) + " labels");
  }
  if (classes <= 0) throw DataError("dataset needs at least one class");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw DataError("label " + std::to_string(labels[i]) + " of sample " + std::to_string(i) +
                      " is outside [0, " + std::to_string(classes) + ")");
    }
  }
}

Dataset make_blobs(std::size_t n, int classes, std::size_t dims, std::uint64_t seed,
                   double cluster_std, double center_box) {
  if (n == 0 || classes <= 0 || dims == 0) throw ConfigError("blobs need n, classes, dims > 0");
  if (!(cluster_std > 0.0)) throw ConfigError("blobs need a positive cluster_std");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> box(-center_box, center_box);
  std::vector<double> centers(static_cast<std::size_t>(classes) * dims);
  for (auto& c : centers) c = box(rng);

  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(classes));
  std::shuffle(labels.begin(), labels.end(), rng);

  std::normal_distribution<double> noise(0.0, cluster_std);
  Dataset d;
  d.features = Tensor({n, dims});
  d.classes = classes;
  d.labels = labels;
  for (std::size_t i = 0; i < n; ++i) {
    const double* c = centers.data() + static_cast<std::size_t>(labels[i]) * dims;
    for (std::size_t k = 0; k < dims; ++k) d.features.data[i * dims + k] = c[k] + noise(rng);
  }
  return d;
}

namespace {

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t offset,
                   const std::filesystem::path& path) {
  if (offset + 4 > b.size()) {
    throw ParseError(path.string() + ": truncated IDX header at byte offset " +
                     std::to_string(offset));
  }
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) |
         (std::uint32_t{b[offset + 2]} << 8) | std::uint32_t{b[offset + 3]};
}

std::string hex(std::uint32_t v) {
  std::ostringstream ss;
  ss << "0x" << std::hex << std::setw(8) << std::setfill('0') << v;
  return ss.str();
}

std::size_t clip(std::size_t count, std::optional<std::size_t> limit,
                 const std::filesystem::path& path) {
  if (!limit) return count;
  if (*limit > count) {
    throw DataError(path.string() + ": limit " + std::to_string(*limit) + " exceeds the " +
                    std::to_string(count) + " available samples");
  }
  return *limit;
}

}  // namespace

Tensor read_idx_images(const std::filesystem::path& path, std::optional<std::size_t> limit) {
  const auto b = read_bytes(path);
  const auto magic = be32(b, 0, path);
  if (magic != 0x00000803u) {
    throw ParseError(path.string() + ": bad IDX image magic " + hex(magic) + " at byte offset 0");
  }
  const std::size_t count = be32(b, 4, path), rows = be32(b, 8, path), cols = be32(b, 12, path);
  const std::size_t needed = 16 + count * rows * cols;
  if (b.size() < needed) {
    throw ParseError(path.string() + ": IDX payload ends at byte offset " +
                     std::to_string(b.size()) + ", expected " + std::to_string(needed));
  }
  const std::size_t n = clip(count, limit, path);
  Tensor t({n, 1, rows, cols});
  for (std::size_t i = 0; i < t.size(); ++i) t.data[i] = b[16 + i] / 255.0;
  return t;
}

std::vector<int> read_idx_labels(const std::filesystem::path& path, std::optional<std::size_t> limit) {
  const auto b = read_bytes(path);
  const auto magic = be32(b, 0, path);
  if (magic != 0x00000801u) {
    throw ParseError(path.string() + ": bad IDX label magic " + hex(magic) + " at byte offset 0");
  }
  const std::size_t count = be32(b, 4, path);
  if (b.size() < 8 + count) {
    throw ParseError(path.string() + ": IDX payload ends at byte offset " +
                     std::to_string(b.size()) + ", expected " + std::to_string(8 + count));
  }
  const std::size_t n = clip(count, limit, path);
  return std::vector<int>(b.begin() + 8, b.begin() + 8 + static_cast<std::ptrdiff_t>(n));
}

Dataset read_csv_dataset(const std::filesystem::path& path, std::optional<int> label_column,
                         bool header) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  std::vector<double> features;
  std::vector<int> labels;
  if (header && std::getline(in, line)) ++line_no;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(ss, cell, ',')) {
      ++col;
      try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        if (cell.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument("");
        row.push_back(v);
      } catch (const std::exception&) {
        throw ParseError(path.string() + ": non-numeric value '" + cell + "'", line_no, col);
      }
    }
    if (width == 0) {
      width = row.size();
      if (width < 2) throw ParseError(path.string() + ": need at least 2 columns", line_no, 1);
    } else if (row.size() != width) {
      throw ParseError(path.string() + ": ragged row with " + std::to_string(row.size()) +
                           " columns, expected " + std::to_string(width),
                       line_no, row.size());
    }
    int lc = label_column.value_or(static_cast<int>(width) - 1);
    if (lc < 0) lc += static_cast<int>(width);
    if (lc < 0 || lc >= static_cast<int>(width)) {
      throw ConfigError("label column " + std::to_string(*label_column) + " out of range");
    }
    const double lv = row[static_cast<std::size_t>(lc)];
    if (lv < 0 || lv != std::floor(lv)) {
      throw ParseError(path.string() + ": label out of range", line_no,
                       static_cast<std::size_t>(lc) + 1);
    }
    labels.push_back(static_cast<int>(lv));
    for (std::size_t k = 0; k < width; ++k) {
      if (static_cast<int>(k) != lc) features.push_back(row[k]);
    }
  }
  if (labels.empty()) throw DataError(path.string() + ": no rows");
  Dataset d;
  d.features = Tensor({labels.size(), width - 1}, std::move(features));
  d.labels = std::move(labels);
  d.classes = *std::max_element(d.labels.begin(), d.labels.end()) + 1;
  return d;
}

DatasetSpec dataset_spec_from_json(const json& j) {
  static const std::vector<std::string> known = {
      "kind", "n", "classes", "dims", "cluster_std", "center_box", "seed", "images",
      "labels", "limit", "path", "label_column", "header", "normalize"};
  for (auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown dataset key '" + key + "'");
    }
  }
  DatasetSpec s;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "blobs") {
    s.kind = DatasetSpec::Kind::kBlobs;
  } else if (kind == "idx") {
    s.kind = DatasetSpec::Kind::kIdx;
  } else if (kind == "csv") {
    s.kind = DatasetSpec::Kind::kCsv;
  } else {
    throw ConfigError("unknown dataset kind '" + kind + "'");
  }
  s.n = j.value("n", s.n);
  s.classes = j.value("classes", s.classes);
  s.dims = j.value("dims", s.dims);
  s.cluster_std = j.value("cluster_std", s.cluster_std);
  s.center_box = j.value("center_box", s.center_box);
  s.seed = j.value("seed", s.seed);
  if (j.contains("images")) s.images = j["images"].get<std::string>();
  if (j.contains("labels")) s.labels_path = j["labels"].get<std::string>();
  if (j.contains("limit")) s.limit = j["limit"].get<std::size_t>();
  if (j.contains("path")) s.csv = j["path"].get<std::string>();
  if (j.contains("label_column")) s.label_column = j["label_column"].get<int>();
  s.header = j.value("header", false);
  s.normalize = j.value("normalize", true);
  return s;
}

json dataset_spec_to_json(const DatasetSpec& s) {
  json j;
  switch (s.kind) {
    case DatasetSpec::Kind::kBlobs:
      j = {{"kind", "blobs"}, {"n", s.n}, {"classes", s.classes}, {"dims", s.dims},
           {"cluster_std", s.cluster_std}, {"center_box", s.center_box}, {"seed", s.seed}};
      break;
    case DatasetSpec::Kind::kIdx:
      j = {{"kind", "idx"}, {"images", s.images.string()}, {"labels", s.labels_path.string()}};
      if (s.limit) j["limit"] = *s.limit;
      break;
    case DatasetSpec::Kind::kCsv:
      j = {{"kind", "csv"}, {"path", s.csv.string()}, {"header", s.header}};
      if (s.label_column) j["label_column"] = *s.label_column;
      break;
  }
  j["normalize"] = s.normalize;
  return j;
}

Dataset load_dataset(const DatasetSpec& spec) {
  Dataset d;
  switch (spec.kind) {
    case DatasetSpec::Kind::kBlobs:
      d = make_blobs(spec.n, spec.classes, spec.dims, spec.seed, spec.cluster_std, spec.center_box);
      break;
    case DatasetSpec::Kind::kIdx: {
      d.features = read_idx_images(spec.images, spec.limit);
      d.labels = read_idx_labels(spec.labels_path, spec.limit);
      d.classes = d.labels.empty() ? 0 : *std::max_element(d.labels.begin(), d.labels.end()) + 1;
      break;
    }
    case DatasetSpec::Kind::kCsv:
      d = read_csv_dataset(spec.csv, spec.label_column, spec.header);
      break;
  }
  d.validate();
  return d;
}

Normalization fit_normalization(const Tensor& features) {
  const std::size_t n = features.batch(), k = features.sample_size();
  if (n == 0) throw DataError("cannot normalise an empty dataset");
  Normalization norm{std::vector<double>(k, 0.0), std::vector<double>(k, 0.0)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < k; ++f) norm.mean[f] += features.data[i * k + f];
  }
  for (auto& m : norm.mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t f = 0; f < k; ++f) {
      const double d = features.data[i * k + f] - norm.mean[f];
      norm.stddev[f] += d * d;
    }
  }
  for (auto& s : norm.stddev) {
    s = std::sqrt(s / static_cast<double>(n));
    if (s == 0.0) s = 1.0;
  }
  return norm;
}

void apply_normalization(Tensor& features, const Normalization& norm) {
  const std::size_t k = features.sample_size();
  if (norm.mean.size() != k) throw DataError("normalisation width mismatch");
  for (std::size_t i = 0; i < features.batch(); ++i) {
    for (std::size_t f = 0; f < k; ++f) {
      double& v = features.data[i * k + f];
      v = (v - norm.mean[f]) / norm.stddev[f];
    }
  }
}

DataSplit split_dataset(const Dataset& data, double train_ratio, std::uint64_t seed) {
  if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw ConfigError("split ratio must be in (0, 1)");
  const std::size_t n = data.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_ratio * static_cast<double>(n)));
  if (n_train == 0 || n_train == n) throw DataError("split leaves an empty part");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return {data.subset({idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train)}),
          data.subset({idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end()})};
}

DataSplit prepare_data(const DatasetSpec& spec, double train_ratio, std::uint64_t seed) {
  DataSplit split = split_dataset(load_dataset(spec), train_ratio, seed);
  if (spec.normalize) {
    const auto norm = fit_normalization(split.train.features);
    apply_normalization(split.train.features, norm);
    apply_normalization(split.val.features, norm);
  }
  return split;
}

}  // namespace pafforge
