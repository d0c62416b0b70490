#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pafforge/tensor.hpp"

namespace pafforge {

/// Features (dimension 0 = sample) with integer class labels.
struct Dataset {
  Tensor features;
  std::vector<int> labels;
  int classes = 0;

  std::size_t size() const { return labels.size(); }
  Dataset subset(const std::vector<std::size_t>& indices) const;
  /// Throws DataError on inconsistent sizes or labels outside [0, classes).
  void validate() const;
};

struct Normalization {
  std::vector<double> mean;
  std::vector<double> stddev;
};

struct DatasetSpec {
  enum class Kind { kBlobs, kIdx, kCsv };
  Kind kind = Kind::kBlobs;

  // blobs: isotropic Gaussian clusters with centres uniform in
  // [-center_box, center_box]^dims
  std::size_t n = 1000;
  int classes = 2;
  std::size_t dims = 2;
  double cluster_std = 1.0;
  double center_box = 10.0;
  std::uint64_t seed = 0;

  // idx
  std::filesystem::path images;
  std::filesystem::path labels_path;
  std::optional<std::size_t> limit;

  // csv
  std::filesystem::path csv;
  std::optional<int> label_column;  // default: last column
  bool header = false;

  bool normalize = true;
};

DatasetSpec dataset_spec_from_json(const nlohmann::json& j);
nlohmann::json dataset_spec_to_json(const DatasetSpec& spec);

Dataset make_blobs(std::size_t n, int classes, std::size_t dims, std::uint64_t seed,
                   double cluster_std = 1.0, double center_box = 10.0);

/// IDX files (big-endian). Images: magic 0x00000803 with (count, rows, cols);
/// labels: magic 0x00000801. Images are scaled to [0, 1] and shaped
/// [count, 1, rows, cols].
Tensor read_idx_images(const std::filesystem::path& path, std::optional<std::size_t> limit = {});
std::vector<int> read_idx_labels(const std::filesystem::path& path,
                                 std::optional<std::size_t> limit = {});

/// Numeric CSV; the label column defaults to the last one. Labels must be
/// nonnegative integers; the class count is max label + 1.
Dataset read_csv_dataset(const std::filesystem::path& path, std::optional<int> label_column = {},
                         bool header = false);

Dataset load_dataset(const DatasetSpec& spec);

/// Per-feature mean and standard deviation (1 where the deviation is 0).
Normalization fit_normalization(const Tensor& features);
void apply_normalization(Tensor& features, const Normalization& norm);

struct DataSplit {
  Dataset train;
  Dataset val;
};

/// Shuffled split with round(ratio * n) training samples.
DataSplit split_dataset(const Dataset& data, double train_ratio, std::uint64_t seed);

/// load_dataset + split_dataset, then normalisation fitted on the training
/// part and applied to both (when spec.normalize).
DataSplit prepare_data(const DatasetSpec& spec, double train_ratio, std::uint64_t seed);

}  // namespace pafforge
