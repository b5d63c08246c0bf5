#pragma once

#include "blab/core.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace blab {

/// Feature rows with class labels. Every class in [0, num_classes) holds at
/// least one row.
struct LabeledDataset {
  Matrix features;              // n x d
  std::vector<int> labels;      // n
  std::vector<int> class_counts;  // C
  /// Optional provenance flag per row ("dbg": true in the file format). Empty
  /// when no row carries provenance.
  std::vector<bool> generated;

  Index size() const { return features.rows(); }
  Index dim() const { return features.cols(); }
  int num_classes() const { return static_cast<int>(class_counts.size()); }

  /// Throws invariant-violation naming the first failed check.
  void validate() const;

  /// Builds a dataset from rows and labels, computing class counts.
  static LabeledDataset from_rows(Matrix features, std::vector<int> labels, int num_classes);

  /// Rows of class c, in dataset order.
  Matrix class_rows(int c) const;

  friend bool operator==(const LabeledDataset& a, const LabeledDataset& b);
};

/// Ground-truth isotropic Gaussian mixture used both to sample data and to
/// score it exactly.
struct MixtureSpec {
  Matrix component_means;  // C x d
  double component_scale = 1.0;
  Vector priors;  // C, sums to one

  int num_classes() const { return static_cast<int>(component_means.rows()); }
  Index dim() const { return component_means.cols(); }
  void validate() const;
};

struct GroupSplit {
  std::vector<int> head;
  std::vector<int> med;
  std::vector<int> tail;
};

struct LongTailParams {
  int classes = 10;
  int dim = 8;
  int n_max = 500;
  double ratio = 100.0;
  double sep = 2.0;
  double sigma = 1.0;
  std::uint64_t seed = 0;
};

/// n_c = max(1, round(n_max * ratio^(-c/(C-1)))).
std::vector<int> longtail_counts(int classes, int n_max, double ratio);

/// Samples a long-tailed Gaussian-mixture dataset. Means are drawn uniformly
/// from [-sep*sigma, sep*sigma]^d and redrawn until every pair is at least
/// sep*sigma apart.
std::pair<LabeledDataset, MixtureSpec> make_longtail_mixture(const LongTailParams& params);

/// Draws counts[c] rows from each component of an existing mixture.
LabeledDataset sample_mixture(const MixtureSpec& spec, const std::vector<int>& counts,
                              std::uint64_t seed);

/// Head/med/tail thirds over classes sorted by descending count (ties by
/// index); remainder classes go to the earlier groups.
GroupSplit split_groups(const std::vector<int>& class_counts);
GroupSplit split_groups(const LabeledDataset& dataset);

/// Optional per-row metadata written alongside a record.
struct RowMeta {
  std::string gen_meta_json;  // raw JSON object text, empty when absent
};

void save_dataset(const LabeledDataset& dataset, const std::filesystem::path& path,
                  const std::vector<RowMeta>& meta = {});
LabeledDataset load_dataset(const std::filesystem::path& path);

/// Formats a double with 17 significant digits.
std::string format_double(double v);

}  // namespace blab
