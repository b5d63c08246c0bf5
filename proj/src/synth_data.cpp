#include "blab/synth_data.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace blab {

namespace {

void invariant(bool cond, const std::string& what) {
  if (!cond) throw Error(ErrorKind::InvariantViolation, what);
}

}  // namespace

bool operator==(const LabeledDataset& a, const LabeledDataset& b) {
  if (a.features.rows() != b.features.rows() || a.features.cols() != b.features.cols())
    return false;
  return a.features == b.features && a.labels == b.labels && a.class_counts == b.class_counts &&
         a.generated == b.generated;
}

void LabeledDataset::validate() const {
  const int C = num_classes();
  invariant(C >= 1, "num_classes >= 1");
  invariant(static_cast<Index>(labels.size()) == features.rows(),
            "length(labels) = row count of features");
  invariant(generated.empty() || generated.size() == labels.size(),
            "provenance flags match row count");
  std::vector<int> counts(C, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    invariant(labels[i] >= 0 && labels[i] < C,
              "label < C (row " + std::to_string(i) + ", label " + std::to_string(labels[i]) + ")");
    ++counts[labels[i]];
  }
  invariant(counts == class_counts, "class_counts match label histogram");
  for (int c = 0; c < C; ++c)
    invariant(counts[c] >= 1, "class " + std::to_string(c) + " has at least one row");
  invariant(features.allFinite(), "all features finite");
}

LabeledDataset LabeledDataset::from_rows(Matrix features, std::vector<int> labels,
                                         int num_classes) {
  LabeledDataset ds;
  ds.features = std::move(features);
  ds.labels = std::move(labels);
  ds.class_counts.assign(num_classes, 0);
  for (int y : ds.labels) {
    require(y >= 0 && y < num_classes, ErrorKind::InvariantViolation,
            "label " + std::to_string(y) + " out of range");
    ++ds.class_counts[y];
  }
  return ds;
}

Matrix LabeledDataset::class_rows(int c) const {
  Matrix out(class_counts.at(c), dim());
  Index r = 0;
  for (Index i = 0; i < size(); ++i)
    if (labels[i] == c) out.row(r++) = features.row(i);
  return out;
}

void MixtureSpec::validate() const {
  invariant(component_means.rows() >= 1, "at least one component");
  invariant(component_means.allFinite(), "means finite");
  invariant(component_scale > 0.0 && std::isfinite(component_scale), "sigma > 0");
  invariant(priors.size() == component_means.rows(), "one prior per component");
  invariant((priors.array() >= 0.0).all(), "priors nonnegative");
  invariant(std::abs(priors.sum() - 1.0) <= 1e-9, "priors sum to 1");
}

std::vector<int> longtail_counts(int classes, int n_max, double ratio) {
  std::vector<int> counts(classes);
  for (int c = 0; c < classes; ++c) {
    const double frac = classes > 1 ? static_cast<double>(c) / (classes - 1) : 0.0;
    counts[c] = std::max(1, static_cast<int>(std::lround(n_max * std::pow(ratio, -frac))));
  }
  return counts;
}

LabeledDataset sample_mixture(const MixtureSpec& spec, const std::vector<int>& counts,
                              std::uint64_t seed) {
  const int C = spec.num_classes();
  require(static_cast<int>(counts.size()) == C, ErrorKind::InvalidArgument,
          "one count per component");
  const Index n = std::accumulate(counts.begin(), counts.end(), Index{0});
  Matrix features(n, spec.dim());
  std::vector<int> labels;
  labels.reserve(n);
  Index row = 0;
  for (int c = 0; c < C; ++c) {
    Rng rng(derive_seed(seed, {0x5a3b1e, static_cast<std::uint64_t>(c)}));
    for (int i = 0; i < counts[c]; ++i) {
      features.row(row++) =
          spec.component_means.row(c) + spec.component_scale * standard_normal(rng, spec.dim()).transpose();
      labels.push_back(c);
    }
  }
  return LabeledDataset::from_rows(std::move(features), std::move(labels), C);
}

std::pair<LabeledDataset, MixtureSpec> make_longtail_mixture(const LongTailParams& p) {
  require(p.classes >= 2, ErrorKind::InvalidArgument, "C >= 2");
  require(p.dim >= 1, ErrorKind::InvalidArgument, "d >= 1");
  require(p.n_max >= p.classes, ErrorKind::InvalidArgument, "n_max >= C");
  require(p.ratio >= 1.0 && std::isfinite(p.ratio), ErrorKind::InvalidArgument, "ratio >= 1");
  require(p.sigma > 0.0 && std::isfinite(p.sigma), ErrorKind::InvalidArgument, "sigma > 0");
  require(p.sep >= 0.0 && std::isfinite(p.sep), ErrorKind::InvalidArgument, "sep >= 0");

  constexpr int kRetryCap = 10000;
  const double half_width = p.sep * p.sigma;
  const double min_dist = p.sep * p.sigma;
  Rng rng(derive_seed(p.seed, {0x6d65616e}));
  std::uniform_real_distribution<double> unif(-1.0, 1.0);

  MixtureSpec spec;
  spec.component_scale = p.sigma;
  spec.component_means.resize(p.classes, p.dim);
  int attempts = 0;
  for (int c = 0; c < p.classes; ++c) {
    for (;;) {
      require(attempts++ < kRetryCap, ErrorKind::PlacementFailure,
              "cannot place " + std::to_string(p.classes) + " means " +
                  std::to_string(min_dist) + " apart");
      for (int j = 0; j < p.dim; ++j) spec.component_means(c, j) = half_width * unif(rng);
      bool ok = true;
      for (int o = 0; o < c && ok; ++o)
        ok = (spec.component_means.row(c) - spec.component_means.row(o)).norm() >= min_dist;
      if (ok) break;
    }
  }

  const std::vector<int> counts = longtail_counts(p.classes, p.n_max, p.ratio);
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  spec.priors.resize(p.classes);
  for (int c = 0; c < p.classes; ++c) spec.priors(c) = counts[c] / total;

  LabeledDataset ds = sample_mixture(spec, counts, derive_seed(p.seed, {0x73616d70}));
  return {std::move(ds), std::move(spec)};
}

GroupSplit split_groups(const std::vector<int>& class_counts) {
  const int C = static_cast<int>(class_counts.size());
  require(C >= 3, ErrorKind::InvalidArgument, "split_groups needs C >= 3");
  std::vector<int> order(C);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return class_counts[a] > class_counts[b]; });
  const int base = C / 3;
  const int rem = C % 3;
  const int n_head = base + (rem > 0 ? 1 : 0);
  const int n_med = base + (rem > 1 ? 1 : 0);
  GroupSplit g;
  g.head.assign(order.begin(), order.begin() + n_head);
  g.med.assign(order.begin() + n_head, order.begin() + n_head + n_med);
  g.tail.assign(order.begin() + n_head + n_med, order.end());
  return g;
}

GroupSplit split_groups(const LabeledDataset& dataset) {
  return split_groups(dataset.class_counts);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void save_dataset(const LabeledDataset& dataset, const std::filesystem::path& path,
                  const std::vector<RowMeta>& meta) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << "{\"meta\":{\"dim\":" << dataset.dim() << ",\"classes\":" << dataset.num_classes()
      << "}}\n";
  for (Index i = 0; i < dataset.size(); ++i) {
    out << "{\"label\":" << dataset.labels[i] << ",\"x\":[";
    for (Index j = 0; j < dataset.dim(); ++j) {
      if (j) out << ',';
      out << format_double(dataset.features(i, j));
    }
    out << ']';
    if (!dataset.generated.empty() && dataset.generated[i]) out << ",\"dbg\":true";
    if (static_cast<Index>(meta.size()) > i && !meta[i].gen_meta_json.empty())
      out << ",\"gen_meta\":" << meta[i].gen_meta_json;
    out << "}\n";
  }
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path.string());
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  using nlohmann::json;
  auto parse_error = [&](std::size_t line, const std::string& what) {
    return Error(ErrorKind::Parse, path.string() + ":" + std::to_string(line) + ": " + what);
  };

  std::string text;
  std::size_t line_no = 0;
  Index dim = -1;
  int classes = -1;
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::vector<bool> generated;
  bool any_generated = false;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    json rec;
    try {
      rec = json::parse(text);
    } catch (const json::exception& e) {
      throw parse_error(line_no, e.what());
    }
    if (!rec.is_object()) throw parse_error(line_no, "record is not an object");
    if (dim < 0) {
      if (!rec.contains("meta")) throw parse_error(line_no, "missing meta header");
      const json& meta = rec["meta"];
      if (!meta.is_object() || !meta.contains("dim") || !meta.contains("classes") ||
          !meta["dim"].is_number_integer() || !meta["classes"].is_number_integer())
        throw parse_error(line_no, "meta needs integer dim and classes");
      dim = meta["dim"].get<Index>();
      classes = meta["classes"].get<int>();
      if (dim < 1 || classes < 1) throw parse_error(line_no, "meta dim/classes must be >= 1");
      continue;
    }
    for (const auto& [key, _] : rec.items())
      if (key != "label" && key != "x" && key != "dbg" && key != "gen_meta")
        throw parse_error(line_no, "unknown key '" + key + "'");
    if (!rec.contains("label") || !rec["label"].is_number_integer())
      throw parse_error(line_no, "label must be an integer");
    if (!rec.contains("x") || !rec["x"].is_array())
      throw parse_error(line_no, "x must be an array");
    const json& x = rec["x"];
    if (static_cast<Index>(x.size()) != dim)
      throw parse_error(line_no, "x has " + std::to_string(x.size()) + " entries, expected " +
                                     std::to_string(dim));
    std::vector<double> row;
    row.reserve(dim);
    for (const json& v : x) {
      if (!v.is_number()) throw parse_error(line_no, "x entries must be numbers");
      row.push_back(v.get<double>());
    }
    rows.push_back(std::move(row));
    labels.push_back(rec["label"].get<int>());
    const bool g = rec.contains("dbg") && rec["dbg"].is_boolean() && rec["dbg"].get<bool>();
    any_generated = any_generated || g;
    generated.push_back(g);
  }
  if (dim < 0) throw Error(ErrorKind::Parse, path.string() + ": empty file");

  LabeledDataset ds;
  ds.features.resize(static_cast<Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (Index j = 0; j < dim; ++j) ds.features(static_cast<Index>(i), j) = rows[i][j];
  ds.labels = std::move(labels);
  ds.class_counts.assign(classes, 0);
  for (int y : ds.labels)
    if (y >= 0 && y < classes) ++ds.class_counts[y];
  if (any_generated) ds.generated = std::move(generated);
  ds.validate();
  return ds;
}

}  // namespace blab
