#include "blab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace blab {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

[[noreturn]] void config_error(const std::string& path, const std::string& what) {
  throw Error(ErrorKind::Config, path + ": " + what);
}

// Walks one JSON object, remembering which keys were consumed so that
// leftovers can be reported as unknown.
class Block {
 public:
  Block(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) config_error(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string key_path(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void read(const std::string& key, int& out) {
    if (const json* v = find(key)) out = as_int(*v, key_path(key));
  }
  void read(const std::string& key, std::uint64_t& out) {
    if (const json* v = find(key)) out = as_u64(*v, key_path(key));
  }
  void read(const std::string& key, double& out) {
    if (const json* v = find(key)) out = as_double(*v, key_path(key));
  }
  void read(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) config_error(key_path(key), "expected a boolean");
      out = v->get<bool>();
    }
  }
  void read(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) config_error(key_path(key), "expected a string");
      out = v->get<std::string>();
    }
  }
  void read(const std::string& key, std::optional<double>& out) {
    if (const json* v = find(key)) {
      if (v->is_null()) out.reset();
      else out = as_double(*v, key_path(key));
    }
  }
  void read(const std::string& key, std::optional<int>& out) {
    if (const json* v = find(key)) {
      if (v->is_null()) out.reset();
      else out = as_int(*v, key_path(key));
    }
  }
  template <typename T>
  void read(const std::string& key, std::vector<T>& out) {
    const json* v = find(key);
    if (!v) return;
    const std::string p = key_path(key);
    if (!v->is_array()) config_error(p, "expected an array");
    out.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      const std::string ip = p + "[" + std::to_string(i) + "]";
      if constexpr (std::is_same_v<T, int>) out.push_back(as_int((*v)[i], ip));
      else if constexpr (std::is_same_v<T, double>) out.push_back(as_double((*v)[i], ip));
      else out.push_back(as_u64((*v)[i], ip));
    }
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) config_error(key_path(item.key()), "unknown key");
  }

  static int as_int(const json& v, const std::string& path) {
    if (!v.is_number_integer()) config_error(path, "expected an integer");
    const auto x = v.get<std::int64_t>();
    if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
      config_error(path, "integer out of range");
    return static_cast<int>(x);
  }
  static std::uint64_t as_u64(const json& v, const std::string& path) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
      return static_cast<std::uint64_t>(v.get<std::int64_t>());
    config_error(path, "expected a non-negative integer");
  }
  // Numbers, plus the strings "inf" / "-inf" for unbounded filter ratios.
  static double as_double(const json& v, const std::string& path) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
      const auto s = v.get<std::string>();
      if (s == "inf") return std::numeric_limits<double>::infinity();
      if (s == "-inf") return -std::numeric_limits<double>::infinity();
    }
    config_error(path, "expected a number");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

ordered_json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

// Re-raises a module validation failure as a config error for `block`.
template <typename F>
void validate_block(const std::string& block, F&& check) {
  try {
    check();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Config) throw;
    config_error(block, e.what());
  }
}

void check(bool cond, const std::string& path, const std::string& what) {
  if (!cond) config_error(path, what);
}

void validate(const ExperimentConfig& cfg) {
  const LongTailParams& p = cfg.dataset.params;
  check(p.classes >= 2, "dataset.classes", "must be >= 2");
  check(p.dim >= 1, "dataset.dim", "must be >= 1");
  check(p.n_max >= 1, "dataset.n_max", "must be >= 1");
  check(p.ratio >= 1.0 && std::isfinite(p.ratio), "dataset.ratio", "must be finite and >= 1");
  check(p.sep > 0.0 && std::isfinite(p.sep), "dataset.sep", "must be finite and > 0");
  check(p.sigma > 0.0 && std::isfinite(p.sigma), "dataset.sigma", "must be finite and > 0");
  check(cfg.dataset.test_per_class >= 2, "dataset.test_per_class", "must be >= 2");
  validate_block("train", [&] { cfg.train.validate(); });
  check(cfg.diffusion.T >= 10 && cfg.diffusion.T % 10 == 0, "diffusion.T",
        "must be a positive multiple of 10");
  check(cfg.diffusion.beta_start.has_value() == cfg.diffusion.beta_end.has_value(),
        "diffusion", "beta_start and beta_end must be given together");
  validate_block("diffusion", [&] { (void)cfg.diffusion.schedule(); });
  validate_block("dbg", [&] { cfg.dbg.validate(); });
  check(cfg.metrics.mc_samples >= 1000, "metrics.mc_samples", "must be >= 1000");
  check(!cfg.metrics.lambdas.empty(), "metrics.lambdas", "must not be empty");
  check(cfg.metrics.gen_per_class >= 1, "metrics.gen_per_class", "must be >= 1");
  for (double s : cfg.metrics.guidance_scales)
    check(std::isfinite(s), "metrics.guidance_scales", "entries must be finite");
  check(!cfg.compare.seeds.empty(), "compare.seeds", "must not be empty");
  check(std::isfinite(cfg.compare.h2t_scale), "compare.h2t_scale", "must be finite");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw Error(ErrorKind::Config, "output: cannot create directory " + dir.string());
}

fs::path need(const fs::path& dir, const std::string& name, const std::string& producer) {
  const fs::path p = dir / name;
  if (!fs::exists(p))
    throw Error(ErrorKind::MissingDependency,
                p.string() + " not found (produced by `blab " + producer + "`)");
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << text;
  require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + path.string());
}

Manifest finish_manifest(const std::string& command, const ExperimentConfig& cfg,
                         const fs::path& out, const std::vector<std::string>& files) {
  Manifest m{command, cfg.hash(), cfg.seed, {}};
  ordered_json j;
  j["command"] = command;
  j["config_hash"] = m.config_hash;
  j["seed"] = cfg.seed;
  j["config"] = cfg.to_json();
  j["files"] = ordered_json::array();
  for (const std::string& f : files) {
    const std::string h = file_hash(out / f);
    m.files.emplace_back(f, h);
    j["files"].push_back({{"path", f}, {"fnv1a64", h}});
  }
  write_text(out / (command + ".manifest.json"), j.dump(2) + "\n");
  return m;
}

std::vector<int> uniform_counts(int classes, int n) { return std::vector<int>(classes, n); }

// Every head class other than c. A head-only split (C < 3 leaves no head
// peers for a head target) falls back to all other classes.
std::vector<int> disturbing_classes(const GroupSplit& groups, int c) {
  std::vector<int> out;
  for (int h : groups.head)
    if (h != c) out.push_back(h);
  if (out.empty()) {
    for (const auto* g : {&groups.head, &groups.med, &groups.tail})
      for (int k : *g)
        if (k != c) out.push_back(k);
    std::sort(out.begin(), out.end());
  }
  return out;
}

ArmResult score_arm(const std::string& name, const Classifier& clf, const LabeledDataset& test,
                    const GroupSplit& groups, const ExperimentConfig& cfg) {
  ArmResult r;
  r.arm = name;
  r.head = accuracy(clf, test, groups.head);
  r.med = groups.med.empty() ? 0.0 : accuracy(clf, test, groups.med);
  r.tail = accuracy(clf, test, groups.tail);
  r.overall = accuracy(clf, test);
  r.overlap = overlap_matrix(test.features, test.labels, test.num_classes(), &clf,
                             cfg.metrics.mc_samples, derive_seed(cfg.seed, {stream::kOverlap}),
                             cfg.metrics.estimator);
  r.outliers = outlier_rate(batch_features(clf, test.features), test.labels, test.num_classes(),
                            cfg.metrics.lambdas, groups);
  return r;
}

LabeledDataset head_to_tail(const LabeledDataset& data, const MixtureSpec& spec,
                            const GroupSplit& groups, const ExperimentConfig& cfg) {
  const GmmScoreModel model(spec);
  const NoiseSchedule schedule = cfg.diffusion.schedule();
  const int n_max = *std::max_element(data.class_counts.begin(), data.class_counts.end());
  Matrix X = data.features;
  std::vector<int> labels = data.labels;
  std::vector<bool> generated(data.size(), false);
  std::size_t turn = 0;
  for (int c : groups.tail) {
    const int extra = n_max - data.class_counts[c];
    if (extra <= 0) continue;
    GuidanceConfig g;
    g.mode = GuidanceMode::Modified;
    g.s = cfg.compare.h2t_scale;
    g.y_target = c;
    g.y_disturb = groups.head[turn++ % groups.head.size()];
    const Matrix draws = sample_batch(model, schedule, g,
                                      derive_seed(cfg.seed, {stream::kHeadToTail,
                                                             static_cast<std::uint64_t>(c)}),
                                      extra);
    Matrix grown(X.rows() + extra, X.cols());
    grown << X, draws;
    X = std::move(grown);
    labels.insert(labels.end(), extra, c);
    generated.insert(generated.end(), extra, true);
  }
  LabeledDataset out = LabeledDataset::from_rows(std::move(X), std::move(labels), data.num_classes());
  out.generated = std::move(generated);
  return out;
}

std::string dbg_summary_json(const DbgSummary& s, const ExperimentConfig& cfg) {
  ordered_json j;
  j["candidates"] = s.candidates;
  j["accepted"] = s.accepted;
  j["rejected_proto_near"] = s.rejected_proto_near;
  j["rejected_proto_far"] = s.rejected_proto_far;
  j["rejected_confcred"] = s.rejected_confcred;
  j["acceptance_rate"] = s.acceptance_rate();
  j["accepted_per_class"] = s.accepted_per_class;
  j["config"] = cfg.to_json()["dbg"];
  return j.dump(2) + "\n";
}

}  // namespace

NoiseSchedule DiffusionBlock::schedule() const {
  if (beta_start && beta_end) return linear_schedule(T, *beta_start, *beta_end);
  return default_schedule(T);
}

void ExperimentConfig::reseed(std::uint64_t s) {
  seed = s;
  dataset.params.seed = derive_seed(s, {stream::kDataset});
  train.seed = derive_seed(s, {stream::kTrain});
  dbg.seed = derive_seed(s, {stream::kDbg});
}

ordered_json ExperimentConfig::to_json() const {
  ordered_json j;
  j["seed"] = seed;
  const LongTailParams& p = dataset.params;
  j["dataset"] = {{"classes", p.classes}, {"dim", p.dim},   {"n_max", p.n_max},
                  {"ratio", p.ratio},     {"sep", p.sep},   {"sigma", p.sigma},
                  {"test_per_class", dataset.test_per_class}};
  j["train"] = {{"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"learning_rate", train.learning_rate},
                {"lr_decay_epochs", train.lr_decay_epochs},
                {"tau", train.tau},
                {"hidden", train.hidden}};
  j["diffusion"] = {{"T", diffusion.T}};
  if (diffusion.beta_start) {
    j["diffusion"]["beta_start"] = *diffusion.beta_start;
    j["diffusion"]["beta_end"] = *diffusion.beta_end;
  }
  j["dbg"] = {{"w", dbg.w},
              {"s", dbg.s},
              {"l", number_or_inf(dbg.l)},
              {"h", number_or_inf(dbg.h)},
              {"a_max", dbg.a_max},
              {"a_min", dbg.a_min},
              {"per_sample_count", dbg.per_sample_count},
              {"tail_oversample", dbg.tail_oversample}};
  if (dbg.noising_steps) j["dbg"]["noising_steps"] = *dbg.noising_steps;
  if (dbg.fixed_threshold) j["dbg"]["fixed_threshold"] = *dbg.fixed_threshold;
  j["metrics"] = {{"mc_samples", metrics.mc_samples},
                  {"lambdas", metrics.lambdas},
                  {"estimator", metrics.estimator == OverlapEstimator::ImportanceSampled
                                    ? "importance"
                                    : "pooled"},
                  {"gen_per_class", metrics.gen_per_class},
                  {"guidance_scales", metrics.guidance_scales}};
  j["compare"] = {{"seeds", compare.seeds}, {"h2t_scale", compare.h2t_scale}};
  return j;
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a64(to_json().dump())); }

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig cfg;
  Block root(j, "");
  std::uint64_t seed = 0;
  root.read("seed", seed);
  std::string output = cfg.output.string();
  root.read("output", output);
  cfg.output = output;

  if (const json* d = root.find("dataset")) {
    Block b(*d, "dataset");
    LongTailParams& p = cfg.dataset.params;
    b.read("classes", p.classes);
    b.read("dim", p.dim);
    b.read("n_max", p.n_max);
    b.read("ratio", p.ratio);
    b.read("sep", p.sep);
    b.read("sigma", p.sigma);
    b.read("test_per_class", cfg.dataset.test_per_class);
    b.finish();
  }
  if (const json* t = root.find("train")) {
    Block b(*t, "train");
    b.read("epochs", cfg.train.epochs);
    b.read("batch_size", cfg.train.batch_size);
    b.read("learning_rate", cfg.train.learning_rate);
    b.read("lr_decay_epochs", cfg.train.lr_decay_epochs);
    b.read("tau", cfg.train.tau);
    b.read("hidden", cfg.train.hidden);
    b.finish();
  }
  if (const json* t = root.find("diffusion")) {
    Block b(*t, "diffusion");
    b.read("T", cfg.diffusion.T);
    b.read("beta_start", cfg.diffusion.beta_start);
    b.read("beta_end", cfg.diffusion.beta_end);
    b.finish();
  }
  if (const json* t = root.find("dbg")) {
    Block b(*t, "dbg");
    b.read("w", cfg.dbg.w);
    b.read("s", cfg.dbg.s);
    b.read("l", cfg.dbg.l);
    b.read("h", cfg.dbg.h);
    b.read("a_max", cfg.dbg.a_max);
    b.read("a_min", cfg.dbg.a_min);
    b.read("per_sample_count", cfg.dbg.per_sample_count);
    b.read("tail_oversample", cfg.dbg.tail_oversample);
    b.read("noising_steps", cfg.dbg.noising_steps);
    b.read("fixed_threshold", cfg.dbg.fixed_threshold);
    b.finish();
  }
  if (const json* t = root.find("metrics")) {
    Block b(*t, "metrics");
    int m = static_cast<int>(cfg.metrics.mc_samples);
    b.read("mc_samples", m);
    cfg.metrics.mc_samples = m;
    b.read("lambdas", cfg.metrics.lambdas);
    std::string estimator = "importance";
    b.read("estimator", estimator);
    if (estimator == "importance") cfg.metrics.estimator = OverlapEstimator::ImportanceSampled;
    else if (estimator == "pooled") cfg.metrics.estimator = OverlapEstimator::PooledFeatures;
    else config_error("metrics.estimator", "expected \"importance\" or \"pooled\"");
    b.read("gen_per_class", cfg.metrics.gen_per_class);
    b.read("guidance_scales", cfg.metrics.guidance_scales);
    b.finish();
  }
  if (const json* t = root.find("compare")) {
    Block b(*t, "compare");
    b.read("seeds", cfg.compare.seeds);
    b.read("h2t_scale", cfg.compare.h2t_scale);
    b.finish();
  }
  root.finish();
  cfg.reseed(seed);
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Config, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::Config, path.string() + ": " + e.what());
  }
  return parse_config(j);
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a64(ss.str()));
}

void save_mixture(const MixtureSpec& spec, const fs::path& path) {
  ordered_json j;
  j["classes"] = spec.num_classes();
  j["dim"] = spec.dim();
  j["component_scale"] = spec.component_scale;
  j["priors"] = std::vector<double>(spec.priors.data(), spec.priors.data() + spec.priors.size());
  j["means"] = ordered_json::array();
  for (Index c = 0; c < spec.component_means.rows(); ++c) {
    const RowVector row = spec.component_means.row(c);
    j["means"].push_back(std::vector<double>(row.data(), row.data() + row.size()));
  }
  write_text(path, j.dump() + "\n");
}

MixtureSpec load_mixture(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  MixtureSpec spec;
  try {
    const json j = json::parse(in);
    const int C = j.at("classes").get<int>();
    const int d = j.at("dim").get<int>();
    spec.component_scale = j.at("component_scale").get<double>();
    const auto priors = j.at("priors").get<std::vector<double>>();
    const auto means = j.at("means").get<std::vector<std::vector<double>>>();
    require(static_cast<int>(priors.size()) == C && static_cast<int>(means.size()) == C,
            ErrorKind::Parse, path.string() + ": class count mismatch");
    spec.priors = Eigen::Map<const Vector>(priors.data(), C);
    spec.component_means.resize(C, d);
    for (int c = 0; c < C; ++c) {
      require(static_cast<int>(means[c].size()) == d, ErrorKind::Parse,
              path.string() + ": mean " + std::to_string(c) + " has wrong length");
      spec.component_means.row(c) = Eigen::Map<const RowVector>(means[c].data(), d);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
  spec.validate();
  return spec;
}

const ArmResult& SeedComparison::arm(const std::string& name) const {
  for (const ArmResult& a : arms)
    if (a.arm == name) return a;
  throw Error(ErrorKind::InvalidArgument, "no arm named " + name);
}

Classifier train_balanced(const ExperimentConfig& cfg, const MixtureSpec& spec) {
  const LabeledDataset balanced =
      sample_mixture(spec, uniform_counts(spec.num_classes(), cfg.dataset.params.n_max),
                     derive_seed(cfg.seed, {stream::kBalanced}));
  return train(balanced, cfg.train);
}

ConfidenceReport confidence_report(const ExperimentConfig& cfg, const MixtureSpec& spec,
                                   const std::vector<int>& class_counts,
                                   const Classifier& balanced_clf) {
  const GroupSplit groups = split_groups(class_counts);
  const GmmScoreModel model(spec);
  const NoiseSchedule schedule = cfg.diffusion.schedule();
  std::vector<GeneratedSet> sets;
  for (std::size_t k = 0; k < cfg.metrics.guidance_scales.size(); ++k) {
    const double s = cfg.metrics.guidance_scales[k];
    for (int c = 0; c < spec.num_classes(); ++c) {
      // Both modes start from the same x_T, so the comparison is paired.
      const std::uint64_t seed =
          derive_seed(cfg.seed, {stream::kGeneration, k, static_cast<std::uint64_t>(c)});
      GuidanceConfig g;
      g.s = s;
      g.y_target = c;
      sets.push_back({GuidanceMode::Standard, s, c, std::nullopt,
                      sample_batch(model, schedule, g, seed, cfg.metrics.gen_per_class)});
      g.mode = GuidanceMode::Modified;
      for (int h : disturbing_classes(groups, c)) {
        g.y_disturb = h;
        sets.push_back({GuidanceMode::Modified, s, c, h,
                        sample_batch(model, schedule, g, seed, cfg.metrics.gen_per_class)});
      }
    }
  }
  return generation_confidence(balanced_clf, sets, groups);
}

SeedComparison compare_seed(const ExperimentConfig& cfg) {
  SeedComparison out;
  out.seed = cfg.seed;
  const auto [data, spec] = make_longtail_mixture(cfg.dataset.params);
  const int C = spec.num_classes();
  const LabeledDataset test = sample_mixture(spec, uniform_counts(C, cfg.dataset.test_per_class),
                                             derive_seed(cfg.seed, {stream::kTest}));
  const GroupSplit groups = split_groups(data);

  const Classifier balanced = train_balanced(cfg, spec);
  const Classifier arm_a = train(data, cfg.train);
  const Classifier arm_b = train(head_to_tail(data, spec, groups, cfg), cfg.train);
  const DbgResult dbg =
      run_dbg(data, arm_a, GmmScoreModel(spec), cfg.diffusion.schedule(), cfg.dbg);
  const Classifier arm_c = train(dbg.augmented, cfg.train);
  out.dbg = dbg.summary;
  out.dbg_records = dbg.records;

  out.arms.push_back(score_arm("balanced", balanced, test, groups, cfg));
  out.arms.push_back(score_arm("A", arm_a, test, groups, cfg));
  out.arms.push_back(score_arm("B", arm_b, test, groups, cfg));
  out.arms.push_back(score_arm("C", arm_c, test, groups, cfg));
  return out;
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  Manifest m;
  try {
    const json j = json::parse(in);
    m.command = j.at("command").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const json& f : j.at("files"))
      m.files.emplace_back(f.at("path").get<std::string>(), f.at("fnv1a64").get<std::string>());
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
  return m;
}

Manifest cmd_gen(const ExperimentConfig& cfg, const fs::path& out) {
  ensure_dir(out);
  const auto [data, spec] = make_longtail_mixture(cfg.dataset.params);
  const LabeledDataset test =
      sample_mixture(spec, uniform_counts(spec.num_classes(), cfg.dataset.test_per_class),
                     derive_seed(cfg.seed, {stream::kTest}));
  save_dataset(data, out / "train.jsonl");
  save_dataset(test, out / "test.jsonl");
  save_mixture(spec, out / "mixture.json");
  return finish_manifest("gen", cfg, out, {"train.jsonl", "test.jsonl", "mixture.json"});
}

Manifest cmd_train(const ExperimentConfig& cfg, const fs::path& out) {
  const LabeledDataset data = load_dataset(need(out, "train.jsonl", "gen"));
  const Classifier clf = train(data, cfg.train);
  save_classifier(clf, out / "classifier.json");
  return finish_manifest("train", cfg, out, {"classifier.json"});
}

Manifest cmd_metrics(const ExperimentConfig& cfg, const fs::path& out) {
  const fs::path train_path = need(out, "train.jsonl", "gen");
  const fs::path test_path = need(out, "test.jsonl", "gen");
  const fs::path mixture_path = need(out, "mixture.json", "gen");
  const fs::path clf_path = need(out, "classifier.json", "train");
  const LabeledDataset data = load_dataset(train_path);
  const LabeledDataset test = load_dataset(test_path);
  const MixtureSpec spec = load_mixture(mixture_path);
  const Classifier clf = load_classifier(clf_path);
  const GroupSplit groups = split_groups(data);

  const ArmResult scored = score_arm("A", clf, test, groups, cfg);
  write_overlap_csv(scored.overlap, out / "overlap.csv");
  write_outlier_csv(scored.outliers, out / "outliers.csv");

  const Classifier balanced = train_balanced(cfg, spec);
  save_classifier(balanced, out / "balanced_classifier.json");
  write_confidence_csv(confidence_report(cfg, spec, data.class_counts, balanced),
                       out / "confidence.csv");

  ordered_json summary;
  summary["accuracy"] = {{"head", scored.head},
                         {"med", scored.med},
                         {"tail", scored.tail},
                         {"overall", scored.overall}};
  summary["overlap_offdiag_mean"] = scored.overlap.offdiag_mean();
  summary["overlap_dropped_rows"] = scored.overlap.dropped_rows;
  summary["outlier_rate"] = {{"head", scored.outliers.groups.head},
                             {"med", scored.outliers.groups.med},
                             {"tail", scored.outliers.groups.tail},
                             {"overall", scored.outliers.groups.overall}};
  write_text(out / "metrics.json", summary.dump(2) + "\n");

  std::vector<std::string> files{"overlap.csv", "outliers.csv", "balanced_classifier.json",
                                 "confidence.csv", "metrics.json"};
  if (test.dim() == 2) {
    std::ostringstream csv;
    csv << "x0,x1,label,predicted\n";
    const std::vector<int> pred = predict(clf, test.features);
    for (Index i = 0; i < test.size(); ++i)
      csv << format_double(test.features(i, 0)) << ',' << format_double(test.features(i, 1)) << ','
          << test.labels[i] << ',' << pred[i] << '\n';
    write_text(out / "scatter.csv", csv.str());
    files.push_back("scatter.csv");
  }
  return finish_manifest("metrics", cfg, out, files);
}

Manifest cmd_dbg(const ExperimentConfig& cfg, const fs::path& out) {
  const LabeledDataset data = load_dataset(need(out, "train.jsonl", "gen"));
  const MixtureSpec spec = load_mixture(need(out, "mixture.json", "gen"));
  const Classifier clf = load_classifier(need(out, "classifier.json", "train"));
  const DbgResult r = run_dbg(data, clf, GmmScoreModel(spec), cfg.diffusion.schedule(), cfg.dbg);
  write_records(r.records, out / "records.jsonl");
  write_text(out / "summary.json", dbg_summary_json(r.summary, cfg));
  save_dataset(r.augmented, out / "augmented.jsonl");
  return finish_manifest("dbg", cfg, out, {"records.jsonl", "summary.json", "augmented.jsonl"});
}

Manifest cmd_compare(const ExperimentConfig& cfg, const fs::path& out) {
  ensure_dir(out);
  std::vector<std::string> files;
  std::ostringstream table, dbg_table;
  table << "seed,arm,head_acc,med_acc,tail_acc,overall_acc,overlap_mean,outlier_overall,"
           "outlier_tail\n";
  dbg_table << "seed,candidates,accepted,rejected_proto_near,rejected_proto_far,"
               "rejected_confcred\n";
  std::vector<SeedComparison> runs;
  for (std::uint64_t seed : cfg.compare.seeds) {
    ExperimentConfig c = cfg;
    c.reseed(seed);
    runs.push_back(compare_seed(c));
    const SeedComparison& run = runs.back();
    const std::string dir = "seed_" + std::to_string(seed);
    ensure_dir(out / dir);
    for (const ArmResult& a : run.arms) {
      table << seed << ',' << a.arm << ',' << format_double(a.head) << ',' << format_double(a.med)
            << ',' << format_double(a.tail) << ',' << format_double(a.overall) << ','
            << format_double(a.overlap.offdiag_mean()) << ','
            << format_double(a.outliers.groups.overall) << ','
            << format_double(a.outliers.groups.tail) << '\n';
      const std::string ov = dir + "/" + a.arm + "_overlap.csv";
      const std::string ol = dir + "/" + a.arm + "_outliers.csv";
      write_overlap_csv(a.overlap, out / ov);
      write_outlier_csv(a.outliers, out / ol);
      files.push_back(ov);
      files.push_back(ol);
    }
    dbg_table << seed << ',' << run.dbg.candidates << ',' << run.dbg.accepted << ','
              << run.dbg.rejected_proto_near << ',' << run.dbg.rejected_proto_far << ','
              << run.dbg.rejected_confcred << '\n';
  }
  // Per-arm means over seeds.
  for (const ArmResult& first : runs.front().arms) {
    double head = 0, med = 0, tail = 0, overall = 0, ov = 0, oo = 0, ot = 0;
    for (const SeedComparison& run : runs) {
      const ArmResult& a = run.arm(first.arm);
      head += a.head;
      med += a.med;
      tail += a.tail;
      overall += a.overall;
      ov += a.overlap.offdiag_mean();
      oo += a.outliers.groups.overall;
      ot += a.outliers.groups.tail;
    }
    const double n = static_cast<double>(runs.size());
    table << "mean," << first.arm << ',' << format_double(head / n) << ','
          << format_double(med / n) << ',' << format_double(tail / n) << ','
          << format_double(overall / n) << ',' << format_double(ov / n) << ','
          << format_double(oo / n) << ',' << format_double(ot / n) << '\n';
  }
  write_text(out / "compare.csv", table.str());
  write_text(out / "compare_dbg.csv", dbg_table.str());
  files.insert(files.begin(), {"compare.csv", "compare_dbg.csv"});
  return finish_manifest("compare", cfg, out, files);
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return 2;
    case ErrorKind::MissingDependency: return 3;
    case ErrorKind::NumericDivergence: return 4;
    default: return 1;
  }
}

}  // namespace blab
