#include "blab/dbg.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace blab {

void DbgConfig::validate() const {
  require(w >= 1.0 && std::isfinite(w), ErrorKind::InvalidArgument, "w >= 1");
  require(std::isfinite(s), ErrorKind::InvalidArgument, "s finite");
  require(l >= 0.0 && h >= 0.0, ErrorKind::InvalidArgument, "l, h >= 0");
  require(0.0 <= a_min && a_min <= a_max && a_max <= 1.0, ErrorKind::InvalidArgument,
          "0 <= a_min <= a_max <= 1");
  require(per_sample_count >= 1, ErrorKind::InvalidArgument, "per_sample_count >= 1");
  if (noising_steps) require(*noising_steps >= 0, ErrorKind::InvalidArgument, "noising_steps >= 0");
  if (fixed_threshold)
    require(*fixed_threshold >= 0.0 && *fixed_threshold <= 1.0, ErrorKind::InvalidArgument,
            "fixed_threshold in [0, 1]");
}

PrototypeBank build_prototypes(const Classifier& clf, const LabeledDataset& dataset) {
  const int C = dataset.num_classes();
  require(clf.num_classes() == C, ErrorKind::DimensionMismatch, "classifier/dataset class count");
  const Matrix phi = batch_features(clf, dataset.features);
  std::vector<std::vector<Index>> rows(C);
  for (Index i = 0; i < dataset.size(); ++i)
    if (phi.row(i).norm() >= 1e-12) rows[dataset.labels[i]].push_back(i);

  PrototypeBank bank;
  for (int c = 0; c < C; ++c) {
    require(!rows[c].empty(), ErrorKind::ZeroResultant,
            "class " + std::to_string(c) + " has no non-zero features");
    Vector mean = Vector::Zero(phi.cols());
    for (Index i : rows[c]) mean += phi.row(i).transpose() / phi.row(i).norm();
    mean /= static_cast<double>(rows[c].size());
    const double norm = mean.norm();
    require(norm >= 1e-12, ErrorKind::ZeroResultant,
            "class " + std::to_string(c) + " prototype has vanishing norm");
    const Vector proto = mean / norm;
    double lo = std::numeric_limits<double>::infinity();
    double hi = 0.0;
    for (Index i : rows[c]) {
      const double dist =
          std::clamp(1.0 - proto.dot(phi.row(i).transpose() / phi.row(i).norm()), 0.0, 2.0);
      lo = std::min(lo, dist);
      hi = std::max(hi, dist);
    }
    bank.prototype.push_back(proto);
    bank.d_low.push_back(lo);
    bank.d_high.push_back(hi);
    bank.count.push_back(static_cast<Index>(rows[c].size()));
  }
  return bank;
}

double prototype_distance(const PrototypeBank& bank, const Classifier& clf,
                          const Eigen::Ref<const Vector>& x, int cls) {
  require(cls >= 0 && cls < bank.num_classes(), ErrorKind::IndexOutOfRange, "prototype class");
  const Vector phi = features(clf, x);
  const double norm = phi.norm();
  if (norm < 1e-12) return 1.0;
  return std::clamp(1.0 - bank.prototype[cls].dot(phi / norm), 0.0, 2.0);
}

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Accepted: return "accepted";
    case Verdict::RejectedProtoNear: return "rejected_proto_near";
    case Verdict::RejectedProtoFar: return "rejected_proto_far";
    case Verdict::RejectedConfCred: return "rejected_confcred";
  }
  return "?";
}

Verdict verdict_from_string(const std::string& s) {
  for (Verdict v : {Verdict::Accepted, Verdict::RejectedProtoNear, Verdict::RejectedProtoFar,
                    Verdict::RejectedConfCred})
    if (s == to_string(v)) return v;
  throw Error(ErrorKind::Parse, "unknown verdict '" + s + "'");
}

ProtoOutcome prototype_distance_filter(const PrototypeBank& bank, int cls, double distance,
                                       double l, double h) {
  require(cls >= 0 && cls < bank.num_classes(), ErrorKind::IndexOutOfRange, "prototype class");
  const double inf = std::numeric_limits<double>::infinity();
  const double lower = std::isinf(l) ? -inf : (1.0 - l) * bank.d_low[cls];
  const double upper = std::isinf(h) ? inf : (1.0 + h) * bank.d_high[cls];
  if (distance < lower) return ProtoOutcome::Near;
  if (distance > upper) return ProtoOutcome::Far;
  return ProtoOutcome::Inside;
}

std::vector<double> class_thresholds(const std::vector<int>& class_counts, double a_max,
                                     double a_min) {
  const int C = static_cast<int>(class_counts.size());
  std::vector<int> order(C);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return class_counts[a] > class_counts[b]; });
  std::vector<double> a(C, a_max);
  for (int rank = 0; rank < C; ++rank)
    a[order[rank]] = C > 1 ? a_max - (a_max - a_min) * rank / (C - 1) : a_max;
  return a;
}

bool confcred_filter(const Classifier& clf, const GenerationRecord& record, double a) {
  const Vector l = logits(clf, record.x_generated);
  const Vector p = softmax(l);
  const std::vector<int> order = topk_confusable(l, 2, std::nullopt);
  const int predicted = order[0];
  if (predicted == record.y_source || predicted == record.y_target) return true;
  const double top = p(predicted);
  const double cred = credibility_from_probs(p, order[1]);
  return !(top > a && cred > a);
}

int select_target_label(const Classifier& clf, const Eigen::Ref<const Vector>& x0, int y0, int C,
                        double w) {
  require(w > 0.0, ErrorKind::InvalidArgument, "w > 0");
  const int k = static_cast<int>(std::floor(C / w));
  require(k >= 1, ErrorKind::InvalidArgument,
          "k = floor(C / w) = " + std::to_string(k) + " must be >= 1");
  require(C == clf.num_classes(), ErrorKind::DimensionMismatch, "C does not match classifier");
  const Vector l = logits(clf, x0);
  const std::vector<int> candidates = topk_confusable(l, std::min(k, C - 1), y0);
  int best = candidates.front();
  for (int c : candidates)
    if (l(c) > l(best) || (l(c) == l(best) && c < best)) best = c;
  return best;
}

NoisingResult conditional_noising(const GmmScoreModel& model, const NoiseSchedule& schedule,
                                  const Eigen::Ref<const Vector>& x0, int y_sl, std::uint64_t seed,
                                  std::optional<int> steps) {
  const int T = schedule.horizon();
  require(T % 10 == 0, ErrorKind::InvalidArgument, "conditional noising needs T divisible by 10");
  require(x0.size() == model.dim(), ErrorKind::DimensionMismatch, "conditional_noising: x0");
  const int m = T / 2;
  const int K = steps.value_or(T / 10);
  require(K >= 0, ErrorKind::InvalidArgument, "noising steps >= 0");
  require(m + K <= T, ErrorKind::TimestepOutOfRange,
          "m + K = " + std::to_string(m + K) + " exceeds T = " + std::to_string(T));
  Rng rng(seed);
  const Vector eps_r = standard_normal(rng, model.dim());
  NoisingResult out{forward_noise(Vector(x0), m, eps_r, schedule), m};
  for (int t = m; t < m + K; ++t) {
    const Vector eps_c = model.predict_noise(out.x, y_sl, t, schedule);
    const Vector x0_hat = denoise_step(out.x, t, eps_c, schedule).first;
    out.x = forward_noise(x0_hat, t + 1, eps_c, schedule);
    out.t = t + 1;
  }
  return out;
}

Vector conditional_denoising(const GmmScoreModel& model, const NoiseSchedule& schedule,
                             const Eigen::Ref<const Vector>& x_noised, int start, int y_target,
                             double s) {
  require(start >= 1 && start <= schedule.horizon(), ErrorKind::TimestepOutOfRange,
          "denoising start index");
  Vector x = x_noised;
  Vector x0_hat = x;
  for (int t = start; t >= 1; --t) {
    const Vector eps = cfg_combine(model.predict_noise(x, std::nullopt, t, schedule),
                                   model.predict_noise(x, y_target, t, schedule), s);
    auto [x0, prev] = denoise_step(x, t, eps, schedule);
    x0_hat = std::move(x0);
    x = std::move(prev);
  }
  return x0_hat;
}

Verdict filter_record(const PrototypeBank& bank, const Classifier& clf,
                      const GenerationRecord& record, double a, const DbgConfig& cfg) {
  const double dist = prototype_distance(bank, clf, record.x_generated, record.y_target);
  switch (prototype_distance_filter(bank, record.y_target, dist, cfg.l, cfg.h)) {
    case ProtoOutcome::Near: return Verdict::RejectedProtoNear;
    case ProtoOutcome::Far: return Verdict::RejectedProtoFar;
    case ProtoOutcome::Inside: break;
  }
  return confcred_filter(clf, record, a) ? Verdict::Accepted : Verdict::RejectedConfCred;
}

DbgSummary summarize(const std::vector<GenerationRecord>& records, int num_classes) {
  DbgSummary s;
  s.accepted_per_class.assign(num_classes, 0);
  for (const GenerationRecord& r : records) {
    ++s.candidates;
    switch (r.verdict) {
      case Verdict::Accepted:
        ++s.accepted;
        ++s.accepted_per_class[r.y_target];
        break;
      case Verdict::RejectedProtoNear: ++s.rejected_proto_near; break;
      case Verdict::RejectedProtoFar: ++s.rejected_proto_far; break;
      case Verdict::RejectedConfCred: ++s.rejected_confcred; break;
    }
  }
  return s;
}

DbgResult run_dbg(const LabeledDataset& dataset, const Classifier& clf, const GmmScoreModel& model,
                  const NoiseSchedule& schedule, const DbgConfig& cfg) {
  cfg.validate();
  dataset.validate();
  const int C = dataset.num_classes();
  require(model.num_classes() == C && clf.num_classes() == C, ErrorKind::DimensionMismatch,
          "run_dbg: class counts disagree");
  require(model.dim() == dataset.dim() && clf.input_dim() == dataset.dim(),
          ErrorKind::DimensionMismatch, "run_dbg: dimensions disagree");

  const PrototypeBank bank = build_prototypes(clf, dataset);
  const std::vector<double> thresholds = class_thresholds(dataset.class_counts, cfg.a_max, cfg.a_min);
  const int n_max = *std::max_element(dataset.class_counts.begin(), dataset.class_counts.end());

  // Candidate slots in canonical order (source index, candidate index).
  std::vector<std::pair<Index, int>> slots;
  for (Index i = 0; i < dataset.size(); ++i) {
    int count = cfg.per_sample_count;
    if (cfg.tail_oversample) {
      const double ratio = static_cast<double>(n_max) / dataset.class_counts[dataset.labels[i]];
      count *= std::clamp(static_cast<int>(std::lround(ratio)), 1, 10);
    }
    for (int j = 0; j < count; ++j) slots.emplace_back(i, j);
  }

  std::vector<GenerationRecord> records(slots.size());
  parallel_for(slots.size(), [&](std::size_t k) {
    const auto [i, j] = slots[k];
    GenerationRecord& r = records[k];
    r.source_index = i;
    r.candidate = j;
    r.x_source = dataset.features.row(i).transpose();
    r.y_source = dataset.labels[i];
    r.y_target = select_target_label(clf, r.x_source, r.y_source, C, cfg.w);
    const NoisingResult noised =
        conditional_noising(model, schedule, r.x_source, r.y_source,
                            derive_seed(cfg.seed, {static_cast<std::uint64_t>(i),
                                                   static_cast<std::uint64_t>(j)}),
                            cfg.noising_steps);
    r.x_generated = conditional_denoising(model, schedule, noised.x, noised.t, r.y_target, cfg.s);

    const Vector l = logits(clf, r.x_generated);
    const Vector p = softmax(l);
    const std::vector<int> order = topk_confusable(l, 2, std::nullopt);
    r.predicted_class = order[0];
    r.top_prob = p(order[0]);
    r.conf = l(r.y_target);
    r.cred = credibility_from_probs(p, order[1]);
    r.proto_distance = prototype_distance(bank, clf, r.x_generated, r.y_target);
    r.threshold = cfg.fixed_threshold.value_or(thresholds[r.y_target]);
    r.verdict = filter_record(bank, clf, r, r.threshold, cfg);
  });

  DbgResult result;
  result.records = std::move(records);
  result.summary = summarize(result.records, C);

  const Index extra = result.summary.accepted;
  Matrix X(dataset.size() + extra, dataset.dim());
  X.topRows(dataset.size()) = dataset.features;
  std::vector<int> labels = dataset.labels;
  std::vector<bool> generated(dataset.size(), false);
  if (!dataset.generated.empty()) generated = dataset.generated;
  Index row = dataset.size();
  for (const GenerationRecord& r : result.records) {
    if (r.verdict != Verdict::Accepted) continue;
    X.row(row++) = r.x_generated.transpose();
    labels.push_back(r.y_target);
    generated.push_back(true);
  }
  result.augmented = LabeledDataset::from_rows(std::move(X), std::move(labels), C);
  result.augmented.generated = std::move(generated);
  result.augmented.validate();
  return result;
}

namespace {

std::string vector_json(const Vector& v) {
  std::string s = "[";
  for (Index i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += format_double(v(i));
  }
  return s + "]";
}

}  // namespace

void write_records(const std::vector<GenerationRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path.string() + " for writing");
  for (const GenerationRecord& r : records) {
    out << "{\"source_index\":" << r.source_index << ",\"candidate\":" << r.candidate
        << ",\"y_source\":" << r.y_source << ",\"y_target\":" << r.y_target
        << ",\"x_source\":" << vector_json(r.x_source)
        << ",\"x_generated\":" << vector_json(r.x_generated)
        << ",\"proto_distance\":" << format_double(r.proto_distance)
        << ",\"conf\":" << format_double(r.conf) << ",\"cred\":" << format_double(r.cred)
        << ",\"predicted_class\":" << r.predicted_class
        << ",\"top_prob\":" << format_double(r.top_prob)
        << ",\"threshold\":" << format_double(r.threshold) << ",\"verdict\":\""
        << to_string(r.verdict) << "\"}\n";
  }
}

std::vector<GenerationRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  std::vector<GenerationRecord> out;
  std::string line;
  std::size_t line_no = 0;
  auto to_vec = [](const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size())));
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const nlohmann::json j = nlohmann::json::parse(line);
      GenerationRecord r;
      r.source_index = j.at("source_index").get<Index>();
      r.candidate = j.at("candidate").get<int>();
      r.y_source = j.at("y_source").get<int>();
      r.y_target = j.at("y_target").get<int>();
      r.x_source = to_vec(j.at("x_source"));
      r.x_generated = to_vec(j.at("x_generated"));
      r.proto_distance = j.at("proto_distance").get<double>();
      r.conf = j.at("conf").get<double>();
      r.cred = j.at("cred").get<double>();
      r.predicted_class = j.at("predicted_class").get<int>();
      r.top_prob = j.at("top_prob").get<double>();
      r.threshold = j.at("threshold").get<double>();
      r.verdict = verdict_from_string(j.at("verdict").get<std::string>());
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::Parse, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace blab
