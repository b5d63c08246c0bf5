#include "blab/classifier.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace blab {

namespace {

Matrix row_softmax(const Matrix& L) {
  Matrix P = L;
  for (Index i = 0; i < P.rows(); ++i) {
    const double mx = P.row(i).maxCoeff();
    P.row(i) = (P.row(i).array() - mx).exp();
    P.row(i) /= P.row(i).sum();
  }
  return P;
}

void require_dim(const Classifier& clf, Index d) {
  require(d == clf.input_dim(), ErrorKind::DimensionMismatch,
          "input has dimension " + std::to_string(d) + ", classifier expects " +
              std::to_string(clf.input_dim()));
}

}  // namespace

Classifier Classifier::zeros(Index d, Index hidden, int classes) {
  Classifier clf;
  clf.hidden_weights = Matrix::Zero(d, hidden);
  clf.hidden_bias = Vector::Zero(hidden);
  clf.head_weights = Matrix::Zero(hidden, classes);
  clf.head_bias = Vector::Zero(classes);
  clf.priors = Vector::Constant(classes, 1.0 / classes);
  return clf;
}

void Classifier::validate() const {
  auto check = [](bool cond, const char* what) {
    if (!cond) throw Error(ErrorKind::InvariantViolation, what);
  };
  check(hidden_bias.size() == hidden_weights.cols(), "hidden bias matches hidden width");
  check(head_weights.rows() == hidden_weights.cols(), "head input matches hidden width");
  check(head_bias.size() == head_weights.cols(), "head bias matches class count");
  check(priors.size() == head_weights.cols(), "one prior per class");
  check(hidden_weights.allFinite() && hidden_bias.allFinite() && head_weights.allFinite() &&
            head_bias.allFinite() && priors.allFinite(),
        "parameters finite");
  check(std::abs(priors.sum() - 1.0) <= 1e-9, "priors sum to 1");
}

void TrainConfig::validate() const {
  require(epochs >= 1, ErrorKind::InvalidArgument, "epochs >= 1");
  require(batch_size >= 1, ErrorKind::InvalidArgument, "batch_size >= 1");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorKind::InvalidArgument,
          "learning_rate > 0");
  require(tau >= 0.0 && std::isfinite(tau), ErrorKind::InvalidArgument, "tau >= 0");
  require(hidden >= 1, ErrorKind::InvalidArgument, "hidden >= 1");
}

std::vector<int> TrainConfig::milestones() const {
  if (!lr_decay_epochs.empty()) return lr_decay_epochs;
  return {static_cast<int>(std::lround(0.8 * epochs)), static_cast<int>(std::lround(0.9 * epochs))};
}

LossGradient logit_adjusted_loss(const Classifier& clf, const Eigen::Ref<const Matrix>& X,
                                 const std::vector<int>& labels, double tau) {
  require_dim(clf, X.cols());
  require(static_cast<Index>(labels.size()) == X.rows() && X.rows() > 0,
          ErrorKind::DimensionMismatch, "one label per row");
  const Index b = X.rows();
  const Matrix Z1 = (X * clf.hidden_weights).rowwise() + clf.hidden_bias.transpose();
  const Matrix A = Z1.cwiseMax(0.0);
  const RowVector adjust = (tau * clf.priors.array().log()).matrix().transpose();
  const Matrix L = ((A * clf.head_weights).rowwise() + clf.head_bias.transpose()).rowwise() + adjust;
  Matrix P = row_softmax(L);

  LossGradient g;
  double loss = 0.0;
  for (Index i = 0; i < b; ++i) {
    const int y = labels[i];
    require(y >= 0 && y < clf.num_classes(), ErrorKind::IndexOutOfRange, "label out of range");
    const double mx = L.row(i).maxCoeff();
    const double lse = mx + std::log((L.row(i).array() - mx).exp().sum());
    loss += lse - L(i, y);
    P(i, y) -= 1.0;
  }
  g.loss = loss / static_cast<double>(b);
  const Matrix dL = P / static_cast<double>(b);
  g.d_head_weights = A.transpose() * dL;
  g.d_head_bias = dL.colwise().sum().transpose();
  const Matrix dZ1 = (dL * clf.head_weights.transpose()).cwiseProduct(
      (Z1.array() > 0.0).cast<double>().matrix());
  g.d_hidden_weights = X.transpose() * dZ1;
  g.d_hidden_bias = dZ1.colwise().sum().transpose();
  return g;
}

Classifier train(const LabeledDataset& dataset, const TrainConfig& cfg) {
  cfg.validate();
  dataset.validate();
  const Index n = dataset.size();
  const Index d = dataset.dim();
  const int C = dataset.num_classes();

  Classifier clf = Classifier::zeros(d, cfg.hidden, C);
  for (int c = 0; c < C; ++c) clf.priors(c) = static_cast<double>(dataset.class_counts[c]) / n;

  Rng init_rng(derive_seed(cfg.seed, {0x696e6974}));
  auto fill_uniform = [&](auto& m, double fan_in) {
    std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
    for (Index j = 0; j < m.cols(); ++j)
      for (Index i = 0; i < m.rows(); ++i) m(i, j) = u(init_rng);
  };
  fill_uniform(clf.hidden_weights, static_cast<double>(d));
  fill_uniform(clf.hidden_bias, static_cast<double>(d));
  fill_uniform(clf.head_weights, static_cast<double>(cfg.hidden));
  fill_uniform(clf.head_bias, static_cast<double>(cfg.hidden));

  clf.initial_loss = logit_adjusted_loss(clf, dataset.features, dataset.labels, cfg.tau).loss;

  const std::vector<int> milestones = cfg.milestones();
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index{0});
  double lr = cfg.learning_rate;
  Matrix batch_x;
  std::vector<int> batch_y;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (std::find(milestones.begin(), milestones.end(), epoch) != milestones.end()) lr *= 0.1;
    Rng shuffle_rng(derive_seed(cfg.seed, {0x73687566, static_cast<std::uint64_t>(epoch)}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (Index start = 0; start < n; start += cfg.batch_size) {
      const Index b = std::min<Index>(cfg.batch_size, n - start);
      batch_x.resize(b, d);
      batch_y.resize(b);
      for (Index i = 0; i < b; ++i) {
        batch_x.row(i) = dataset.features.row(order[start + i]);
        batch_y[i] = dataset.labels[order[start + i]];
      }
      const LossGradient g = logit_adjusted_loss(clf, batch_x, batch_y, cfg.tau);
      epoch_loss += g.loss * static_cast<double>(b);
      clf.hidden_weights -= lr * g.d_hidden_weights;
      clf.hidden_bias -= lr * g.d_hidden_bias;
      clf.head_weights -= lr * g.d_head_weights;
      clf.head_bias -= lr * g.d_head_bias;
    }
    if (!std::isfinite(epoch_loss) || !clf.head_weights.allFinite() ||
        !clf.hidden_weights.allFinite())
      throw Error(ErrorKind::NumericDivergence,
                  "training loss became non-finite at epoch " + std::to_string(epoch));
  }
  clf.final_loss = logit_adjusted_loss(clf, dataset.features, dataset.labels, cfg.tau).loss;
  require(std::isfinite(clf.final_loss), ErrorKind::NumericDivergence,
          "final training loss is non-finite");
  clf.trained = true;
  return clf;
}

Vector features(const Classifier& clf, const Eigen::Ref<const Vector>& x) {
  require_dim(clf, x.size());
  return (clf.hidden_weights.transpose() * x + clf.hidden_bias).cwiseMax(0.0);
}

Vector normalized_features(const Classifier& clf, const Eigen::Ref<const Vector>& x) {
  Vector phi = features(clf, x);
  const double norm = phi.norm();
  require(norm >= 1e-12, ErrorKind::ZeroFeatureVector, "feature vector has norm below 1e-12");
  return phi / norm;
}

Vector logits(const Classifier& clf, const Eigen::Ref<const Vector>& x) {
  return clf.head_weights.transpose() * features(clf, x) + clf.head_bias;
}

Vector probabilities(const Classifier& clf, const Eigen::Ref<const Vector>& x) {
  return softmax(logits(clf, x));
}

Matrix batch_features(const Classifier& clf, const Matrix& X) {
  require_dim(clf, X.cols());
  return ((X * clf.hidden_weights).rowwise() + clf.hidden_bias.transpose()).cwiseMax(0.0);
}

Matrix batch_logits(const Classifier& clf, const Matrix& X) {
  return (batch_features(clf, X) * clf.head_weights).rowwise() + clf.head_bias.transpose();
}

std::vector<int> predict(const Classifier& clf, const Matrix& X) {
  const Matrix L = batch_logits(clf, X);
  std::vector<int> out(L.rows());
  for (Index i = 0; i < L.rows(); ++i) out[i] = argmax(L.row(i).transpose());
  return out;
}

Vector softmax(const Eigen::Ref<const Vector>& l) {
  Vector p = (l.array() - l.maxCoeff()).exp();
  return p / p.sum();
}

int argmax(const Eigen::Ref<const Vector>& v) {
  int best = 0;
  for (Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = static_cast<int>(i);
  return best;
}

double confidence(const Classifier& clf, const Eigen::Ref<const Vector>& x, int y_target) {
  require(y_target >= 0 && y_target < clf.num_classes(), ErrorKind::IndexOutOfRange,
          "target class out of range");
  return logits(clf, x)(y_target);
}

double credibility_from_probs(const Eigen::Ref<const Vector>& p, int y_disturb) {
  require(y_disturb >= 0 && y_disturb < p.size(), ErrorKind::IndexOutOfRange,
          "disturbing class out of range");
  return std::clamp(p.maxCoeff() - p(y_disturb), 0.0, 1.0);
}

double credibility(const Classifier& clf, const Eigen::Ref<const Vector>& x, int y_disturb) {
  require(y_disturb >= 0 && y_disturb < clf.num_classes(), ErrorKind::IndexOutOfRange,
          "disturbing class out of range");
  return credibility_from_probs(probabilities(clf, x), y_disturb);
}

std::vector<int> topk_confusable(const Eigen::Ref<const Vector>& l, int k,
                                 std::optional<int> exclude) {
  const int C = static_cast<int>(l.size());
  const int available = exclude ? C - 1 : C;
  require(k >= 1 && k <= std::min(available, C - 1), ErrorKind::InvalidArgument,
          "k must lie in [1, C-1]");
  std::vector<int> idx;
  idx.reserve(C);
  for (int c = 0; c < C; ++c)
    if (!exclude || c != *exclude) idx.push_back(c);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return l(a) > l(b); });
  idx.resize(k);
  return idx;
}

std::vector<int> topk_confusable(const Classifier& clf, const Eigen::Ref<const Vector>& x, int k,
                                 std::optional<int> true_label) {
  if (true_label)
    require(*true_label >= 0 && *true_label < clf.num_classes(), ErrorKind::IndexOutOfRange,
            "label out of range");
  return topk_confusable(logits(clf, x), k, true_label);
}

double accuracy(const Classifier& clf, const LabeledDataset& data) {
  const std::vector<int> pred = predict(clf, data.features);
  Index hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == data.labels[i];
  return pred.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(pred.size());
}

double accuracy(const Classifier& clf, const LabeledDataset& data, const std::vector<int>& classes) {
  const std::vector<int> pred = predict(clf, data.features);
  Index hit = 0, total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (std::find(classes.begin(), classes.end(), data.labels[i]) == classes.end()) continue;
    ++total;
    hit += pred[i] == data.labels[i];
  }
  require(total > 0, ErrorKind::EmptyGroup, "no rows in the requested classes");
  return static_cast<double>(hit) / static_cast<double>(total);
}

namespace {

nlohmann::json tagged(const Matrix& m) {
  nlohmann::json j;
  j["shape"] = {m.rows(), m.cols()};
  std::vector<double> data(m.size());
  for (Index i = 0; i < m.rows(); ++i)
    for (Index k = 0; k < m.cols(); ++k) data[i * m.cols() + k] = m(i, k);
  j["data"] = data;
  return j;
}

nlohmann::json tagged(const Vector& v) {
  nlohmann::json j;
  j["shape"] = {v.size()};
  j["data"] = std::vector<double>(v.data(), v.data() + v.size());
  return j;
}

Matrix untag_matrix(const nlohmann::json& j, const char* name) {
  const auto shape = j.at("shape").get<std::vector<Index>>();
  require(shape.size() == 2, ErrorKind::Parse, std::string(name) + ": expected a 2-d shape");
  const auto data = j.at("data").get<std::vector<double>>();
  require(static_cast<Index>(data.size()) == shape[0] * shape[1], ErrorKind::Parse,
          std::string(name) + ": data length does not match shape");
  Matrix m(shape[0], shape[1]);
  for (Index i = 0; i < m.rows(); ++i)
    for (Index k = 0; k < m.cols(); ++k) m(i, k) = data[i * m.cols() + k];
  return m;
}

Vector untag_vector(const nlohmann::json& j, const char* name) {
  const auto shape = j.at("shape").get<std::vector<Index>>();
  require(shape.size() == 1, ErrorKind::Parse, std::string(name) + ": expected a 1-d shape");
  const auto data = j.at("data").get<std::vector<double>>();
  require(static_cast<Index>(data.size()) == shape[0], ErrorKind::Parse,
          std::string(name) + ": data length does not match shape");
  return Eigen::Map<const Vector>(data.data(), shape[0]);
}

}  // namespace

void save_classifier(const Classifier& clf, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["version"] = "clf-v1";
  j["input_dim"] = clf.input_dim();
  j["hidden"] = clf.hidden_dim();
  j["classes"] = clf.num_classes();
  j["trained"] = clf.trained;
  j["initial_loss"] = clf.initial_loss;
  j["final_loss"] = clf.final_loss;
  j["hidden_weights"] = tagged(clf.hidden_weights);
  j["hidden_bias"] = tagged(clf.hidden_bias);
  j["head_weights"] = tagged(clf.head_weights);
  j["head_bias"] = tagged(clf.head_bias);
  j["priors"] = tagged(clf.priors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out << j.dump() << '\n';
}

Classifier load_classifier(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path.string());
  Classifier clf;
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    require(j.at("version") == "clf-v1", ErrorKind::Parse, "unsupported checkpoint version");
    clf.hidden_weights = untag_matrix(j.at("hidden_weights"), "hidden_weights");
    clf.hidden_bias = untag_vector(j.at("hidden_bias"), "hidden_bias");
    clf.head_weights = untag_matrix(j.at("head_weights"), "head_weights");
    clf.head_bias = untag_vector(j.at("head_bias"), "head_bias");
    clf.priors = untag_vector(j.at("priors"), "priors");
    clf.trained = j.at("trained").get<bool>();
    clf.initial_loss = j.at("initial_loss").get<double>();
    clf.final_loss = j.at("final_loss").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
  clf.validate();
  return clf;
}

}  // namespace blab
