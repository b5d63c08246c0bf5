#pragma once

#include "blab/core.hpp"
#include "blab/synth_data.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace blab {

/// One-hidden-layer classifier: phi(x) = max(0, W1^T x + b1) and
/// logits(x) = W2^T phi(x) + b2.
struct Classifier {
  Matrix hidden_weights;  // d x H
  Vector hidden_bias;     // H
  Matrix head_weights;    // H x C
  Vector head_bias;       // C
  Vector priors;          // C, class frequencies of the training set
  bool trained = false;
  double initial_loss = 0.0;
  double final_loss = 0.0;

  Index input_dim() const { return hidden_weights.rows(); }
  Index hidden_dim() const { return hidden_weights.cols(); }
  int num_classes() const { return static_cast<int>(head_weights.cols()); }

  /// Zero weights, uniform priors.
  static Classifier zeros(Index d, Index hidden, int classes);

  void validate() const;
};

struct TrainConfig {
  int epochs = 60;
  int batch_size = 32;
  double learning_rate = 0.05;
  /// Epochs at which the step size is multiplied by 0.1. Empty means the
  /// default 80% / 90% milestones.
  std::vector<int> lr_decay_epochs;
  double tau = 1.0;
  int hidden = 64;
  std::uint64_t seed = 0;

  void validate() const;
  std::vector<int> milestones() const;
};

Classifier train(const LabeledDataset& dataset, const TrainConfig& cfg);

/// Mean logit-adjusted cross-entropy over rows of X with its gradients.
struct LossGradient {
  double loss = 0.0;
  Matrix d_hidden_weights;
  Vector d_hidden_bias;
  Matrix d_head_weights;
  Vector d_head_bias;
};

/// Loss of softmax(logits + tau * log(priors)) against labels, averaged over
/// the rows of X.
LossGradient logit_adjusted_loss(const Classifier& clf, const Eigen::Ref<const Matrix>& X,
                                 const std::vector<int>& labels, double tau);

Vector features(const Classifier& clf, const Eigen::Ref<const Vector>& x);
/// phi(x) / ||phi(x)||; throws zero-feature-vector when ||phi(x)|| < 1e-12.
Vector normalized_features(const Classifier& clf, const Eigen::Ref<const Vector>& x);
Vector logits(const Classifier& clf, const Eigen::Ref<const Vector>& x);
Vector probabilities(const Classifier& clf, const Eigen::Ref<const Vector>& x);

/// Row-wise batched forms.
Matrix batch_features(const Classifier& clf, const Matrix& X);
Matrix batch_logits(const Classifier& clf, const Matrix& X);
std::vector<int> predict(const Classifier& clf, const Matrix& X);

/// Numerically stable softmax.
Vector softmax(const Eigen::Ref<const Vector>& logits);
/// Index of the largest entry; ties go to the lower index.
int argmax(const Eigen::Ref<const Vector>& v);

/// Conf = logit of the target class.
double confidence(const Classifier& clf, const Eigen::Ref<const Vector>& x, int y_target);
/// Cred = p_(1) - p_(y_d).
double credibility(const Classifier& clf, const Eigen::Ref<const Vector>& x, int y_disturb);
double credibility_from_probs(const Eigen::Ref<const Vector>& p, int y_disturb);

/// The k highest-logit classes, excluding `exclude` when given; ordered by
/// descending logit, ties by lower index.
std::vector<int> topk_confusable(const Eigen::Ref<const Vector>& logits, int k,
                                 std::optional<int> exclude);
std::vector<int> topk_confusable(const Classifier& clf, const Eigen::Ref<const Vector>& x, int k,
                                 std::optional<int> true_label);

/// Fraction of rows predicted correctly.
double accuracy(const Classifier& clf, const LabeledDataset& data);
/// Accuracy restricted to rows whose label is in `classes`.
double accuracy(const Classifier& clf, const LabeledDataset& data, const std::vector<int>& classes);

void save_classifier(const Classifier& clf, const std::filesystem::path& path);
Classifier load_classifier(const std::filesystem::path& path);

}  // namespace blab
