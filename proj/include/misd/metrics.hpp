#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "misd/core_model.hpp"

namespace misd {

struct Prediction {
  double confidence = 0.0;  // maximum softmax probability
  int predicted = 0;
  Eigen::VectorXd probabilities;
};

/// MSP prediction; ties go to the lowest class index.
Prediction predict(const Embedding& q, std::span<const Embedding> category, double temperature);

struct ScoredPrediction {
  double confidence = 0.0;
  int predicted = 0;
  int label = 0;

  bool correct() const noexcept { return predicted == label; }
  bool operator==(const ScoredPrediction&) const = default;
};

/// A confidence and whether the prediction behind it was right; the only
/// input the ranking metrics need.
struct Outcome {
  double confidence = 0.0;
  bool correct = false;
};

std::vector<Outcome> to_outcomes(std::span<const ScoredPrediction> preds);

enum class Decision { accept, flag };

/// accept iff confidence >= threshold.
Decision decide(double confidence, double threshold) noexcept;

// Ranking metrics. All are functions of the multiset of outcomes: samples
// with equal confidence share a threshold, so input order never matters.

/// P(correct outranks error), ties counted as 1/2.
double auroc(std::span<const Outcome> outcomes);

/// Smallest FPR over thresholds at observed confidences whose TPR >= 0.95.
double fpr_at_95_tpr(std::span<const Outcome> outcomes);

struct RiskCoverage {
  double aurc = 0.0;
  double aurc_optimal = 0.0;
  double e_aurc = 0.0;
};

/// Mean selective risk over the n coverage points. A sample's risk is the
/// error rate among all samples with confidence >= its own.
RiskCoverage risk_coverage(std::span<const Outcome> outcomes);

enum class Polarity {
  success,  // correct predictions are positives, ranked by confidence
  error,    // errors are positives, ranked by negated confidence
};

/// Non-interpolated average precision: the mean, over positives, of the
/// precision among samples scoring at least as high.
double aupr(std::span<const Outcome> outcomes, Polarity polarity);

/// Evaluation record. Percent fields are x100, AURC fields x1000. A field is
/// empty when the metric is undefined for the input (or not applicable, as
/// for binary score files).
struct MisDReport {
  std::size_t count = 0;
  std::size_t correct = 0;
  std::optional<double> acc;
  std::optional<double> fpr95;
  std::optional<double> aurc;
  std::optional<double> e_aurc;
  std::optional<double> auroc;
  std::optional<double> aupr_success;
  std::optional<double> aupr_error;

  /// One line per metric left empty, saying why.
  std::vector<std::string> notes;
};

/// All seven metrics; undefined ones are left empty with a note.
MisDReport full_report(std::span<const ScoredPrediction> preds);

/// Binary (confidence, correct) input: AUROC and FPR95 only.
MisDReport binary_report(std::span<const Outcome> outcomes);

/// Like full_report but throws UndefinedMetricError naming the first metric
/// that cannot be computed.
MisDReport full_report_strict(std::span<const ScoredPrediction> preds);

}  // namespace misd
