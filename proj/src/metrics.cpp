#include "misd/metrics.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>

#include "misd/errors.hpp"
#include "misd/losses.hpp"

namespace misd {
namespace {

// Confidence-sorted groups of tied samples, highest confidence first.
struct TieGroup {
  double confidence;
  std::size_t correct;
  std::size_t errors;
};

std::vector<TieGroup> tie_groups(std::span<const Outcome> outcomes) {
  std::vector<Outcome> sorted(outcomes.begin(), outcomes.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const Outcome& a, const Outcome& b) { return a.confidence > b.confidence; });
  std::vector<TieGroup> groups;
  for (const Outcome& o : sorted) {
    if (groups.empty() || groups.back().confidence != o.confidence) {
      groups.push_back({o.confidence, 0, 0});
    }
    (o.correct ? groups.back().correct : groups.back().errors) += 1;
  }
  return groups;
}

std::pair<std::size_t, std::size_t> class_counts(std::span<const Outcome> outcomes) {
  const auto pos = static_cast<std::size_t>(
      std::count_if(outcomes.begin(), outcomes.end(), [](const Outcome& o) { return o.correct; }));
  return {pos, outcomes.size() - pos};
}

void require_both_outcomes(std::span<const Outcome> outcomes, const char* metric) {
  const auto [pos, neg] = class_counts(outcomes);
  if (pos == 0 || neg == 0) {
    throw UndefinedMetricError(std::string(metric) +
                               " is undefined without both correct and erroneous predictions");
  }
}

}  // namespace

Prediction predict(const Embedding& q, std::span<const Embedding> category, double temperature) {
  if (category.size() < 2) throw DegenerateTaskError("prediction needs at least two classes");
  Prediction p;
  p.probabilities = class_probabilities(q, category, temperature);
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < p.probabilities.size(); ++c) {
    if (p.probabilities[c] > p.probabilities[best]) best = c;
  }
  p.predicted = static_cast<int>(best);
  p.confidence = p.probabilities[best];
  return p;
}

std::vector<Outcome> to_outcomes(std::span<const ScoredPrediction> preds) {
  std::vector<Outcome> out;
  out.reserve(preds.size());
  for (const auto& p : preds) out.push_back({p.confidence, p.correct()});
  return out;
}

Decision decide(double confidence, double threshold) noexcept {
  return confidence >= threshold ? Decision::accept : Decision::flag;
}

double auroc(std::span<const Outcome> outcomes) {
  require_both_outcomes(outcomes, "AUROC");
  const auto [pos, neg] = class_counts(outcomes);
  // Walk from the lowest confidence up: each correct sample beats every error
  // strictly below it and half-beats the errors tied with it.
  const auto groups = tie_groups(outcomes);
  double wins = 0.0;
  std::size_t errors_below = 0;
  for (auto it = groups.rbegin(); it != groups.rend(); ++it) {
    wins += static_cast<double>(it->correct) *
            (static_cast<double>(errors_below) + 0.5 * static_cast<double>(it->errors));
    errors_below += it->errors;
  }
  return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

double fpr_at_95_tpr(std::span<const Outcome> outcomes) {
  require_both_outcomes(outcomes, "FPR95");
  const auto [pos, neg] = class_counts(outcomes);
  // FPR and TPR both grow as the threshold drops, so the first threshold that
  // reaches TPR >= 95% has the smallest feasible FPR.
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (const TieGroup& g : tie_groups(outcomes)) {
    tp += g.correct;
    fp += g.errors;
    if (100 * tp >= 95 * pos) return static_cast<double>(fp) / static_cast<double>(neg);
  }
  return 1.0;  // unreachable: the lowest threshold accepts everything
}

RiskCoverage risk_coverage(std::span<const Outcome> outcomes) {
  if (outcomes.empty()) throw UndefinedMetricError("AURC is undefined for an empty set");
  const double n = static_cast<double>(outcomes.size());
  const std::size_t pos = class_counts(outcomes).first;

  double risk_sum = 0.0;
  std::size_t seen = 0;
  std::size_t errors = 0;
  for (const TieGroup& g : tie_groups(outcomes)) {
    seen += g.correct + g.errors;
    errors += g.errors;
    risk_sum += static_cast<double>(g.correct + g.errors) * static_cast<double>(errors) /
                static_cast<double>(seen);
  }

  // Optimal ranking: all correct first, then the errors.
  double optimal_sum = 0.0;
  for (std::size_t i = pos + 1; i <= outcomes.size(); ++i) {
    optimal_sum += static_cast<double>(i - pos) / static_cast<double>(i);
  }
  RiskCoverage rc;
  rc.aurc = risk_sum / n;
  rc.aurc_optimal = optimal_sum / n;
  rc.e_aurc = rc.aurc - rc.aurc_optimal;
  return rc;
}

double aupr(std::span<const Outcome> outcomes, Polarity polarity) {
  const bool success = polarity == Polarity::success;
  const auto [pos, neg] = class_counts(outcomes);
  const std::size_t positives = success ? pos : neg;
  if (positives == 0) {
    throw UndefinedMetricError(success ? "AUPR-Success is undefined without correct predictions"
                                       : "AUPR-Error is undefined without erroneous predictions");
  }
  auto groups = tie_groups(outcomes);
  if (!success) std::reverse(groups.begin(), groups.end());  // rank by -confidence
  double sum = 0.0;
  std::size_t seen = 0;
  std::size_t hits = 0;
  for (const TieGroup& g : groups) {
    const std::size_t group_pos = success ? g.correct : g.errors;
    seen += g.correct + g.errors;
    hits += group_pos;
    sum += static_cast<double>(group_pos) * static_cast<double>(hits) / static_cast<double>(seen);
  }
  return sum / static_cast<double>(positives);
}

namespace {

template <typename F>
std::optional<double> guarded(F&& f, double scale, std::vector<std::string>& notes) {
  try {
    return scale * f();
  } catch (const UndefinedMetricError& e) {
    notes.emplace_back(e.what());
    return std::nullopt;
  }
}

}  // namespace

MisDReport full_report(std::span<const ScoredPrediction> preds) {
  if (preds.empty()) throw UndefinedMetricError("no predictions to evaluate");
  const std::vector<Outcome> outcomes = to_outcomes(preds);
  MisDReport r;
  r.count = outcomes.size();
  r.correct = class_counts(outcomes).first;
  r.acc = 100.0 * static_cast<double>(r.correct) / static_cast<double>(r.count);
  r.fpr95 = guarded([&] { return fpr_at_95_tpr(outcomes); }, 100.0, r.notes);
  const RiskCoverage rc = risk_coverage(outcomes);
  r.aurc = 1000.0 * rc.aurc;
  r.e_aurc = 1000.0 * rc.e_aurc;
  r.auroc = guarded([&] { return auroc(outcomes); }, 100.0, r.notes);
  r.aupr_success = guarded([&] { return aupr(outcomes, Polarity::success); }, 100.0, r.notes);
  r.aupr_error = guarded([&] { return aupr(outcomes, Polarity::error); }, 100.0, r.notes);
  return r;
}

MisDReport full_report_strict(std::span<const ScoredPrediction> preds) {
  MisDReport r = full_report(preds);
  if (!r.notes.empty()) throw UndefinedMetricError(r.notes.front());
  return r;
}

MisDReport binary_report(std::span<const Outcome> outcomes) {
  if (outcomes.empty()) throw UndefinedMetricError("no scores to evaluate");
  MisDReport r;
  r.count = outcomes.size();
  r.correct = class_counts(outcomes).first;
  r.fpr95 = guarded([&] { return fpr_at_95_tpr(outcomes); }, 100.0, r.notes);
  r.auroc = guarded([&] { return auroc(outcomes); }, 100.0, r.notes);
  r.notes.emplace_back("binary scores: only AUROC and FPR95 are reported");
  return r;
}

}  // namespace misd
