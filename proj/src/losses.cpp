#include "misd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "misd/errors.hpp"

namespace misd {
namespace {

double checked_norm(const Embedding& v) {
  const double n = v.norm();
  if (!(n > 0.0)) throw UndefinedSimilarityError("cosine similarity of a zero-norm vector");
  return n;
}

void check_temperature(double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
}

// d cos(a, b) / d b.
Embedding cosine_grad(const Embedding& a, const Embedding& b) {
  const double na = checked_norm(a);
  const double nb = checked_norm(b);
  const double cos = a.dot(b) / (na * nb);
  return a / (na * nb) - (cos / (nb * nb)) * b;
}

double log_sum_exp(const Eigen::VectorXd& z) {
  const double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

Eigen::VectorXd similarities(const Embedding& q, std::span<const Embedding> features) {
  Eigen::VectorXd s(static_cast<Eigen::Index>(features.size()));
  for (std::size_t i = 0; i < features.size(); ++i) {
    s[static_cast<Eigen::Index>(i)] = cosine_sim(q, features[i]);
  }
  return s;
}

struct NegTerms {
  double value;
  Eigen::VectorXd d_category;  // d loss / d s_i (similarity, already / T)
  Eigen::VectorXd d_negative;
};

NegTerms neg_terms(const Embedding& pseudo, std::span<const Embedding> category,
                   std::span<const Embedding> negative, double temperature) {
  const Eigen::VectorXd a = similarities(pseudo, category) / temperature;
  const Eigen::VectorXd b = similarities(pseudo, negative) / temperature;
  Eigen::VectorXd all(a.size() + b.size());
  all << a, b;
  const double lse_all = log_sum_exp(all);
  const double lse_neg = log_sum_exp(b);
  NegTerms t;
  t.value = lse_all - lse_neg;
  t.d_category = (a.array() - lse_all).exp().matrix() / temperature;
  t.d_negative =
      ((b.array() - lse_all).exp() - (b.array() - lse_neg).exp()).matrix() / temperature;
  return t;
}

}  // namespace

double cosine_sim(const Embedding& a, const Embedding& b) {
  if (a.size() != b.size()) throw ShapeError("cosine similarity of vectors of different width");
  const double c = a.dot(b) / (checked_norm(a) * checked_norm(b));
  return std::clamp(c, -1.0, 1.0);
}

Eigen::VectorXd class_probabilities(const Embedding& q, std::span<const Embedding> category,
                                    double temperature) {
  check_temperature(temperature);
  if (category.empty()) throw DegenerateTaskError("no category features");
  const Eigen::VectorXd z = similarities(q, category) / temperature;
  Eigen::VectorXd p = (z.array() - z.maxCoeff()).exp().matrix();
  return p / p.sum();
}

double ce_loss(const Embedding& q, std::span<const Embedding> category, int label,
               double temperature) {
  check_temperature(temperature);
  if (label < 0 || label >= static_cast<int>(category.size())) {
    throw DataError("label " + std::to_string(label) + " outside [0, " +
                    std::to_string(category.size()) + ")");
  }
  const Eigen::VectorXd z = similarities(q, category) / temperature;
  return log_sum_exp(z) - z[label];
}

double neg_loss(const Embedding& pseudo, std::span<const Embedding> category,
                std::span<const Embedding> negative, double temperature) {
  check_temperature(temperature);
  if (negative.empty()) throw ConfigError("negative loss needs at least one negative feature");
  if (category.empty()) throw DegenerateTaskError("no category features");
  return neg_terms(pseudo, category, negative, temperature).value;
}

double orth_loss(std::span<const Embedding> negative) {
  if (negative.empty()) throw ConfigError("orthogonality loss needs at least one feature");
  const double n = static_cast<double>(negative.size());
  double sum = 0.0;
  for (const auto& a : negative) {
    for (const auto& b : negative) sum += cosine_sim(a, b);
  }
  return sum / (n * n);
}

LossBreakdown total_loss(double ce, double neg, double orth, const LossWeights& weights) {
  if (weights.lambda_neg < 0.0 || weights.lambda_orth < 0.0) {
    throw ConfigError("loss coefficients must be nonnegative");
  }
  LossBreakdown b;
  b.ce = ce;
  b.neg = neg;
  b.orth = orth;
  b.weights = weights;
  b.total = ce + weights.lambda_neg * neg + weights.lambda_orth * orth;
  return b;
}

NegativeMode parse_negative_mode(std::string_view name) {
  if (name == "global") return NegativeMode::global;
  if (name == "local") return NegativeMode::local;
  if (name == "global-local" || name == "global+local") return NegativeMode::global_local;
  throw ConfigError("unknown negative mode '" + std::string(name) + "'");
}

std::string_view to_string(NegativeMode mode) {
  switch (mode) {
    case NegativeMode::global: return "global";
    case NegativeMode::local: return "local";
    case NegativeMode::global_local: return "global-local";
  }
  return "unknown";
}

void validate(const Objective& o) {
  check_temperature(o.temperature);
  if (o.weights.lambda_neg < 0.0 || o.weights.lambda_orth < 0.0 || o.ce_weight < 0.0) {
    throw ConfigError("loss coefficients must be nonnegative");
  }
}

double objective_value(const LossBreakdown& loss, const Objective& o) {
  return o.ce_weight * loss.ce + o.weights.lambda_neg * loss.neg +
         o.weights.lambda_orth * loss.orth;
}

FeatureGradients feature_gradients(std::span<const TrainingSample> batch,
                                   std::span<const Embedding> category,
                                   std::span<const Embedding> negative,
                                   const Objective& objective) {
  validate(objective);
  if (batch.empty()) throw ConfigError("gradient batch is empty");
  if (category.size() < 2) throw DegenerateTaskError("at least two category features required");
  if (negative.empty()) throw ConfigError("at least one negative feature required");

  const double T = objective.temperature;
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const Eigen::Index d = category.front().size();

  FeatureGradients out;
  out.category.assign(category.size(), Embedding::Zero(d));
  out.negative.assign(negative.size(), Embedding::Zero(d));

  double ce_sum = 0.0;
  double neg_sum = 0.0;
  for (const TrainingSample& s : batch) {
    if (s.label < 0 || s.label >= static_cast<int>(category.size())) {
      throw DataError("sample label " + std::to_string(s.label) + " out of range");
    }
    // Cross-entropy on the normal view.
    const Eigen::VectorXd z = similarities(s.normal, category) / T;
    const double lse = log_sum_exp(z);
    ce_sum += lse - z[s.label];
    const double ce_scale = objective.ce_weight * inv_n / T;
    for (std::size_t c = 0; c < category.size(); ++c) {
      const double dz = std::exp(z[static_cast<Eigen::Index>(c)] - lse) -
                        (static_cast<int>(c) == s.label ? 1.0 : 0.0);
      out.category[c] += (ce_scale * dz) * cosine_grad(s.normal, category[c]);
    }
    // Negative term on the weighted pseudo views.
    for (const WeightedView& pv : s.pseudo) {
      const NegTerms t = neg_terms(pv.view, category, negative, T);
      neg_sum += pv.weight * t.value;
      const double scale = objective.weights.lambda_neg * pv.weight * inv_n;
      if (scale == 0.0) continue;
      for (std::size_t c = 0; c < category.size(); ++c) {
        out.category[c] += (scale * t.d_category[static_cast<Eigen::Index>(c)]) *
                           cosine_grad(pv.view, category[c]);
      }
      for (std::size_t n = 0; n < negative.size(); ++n) {
        out.negative[n] += (scale * t.d_negative[static_cast<Eigen::Index>(n)]) *
                           cosine_grad(pv.view, negative[n]);
      }
    }
  }

  const double orth = orth_loss(negative);
  const double nn = static_cast<double>(negative.size());
  const double orth_scale = objective.weights.lambda_orth * 2.0 / (nn * nn);
  if (orth_scale != 0.0) {
    for (std::size_t k = 0; k < negative.size(); ++k) {
      for (std::size_t j = 0; j < negative.size(); ++j) {
        if (j == k) continue;  // self-similarity is constant
        out.negative[k] += orth_scale * cosine_grad(negative[j], negative[k]);
      }
    }
  }

  out.loss = total_loss(ce_sum * inv_n, neg_sum * inv_n, orth, objective.weights);
  return out;
}

GradientResult loss_gradients(std::span<const TrainingSample> batch, const PromptBank& bank,
                              const TextEncoder& text, const Objective& objective) {
  const std::vector<Embedding> category = encode_category_features(bank, text);
  const std::vector<Embedding> negative = encode_negative_features(bank, text);
  const FeatureGradients fg = feature_gradients(batch, category, negative, objective);

  const int L = bank.context_length();
  GradientResult r;
  r.loss = fg.loss;
  r.gradients.class_context.assign(static_cast<std::size_t>(L),
                                   TokenEmbedding::Zero(bank.token_dim()));
  for (std::size_t c = 0; c < category.size(); ++c) {
    const auto slot_grads = text.vjp_from_output(category[c], fg.category[c]);
    for (int i = 0; i < L; ++i) {
      r.gradients.class_context[static_cast<std::size_t>(i)] += slot_grads[static_cast<std::size_t>(i)];
    }
  }
  r.gradients.negative_contexts.resize(negative.size());
  for (std::size_t n = 0; n < negative.size(); ++n) {
    auto slot_grads = text.vjp_from_output(negative[n], fg.negative[n]);
    slot_grads.pop_back();  // null-token slot is frozen
    r.gradients.negative_contexts[n] = std::move(slot_grads);
  }
  return r;
}

LossBreakdown evaluate_loss(std::span<const TrainingSample> batch, const PromptBank& bank,
                            const TextEncoder& text, const Objective& objective) {
  validate(objective);
  if (batch.empty()) throw ConfigError("loss batch is empty");
  const std::vector<Embedding> category = encode_category_features(bank, text);
  const std::vector<Embedding> negative = encode_negative_features(bank, text);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double ce_sum = 0.0;
  double neg_sum = 0.0;
  for (const TrainingSample& s : batch) {
    ce_sum += ce_loss(s.normal, category, s.label, objective.temperature);
    for (const WeightedView& pv : s.pseudo) {
      neg_sum += pv.weight * neg_loss(pv.view, category, negative, objective.temperature);
    }
  }
  return total_loss(ce_sum * inv_n, neg_sum * inv_n, orth_loss(negative), objective.weights);
}

}  // namespace misd
