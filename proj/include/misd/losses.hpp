#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "misd/core_model.hpp"

namespace misd {

/// a.b / (|a||b|); throws UndefinedSimilarityError on a zero-norm input.
double cosine_sim(const Embedding& a, const Embedding& b);

/// softmax_c(cos(q, t_c) / T), max-shifted.
Eigen::VectorXd class_probabilities(const Embedding& q, std::span<const Embedding> category,
                                    double temperature);

double ce_loss(const Embedding& q, std::span<const Embedding> category, int label,
               double temperature);

/// -log( sum_n e^{s(q,t~_n)/T} / (sum_i e^{s(q,t_i)/T} + sum_n e^{s(q,t~_n)/T}) ).
/// Pulls the pseudo view toward the negative prompts and away from every
/// category prompt.
double neg_loss(const Embedding& pseudo, std::span<const Embedding> category,
                std::span<const Embedding> negative, double temperature);

/// Mean cosine similarity over all ordered pairs of negative features,
/// self-pairs included, so n orthonormal features give exactly 1/n.
double orth_loss(std::span<const Embedding> negative);

struct LossWeights {
  double lambda_neg = 5.0;
  double lambda_orth = 0.5;
};

struct LossBreakdown {
  double ce = 0.0;
  double neg = 0.0;
  double orth = 0.0;
  double total = 0.0;
  LossWeights weights{};
};

/// total = ce + lambda_neg * neg + lambda_orth * orth.
LossBreakdown total_loss(double ce, double neg, double orth, const LossWeights& weights);

enum class NegativeMode {
  global,        // negative loss on the selected pseudo view only
  local,         // mean negative loss over every crop except the normal view
  global_local,  // average of the two
};

NegativeMode parse_negative_mode(std::string_view name);
std::string_view to_string(NegativeMode mode);

struct WeightedView {
  Embedding view;
  double weight = 1.0;
};

/// One training example after view selection: the normal view feeds the
/// cross-entropy term, the weighted pseudo views feed the negative term.
struct TrainingSample {
  Embedding normal;
  std::vector<WeightedView> pseudo;
  int label = 0;
};

/// What is differentiated. ce_weight only exists to isolate single terms
/// (gradient checks, descent tests); training uses 1.
struct Objective {
  double temperature = 1.0;
  LossWeights weights{};
  double ce_weight = 1.0;
};

void validate(const Objective& objective);

/// ce_weight * ce + lambda_neg * neg + lambda_orth * orth.
double objective_value(const LossBreakdown& loss, const Objective& objective);

/// Gradients of the objective with respect to the encoded features.
struct FeatureGradients {
  std::vector<Embedding> category;
  std::vector<Embedding> negative;
  LossBreakdown loss;
};

/// Batch-mean loss and its feature gradients. Terms are accumulated in
/// sample order.
FeatureGradients feature_gradients(std::span<const TrainingSample> batch,
                                   std::span<const Embedding> category,
                                   std::span<const Embedding> negative,
                                   const Objective& objective);

/// Gradients with respect to the trainable context tokens.
struct PromptGradients {
  std::vector<TokenEmbedding> class_context;
  std::vector<std::vector<TokenEmbedding>> negative_contexts;
};

struct GradientResult {
  PromptGradients gradients;
  LossBreakdown loss;
};

/// Exact gradients of the batch-mean objective through cosine similarity,
/// softmax and the frozen text encoder. Class-token gradients are computed
/// by the encoder VJP and dropped here.
GradientResult loss_gradients(std::span<const TrainingSample> batch, const PromptBank& bank,
                              const TextEncoder& text, const Objective& objective);

/// Forward pass only.
LossBreakdown evaluate_loss(std::span<const TrainingSample> batch, const PromptBank& bank,
                            const TextEncoder& text, const Objective& objective);

}  // namespace misd
