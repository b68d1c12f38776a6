#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "misd/augment.hpp"
#include "misd/core_model.hpp"
#include "misd/data_io.hpp"
#include "misd/losses.hpp"
#include "misd/metrics.hpp"

namespace misd {

struct TrainConfig {
  int shots = 16;
  int epochs = 30;
  double lr = 2e-3;
  double momentum = 0.9;
  double lambda_neg = 5.0;
  double lambda_orth = 0.5;
  double temperature = 1.0;
  int context_length = 16;
  int negative_prompts = 4;
  CropConfig crops{};
  AugmentStrategy augment = AugmentStrategy::random_crop;
  NegativeMode negative_mode = NegativeMode::global;
  std::uint64_t seed = 0;

  Objective objective() const { return {temperature, {lambda_neg, lambda_orth}, 1.0}; }
  bool operator==(const TrainConfig&) const = default;
};

void validate(const TrainConfig& config);

/// base_lr * 0.5 * (1 + cos(pi * epoch / epochs)).
double cosine_lr(int epoch, int epochs, double base_lr);

/// Dataset indices of `shots` samples per class, drawn uniformly without
/// replacement. Each class draws from its own stream keyed by class name.
/// The result is ordered class by class.
std::vector<std::size_t> sample_shots(std::span<const int> labels,
                                      std::span<const std::string> class_names, int shots,
                                      std::uint64_t seed);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  LossBreakdown loss;  // evaluated before this epoch's update
};

struct TrainedModel {
  std::shared_ptr<const Backbone> backbone;
  PromptBank bank;
  std::vector<Embedding> category_features;
  std::vector<Embedding> negative_features;
  TrainConfig config;
  std::vector<EpochRecord> trace;

  /// Re-encodes the bank into the cached features.
  void refresh_features();
};

/// Candidate views of the few-shot samples, in class-then-shot order.
/// With random crops each set holds k crop embeddings; with the other
/// strategies it holds {full image, augmented image}.
struct ShotSet {
  std::vector<std::string> class_names;
  std::vector<ViewSet> samples;
  AugmentStrategy strategy = AugmentStrategy::random_crop;
};

ShotSet shots_from_images(const ImageDataset& dataset, const VisionEncoder& encoder,
                          const TrainConfig& config);

/// Needs k >= 2 crop views per sample; only the random-crop strategy applies.
ShotSet shots_from_embeddings(const EmbeddingDataset& dataset, const TrainConfig& config);

/// Selection of the normal view and weighted pseudo views for one sample.
TrainingSample make_training_sample(const ViewSet& set, AugmentStrategy strategy,
                                    NegativeMode mode, const Embedding& class_feature);

/// Full-batch momentum SGD over the shot set.
TrainedModel train(std::shared_ptr<const Backbone> backbone, const ShotSet& shots,
                   const TrainConfig& config);

/// The initial bank for a config, as train() would start from it.
PromptBank initial_bank(const Backbone& backbone, std::span<const std::string> class_names,
                        const TrainConfig& config);

std::vector<ScoredPrediction> predict_all(const TrainedModel& model,
                                          std::span<const Embedding> features,
                                          std::span<const int> labels);

/// Maps dataset labels onto the model's class indices by name.
std::vector<int> remap_labels(const TrainedModel& model, std::span<const std::string> names,
                              std::span<const int> labels);

/// Encodes every image uncropped and scores it.
std::vector<ScoredPrediction> evaluate_images(const TrainedModel& model,
                                              const ImageDataset& dataset);

/// Needs full-image features (k == 1).
std::vector<ScoredPrediction> evaluate_embeddings(const TrainedModel& model,
                                                  const EmbeddingDataset& dataset);

}  // namespace misd
