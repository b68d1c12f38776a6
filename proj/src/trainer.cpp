#include "misd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <string>

#include "misd/errors.hpp"
#include "misd/rng.hpp"

namespace misd {
namespace {

// Momentum buffers shaped like the trainable part of a PromptBank.
struct Velocity {
  std::vector<TokenEmbedding> class_context;
  std::vector<std::vector<TokenEmbedding>> negative_contexts;
};

Velocity zero_velocity(const PromptBank& bank) {
  Velocity v;
  v.class_context.assign(bank.class_context.size(), TokenEmbedding::Zero(bank.token_dim()));
  v.negative_contexts.assign(bank.negative_contexts.size(), v.class_context);
  return v;
}

void momentum_step(std::vector<TokenEmbedding>& params, std::vector<TokenEmbedding>& velocity,
                   const std::vector<TokenEmbedding>& grads, double lr, double momentum) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grads[i];
    params[i] -= lr * velocity[i];
  }
}

std::vector<TrainingSample> build_batch(const ShotSet& shots, const TrainConfig& config,
                                        const std::vector<Embedding>& category) {
  std::vector<TrainingSample> batch;
  batch.reserve(shots.samples.size());
  for (const ViewSet& set : shots.samples) {
    batch.push_back(make_training_sample(set, shots.strategy, config.negative_mode,
                                         category.at(static_cast<std::size_t>(set.label))));
  }
  return batch;
}

}  // namespace

void validate(const TrainConfig& c) {
  if (c.shots < 1) throw ConfigError("shots must be >= 1");
  if (c.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(c.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (c.context_length < 1) throw ConfigError("context length must be >= 1");
  if (c.negative_prompts < 1) throw ConfigError("negative prompt count must be >= 1");
  validate(c.objective());
  if (c.augment == AugmentStrategy::random_crop) validate(c.crops);
}

double cosine_lr(int epoch, int epochs, double base_lr) {
  if (epochs < 1 || epoch < 0 || epoch >= epochs) {
    throw ConfigError("epoch " + std::to_string(epoch) + " outside [0, " +
                      std::to_string(epochs) + ")");
  }
  return base_lr * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) /
                         static_cast<double>(epochs)));
}

std::vector<std::size_t> sample_shots(std::span<const int> labels,
                                      std::span<const std::string> class_names, int shots,
                                      std::uint64_t seed) {
  if (shots < 1) throw ConfigError("shots must be >= 1");
  std::vector<std::vector<std::size_t>> members(class_names.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels[i];
    if (l < 0 || static_cast<std::size_t>(l) >= class_names.size()) {
      throw DataError("label " + std::to_string(l) + " out of range");
    }
    members[static_cast<std::size_t>(l)].push_back(i);
  }
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    auto& pool = members[c];
    if (pool.size() < static_cast<std::size_t>(shots)) {
      throw DataError("class '" + class_names[c] + "' has " + std::to_string(pool.size()) +
                      " samples, fewer than " + std::to_string(shots) + " shots");
    }
    // Partial Fisher-Yates: the first `shots` slots become a uniform draw.
    Rng rng = make_rng(seed, "shots:" + class_names[c]);
    for (std::size_t i = 0; i < static_cast<std::size_t>(shots); ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    out.insert(out.end(), pool.begin(), pool.begin() + shots);
  }
  return out;
}

void TrainedModel::refresh_features() {
  category_features = encode_category_features(bank, backbone->text);
  negative_features = encode_negative_features(bank, backbone->text);
}

ShotSet shots_from_images(const ImageDataset& dataset, const VisionEncoder& encoder,
                          const TrainConfig& config) {
  validate(config);
  validate(dataset);
  ShotSet out;
  out.class_names = dataset.class_names;
  out.strategy = config.augment;
  for (std::size_t i :
       sample_shots(dataset.labels, dataset.class_names, config.shots, config.seed)) {
    const Image& img = dataset.images[i];
    const int label = dataset.labels[i];
    if (config.augment == AugmentStrategy::random_crop) {
      out.samples.push_back(embed_views(img, i, label, encoder, config.crops, config.seed));
    } else {
      Rng rng = make_rng(config.seed, "augment", i);
      ViewSet set;
      set.sample_id = i;
      set.label = label;
      set.views.push_back(encoder.encode(img));
      set.views.push_back(encoder.encode(alternative_augment(img, config.augment, rng)));
      out.samples.push_back(std::move(set));
    }
  }
  return out;
}

ShotSet shots_from_embeddings(const EmbeddingDataset& dataset, const TrainConfig& config) {
  validate(config);
  validate(dataset);
  if (config.augment != AugmentStrategy::random_crop) {
    throw ConfigError("precomputed embeddings only support the random-crop strategy");
  }
  if (dataset.k < 2) {
    throw DataError("training embeddings need k >= 2 crop views, file has k = " +
                    std::to_string(dataset.k));
  }
  ShotSet out;
  out.class_names = dataset.class_names;
  for (std::size_t i :
       sample_shots(dataset.labels, dataset.class_names, config.shots, config.seed)) {
    out.samples.push_back(dataset.view_set(i));
  }
  return out;
}

TrainingSample make_training_sample(const ViewSet& set, AugmentStrategy strategy,
                                    NegativeMode mode, const Embedding& class_feature) {
  TrainingSample s;
  s.label = set.label;
  if (strategy != AugmentStrategy::random_crop) {
    if (set.views.size() != 2) throw ShapeError("augmented sample needs exactly two views");
    s.normal = set.views[0];
    s.pseudo.push_back({set.views[1], 1.0});
    return s;
  }
  const SelectedPair pair = select_views(set, class_feature);
  s.normal = pair.normal;
  const double others = static_cast<double>(set.views.size() - 1);
  const double local_share = mode == NegativeMode::global ? 0.0
                             : mode == NegativeMode::local ? 1.0
                                                           : 0.5;
  if (local_share < 1.0) s.pseudo.push_back({pair.pseudo, 1.0 - local_share});
  if (local_share > 0.0) {
    for (std::size_t j = 0; j < set.views.size(); ++j) {
      if (static_cast<int>(j) == pair.normal_index) continue;
      s.pseudo.push_back({set.views[j], local_share / others});
    }
  }
  return s;
}

PromptBank initial_bank(const Backbone& backbone, std::span<const std::string> class_names,
                        const TrainConfig& config) {
  if (config.context_length != backbone.config.context_length) {
    throw CompatibilityError("context length " + std::to_string(config.context_length) +
                             " does not match the backbone's " +
                             std::to_string(backbone.config.context_length));
  }
  return init_prompt_bank(class_names, config.context_length, config.negative_prompts,
                          backbone.vocabulary, config.seed);
}

TrainedModel train(std::shared_ptr<const Backbone> backbone, const ShotSet& shots,
                   const TrainConfig& config) {
  validate(config);
  if (!backbone) throw ConfigError("train needs a backbone");
  if (shots.samples.empty()) throw DataError("no training samples");
  for (const ViewSet& set : shots.samples) {
    for (const auto& v : set.views) {
      if (v.size() != backbone->config.embed_dim) {
        throw CompatibilityError("view width " + std::to_string(v.size()) +
                                 " does not match the backbone's d = " +
                                 std::to_string(backbone->config.embed_dim));
      }
    }
  }

  TrainedModel model;
  model.backbone = backbone;
  model.config = config;
  model.bank = initial_bank(*backbone, shots.class_names, config);
  const Objective objective = config.objective();
  const TextEncoder& text = backbone->text;

  std::vector<TrainingSample> batch;
  if (config.crops.schedule == CropSchedule::fixed) {
    batch = build_batch(shots, config, encode_category_features(model.bank, text));
  }

  Velocity velocity = zero_velocity(model.bank);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.crops.schedule == CropSchedule::adaptive) {
      batch = build_batch(shots, config, encode_category_features(model.bank, text));
    }
    const GradientResult g = loss_gradients(batch, model.bank, text, objective);
    const double lr = cosine_lr(epoch, config.epochs, config.lr);
    model.trace.push_back({epoch, lr, g.loss});
    if (!std::isfinite(g.loss.total)) {
      throw DataError("training loss became non-finite at epoch " + std::to_string(epoch));
    }
    momentum_step(model.bank.class_context, velocity.class_context, g.gradients.class_context,
                  lr, config.momentum);
    for (std::size_t n = 0; n < model.bank.negative_contexts.size(); ++n) {
      momentum_step(model.bank.negative_contexts[n], velocity.negative_contexts[n],
                    g.gradients.negative_contexts[n], lr, config.momentum);
    }
  }
  model.refresh_features();
  return model;
}

std::vector<ScoredPrediction> predict_all(const TrainedModel& model,
                                          std::span<const Embedding> features,
                                          std::span<const int> labels) {
  if (features.size() != labels.size()) throw DataError("feature and label counts differ");
  std::vector<ScoredPrediction> out;
  out.reserve(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].size() != model.backbone->config.embed_dim) {
      throw CompatibilityError("feature width " + std::to_string(features[i].size()) +
                               " does not match the model's d = " +
                               std::to_string(model.backbone->config.embed_dim));
    }
    const Prediction p = predict(features[i], model.category_features, model.config.temperature);
    out.push_back({p.confidence, p.predicted, labels[i]});
  }
  return out;
}

std::vector<int> remap_labels(const TrainedModel& model, std::span<const std::string> names,
                              std::span<const int> labels) {
  std::map<std::string, int> index;
  for (std::size_t c = 0; c < model.bank.class_names.size(); ++c) {
    index.emplace(model.bank.class_names[c], static_cast<int>(c));
  }
  std::vector<int> to_model(names.size());
  for (std::size_t c = 0; c < names.size(); ++c) {
    const auto it = index.find(names[c]);
    if (it == index.end()) {
      throw CompatibilityError("class '" + names[c] + "' is not known to the model");
    }
    to_model[c] = it->second;
  }
  std::vector<int> out;
  out.reserve(labels.size());
  for (int l : labels) out.push_back(to_model.at(static_cast<std::size_t>(l)));
  return out;
}

std::vector<ScoredPrediction> evaluate_images(const TrainedModel& model,
                                              const ImageDataset& dataset) {
  validate(dataset);
  const VisionGeometry& g = model.backbone->config.vision;
  std::vector<Embedding> features;
  features.reserve(dataset.size());
  for (const Image& img : dataset.images) {
    if (img.height != g.image_size || img.width != g.image_size || img.channels != g.channels) {
      throw CompatibilityError("image shape does not match the model's vision geometry");
    }
    features.push_back(model.backbone->vision.encode(img));
  }
  return predict_all(model, features,
                     remap_labels(model, dataset.class_names, dataset.labels));
}

std::vector<ScoredPrediction> evaluate_embeddings(const TrainedModel& model,
                                                  const EmbeddingDataset& dataset) {
  validate(dataset);
  if (dataset.k != 1) {
    throw DataError("evaluation needs full-image features (k = 1), file has k = " +
                    std::to_string(dataset.k));
  }
  return predict_all(model, dataset.views,
                     remap_labels(model, dataset.class_names, dataset.labels));
}

}  // namespace misd
