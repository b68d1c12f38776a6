#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "misd/concept_world.hpp"
#include "misd/image.hpp"

namespace misd {

// Feature-space vector of width d shared by images and prompts.
using Embedding = Eigen::VectorXd;
// Input-space vector of width d_tok; one per prompt slot.
using TokenEmbedding = Eigen::VectorXd;
// L context tokens followed by one class (or null) token.
using Prompt = std::vector<TokenEmbedding>;

/// Frozen text tower: t = tanh(W * concat(prompt) + b).
///
/// W is d x (slots * d_tok). The encoder is a pure function of its input and
/// exposes the vector-Jacobian product needed to train prompt tokens through
/// it.
class TextEncoder {
 public:
  TextEncoder(Eigen::MatrixXd weight, Eigen::VectorXd bias, int token_dim);

  /// Weights ~ N(0, 1/d_tok), bias ~ N(0, bias_scale^2).
  static TextEncoder seeded(int embed_dim, int token_dim, int slots, std::uint64_t seed,
                            double bias_scale = 0.1);

  int embed_dim() const noexcept { return static_cast<int>(weight_.rows()); }
  int token_dim() const noexcept { return token_dim_; }
  int slots() const noexcept { return static_cast<int>(weight_.cols()) / token_dim_; }
  const Eigen::MatrixXd& weight() const noexcept { return weight_; }
  const Eigen::VectorXd& bias() const noexcept { return bias_; }

  Embedding encode(std::span<const TokenEmbedding> prompt) const;

  /// J^T * cotangent, split per slot. Recomputes the forward pass.
  std::vector<TokenEmbedding> vjp(std::span<const TokenEmbedding> prompt,
                                  const Embedding& cotangent) const;

  /// Same as vjp() when the forward output is already known.
  std::vector<TokenEmbedding> vjp_from_output(const Embedding& output,
                                              const Embedding& cotangent) const;

 private:
  Eigen::VectorXd flatten(std::span<const TokenEmbedding> prompt) const;

  Eigen::MatrixXd weight_;
  Eigen::VectorXd bias_;
  int token_dim_;
};

struct VisionGeometry {
  int image_size = 32;
  int patch_size = 8;
  int channels = 3;

  int patches_per_side() const noexcept { return image_size / patch_size; }
  int patch_count() const noexcept { return patches_per_side() * patches_per_side(); }
  int patch_width() const noexcept { return patch_size * patch_size * channels; }

  bool operator==(const VisionGeometry&) const = default;
};

/// Frozen image tower: mean over non-overlapping patches of a per-position
/// linear projection, plus bias.
///
/// Every projection row sums to zero, so a patch of constant intensity maps
/// to zero: the features respond to colour contrast and texture but not to
/// overall brightness. The bias is the shared "any image" direction that
/// content-free inputs (flat or noisy backgrounds) collapse onto.
class VisionEncoder {
 public:
  VisionEncoder(VisionGeometry geometry, std::vector<Eigen::MatrixXd> projections,
                Eigen::VectorXd bias);

  /// Each position's projection mixes a shared component with a
  /// position-specific one: (1 - position_mix) * G + position_mix * R_p.
  /// The bias points in a random direction with norm bias_norm.
  static VisionEncoder seeded(int embed_dim, VisionGeometry geometry, std::uint64_t seed,
                              double position_mix = 0.5, double bias_norm = 0.0);

  int embed_dim() const noexcept { return static_cast<int>(bias_.size()); }
  const VisionGeometry& geometry() const noexcept { return geometry_; }
  const std::vector<Eigen::MatrixXd>& projections() const noexcept { return projections_; }
  const Eigen::VectorXd& bias() const noexcept { return bias_; }

  Embedding encode(const Image& image) const;

 private:
  VisionGeometry geometry_;
  std::vector<Eigen::MatrixXd> projections_;
  Eigen::VectorXd bias_;
};

/// Frozen map from class names to class-slot tokens.
class Vocabulary {
 public:
  virtual ~Vocabulary() = default;
  virtual int token_dim() const noexcept = 0;
  virtual TokenEmbedding token(std::string_view name) const = 0;
  /// Filler for the class slot of negative prompts.
  virtual TokenEmbedding null_token() const = 0;
};

/// Tokens drawn from N(0, scale^2 / d_tok), keyed by (seed, name).
class SeededVocabulary final : public Vocabulary {
 public:
  SeededVocabulary(int token_dim, std::uint64_t seed, double scale = 1.0);

  int token_dim() const noexcept override { return token_dim_; }
  TokenEmbedding token(std::string_view name) const override;
  TokenEmbedding null_token() const override;

 private:
  int token_dim_;
  std::uint64_t seed_;
  double scale_;
};

/// Tokens grounded in a ConceptWorld: the token for a name is the
/// least-squares solution that makes the text encoder, with an all-zero
/// context, emit grounding_scale * unit(E_I(canonical image of name)).
///
/// This plays the role of pretraining: category prompts start out as an
/// imperfect zero-shot classifier which prompt learning then refines.
class GroundedVocabulary final : public Vocabulary {
 public:
  GroundedVocabulary(const TextEncoder& text, VisionEncoder vision, ConceptWorld world,
                     double background_level, double grounding_scale,
                     std::uint64_t null_seed);

  int token_dim() const noexcept override { return static_cast<int>(class_block_.cols()); }
  TokenEmbedding token(std::string_view name) const override;
  TokenEmbedding null_token() const override;

 private:
  Eigen::MatrixXd class_block_;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> solver_;
  Eigen::VectorXd bias_;
  VisionEncoder vision_;
  ConceptWorld world_;
  double background_level_;
  double grounding_scale_;
  SeededVocabulary null_source_;
  TokenEmbedding null_token_;

  static constexpr int kNullReferenceConcepts = 16;
};

/// Everything that defines the frozen encoders. Encoders are regenerated
/// from this on load, never stored.
struct BackboneConfig {
  int embed_dim = 64;
  int token_dim = 64;
  int context_length = 16;
  VisionGeometry vision{};
  double position_mix = 0.1;
  double vision_bias = 0.1;
  std::uint64_t seed = 20240611;
  std::uint64_t world_seed = 7;
  double background_level = 0.125;
  double grounding_scale = 0.5;

  bool operator==(const BackboneConfig&) const = default;
};

void validate(const BackboneConfig& config);

/// Frozen encoder pair plus its grounded vocabulary.
struct Backbone {
  BackboneConfig config;
  TextEncoder text;
  VisionEncoder vision;
  GroundedVocabulary vocabulary;

  static std::shared_ptr<const Backbone> create(const BackboneConfig& config);
};

/// The trainable state: shared class context, negative contexts, and the
/// frozen per-class tokens they are paired with.
struct PromptBank {
  std::vector<std::string> class_names;
  std::vector<TokenEmbedding> class_context;                   // L, trainable
  std::vector<TokenEmbedding> class_tokens;                    // C, frozen
  TokenEmbedding null_token;                                   // frozen
  std::vector<std::vector<TokenEmbedding>> negative_contexts;  // n_n x L, trainable

  int num_classes() const noexcept { return static_cast<int>(class_tokens.size()); }
  int context_length() const noexcept { return static_cast<int>(class_context.size()); }
  int num_negatives() const noexcept { return static_cast<int>(negative_contexts.size()); }
  int token_dim() const noexcept { return static_cast<int>(null_token.size()); }

  Prompt class_prompt(int c) const;
  Prompt negative_prompt(int n) const;

  bool operator==(const PromptBank& other) const;
};

/// Contexts ~ N(0, 0.02^2); class tokens looked up by name.
PromptBank init_prompt_bank(std::span<const std::string> class_names, int context_length,
                            int negative_count, const Vocabulary& vocabulary,
                            std::uint64_t seed);

/// Same, with names "class_0" ... "class_{C-1}".
PromptBank init_prompt_bank(int num_classes, int context_length, int negative_count,
                            const Vocabulary& vocabulary, std::uint64_t seed);

std::vector<Embedding> encode_category_features(const PromptBank& bank,
                                                const TextEncoder& text);
std::vector<Embedding> encode_negative_features(const PromptBank& bank,
                                                const TextEncoder& text);

inline constexpr double kContextInitScale = 0.02;

}  // namespace misd
