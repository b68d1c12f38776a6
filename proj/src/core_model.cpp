#include "misd/core_model.hpp"

#include <cmath>
#include <random>
#include <utility>

#include "misd/errors.hpp"
#include "misd/rng.hpp"

namespace misd {
namespace {

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Eigen::MatrixXd m(rows, cols);
  // Fill row-major so the draw order does not depend on Eigen's storage.
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = normal(rng);
  }
  return m;
}

Eigen::VectorXd gaussian_vector(Eigen::Index n, double stddev, Rng& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// TextEncoder

TextEncoder::TextEncoder(Eigen::MatrixXd weight, Eigen::VectorXd bias, int token_dim)
    : weight_(std::move(weight)), bias_(std::move(bias)), token_dim_(token_dim) {
  if (token_dim_ <= 0 || weight_.cols() % token_dim_ != 0 || weight_.cols() == 0) {
    throw ShapeError("text encoder weight width must be a positive multiple of token_dim");
  }
  if (weight_.rows() < 2 || bias_.size() != weight_.rows()) {
    throw ShapeError("text encoder needs d >= 2 and a bias of length d");
  }
}

TextEncoder TextEncoder::seeded(int embed_dim, int token_dim, int slots, std::uint64_t seed,
                                double bias_scale) {
  if (embed_dim < 2 || token_dim < 1 || slots < 1) {
    throw ConfigError("text encoder dimensions must be positive (d >= 2)");
  }
  Rng rng(seed);
  Eigen::MatrixXd w = gaussian_matrix(embed_dim, static_cast<Eigen::Index>(slots) * token_dim,
                                      1.0 / std::sqrt(static_cast<double>(token_dim)), rng);
  Eigen::VectorXd b = gaussian_vector(embed_dim, bias_scale, rng);
  return TextEncoder(std::move(w), std::move(b), token_dim);
}

Eigen::VectorXd TextEncoder::flatten(std::span<const TokenEmbedding> prompt) const {
  if (static_cast<int>(prompt.size()) != slots()) {
    throw ShapeError("prompt has " + std::to_string(prompt.size()) + " slots, encoder expects " +
                     std::to_string(slots()));
  }
  Eigen::VectorXd x(weight_.cols());
  for (std::size_t s = 0; s < prompt.size(); ++s) {
    if (prompt[s].size() != token_dim_) throw ShapeError("token width mismatch");
    x.segment(static_cast<Eigen::Index>(s) * token_dim_, token_dim_) = prompt[s];
  }
  return x;
}

Embedding TextEncoder::encode(std::span<const TokenEmbedding> prompt) const {
  const Eigen::VectorXd x = flatten(prompt);
  Embedding out = (weight_ * x + bias_).array().tanh().matrix();
  return out;
}

std::vector<TokenEmbedding> TextEncoder::vjp(std::span<const TokenEmbedding> prompt,
                                             const Embedding& cotangent) const {
  return vjp_from_output(encode(prompt), cotangent);
}

std::vector<TokenEmbedding> TextEncoder::vjp_from_output(const Embedding& output,
                                                         const Embedding& cotangent) const {
  if (cotangent.size() != weight_.rows() || output.size() != weight_.rows()) {
    throw ShapeError("cotangent width must equal the embedding width");
  }
  const Eigen::VectorXd pre =
      (cotangent.array() * (1.0 - output.array().square())).matrix();
  const Eigen::VectorXd flat = weight_.transpose() * pre;
  std::vector<TokenEmbedding> grads(static_cast<std::size_t>(slots()));
  for (int s = 0; s < slots(); ++s) {
    grads[static_cast<std::size_t>(s)] = flat.segment(static_cast<Eigen::Index>(s) * token_dim_, token_dim_);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// VisionEncoder

VisionEncoder::VisionEncoder(VisionGeometry geometry, std::vector<Eigen::MatrixXd> projections,
                             Eigen::VectorXd bias)
    : geometry_(geometry), projections_(std::move(projections)), bias_(std::move(bias)) {
  if (geometry_.patch_size <= 0 || geometry_.channels <= 0 ||
      geometry_.image_size < geometry_.patch_size ||
      geometry_.image_size % geometry_.patch_size != 0) {
    throw ShapeError("image size must be a positive multiple of the patch size");
  }
  if (static_cast<int>(projections_.size()) != geometry_.patch_count()) {
    throw ShapeError("one projection per patch position is required");
  }
  if (bias_.size() < 2) throw ShapeError("vision embedding width must be >= 2");
  for (const auto& p : projections_) {
    if (p.rows() != bias_.size() || p.cols() != geometry_.patch_width()) {
      throw ShapeError("patch projection has the wrong shape");
    }
  }
}

VisionEncoder VisionEncoder::seeded(int embed_dim, VisionGeometry geometry, std::uint64_t seed,
                                    double position_mix, double bias_norm) {
  if (embed_dim < 2) throw ConfigError("embedding width must be >= 2");
  if (geometry.patch_size <= 0 || geometry.image_size % geometry.patch_size != 0) {
    throw ConfigError("image size must be a positive multiple of the patch size");
  }
  if (!(position_mix >= 0.0 && position_mix <= 1.0)) {
    throw ConfigError("position_mix must lie in [0, 1]");
  }
  if (!(bias_norm >= 0.0)) throw ConfigError("vision bias norm must be nonnegative");
  Rng rng(seed);
  const int fan_in = geometry.patch_width();
  const double stddev = 1.0 / std::sqrt(static_cast<double>(fan_in));
  const Eigen::MatrixXd shared = gaussian_matrix(embed_dim, fan_in, stddev, rng);
  std::vector<Eigen::MatrixXd> projections;
  projections.reserve(static_cast<std::size_t>(geometry.patch_count()));
  for (int p = 0; p < geometry.patch_count(); ++p) {
    Eigen::MatrixXd w = (1.0 - position_mix) * shared +
                        position_mix * gaussian_matrix(embed_dim, fan_in, stddev, rng);
    // Zero row sums: constant patches carry no signal.
    w.colwise() -= w.rowwise().mean();
    projections.push_back(std::move(w));
  }
  Eigen::VectorXd bias = gaussian_vector(embed_dim, 1.0, rng);
  bias *= bias_norm / bias.norm();
  return VisionEncoder(geometry, std::move(projections), std::move(bias));
}

Embedding VisionEncoder::encode(const Image& image) const {
  if (image.height != geometry_.image_size || image.width != geometry_.image_size ||
      image.channels != geometry_.channels) {
    throw ShapeError("image is " + std::to_string(image.height) + "x" +
                     std::to_string(image.width) + "x" + std::to_string(image.channels) +
                     ", encoder expects " + std::to_string(geometry_.image_size) + "x" +
                     std::to_string(geometry_.image_size) + "x" +
                     std::to_string(geometry_.channels));
  }
  if (!image.all_finite()) throw DataError("image contains non-finite pixels");

  const int per_side = geometry_.patches_per_side();
  const int ps = geometry_.patch_size;
  Eigen::VectorXd patch(geometry_.patch_width());
  Embedding sum = Embedding::Zero(bias_.size());
  for (int py = 0; py < per_side; ++py) {
    for (int px = 0; px < per_side; ++px) {
      Eigen::Index k = 0;
      for (int dy = 0; dy < ps; ++dy) {
        for (int dx = 0; dx < ps; ++dx) {
          for (int c = 0; c < geometry_.channels; ++c) {
            patch[k++] = image.at(py * ps + dy, px * ps + dx, c);
          }
        }
      }
      sum.noalias() += projections_[static_cast<std::size_t>(py * per_side + px)] * patch;
    }
  }
  return sum / static_cast<double>(geometry_.patch_count()) + bias_;
}

// ---------------------------------------------------------------------------
// Vocabularies

SeededVocabulary::SeededVocabulary(int token_dim, std::uint64_t seed, double scale)
    : token_dim_(token_dim), seed_(seed), scale_(scale) {
  if (token_dim_ < 1) throw ConfigError("token_dim must be positive");
}

TokenEmbedding SeededVocabulary::token(std::string_view name) const {
  Rng rng = make_rng(seed_, name);
  return gaussian_vector(token_dim_, scale_ / std::sqrt(static_cast<double>(token_dim_)), rng);
}

TokenEmbedding SeededVocabulary::null_token() const {
  Rng rng = make_rng(seed_, "<null>", 1);
  return gaussian_vector(token_dim_, scale_ / std::sqrt(static_cast<double>(token_dim_)), rng);
}

GroundedVocabulary::GroundedVocabulary(const TextEncoder& text, VisionEncoder vision,
                                       ConceptWorld world, double background_level,
                                       double grounding_scale, std::uint64_t null_seed)
    : class_block_(text.weight().rightCols(text.token_dim())),
      solver_(class_block_),
      bias_(text.bias()),
      vision_(std::move(vision)),
      world_(world),
      background_level_(background_level),
      grounding_scale_(grounding_scale),
      null_source_(text.token_dim(), null_seed) {
  if (vision_.embed_dim() != text.embed_dim()) {
    throw ShapeError("text and vision encoders disagree on the embedding width");
  }
  if (!(grounding_scale_ > 0.0 && grounding_scale_ < 1.0)) {
    throw ConfigError("grounding_scale must lie in (0, 1)");
  }
  // The null token sits at the typical magnitude of a grounded token, measured
  // on a fixed set of reference concepts.
  double norm_sum = 0.0;
  for (int i = 0; i < kNullReferenceConcepts; ++i) {
    norm_sum += token("reference_concept_" + std::to_string(i)).norm();
  }
  const TokenEmbedding raw = null_source_.null_token();
  null_token_ = (norm_sum / kNullReferenceConcepts / raw.norm()) * raw;
}

TokenEmbedding GroundedVocabulary::token(std::string_view name) const {
  const auto& g = vision_.geometry();
  const Embedding visual =
      vision_.encode(world_.canonical_image(name, g.image_size, g.channels, background_level_));
  const double norm = visual.norm();
  if (norm == 0.0) return null_source_.token(name);
  const Eigen::VectorXd target = (grounding_scale_ / norm) * visual;
  const Eigen::VectorXd pre = target.array().atanh().matrix() - bias_;
  return solver_.solve(pre);
}

TokenEmbedding GroundedVocabulary::null_token() const { return null_token_; }

// ---------------------------------------------------------------------------
// Backbone

void validate(const BackboneConfig& c) {
  if (c.embed_dim < 2) throw ConfigError("embed_dim must be >= 2");
  if (c.token_dim < 1) throw ConfigError("token_dim must be positive");
  if (c.context_length < 1) throw ConfigError("context length must be positive");
  if (c.vision.patch_size < 1 || c.vision.channels < 1 ||
      c.vision.image_size < c.vision.patch_size ||
      c.vision.image_size % c.vision.patch_size != 0) {
    throw ConfigError("image size must be a positive multiple of the patch size");
  }
  if (!(c.vision_bias >= 0.0)) throw ConfigError("vision_bias must be nonnegative");
}

std::shared_ptr<const Backbone> Backbone::create(const BackboneConfig& config) {
  validate(config);
  TextEncoder text = TextEncoder::seeded(config.embed_dim, config.token_dim,
                                         config.context_length + 1,
                                         derive_seed(config.seed, "text-encoder"));
  VisionEncoder vision = VisionEncoder::seeded(config.embed_dim, config.vision,
                                               derive_seed(config.seed, "vision-encoder"),
                                               config.position_mix, config.vision_bias);
  GroundedVocabulary vocab(text, vision, ConceptWorld(config.world_seed),
                           config.background_level, config.grounding_scale,
                           derive_seed(config.seed, "vocabulary"));
  return std::make_shared<const Backbone>(
      Backbone{config, std::move(text), std::move(vision), std::move(vocab)});
}

// ---------------------------------------------------------------------------
// PromptBank

Prompt PromptBank::class_prompt(int c) const {
  Prompt p = class_context;
  p.push_back(class_tokens.at(static_cast<std::size_t>(c)));
  return p;
}

Prompt PromptBank::negative_prompt(int n) const {
  Prompt p = negative_contexts.at(static_cast<std::size_t>(n));
  p.push_back(null_token);
  return p;
}

namespace {

bool same_tokens(const std::vector<TokenEmbedding>& a, const std::vector<TokenEmbedding>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size() || a[i] != b[i]) return false;
  }
  return true;
}

}  // namespace

bool PromptBank::operator==(const PromptBank& o) const {
  if (class_names != o.class_names || !same_tokens(class_context, o.class_context) ||
      !same_tokens(class_tokens, o.class_tokens) || null_token.size() != o.null_token.size() ||
      null_token != o.null_token || negative_contexts.size() != o.negative_contexts.size()) {
    return false;
  }
  for (std::size_t n = 0; n < negative_contexts.size(); ++n) {
    if (!same_tokens(negative_contexts[n], o.negative_contexts[n])) return false;
  }
  return true;
}

PromptBank init_prompt_bank(std::span<const std::string> class_names, int context_length,
                            int negative_count, const Vocabulary& vocabulary,
                            std::uint64_t seed) {
  if (class_names.size() < 2) {
    throw DegenerateTaskError("at least two classes are required, got " +
                              std::to_string(class_names.size()));
  }
  if (context_length < 1) throw ConfigError("context length must be positive");
  if (negative_count < 1) throw ConfigError("negative prompt count must be positive");

  const int d_tok = vocabulary.token_dim();
  Rng rng = make_rng(seed, "prompt-bank");
  PromptBank bank;
  bank.class_names.assign(class_names.begin(), class_names.end());
  for (int i = 0; i < context_length; ++i) {
    bank.class_context.push_back(gaussian_vector(d_tok, kContextInitScale, rng));
  }
  bank.negative_contexts.resize(static_cast<std::size_t>(negative_count));
  for (auto& ctx : bank.negative_contexts) {
    for (int i = 0; i < context_length; ++i) {
      ctx.push_back(gaussian_vector(d_tok, kContextInitScale, rng));
    }
  }
  for (const auto& name : class_names) bank.class_tokens.push_back(vocabulary.token(name));
  bank.null_token = vocabulary.null_token();
  return bank;
}

PromptBank init_prompt_bank(int num_classes, int context_length, int negative_count,
                            const Vocabulary& vocabulary, std::uint64_t seed) {
  if (num_classes < 2) {
    throw DegenerateTaskError("at least two classes are required, got " +
                              std::to_string(num_classes));
  }
  std::vector<std::string> names;
  for (int c = 0; c < num_classes; ++c) names.push_back("class_" + std::to_string(c));
  return init_prompt_bank(names, context_length, negative_count, vocabulary, seed);
}

std::vector<Embedding> encode_category_features(const PromptBank& bank, const TextEncoder& text) {
  std::vector<Embedding> out;
  out.reserve(bank.class_tokens.size());
  for (int c = 0; c < bank.num_classes(); ++c) out.push_back(text.encode(bank.class_prompt(c)));
  return out;
}

std::vector<Embedding> encode_negative_features(const PromptBank& bank, const TextEncoder& text) {
  std::vector<Embedding> out;
  out.reserve(bank.negative_contexts.size());
  for (int n = 0; n < bank.num_negatives(); ++n) out.push_back(text.encode(bank.negative_prompt(n)));
  return out;
}

}  // namespace misd
