#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "misd/core_model.hpp"
#include "misd/data_io.hpp"
#include "misd/errors.hpp"
#include "misd/losses.hpp"
#include "misd/rng.hpp"

using namespace misd;

namespace {

Prompt random_prompt(int slots, int d_tok, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Prompt p;
  for (int s = 0; s < slots; ++s) {
    TokenEmbedding t(d_tok);
    for (int i = 0; i < d_tok; ++i) t[i] = n(rng);
    p.push_back(t);
  }
  return p;
}

Eigen::VectorXd random_vector(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd v(d);
  for (int i = 0; i < d; ++i) v[i] = n(rng);
  return v;
}

}  // namespace

TEST_CASE("text encoder maps the zero prompt to zero when the bias is zero") {
  TextEncoder enc(Eigen::MatrixXd::Random(8, 5 * 6), Eigen::VectorXd::Zero(8), 6);
  Prompt p(5, TokenEmbedding::Zero(6));
  CHECK(enc.encode(p).isZero(0.0));
}

TEST_CASE("text encoder is deterministic and shape-checked") {
  const TextEncoder enc = TextEncoder::seeded(8, 6, 5, 3);
  std::mt19937_64 rng(1);
  const Prompt p = random_prompt(5, 6, rng);
  CHECK(enc.encode(p) == enc.encode(p));
  CHECK(TextEncoder::seeded(8, 6, 5, 3).weight() == enc.weight());

  Prompt short_prompt(p.begin(), p.end() - 1);
  CHECK_THROWS_AS(enc.encode(short_prompt), ShapeError);
  Prompt bad_width = p;
  bad_width[2] = TokenEmbedding::Zero(5);
  CHECK_THROWS_AS(enc.encode(bad_width), ShapeError);
  CHECK_THROWS_AS(enc.vjp(p, Eigen::VectorXd::Zero(7)), ShapeError);
}

TEST_CASE("text encoder output follows its Jacobian for a small perturbation") {
  const TextEncoder enc = TextEncoder::seeded(8, 6, 5, 11);
  std::mt19937_64 rng(2);
  const Prompt p = random_prompt(5, 6, rng, 0.3);
  const Embedding t0 = enc.encode(p);
  const double eps = 1e-5;
  for (int slot = 0; slot < 5; ++slot) {
    for (int i = 0; i < 6; ++i) {
      Prompt q = p;
      q[slot][i] += eps;
      const Embedding moved = enc.encode(q) - t0;
      // Column of J for this coordinate, from the analytic form.
      const Eigen::VectorXd col =
          (1.0 - t0.array().square()).matrix().cwiseProduct(enc.weight().col(slot * 6 + i));
      CHECK((moved - eps * col).norm() < 1e-8);
    }
  }
}

TEST_CASE("text encoder vjp matches central differences on 100 random pairs") {
  const double h = 1e-5;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(1000 + trial));
    const TextEncoder enc = TextEncoder::seeded(8, 6, 5, static_cast<std::uint64_t>(trial));
    const Prompt p = random_prompt(5, 6, rng, 0.5);
    const Eigen::VectorXd cot = random_vector(8, rng);
    const auto g = enc.vjp(p, cot);
    REQUIRE(g.size() == 5);
    for (int slot = 0; slot < 5; ++slot) {
      for (int i = 0; i < 6; ++i) {
        Prompt a = p, b = p;
        a[slot][i] += h;
        b[slot][i] -= h;
        const double numeric = (cot.dot(enc.encode(a)) - cot.dot(enc.encode(b))) / (2 * h);
        const double analytic = g[slot][i];
        const double rel = std::abs(analytic - numeric) /
                           std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        worst = std::max(worst, rel);
      }
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("text encoder vjp is linear in the cotangent") {
  const TextEncoder enc = TextEncoder::seeded(8, 6, 5, 5);
  std::mt19937_64 rng(3);
  const Prompt p = random_prompt(5, 6, rng);
  for (const auto& g : enc.vjp(p, Eigen::VectorXd::Zero(8))) CHECK(g.isZero(0.0));
  const Eigen::VectorXd a = random_vector(8, rng), b = random_vector(8, rng);
  const auto ga = enc.vjp(p, a), gb = enc.vjp(p, b), gab = enc.vjp(p, a + b);
  for (int s = 0; s < 5; ++s) CHECK((gab[s] - ga[s] - gb[s]).norm() < 1e-12);
}

TEST_CASE("vision encoder contract") {
  const VisionGeometry g{};
  const VisionEncoder plain = VisionEncoder::seeded(16, g, 9);
  SUBCASE("zero image and zero bias give zero") {
    CHECK(plain.encode(Image(32, 32, 3)).isZero(0.0));
  }
  SUBCASE("output width and determinism") {
    Image img(32, 32, 3);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0, 1);
    for (auto& px : img.pixels) px = u(rng);
    const Embedding e = plain.encode(img);
    CHECK(e.size() == 16);
    CHECK(e == plain.encode(img));
    CHECK(VisionEncoder::seeded(16, g, 9).encode(img) == e);
  }
  SUBCASE("images differing in one patch differ in output") {
    Image a(32, 32, 3, 0.2);
    Image b = a;
    for (int y = 8; y < 16; ++y) b.at(y, 3, 1) = 0.9;
    CHECK((plain.encode(a) - plain.encode(b)).norm() > 1e-6);
  }
  SUBCASE("constant images map onto the bias") {
    const VisionEncoder biased = VisionEncoder::seeded(16, g, 9, 0.1, 0.3);
    CHECK(biased.bias().norm() == doctest::Approx(0.3));
    CHECK((biased.encode(Image(32, 32, 3, 0.7)) - biased.bias()).norm() < 1e-12);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(plain.encode(Image(16, 16, 3)), ShapeError);
    CHECK_THROWS_AS(plain.encode(Image(32, 32, 1)), ShapeError);
    Image nan(32, 32, 3);
    nan.at(5, 5, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(plain.encode(nan), DataError);
    CHECK_THROWS_AS(VisionEncoder::seeded(16, g, 9, 1.5), ConfigError);
  }
}

TEST_CASE("prompt bank initialisation") {
  const SeededVocabulary vocab(6, 1);
  const PromptBank a = init_prompt_bank(5, 16, 4, vocab, 7);
  CHECK(a == init_prompt_bank(5, 16, 4, vocab, 7));
  const PromptBank b = init_prompt_bank(5, 16, 4, vocab, 8);
  CHECK_FALSE(a.class_context[0] == b.class_context[0]);
  CHECK(a.class_tokens[3] == b.class_tokens[3]);  // frozen vocabulary, not the bank seed

  CHECK(a.num_classes() == 5);
  CHECK(a.context_length() == 16);
  CHECK(a.num_negatives() == 4);
  CHECK(a.class_prompt(2).size() == 17);
  CHECK(a.negative_prompt(1).back() == a.null_token);

  // Context entries ~ N(0, 0.02^2).
  double sq = 0;
  int n = 0;
  const PromptBank big = init_prompt_bank(5, 16, 4, SeededVocabulary(64, 1), 3);
  for (const auto& t : big.class_context) { sq += t.squaredNorm(); n += static_cast<int>(t.size()); }
  for (const auto& ctx : big.negative_contexts) {
    for (const auto& t : ctx) { sq += t.squaredNorm(); n += static_cast<int>(t.size()); }
  }
  CHECK(std::sqrt(sq / n) == doctest::Approx(kContextInitScale).epsilon(0.05));

  CHECK_THROWS_AS(init_prompt_bank(1, 16, 4, vocab, 7), DegenerateTaskError);
  CHECK_THROWS_AS(init_prompt_bank(5, 0, 4, vocab, 7), ConfigError);
  CHECK_THROWS_AS(init_prompt_bank(5, 16, 0, vocab, 7), ConfigError);
}

TEST_CASE("backbone is regenerated bit-identically from its config") {
  const auto a = Backbone::create({});
  const auto b = Backbone::create({});
  CHECK(a->text.weight() == b->text.weight());
  CHECK(a->vision.bias() == b->vision.bias());
  CHECK(a->vocabulary.token("concept_03") == b->vocabulary.token("concept_03"));
  CHECK(a->vocabulary.null_token() == b->vocabulary.null_token());
  BackboneConfig bad;
  bad.vision_bias = -1;
  CHECK_THROWS_AS(Backbone::create(bad), ConfigError);
}

TEST_CASE("grounded class prompts recognise their own concept") {
  const auto bb = Backbone::create({});
  const auto names = synth_class_names(10);
  const PromptBank bank = init_prompt_bank(names, 16, 1, bb->vocabulary, 0);
  PromptBank zero = bank;
  for (auto& t : zero.class_context) t.setZero();
  const auto features = encode_category_features(zero, bb->text);
  const ConceptWorld world(bb->config.world_seed);
  for (int c = 0; c < 10; ++c) {
    const Embedding img =
        bb->vision.encode(world.canonical_image(names[c], 32, 3, bb->config.background_level));
    int best = 0;
    for (int j = 1; j < 10; ++j) {
      if (cosine_sim(img, features[j]) > cosine_sim(img, features[best])) best = j;
    }
    CHECK(best == c);
  }
}
