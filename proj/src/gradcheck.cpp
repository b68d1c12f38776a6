#include "misd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>

#include "misd/core_model.hpp"
#include "misd/errors.hpp"
#include "misd/losses.hpp"
#include "misd/rng.hpp"

namespace misd {
namespace {

constexpr std::size_t kMaxReportedFailures = 10;

struct Term {
  const char* name;
  Objective objective;
};

Eigen::VectorXd gaussian(Eigen::Index n, double scale, Rng& rng) {
  std::normal_distribution<double> dist(0.0, scale);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

// One coordinate of a trainable token, addressed for perturbation and naming.
struct Coordinate {
  std::string name;
  std::function<double&(PromptBank&)> slot;
  std::function<double(const PromptGradients&)> grad;
};

std::vector<Coordinate> coordinates(const PromptBank& bank) {
  std::vector<Coordinate> out;
  const auto L = static_cast<std::size_t>(bank.context_length());
  const auto dt = static_cast<Eigen::Index>(bank.token_dim());
  for (std::size_t i = 0; i < L; ++i) {
    for (Eigen::Index j = 0; j < dt; ++j) {
      out.push_back({"class_context[" + std::to_string(i) + "][" + std::to_string(j) + "]",
                     [=](PromptBank& b) -> double& { return b.class_context[i][j]; },
                     [=](const PromptGradients& g) { return g.class_context[i][j]; }});
    }
  }
  for (std::size_t n = 0; n < bank.negative_contexts.size(); ++n) {
    for (std::size_t i = 0; i < L; ++i) {
      for (Eigen::Index j = 0; j < dt; ++j) {
        out.push_back({"negative_contexts[" + std::to_string(n) + "][" + std::to_string(i) +
                           "][" + std::to_string(j) + "]",
                       [=](PromptBank& b) -> double& { return b.negative_contexts[n][i][j]; },
                       [=](const PromptGradients& g) { return g.negative_contexts[n][i][j]; }});
      }
    }
  }
  return out;
}

std::vector<TrainingSample> random_batch(const GradcheckConfig& c, Rng& rng) {
  std::uniform_int_distribution<int> label(0, c.num_classes - 1);
  std::uniform_int_distribution<int> mode(0, 2);
  std::uniform_real_distribution<double> weight(0.1, 1.0);
  std::vector<TrainingSample> batch;
  for (int b = 0; b < c.batch; ++b) {
    TrainingSample s;
    s.label = label(rng);
    s.normal = gaussian(c.embed_dim, 1.0, rng);
    // Mimic the three negative modes: one pseudo view, all others, or both.
    const int m = mode(rng);
    if (m != 1) s.pseudo.push_back({gaussian(c.embed_dim, 1.0, rng), m == 0 ? 1.0 : 0.5});
    if (m != 0) {
      for (int v = 1; v < c.views; ++v) {
        s.pseudo.push_back({gaussian(c.embed_dim, 1.0, rng), weight(rng) / (c.views - 1)});
      }
    }
    batch.push_back(std::move(s));
  }
  return batch;
}

}  // namespace

GradcheckResult run_gradcheck(const GradcheckConfig& c) {
  if (c.trials < 1) throw ConfigError("gradcheck needs at least one trial");
  if (c.embed_dim < 1 || c.token_dim < 1 || c.context_length < 1 || c.negative_prompts < 1 ||
      c.batch < 1 || c.views < 2) {
    throw ConfigError("gradcheck sizes must be positive (views >= 2)");
  }
  if (c.num_classes < 2) throw DegenerateTaskError("gradcheck needs at least two classes");
  if (!(c.step > 0.0) || !(c.tolerance > 0.0) || !(c.floor > 0.0)) {
    throw ConfigError("gradcheck step, tolerance and floor must be positive");
  }

  GradcheckResult result;
  result.trials = c.trials;
  result.worst.relative_error = -1.0;
  for (int trial = 0; trial < c.trials; ++trial) {
    Rng rng = make_rng(c.seed, "gradcheck", static_cast<std::uint64_t>(trial));
    const TextEncoder text =
        TextEncoder::seeded(c.embed_dim, c.token_dim, c.context_length + 1, rng());
    const SeededVocabulary vocab(c.token_dim, rng());
    PromptBank bank =
        init_prompt_bank(c.num_classes, c.context_length, c.negative_prompts, vocab, rng());
    // Spread the contexts well beyond their init scale so the prompts differ.
    for (auto& t : bank.class_context) t = gaussian(c.token_dim, 0.5, rng);
    for (auto& ctx : bank.negative_contexts) {
      for (auto& t : ctx) t = gaussian(c.token_dim, 0.5, rng);
    }
    const std::vector<TrainingSample> batch = random_batch(c, rng);
    const double temperature = std::uniform_real_distribution<double>(0.5, 2.0)(rng);

    const Term terms[] = {
        {"ce", {temperature, {0.0, 0.0}, 1.0}},
        {"neg", {temperature, {1.0, 0.0}, 0.0}},
        {"orth", {temperature, {0.0, 1.0}, 0.0}},
        {"total", {temperature, {5.0, 0.5}, 1.0}},
    };
    const auto coords = coordinates(bank);
    const std::size_t perturbed = std::uniform_int_distribution<std::size_t>(
        0, coords.size() - 1)(rng);

    for (const Term& term : terms) {
      const PromptGradients grads = loss_gradients(batch, bank, text, term.objective).gradients;
      for (std::size_t k = 0; k < coords.size(); ++k) {
        const Coordinate& coord = coords[k];
        double& x = coord.slot(bank);
        const double x0 = x;
        x = x0 + c.step;
        const double up = objective_value(evaluate_loss(batch, bank, text, term.objective),
                                          term.objective);
        x = x0 - c.step;
        const double down = objective_value(evaluate_loss(batch, bank, text, term.objective),
                                            term.objective);
        x = x0;
        const double numeric = (up - down) / (2.0 * c.step);
        double analytic = coord.grad(grads);
        if (k == perturbed) analytic += c.perturbation;
        double rel = std::abs(analytic - numeric) /
                     std::max({std::abs(analytic), std::abs(numeric), c.floor});
        if (std::isnan(rel)) rel = std::numeric_limits<double>::infinity();
        ++result.coordinates;
        const GradcheckWorst here{trial, term.name, coord.name, analytic, numeric, rel};
        if (rel > result.worst.relative_error) result.worst = here;
        if (!(rel < c.tolerance) && result.failures.size() < kMaxReportedFailures) {
          result.failures.push_back(here);
        }
      }
    }
  }
  result.passed = result.worst.relative_error < c.tolerance;
  return result;
}

}  // namespace misd
