#pragma once

// Brute-force reference implementations used as test oracles. They are
// written from the metric and loss definitions directly, without sharing
// code with the library.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "misd/metrics.hpp"

namespace oracle {

using misd::Outcome;

inline double auroc(const std::vector<Outcome>& o) {
  double wins = 0;
  double pairs = 0;
  for (const auto& a : o) {
    if (!a.correct) continue;
    for (const auto& b : o) {
      if (b.correct) continue;
      pairs += 1;
      if (a.confidence > b.confidence) wins += 1;
      else if (a.confidence == b.confidence) wins += 0.5;
    }
  }
  return wins / pairs;
}

inline double fpr95(const std::vector<Outcome>& o) {
  double pos = 0, neg = 0;
  for (const auto& s : o) (s.correct ? pos : neg) += 1;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& t : o) {
    double tp = 0, fp = 0;
    for (const auto& s : o) {
      if (s.confidence >= t.confidence) (s.correct ? tp : fp) += 1;
    }
    if (100 * tp >= 95 * pos) best = std::min(best, fp / neg);
  }
  return best;
}

// Risk of each sample is the error rate among everything at least as
// confident; AURC is the mean over samples.
inline double aurc(const std::vector<Outcome>& o) {
  double sum = 0;
  for (const auto& t : o) {
    double n = 0, err = 0;
    for (const auto& s : o) {
      if (s.confidence >= t.confidence) {
        n += 1;
        if (!s.correct) err += 1;
      }
    }
    sum += err / n;
  }
  return sum / static_cast<double>(o.size());
}

// Optimal ordering: every correct sample first.
inline double aurc_optimal(const std::vector<Outcome>& o) {
  std::vector<bool> order;
  for (const auto& s : o) if (s.correct) order.push_back(false);
  for (const auto& s : o) if (!s.correct) order.push_back(true);
  double sum = 0, err = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (order[i]) err += 1;
    sum += err / static_cast<double>(i + 1);
  }
  return sum / static_cast<double>(o.size());
}

inline double aupr(const std::vector<Outcome>& o, bool success) {
  double sum = 0, positives = 0;
  for (const auto& t : o) {
    if (t.correct != success) continue;
    positives += 1;
    double above = 0, hits = 0;
    for (const auto& s : o) {
      const bool at_least = success ? s.confidence >= t.confidence : s.confidence <= t.confidence;
      if (at_least) {
        above += 1;
        if (s.correct == success) hits += 1;
      }
    }
    sum += hits / above;
  }
  return sum / positives;
}

// Random outcome set of size n in [2, max_n] with roughly tie_fraction of
// the confidences copied from another sample.
inline std::vector<Outcome> random_outcomes(std::mt19937_64& rng, int max_n, double tie_fraction,
                                            bool both_outcomes = true) {
  std::uniform_int_distribution<int> size(2, max_n);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (;;) {
    const int n = size(rng);
    std::vector<Outcome> o(static_cast<std::size_t>(n));
    const double p = unit(rng);
    for (auto& s : o) {
      s.confidence = 0.05 + 0.95 * unit(rng);
      s.correct = unit(rng) < p;
    }
    for (std::size_t i = 1; i < o.size(); ++i) {
      if (unit(rng) < tie_fraction) {
        std::uniform_int_distribution<std::size_t> other(0, i - 1);
        o[i].confidence = o[other(rng)].confidence;
      }
    }
    const auto good = std::count_if(o.begin(), o.end(), [](const Outcome& s) { return s.correct; });
    if (!both_outcomes || (good > 0 && good < n)) return o;
  }
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::path(MISD_TEST_TMP) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace oracle
