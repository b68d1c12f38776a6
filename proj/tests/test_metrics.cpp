#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "misd/errors.hpp"
#include "misd/losses.hpp"
#include "misd/metrics.hpp"
#include "oracles.hpp"

using namespace misd;

namespace {

std::vector<Outcome> outcomes(std::initializer_list<std::pair<double, bool>> v) {
  std::vector<Outcome> o;
  for (auto [c, ok] : v) o.push_back({c, ok});
  return o;
}

// The 4-sample set (0.9 C, 0.8 E, 0.7 C, 0.6 C).
std::vector<ScoredPrediction> worked_set() {
  return {{0.9, 1, 1}, {0.8, 2, 0}, {0.7, 0, 0}, {0.6, 3, 3}};
}

double round2(double v) { return std::round(v * 100.0) / 100.0; }

std::vector<ScoredPrediction> as_predictions(const std::vector<Outcome>& o) {
  std::vector<ScoredPrediction> p;
  for (const auto& s : o) p.push_back({s.confidence, 0, s.correct ? 0 : 1});
  return p;
}

void check_reports_close(const MisDReport& a, const MisDReport& b, double tol) {
  auto same = [&](const std::optional<double>& x, const std::optional<double>& y) {
    REQUIRE(x.has_value() == y.has_value());
    if (x) CHECK(std::abs(*x - *y) <= tol);
  };
  same(a.acc, b.acc);
  same(a.fpr95, b.fpr95);
  same(a.aurc, b.aurc);
  same(a.e_aurc, b.e_aurc);
  same(a.auroc, b.auroc);
  same(a.aupr_success, b.aupr_success);
  same(a.aupr_error, b.aupr_error);
}

}  // namespace

TEST_CASE("predict") {
  std::vector<Embedding> cat;
  for (int c = 0; c < 5; ++c) cat.push_back(Eigen::VectorXd::Unit(5, c) + 0.1 * Eigen::VectorXd::Ones(5));
  const Prediction p = predict(cat[3], cat, 1.0);
  CHECK(p.predicted == 3);
  CHECK(p.confidence == doctest::Approx(p.probabilities.maxCoeff()));

  std::vector<Embedding> tied(4, Eigen::VectorXd::Unit(3, 1));
  const Prediction t = predict(Eigen::VectorXd::Unit(3, 1), tied, 1.0);
  CHECK(t.predicted == 0);
  CHECK(t.confidence == doctest::Approx(0.25));

  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Embedding> c;
    for (int k = 0; k < 6; ++k) c.push_back(Eigen::VectorXd::NullaryExpr(4, [&] { return n(rng); }));
    const Embedding q = Eigen::VectorXd::NullaryExpr(4, [&] { return n(rng); });
    int best = 0;
    for (int k = 1; k < 6; ++k) if (cosine_sim(q, c[k]) > cosine_sim(q, c[best])) best = k;
    const Prediction r = predict(q, c, 1.0);
    CHECK(r.predicted == best);
    CHECK(r.confidence >= 1.0 / 6.0);
  }
  CHECK_THROWS_AS(predict(Eigen::VectorXd::Unit(3, 0), std::vector<Embedding>(1, Eigen::VectorXd::Unit(3, 0)), 1.0),
                  DegenerateTaskError);
}

TEST_CASE("decision rule accepts at the boundary") {
  CHECK(decide(0.9, 0.5) == Decision::accept);
  CHECK(decide(0.5, 0.5) == Decision::accept);
  CHECK(decide(0.49, 0.5) == Decision::flag);
}

TEST_CASE("AUROC examples") {
  CHECK(auroc(outcomes({{0.9, true}, {0.8, true}, {0.1, false}})) == 1.0);
  CHECK(auroc(outcomes({{0.5, true}, {0.5, false}, {0.5, true}})) == 0.5);
  CHECK(auroc(outcomes({{0.9, true}, {0.4, true}, {0.6, false}})) == 0.5);
  CHECK_THROWS_AS(auroc(outcomes({{0.9, true}, {0.4, true}})), UndefinedMetricError);
}

TEST_CASE("FPR95 examples") {
  CHECK(fpr_at_95_tpr(outcomes({{0.9, true}, {0.8, true}, {0.1, false}})) == 0.0);
  CHECK(fpr_at_95_tpr(outcomes({{0.9, true}, {0.7, true}, {0.6, true}, {0.8, false}})) == 1.0);
  CHECK(fpr_at_95_tpr(outcomes({{0.5, true}, {0.5, false}, {0.5, false}})) == 1.0);
  CHECK_THROWS_AS(fpr_at_95_tpr(outcomes({{0.9, false}})), UndefinedMetricError);
}

TEST_CASE("risk-coverage examples") {
  const auto rc = risk_coverage(to_outcomes(worked_set()));
  CHECK(rc.aurc == doctest::Approx(0.2708333333333333).epsilon(1e-12));
  CHECK(rc.aurc_optimal == doctest::Approx(0.0625).epsilon(1e-12));
  CHECK(rc.e_aurc == doctest::Approx(0.2083333333333333).epsilon(1e-12));

  const auto good = risk_coverage(outcomes({{0.9, true}, {0.3, true}}));
  CHECK(good.aurc == 0.0);
  CHECK(good.e_aurc == 0.0);
  const auto bad = risk_coverage(outcomes({{0.9, false}, {0.3, false}, {0.2, false}}));
  CHECK(bad.aurc == 1.0);
  CHECK(bad.e_aurc == 0.0);
  CHECK_THROWS_AS(risk_coverage({}), UndefinedMetricError);
}

TEST_CASE("AUPR examples") {
  const auto o = to_outcomes(worked_set());
  CHECK(aupr(o, Polarity::success) == doctest::Approx((1.0 + 2.0 / 3.0 + 0.75) / 3.0).epsilon(1e-12));
  CHECK(aupr(o, Polarity::error) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(aupr(outcomes({{0.9, true}, {0.8, true}, {0.1, false}}), Polarity::success) == 1.0);
  CHECK_THROWS_AS(aupr(outcomes({{0.9, true}}), Polarity::error), UndefinedMetricError);
}

TEST_CASE("full report on the worked four-sample set") {
  const MisDReport r = full_report(worked_set());
  CHECK(round2(*r.acc) == 75.00);
  CHECK(round2(*r.fpr95) == 100.00);
  CHECK(round2(*r.aurc) == 270.83);
  CHECK(round2(*r.e_aurc) == 208.33);
  CHECK(round2(*r.auroc) == 33.33);
  CHECK(round2(*r.aupr_success) == 80.56);
  CHECK(round2(*r.aupr_error) == 33.33);
  CHECK(r.notes.empty());
}

TEST_CASE("perfect predictor reports the undefined metrics as empty") {
  const std::vector<ScoredPrediction> p{{0.9, 1, 1}, {0.7, 0, 0}, {0.5, 2, 2}};
  const MisDReport r = full_report(p);
  CHECK(*r.acc == 100.0);
  CHECK(*r.aurc == 0.0);
  CHECK(*r.e_aurc == 0.0);
  CHECK(*r.aupr_success == 100.0);
  CHECK_FALSE(r.auroc.has_value());
  CHECK_FALSE(r.fpr95.has_value());
  CHECK_FALSE(r.aupr_error.has_value());
  CHECK(r.notes.size() == 3);
  CHECK_THROWS_WITH_AS(full_report_strict(p), doctest::Contains("FPR95"), UndefinedMetricError);
}

TEST_CASE("fast metrics agree with brute-force oracles, ties included") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const auto o = oracle::random_outcomes(rng, 64, 0.3);
    CHECK(std::abs(auroc(o) - oracle::auroc(o)) < 1e-12);
    CHECK(std::abs(fpr_at_95_tpr(o) - oracle::fpr95(o)) < 1e-12);
    const auto rc = risk_coverage(o);
    CHECK(std::abs(rc.aurc - oracle::aurc(o)) < 1e-12);
    CHECK(std::abs(rc.aurc_optimal - oracle::aurc_optimal(o)) < 1e-12);
    CHECK(std::abs(aupr(o, Polarity::success) - oracle::aupr(o, true)) < 1e-12);
    CHECK(std::abs(aupr(o, Polarity::error) - oracle::aupr(o, false)) < 1e-12);
  }
}

TEST_CASE("report invariants on random instances") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    auto o = oracle::random_outcomes(rng, 256, 0.3);
    const auto preds = as_predictions(o);
    const MisDReport r = full_report(preds);

    // Strictly increasing transforms.
    auto cubed = preds, exped = preds;
    for (auto& p : cubed) p.confidence = std::pow(p.confidence, 3);
    for (auto& p : exped) p.confidence = std::exp(p.confidence);
    check_reports_close(r, full_report(cubed), 1e-12);
    check_reports_close(r, full_report(exped), 1e-12);

    // Input order.
    auto shuffled = preds;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    check_reports_close(r, full_report(shuffled), 1e-12);

    // Bounds.
    for (const auto& f : {r.acc, r.fpr95, r.auroc, r.aupr_success, r.aupr_error}) {
      CHECK(*f >= 0.0);
      CHECK(*f <= 100.0);
    }
    CHECK(*r.e_aurc >= -1e-12);
    CHECK(*r.aurc >= *r.e_aurc);
  }
}

TEST_CASE("swapping outcomes mirrors AUROC when confidences are distinct") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    auto o = oracle::random_outcomes(rng, 100, 0.0);
    auto flipped = o;
    for (auto& s : flipped) s.correct = !s.correct;
    CHECK(auroc(flipped) == doctest::Approx(1.0 - auroc(o)).epsilon(1e-12));
  }
}

TEST_CASE("binary report carries AUROC and FPR95 only") {
  const MisDReport r = binary_report(outcomes({{0.9, true}, {0.8, false}, {0.7, true}}));
  CHECK(r.auroc.has_value());
  CHECK(r.fpr95.has_value());
  CHECK_FALSE(r.acc.has_value());
  CHECK_FALSE(r.aurc.has_value());
  CHECK_FALSE(r.aupr_success.has_value());
}
