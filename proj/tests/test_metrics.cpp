#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "gctaf/errors.hpp"
#include "gctaf/metrics.hpp"
#include "gctaf/rng.hpp"

using namespace gctaf;

TEST_CASE("confusion counts for perfect and degenerate predictors") {
  std::vector<int> labels = {1, 1, 1, 0, 0, 0, 0, 0, 0, 0};
  ConfusionMatrix perfect = confusion(labels, labels);
  CHECK(perfect.tp == 3);
  CHECK(perfect.fp == 0);
  CHECK(perfect.fn == 0);
  CHECK(perfect.tn == 7);

  std::vector<int> all_nf(10, 0);
  ConfusionMatrix cm = confusion(all_nf, labels);
  CHECK(cm.tp == 0);
  CHECK(cm.fp == 0);
  CHECK(cm.fn == 3);
  CHECK(cm.tn == 7);
}

TEST_CASE("confusion matches a brute-force enumeration oracle") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    size_t n = 1 + rng.below(200);
    std::vector<int> labels(n), preds(n);
    for (size_t i = 0; i < n; ++i) {
      labels[i] = rng.next_double() < 0.3 ? 1 : 0;
      preds[i] = rng.next_double() < 0.5 ? 1 : 0;
    }
    ConfusionMatrix cm = confusion(preds, labels);
    uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (size_t i = 0; i < n; ++i) {
      if (labels[i] == 1 && preds[i] == 1) ++tp;
      if (labels[i] == 0 && preds[i] == 1) ++fp;
      if (labels[i] == 1 && preds[i] == 0) ++fn;
      if (labels[i] == 0 && preds[i] == 0) ++tn;
    }
    CHECK(cm.tp == tp);
    CHECK(cm.fp == fp);
    CHECK(cm.fn == fn);
    CHECK(cm.tn == tn);
  }
}

TEST_CASE("confusion rejects length mismatches and non-binary input") {
  std::vector<int> a = {0, 1}, b = {0, 1, 1};
  CHECK_THROWS_AS(confusion(a, b), ContractError);
  std::vector<int> bad = {0, 2};
  CHECK_THROWS_AS(confusion(bad, a), ContractError);
}

TEST_CASE("tss pinned values") {
  CHECK(*tss({10, 0, 0, 90}) == doctest::Approx(1.0));
  CHECK(*tss({0, 0, 10, 90}) == doctest::Approx(0.0));
  // 8/10 - 5/90
  CHECK(*tss({8, 5, 2, 85}) == doctest::Approx(0.7444).epsilon(1e-4));
  CHECK_FALSE(tss({0, 5, 0, 85}).has_value());  // no positives observed
  CHECK_FALSE(tss({5, 0, 5, 0}).has_value());   // no negatives observed
}

TEST_CASE("hss2 pinned values") {
  CHECK(*hss2({10, 0, 0, 90}) == doctest::Approx(1.0));
  // Predict-all-F is independent of the truth: chance level.
  CHECK(*hss2({10, 90, 0, 0}) == doctest::Approx(0.0));
  // 2 * (8*85 - 2*5) / ((10)(87) + (13)(90)) = 1340 / 2040
  CHECK(*hss2({8, 5, 2, 85}) == doctest::Approx(0.6569).epsilon(1e-4));
}

TEST_CASE("gs pinned values") {
  CHECK(*gs({10, 0, 0, 90}) == doctest::Approx(1.0));
  // ch = 13 * 10 / 100 = 1.3 ; (8 - 1.3) / (15 - 1.3)
  CHECK(*gs({8, 5, 2, 85}) == doctest::Approx(0.4890).epsilon(1e-4));
}

TEST_CASE("gs of a random predictor is near zero (Monte Carlo null)") {
  Rng rng(29);
  ConfusionMatrix cm;
  for (int i = 0; i < 10000; ++i) {
    int label = rng.next_double() < 0.2 ? 1 : 0;
    int pred = rng.next_double() < 0.35 ? 1 : 0;
    if (label == 1) {
      pred == 1 ? ++cm.tp : ++cm.fn;
    } else {
      pred == 1 ? ++cm.fp : ++cm.tn;
    }
  }
  CHECK(std::fabs(*gs(cm)) < 0.05);
}

TEST_CASE("accuracy and report") {
  CHECK(*accuracy({10, 0, 0, 90}) == doctest::Approx(1.0));
  MetricsReport r = report({8, 5, 2, 85});
  CHECK(*r.accuracy == doctest::Approx(0.93));
  CHECK(r.counts.tp == 8);
  CHECK_THROWS_AS(report(ConfusionMatrix{}), ContractError);
}

TEST_CASE("statistically independent predictors score zero skill") {
  // Rank-1 expected confusion matrices: tp = pi*rho*n, fn = pi*(1-rho)*n, ...
  struct Case {
    uint64_t n;
    double pi, rho;
  };
  for (Case c : {Case{1000, 0.3, 0.4}, Case{2000, 0.1, 0.5}, Case{500, 0.5, 0.2}}) {
    auto count = [&](double p) { return static_cast<uint64_t>(std::llround(p * c.n)); };
    ConfusionMatrix cm{count(c.pi * c.rho), count((1 - c.pi) * c.rho), count(c.pi * (1 - c.rho)),
                       count((1 - c.pi) * (1 - c.rho))};
    CHECK(std::fabs(*tss(cm)) < 1e-12);
    CHECK(std::fabs(*hss2(cm)) < 1e-12);
  }
}

TEST_CASE("tss is insensitive to class prevalence at fixed rates") {
  // tpr = 0.8, fpr = 0.1 under two very different prevalences.
  ConfusionMatrix rare{8, 90, 2, 810};
  ConfusionMatrix common{800, 9, 200, 81};
  CHECK(*tss(rare) == doctest::Approx(*tss(common)).epsilon(1e-12));
}

TEST_CASE("score ranges hold over random confusion matrices") {
  Rng rng(31);
  for (int i = 0; i < 200; ++i) {
    ConfusionMatrix cm{rng.below(50) + 1, rng.below(50), rng.below(50), rng.below(50) + 1};
    auto t = tss(cm);
    if (t.has_value()) {
      CHECK(*t >= -1.0);
      CHECK(*t <= 1.0);
    }
    auto a = accuracy(cm);
    CHECK(*a >= 0.0);
    CHECK(*a <= 1.0);
  }
}

TEST_CASE("scores from the matrix equal scores from raw vectors") {
  Rng rng(37);
  for (int trial = 0; trial < 20; ++trial) {
    size_t n = 50 + rng.below(100);
    std::vector<int> labels(n), preds(n);
    for (size_t i = 0; i < n; ++i) {
      labels[i] = rng.next_double() < 0.25 ? 1 : 0;
      preds[i] = rng.next_double() < 0.4 ? 1 : 0;
    }
    MetricsReport from_cm = report(confusion(preds, labels));
    // Brute-force counting oracle straight from the vectors.
    double tp = 0, fp = 0, fn = 0, tn = 0;
    for (size_t i = 0; i < n; ++i) {
      tp += labels[i] == 1 && preds[i] == 1;
      fp += labels[i] == 0 && preds[i] == 1;
      fn += labels[i] == 1 && preds[i] == 0;
      tn += labels[i] == 0 && preds[i] == 0;
    }
    if (tp + fn > 0 && fp + tn > 0) {
      CHECK(*from_cm.tss == doctest::Approx(tp / (tp + fn) - fp / (fp + tn)).epsilon(1e-12));
    }
    CHECK(*from_cm.accuracy == doctest::Approx((tp + tn) / static_cast<double>(n)).epsilon(1e-12));
  }
}

TEST_CASE("aggregate mean and sample standard deviation") {
  MetricsReport a = report({7, 3, 3, 87});
  std::vector<MetricsReport> same = {a, a, a};
  AggregateReport agg = aggregate(same);
  CHECK(*agg.tss.stdev == doctest::Approx(0.0));
  CHECK(agg.tss.n == 3);

  MetricsReport r1, r2;
  r1.tss = 0.7;
  r2.tss = 0.8;
  r1.counts = r2.counts = ConfusionMatrix{1, 1, 1, 1};
  std::vector<MetricsReport> two = {r1, r2};
  AggregateReport pair = aggregate(two);
  CHECK(*pair.tss.mean == doctest::Approx(0.75));
  CHECK(*pair.tss.stdev == doctest::Approx(0.0707).epsilon(1e-3));

  std::vector<MetricsReport> none;
  CHECK_THROWS_AS(aggregate(none), ContractError);
}

TEST_CASE("aggregate skips and flags undefined scores") {
  MetricsReport defined = report({5, 2, 1, 92});
  MetricsReport undefined;
  undefined.counts = ConfusionMatrix{0, 5, 0, 95};
  undefined.accuracy = accuracy(undefined.counts);
  undefined.tss = tss(undefined.counts);  // nullopt: no positives
  std::vector<MetricsReport> mixed = {defined, undefined};
  AggregateReport agg = aggregate(mixed);
  CHECK(agg.tss.n == 1);
  CHECK(agg.tss.skipped == 1);
  CHECK(*agg.tss.mean == doctest::Approx(*defined.tss));
}

TEST_CASE("metrics report JSON round-trips") {
  MetricsReport r = report({8, 5, 2, 85});
  nlohmann::json j = to_json(r);
  CHECK(j.at("counts").at("tp") == 8);
  MetricsReport back = metrics_report_from_json(j);
  CHECK(*back.tss == doctest::Approx(*r.tss).epsilon(1e-15));
  CHECK(back.counts.tn == r.counts.tn);

  MetricsReport undef;
  undef.counts = ConfusionMatrix{0, 0, 0, 10};
  undef.tss = std::nullopt;
  undef.accuracy = 1.0;
  nlohmann::json ju = to_json(undef);
  CHECK(ju.at("tss").is_null());
}
