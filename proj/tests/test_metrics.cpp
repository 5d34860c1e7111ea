#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support/testutil.hpp"
#include "tubemesh/metrics.hpp"

using namespace tubemesh;
using namespace tubemesh::metrics;

namespace {

// CAD-RADS confusion matrices from the evaluation tables, rows = reference.
ConfusionMatrix holdout_matrix() {
  ConfusionMatrix cm(6);
  const long long rows[6][6] = {{121, 17, 0, 0, 0, 0}, {11, 40, 10, 1, 0, 0},
                                {3, 14, 32, 7, 6, 0},  {0, 1, 6, 14, 2, 0},
                                {0, 0, 1, 4, 7, 0},    {0, 0, 0, 0, 3, 0}};
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) cm.at(i, j) = rows[i][j];
  return cm;
}

ConfusionMatrix external_matrix() {
  ConfusionMatrix cm(6);
  const long long rows[6][6] = {{259, 54, 1, 0, 0, 0}, {11, 76, 55, 16, 0, 0},
                                {0, 8, 53, 35, 3, 0},  {0, 1, 16, 29, 11, 0},
                                {0, 0, 1, 13, 13, 0},  {0, 0, 0, 0, 3, 0}};
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) cm.at(i, j) = rows[i][j];
  return cm;
}

// independent kappa route: weighted agreement form
double kappa_oracle(const ConfusionMatrix& cm) {
  const std::size_t k = cm.k;
  const double n = static_cast<double>(cm.total());
  std::vector<std::vector<double>> w(k, std::vector<double>(k));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      w[i][j] = 1.0 - std::fabs(static_cast<double>(i) -
                                static_cast<double>(j)) /
                          static_cast<double>(k - 1);
  std::vector<double> row(k, 0), col(k, 0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      row[i] += cm.at(i, j);
      col[j] += cm.at(i, j);
    }
  double po = 0.0, pe = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      po += w[i][j] * static_cast<double>(cm.at(i, j)) / n;
      pe += w[i][j] * row[i] * col[j] / (n * n);
    }
  if (pe == 1.0) return 1.0;
  return (po - pe) / (1.0 - pe);
}

// independent multiclass MCC route: explicit triple sums
double mcc_oracle(const ConfusionMatrix& cm) {
  const std::size_t K = cm.k;
  double num = 0.0;
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t l = 0; l < K; ++l)
      for (std::size_t m = 0; m < K; ++m)
        num += static_cast<double>(cm.at(k, k)) *
                   static_cast<double>(cm.at(l, m)) -
               static_cast<double>(cm.at(k, l)) *
                   static_cast<double>(cm.at(m, k));
  double d1 = 0.0, d2 = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    double pk = 0.0, pk_rest = 0.0, tk = 0.0, tk_rest = 0.0;
    for (std::size_t l = 0; l < K; ++l) {
      pk += static_cast<double>(cm.at(k, l));
      tk += static_cast<double>(cm.at(l, k));
    }
    for (std::size_t kp = 0; kp < K; ++kp) {
      if (kp == k) continue;
      for (std::size_t lp = 0; lp < K; ++lp) {
        pk_rest += static_cast<double>(cm.at(kp, lp));
        tk_rest += static_cast<double>(cm.at(lp, kp));
      }
    }
    d1 += pk * pk_rest;
    d2 += tk * tk_rest;
  }
  if (d1 <= 0.0 || d2 <= 0.0) return 0.0;
  return num / (std::sqrt(d1) * std::sqrt(d2));
}

// independent ICC(A,1): full two-way ANOVA with an explicit data matrix
double icc_oracle(const PairedMeasurements& pairs) {
  const std::size_t n = pairs.size();
  std::vector<std::vector<double>> x(n, std::vector<double>(2));
  for (std::size_t i = 0; i < n; ++i) {
    x[i][0] = pairs.reference[i];
    x[i][1] = pairs.predicted[i];
  }
  double grand = 0.0;
  for (const auto& r : x) grand += r[0] + r[1];
  grand /= static_cast<double>(2 * n);
  std::vector<double> rmean(n), cmean(2, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    rmean[i] = 0.5 * (x[i][0] + x[i][1]);
    cmean[0] += x[i][0];
    cmean[1] += x[i][1];
  }
  cmean[0] /= static_cast<double>(n);
  cmean[1] /= static_cast<double>(n);
  double ssr = 0, ssc = 0, sse = 0;
  for (std::size_t i = 0; i < n; ++i) ssr += std::pow(rmean[i] - grand, 2);
  ssr *= 2.0;
  for (int j = 0; j < 2; ++j)
    ssc += static_cast<double>(n) * std::pow(cmean[j] - grand, 2);
  for (std::size_t i = 0; i < n; ++i)
    for (int j = 0; j < 2; ++j)
      sse += std::pow(x[i][j] - rmean[i] - cmean[j] + grand, 2);
  const double msr = ssr / static_cast<double>(n - 1);
  const double msc = ssc / 1.0;
  const double mse = sse / static_cast<double>(n - 1);
  return (msr - mse) / (msr + mse + 2.0 / static_cast<double>(n) * (msc - mse));
}

geom::Lesion make_lesion(std::vector<std::pair<std::size_t, std::size_t>> v,
                         double vol) {
  geom::Lesion l;
  l.vertices = std::move(v);
  l.volume_mm3 = vol;
  return l;
}

}  // namespace

TEST_CASE("icc: identical raters give 1") {
  PairedMeasurements p;
  for (double v : {1.0, 5.0, 9.0, 2.5}) p.add(v, v);
  CHECK(icc(p) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("icc: a large constant bias is penalized (absolute agreement)") {
  PairedMeasurements p;
  const double ref[10] = {10, 12, 14, 9, 22, 31, 18, 15, 12, 25};
  for (double v : ref) p.add(v, v + 15.0);
  const double got = icc(p);
  CHECK(got < 0.5);
  CHECK(got == doctest::Approx(0.313140221152).epsilon(1e-9));
  CHECK(got == doctest::Approx(icc_oracle(p)).epsilon(1e-12));
}

TEST_CASE("icc: ten-pair set matches the frozen independent ANOVA value") {
  PairedMeasurements p;
  const double ref[10] = {10, 12, 14, 9, 22, 31, 18, 15, 12, 25};
  const double pred[10] = {11, 13, 12, 10, 25, 29, 20, 14, 15, 24};
  for (int i = 0; i < 10; ++i) p.add(ref[i], pred[i]);
  CHECK(icc(p) == doctest::Approx(0.963571180756).epsilon(1e-9));
}

TEST_CASE("icc: invariant under a shared affine transform") {
  Rng rng(5);
  PairedMeasurements p;
  for (int i = 0; i < 25; ++i) {
    const double r = rng.uniform(0, 50);
    p.add(r, r + rng.uniform(-4, 4));
  }
  const double base = icc(p);
  PairedMeasurements q;
  for (std::size_t i = 0; i < p.size(); ++i)
    q.add(3.0 * p.reference[i] - 7.0, 3.0 * p.predicted[i] - 7.0);
  CHECK(icc(q) == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("bland_altman basics") {
  PairedMeasurements same;
  for (double v : {1.0, 2.0, 3.0}) same.add(v, v);
  BlandAltman ba = bland_altman(same);
  CHECK(ba.bias == 0.0);
  CHECK(ba.lower == 0.0);
  CHECK(ba.upper == 0.0);

  PairedMeasurements two;
  two.add(0.0, 1.0);   // d = +1
  two.add(0.0, -1.0);  // d = -1
  ba = bland_altman(two);
  CHECK(ba.bias == 0.0);
  CHECK(ba.upper == doctest::Approx(1.96 * std::sqrt(2.0)).epsilon(1e-12));
  CHECK(ba.lower == doctest::Approx(-1.96 * std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("weighted kappa reproduces the published table values") {
  CHECK(weighted_kappa(holdout_matrix()) == doctest::Approx(0.75).epsilon(0.0067));
  CHECK(std::fabs(weighted_kappa(holdout_matrix()) - 0.75) < 0.005);
  CHECK(std::fabs(weighted_kappa(external_matrix()) - 0.71) < 0.005);
}

TEST_CASE("accuracy, one-off, and MCC reproduce the published values") {
  const ConfusionMatrix a = holdout_matrix();
  CHECK(std::fabs(accuracy(a) - 0.7133) < 0.001);
  CHECK(std::fabs(one_off_accuracy(a) - 0.96) < 0.005);
  CHECK(std::fabs(mcc(a) - 0.59) < 0.01);
}

TEST_CASE("identity matrix: kappa, accuracy, MCC all equal 1") {
  ConfusionMatrix cm(4);
  for (int i = 0; i < 4; ++i) cm.at(i, i) = 5;
  CHECK(weighted_kappa(cm) == doctest::Approx(1.0));
  CHECK(accuracy(cm) == 1.0);
  CHECK(mcc(cm) == doctest::Approx(1.0));
  CHECK(one_off_accuracy(cm) == 1.0);
}

TEST_CASE("statistics match independent oracles on random matrices") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 2 + rng.integer(5);
    ConfusionMatrix cm(k);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j)
        cm.at(i, j) = static_cast<long long>(rng.integer(20));
    cm.at(rng.integer(k), rng.integer(k)) += 1;  // never empty
    CHECK(std::fabs(weighted_kappa(cm) - kappa_oracle(cm)) < 1e-9);
    CHECK(std::fabs(mcc(cm) - mcc_oracle(cm)) < 1e-9);
    // one-off accuracy dominates accuracy
    CHECK(one_off_accuracy(cm) >= accuracy(cm) - 1e-15);
  }
}

TEST_CASE("icc and bland-altman match oracles on random pairs") {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    PairedMeasurements p;
    const std::size_t n = 3 + rng.integer(30);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = rng.uniform(-10, 60);
      p.add(r, r * rng.uniform(0.7, 1.3) + rng.uniform(-5, 5));
    }
    CHECK(std::fabs(icc(p) - icc_oracle(p)) < 1e-9);
    // direct mean/sd oracle for Bland-Altman
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += p.predicted[i] - p.reference[i];
    mean /= static_cast<double>(n);
    double ss = 0;
    for (std::size_t i = 0; i < n; ++i)
      ss += std::pow(p.predicted[i] - p.reference[i] - mean, 2);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    BlandAltman ba = bland_altman(p);
    CHECK(ba.bias == doctest::Approx(mean).epsilon(1e-12));
    CHECK(ba.upper - ba.bias == doctest::Approx(1.96 * sd).epsilon(1e-9));
  }
}

TEST_CASE("kappa and MCC are invariant under simultaneous relabeling") {
  Rng rng(17);
  ConfusionMatrix cm(5);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      cm.at(i, j) = static_cast<long long>(rng.integer(30));
  // reversal permutation keeps |i-j| structure intact
  ConfusionMatrix rev(5);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) rev.at(4 - i, 4 - j) = cm.at(i, j);
  CHECK(weighted_kappa(rev) == doctest::Approx(weighted_kappa(cm)).epsilon(1e-12));
  CHECK(mcc(rev) == doctest::Approx(mcc(cm)).epsilon(1e-12));
  CHECK(accuracy(rev) == doctest::Approx(accuracy(cm)).epsilon(1e-12));
}

TEST_CASE("kappa equals 1 exactly when off-diagonal mass is zero") {
  Rng rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    ConfusionMatrix cm(4);
    for (int i = 0; i < 4; ++i) cm.at(i, i) = 1 + rng.integer(10);
    CHECK(weighted_kappa(cm) == doctest::Approx(1.0).epsilon(1e-12));
    cm.at(0, 3) += 1;
    CHECK(weighted_kappa(cm) < 1.0);
  }
}

TEST_CASE("bootstrap kappa CI is deterministic and brackets the estimate") {
  Rng rng(23);
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < 120; ++i) {
    const int r = static_cast<int>(rng.integer(5));
    int p = r;
    if (rng.bernoulli(0.25)) p = static_cast<int>(rng.integer(5));
    pairs.emplace_back(r, p);
  }
  KappaCI a = weighted_kappa_ci(pairs, 6, 500, 777);
  KappaCI b = weighted_kappa_ci(pairs, 6, 500, 777);
  CHECK(a.kappa == b.kappa);
  CHECK(a.lower == b.lower);
  CHECK(a.upper == b.upper);
  CHECK(a.lower <= a.kappa);
  CHECK(a.kappa <= a.upper);
}

TEST_CASE("lesion detection: identical sets are fully matched") {
  auto l1 = make_lesion({{0, 1}, {0, 2}}, 10.0);
  auto l2 = make_lesion({{5, 8}, {6, 8}}, 4.0);
  std::vector<std::vector<geom::Lesion>> ref{{l1, l2}};
  LesionStats s = lesion_detection(ref, ref);
  CHECK(s.sensitivity == 1.0);
  CHECK(s.fp_per_artery == 0.0);
  CHECK(s.tp_per_artery == 2.0);
  CHECK(s.matched_volumes.size() == 2);
}

TEST_CASE("lesion detection: empty predictions give zero sensitivity, no FP") {
  auto l1 = make_lesion({{0, 1}}, 5.0);
  std::vector<std::vector<geom::Lesion>> ref{{l1}};
  std::vector<std::vector<geom::Lesion>> pred{{}};
  LesionStats s = lesion_detection(ref, pred);
  CHECK(s.sensitivity == 0.0);
  CHECK(s.fp_per_artery == 0.0);
  CHECK(s.matched_volumes.size() == 0);
}

TEST_CASE("lesion detection: hand-enumerated partial matching") {
  // 3 reference lesions; predictions match two of them plus one spurious
  auto r1 = make_lesion({{0, 1}, {0, 2}}, 12.0);
  auto r2 = make_lesion({{4, 6}}, 6.0);
  auto r3 = make_lesion({{9, 14}, {10, 14}}, 8.0);
  auto p1 = make_lesion({{0, 2}, {0, 3}}, 11.0);     // overlaps r1
  auto p2 = make_lesion({{9, 14}}, 7.5);             // overlaps r3
  auto p3 = make_lesion({{2, 10}}, 3.0);             // spurious
  std::vector<std::vector<geom::Lesion>> ref{{r1, r2, r3}};
  std::vector<std::vector<geom::Lesion>> pred{{p1, p2, p3}};
  LesionStats s = lesion_detection(ref, pred);
  CHECK(s.sensitivity == doctest::Approx(2.0 / 3.0));
  CHECK(s.tp_per_artery == 2.0);
  CHECK(s.fp_per_artery == 1.0);
  REQUIRE(s.matched_volumes.size() == 2);
  CHECK(s.matched_volumes.reference[0] == 12.0);
  CHECK(s.matched_volumes.predicted[0] == 11.0);
  CHECK(s.matched_volumes.reference[1] == 8.0);
  CHECK(s.matched_volumes.predicted[1] == 7.5);
}

TEST_CASE("paper-style bland-altman report format reproduces") {
  // format sanity only: bias and limits of agreement as (bias, lo, hi)
  PairedMeasurements p;
  Rng rng(29);
  for (int i = 0; i < 10; ++i) {
    const double r = rng.uniform(5, 60);
    p.add(r, r - 2.6 + rng.uniform(-3, 3));
  }
  BlandAltman ba = bland_altman(p);
  CHECK(ba.lower < ba.bias);
  CHECK(ba.bias < ba.upper);
}
