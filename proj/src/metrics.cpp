#include "tubemesh/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "tubemesh/rng.hpp"

namespace tubemesh::metrics {

double icc(const PairedMeasurements& pairs) {
  const std::size_t n = pairs.size();
  if (n < 2 || pairs.predicted.size() != n) {
    throw std::invalid_argument("icc: need >= 2 equal-length pairs");
  }
  const double k = 2.0;
  double grand = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    grand += pairs.reference[i] + pairs.predicted[i];
  grand /= (k * static_cast<double>(n));

  double col_ref = 0.0, col_pred = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    col_ref += pairs.reference[i];
    col_pred += pairs.predicted[i];
  }
  col_ref /= static_cast<double>(n);
  col_pred /= static_cast<double>(n);

  double ssr = 0.0, ssc = 0.0, sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double row = 0.5 * (pairs.reference[i] + pairs.predicted[i]);
    ssr += (row - grand) * (row - grand);
    const double e_ref = pairs.reference[i] - row - col_ref + grand;
    const double e_pred = pairs.predicted[i] - row - col_pred + grand;
    sse += e_ref * e_ref + e_pred * e_pred;
  }
  ssr *= k;
  ssc = static_cast<double>(n) * ((col_ref - grand) * (col_ref - grand) +
                                  (col_pred - grand) * (col_pred - grand));
  const double msr = ssr / static_cast<double>(n - 1);
  const double msc = ssc / (k - 1.0);
  const double mse = sse / static_cast<double>(n - 1) / (k - 1.0);

  if (msr == 0.0 && msc == 0.0 && mse == 0.0) {
    // zero variance everywhere: identical constant raters agree perfectly
    for (std::size_t i = 0; i < n; ++i) {
      if (pairs.reference[i] != pairs.predicted[i]) {
        throw std::invalid_argument("icc: degenerate zero-variance input");
      }
    }
    return 1.0;
  }
  return (msr - mse) /
         (msr + (k - 1.0) * mse + (k / static_cast<double>(n)) * (msc - mse));
}

BlandAltman bland_altman(const PairedMeasurements& pairs) {
  const std::size_t n = pairs.size();
  if (n < 2 || pairs.predicted.size() != n) {
    throw std::invalid_argument("bland_altman: need >= 2 equal-length pairs");
  }
  double bias = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    bias += pairs.predicted[i] - pairs.reference[i];
  bias /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pairs.predicted[i] - pairs.reference[i] - bias;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  return {bias, bias - 1.96 * sd, bias + 1.96 * sd};
}

long long ConfusionMatrix::total() const {
  long long t = 0;
  for (long long c : counts) t += c;
  return t;
}

double weighted_kappa(const ConfusionMatrix& cm) {
  const std::size_t k = cm.k;
  if (k < 2) throw std::invalid_argument("weighted_kappa: need k >= 2");
  const double total = static_cast<double>(cm.total());
  if (total <= 0) throw std::invalid_argument("weighted_kappa: empty matrix");
  std::vector<double> row(k, 0.0), col(k, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      row[i] += static_cast<double>(cm.at(i, j));
      col[j] += static_cast<double>(cm.at(i, j));
    }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double disagree = static_cast<double>(i > j ? i - j : j - i) /
                              static_cast<double>(k - 1);
      num += disagree * static_cast<double>(cm.at(i, j));
      den += disagree * row[i] * col[j] / total;
    }
  }
  if (den == 0.0) return 1.0;  // single-cell marginals: full agreement
  return 1.0 - num / den;
}

double mcc(const ConfusionMatrix& cm) {
  const std::size_t k = cm.k;
  const double s = static_cast<double>(cm.total());
  if (s <= 0) throw std::invalid_argument("mcc: empty matrix");
  double c = 0.0;
  std::vector<double> row(k, 0.0), col(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    c += static_cast<double>(cm.at(i, i));
    for (std::size_t j = 0; j < k; ++j) {
      row[i] += static_cast<double>(cm.at(i, j));
      col[j] += static_cast<double>(cm.at(i, j));
    }
  }
  double dot = 0.0, row2 = 0.0, col2 = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    dot += row[i] * col[i];
    row2 += row[i] * row[i];
    col2 += col[i] * col[i];
  }
  const double denom2 = (s * s - col2) * (s * s - row2);
  if (denom2 <= 0.0) return 0.0;  // zero-variance marginals
  return (c * s - dot) / std::sqrt(denom2);
}

double accuracy(const ConfusionMatrix& cm) {
  const double total = static_cast<double>(cm.total());
  if (total <= 0) throw std::invalid_argument("accuracy: empty matrix");
  double diag = 0.0;
  for (std::size_t i = 0; i < cm.k; ++i)
    diag += static_cast<double>(cm.at(i, i));
  return diag / total;
}

double one_off_accuracy(const ConfusionMatrix& cm) {
  const double total = static_cast<double>(cm.total());
  if (total <= 0) throw std::invalid_argument("one_off_accuracy: empty matrix");
  double near = 0.0;
  for (std::size_t i = 0; i < cm.k; ++i)
    for (std::size_t j = 0; j < cm.k; ++j)
      if ((i > j ? i - j : j - i) <= 1)
        near += static_cast<double>(cm.at(i, j));
  return near / total;
}

KappaCI weighted_kappa_ci(const std::vector<std::pair<int, int>>& pairs,
                          std::size_t classes, int resamples,
                          std::uint64_t seed) {
  if (pairs.empty()) throw std::invalid_argument("kappa ci: no pairs");
  ConfusionMatrix cm(classes);
  for (const auto& [r, p] : pairs) cm.add(r, p);
  KappaCI out;
  out.kappa = weighted_kappa(cm);

  Rng rng(seed);
  std::vector<double> boot(static_cast<std::size_t>(resamples));
  for (int b = 0; b < resamples; ++b) {
    ConfusionMatrix sample(classes);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto& [r, p] = pairs[rng.integer(pairs.size())];
      sample.add(r, p);
    }
    boot[static_cast<std::size_t>(b)] = weighted_kappa(sample);
  }
  std::sort(boot.begin(), boot.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(boot.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const double f = pos - static_cast<double>(lo);
    if (lo + 1 >= boot.size()) return boot.back();
    return boot[lo] * (1.0 - f) + boot[lo + 1] * f;
  };
  out.lower = quantile(0.025);
  out.upper = quantile(0.975);
  return out;
}

LesionStats lesion_detection(
    const std::vector<std::vector<geom::Lesion>>& reference,
    const std::vector<std::vector<geom::Lesion>>& predicted) {
  if (reference.size() != predicted.size()) {
    throw std::invalid_argument(
        "lesion_detection: per-artery list lengths differ");
  }
  LesionStats stats;
  stats.n_arteries = reference.size();
  for (std::size_t a = 0; a < reference.size(); ++a) {
    const auto& refs = reference[a];
    const auto& preds = predicted[a];
    std::vector<bool> pred_used(preds.size(), false);
    for (const auto& ref : refs) {
      stats.n_reference++;
      std::set<std::pair<std::size_t, std::size_t>> ref_vertices(
          ref.vertices.begin(), ref.vertices.end());
      double matched_volume = 0.0;
      bool matched = false;
      for (std::size_t p = 0; p < preds.size(); ++p) {
        const bool overlap = std::any_of(
            preds[p].vertices.begin(), preds[p].vertices.end(),
            [&](const auto& v) { return ref_vertices.count(v) > 0; });
        if (overlap) {
          matched = true;
          pred_used[p] = true;
          matched_volume += preds[p].volume_mm3;
        }
      }
      if (matched) {
        stats.n_matched++;
        stats.matched_volumes.add(ref.volume_mm3, matched_volume);
      }
    }
    for (std::size_t p = 0; p < preds.size(); ++p) {
      if (!pred_used[p]) stats.n_false_positive++;
    }
  }
  const double arteries =
      static_cast<double>(std::max<std::size_t>(stats.n_arteries, 1));
  stats.sensitivity = stats.n_reference == 0
                          ? 0.0
                          : static_cast<double>(stats.n_matched) /
                                static_cast<double>(stats.n_reference);
  stats.tp_per_artery = static_cast<double>(stats.n_matched) / arteries;
  stats.fp_per_artery = static_cast<double>(stats.n_false_positive) / arteries;
  return stats;
}

}  // namespace tubemesh::metrics
