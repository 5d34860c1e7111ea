#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "tubemesh/geometry.hpp"

namespace tubemesh::metrics {

struct PairedMeasurements {
  std::vector<double> reference;
  std::vector<double> predicted;

  std::size_t size() const { return reference.size(); }
  void add(double ref, double pred) {
    reference.push_back(ref);
    predicted.push_back(pred);
  }
};

// Two-way, absolute-agreement, single-measure intraclass correlation
// ICC(A,1) over n subjects x 2 raters.
double icc(const PairedMeasurements& pairs);

struct BlandAltman {
  double bias = 0.0;
  double lower = 0.0;  // bias - 1.96 sd
  double upper = 0.0;  // bias + 1.96 sd
};

BlandAltman bland_altman(const PairedMeasurements& pairs);

struct ConfusionMatrix {
  std::size_t k = 0;
  std::vector<long long> counts;  // row-major, rows = reference

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes)
      : k(classes), counts(classes * classes, 0) {}

  long long& at(std::size_t ref, std::size_t pred) {
    return counts[ref * k + pred];
  }
  long long at(std::size_t ref, std::size_t pred) const {
    return counts[ref * k + pred];
  }
  void add(int ref, int pred) { ++counts[static_cast<std::size_t>(ref) * k +
                                         static_cast<std::size_t>(pred)]; }
  long long total() const;
};

// Linearly weighted Cohen's kappa: w_ij = 1 - |i-j|/(k-1).
double weighted_kappa(const ConfusionMatrix& cm);

// Multiclass Matthews correlation coefficient (covariance form).
double mcc(const ConfusionMatrix& cm);

double accuracy(const ConfusionMatrix& cm);
double one_off_accuracy(const ConfusionMatrix& cm);

struct KappaCI {
  double kappa = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

// Nonparametric bootstrap over patients (pair list), fixed seed.
KappaCI weighted_kappa_ci(const std::vector<std::pair<int, int>>& pairs,
                          std::size_t classes, int resamples = 2000,
                          std::uint64_t seed = 777);

struct LesionStats {
  double sensitivity = 0.0;
  double tp_per_artery = 0.0;
  double fp_per_artery = 0.0;
  std::size_t n_reference = 0;
  std::size_t n_matched = 0;
  std::size_t n_false_positive = 0;
  std::size_t n_arteries = 0;
  PairedMeasurements matched_volumes;  // (reference, predicted) mm^3
};

// Reference and predicted lesion lists per artery. A prediction matches a
// reference lesion when they share at least one (theta,z) vertex; matched
// reference volumes pair with the summed volume of their overlapping
// predictions.
LesionStats lesion_detection(
    const std::vector<std::vector<geom::Lesion>>& reference,
    const std::vector<std::vector<geom::Lesion>>& predicted);

}  // namespace tubemesh::metrics
