#pragma once

#include <random>

#include "gudc/gaussmeas.hpp"

namespace testutil {

using gudc::Mat;
using gudc::Vec;

inline Vec randn(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> N;
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = N(rng);
  return v;
}

inline Mat randn(std::mt19937_64& rng, int r, int c) {
  std::normal_distribution<double> N;
  Mat m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = N(rng);
  return m;
}

// Well conditioned SPD: G G^T / d + floor * I.
inline Mat random_spd(std::mt19937_64& rng, int d, double floor = 0.2) {
  const Mat g = randn(rng, d, d);
  return g * g.transpose() / d + floor * Mat::Identity(d, d);
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Rows are samples from N(mean, cov).
inline Mat sample_gaussian(std::mt19937_64& rng, const Vec& mean, const Mat& cov, int n) {
  const Mat L = Eigen::LLT<Mat>(cov).matrixL();
  Mat out(n, mean.size());
  for (int i = 0; i < n; ++i) out.row(i) = (mean + L * randn(rng, static_cast<int>(mean.size()))).transpose();
  return out;
}

}  // namespace testutil
