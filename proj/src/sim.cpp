#include "gudc/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <thread>

namespace gudc {

MomentSequence propagate_moments(const LinearSystem& system, const AffinePolicy& policy,
                                 const UnbalancedGaussian& initial) {
  const int T = system.horizon, d = system.state_dim(), du = system.control_dim();
  if (policy.steps() != T - 1 || static_cast<int>(policy.feedforwards.size()) != T - 1 ||
      static_cast<int>(policy.anchors.size()) != T - 1 || static_cast<int>(policy.noise_covs.size()) != T - 1) {
    throw Error(ErrorCode::DimensionMismatch, "policy length must be horizon - 1");
  }
  if (initial.mean.size() != d || initial.cov.rows() != d || initial.cov.cols() != d) {
    throw Error(ErrorCode::DimensionMismatch, "initial measure and system differ in dimension");
  }
  MomentSequence out;
  out.mass = initial.mass;
  out.means.push_back(initial.mean);
  out.covs.push_back(initial.cov);
  for (int t = 0; t + 1 < T; ++t) {
    const Mat& K = policy.gains[t];
    if (K.rows() != du || K.cols() != d || policy.noise_covs[t].rows() != du || policy.feedforwards[t].size() != du) {
      throw Error(ErrorCode::DimensionMismatch, "policy step has wrong shape");
    }
    const Mat F = system.A + system.B * K;
    out.means.push_back(system.A * out.means[t] +
                        system.B * (K * (out.means[t] - policy.anchors[t]) + policy.feedforwards[t]));
    out.covs.push_back(symmetrize(F * out.covs[t] * F.transpose() +
                                  system.B * policy.noise_covs[t] * system.B.transpose()));
  }
  return out;
}

Vec TrajectoryEnsemble::state(int path, int t) const {
  const std::size_t base = (static_cast<std::size_t>(path) * horizon + t) * dim;
  return Eigen::Map<const Vec>(states.data() + base, dim);
}

Vec TrajectoryEnsemble::sample_mean(int t) const {
  Vec m = Vec::Zero(dim);
  for (int p = 0; p < n_paths; ++p) m += state(p, t);
  return m / n_paths;
}

Mat TrajectoryEnsemble::sample_cov(int t) const {
  const Vec m = sample_mean(t);
  Mat S = Mat::Zero(dim, dim);
  for (int p = 0; p < n_paths; ++p) {
    const Vec x = state(p, t) - m;
    S += x * x.transpose();
  }
  return S / std::max(1, n_paths - 1);
}

NormalStream::NormalStream(std::uint64_t seed) : engine_(seed) {}

double NormalStream::uniform() {
  return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double NormalStream::next() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double r = std::sqrt(-2.0 * std::log(uniform()));
  const double theta = 2.0 * std::numbers::pi * uniform();
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

Vec NormalStream::next(int n) {
  Vec z(n);
  for (int i = 0; i < n; ++i) z(i) = next();
  return z;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer applied to a mix of both inputs.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Mat sampling_factor(const Mat& cov) {
  const Mat S = symmetrize(cov);
  if (S.size() == 0) return S;
  const Eigen::LLT<Mat> llt(S);
  if (llt.info() == Eigen::Success && is_positive_definite(S)) return llt.matrixL();
  const Eigen::SelfAdjointEigenSolver<Mat> es(S);
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

int worker_threads() {
  if (const char* env = std::getenv("GAUSS_UDC_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

TrajectoryEnsemble sample_trajectories(const LinearSystem& system, const AffinePolicy& policy,
                                       const UnbalancedGaussian& initial, int n_paths, std::uint64_t seed) {
  // Validates shapes as a side effect.
  propagate_moments(system, policy, initial);
  if (n_paths < 0) throw Error(ErrorCode::InvalidArgument, "n_paths must be nonnegative");
  const int T = system.horizon, d = system.state_dim();
  TrajectoryEnsemble ens;
  ens.n_paths = n_paths;
  ens.horizon = T;
  ens.dim = d;
  ens.seed = seed;
  ens.states.assign(static_cast<std::size_t>(n_paths) * T * d, 0.0);

  const Mat L0 = sampling_factor(initial.cov);
  std::vector<Mat> Lu;
  for (const Mat& S : policy.noise_covs) Lu.push_back(sampling_factor(S));

  const auto run = [&](int begin, int end) {
    for (int p = begin; p < end; ++p) {
      NormalStream rng(derive_seed(seed, static_cast<std::uint64_t>(p)));
      Vec x = initial.mean + L0 * rng.next(d);
      double* out = ens.states.data() + static_cast<std::size_t>(p) * T * d;
      Eigen::Map<Vec>(out, d) = x;
      for (int t = 0; t + 1 < T; ++t) {
        const Vec u = policy.gains[t] * (x - policy.anchors[t]) + policy.feedforwards[t] +
                      Lu[t] * rng.next(static_cast<int>(Lu[t].cols()));
        x = system.A * x + system.B * u;
        Eigen::Map<Vec>(out + static_cast<std::size_t>(t + 1) * d, d) = x;
      }
    }
  };
  const int workers = std::min(worker_threads(), std::max(1, n_paths / 256));
  if (workers <= 1) {
    run(0, n_paths);
    return ens;
  }
  std::vector<std::thread> pool;
  const int chunk = (n_paths + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int b = w * chunk, e = std::min(n_paths, b + chunk);
    if (b < e) pool.emplace_back(run, b, e);
  }
  for (auto& th : pool) th.join();
  return ens;
}

Grid1D Grid1D::uniform(double lo, double hi, int n) {
  if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) throw Error(ErrorCode::InvalidArgument, "grid needs lo < hi");
  if (n < 50) throw Error(ErrorCode::InvalidArgument, "grid needs at least 50 points");
  Grid1D g;
  g.lo = lo;
  g.hi = hi;
  g.n = n;
  const double h = (hi - lo) / n;
  g.points = Vec::LinSpaced(n, lo + 0.5 * h, hi - 0.5 * h);
  g.weights = Vec::Constant(n, h);
  return g;
}

Vec density_on_grid(const UnbalancedGaussian& measure, const Grid1D& grid) {
  if (measure.dim() != 1) throw Error(ErrorCode::DimensionMismatch, "grid densities are one-dimensional");
  if (!(measure.cov(0, 0) > 0.0)) throw Error(ErrorCode::SingularCovariance, "variance must be positive");
  const double m = measure.mean(0), v = measure.cov(0, 0);
  const double k = measure.mass / std::sqrt(2.0 * std::numbers::pi * v);
  return grid.points.unaryExpr([&](double x) { return k * std::exp(-0.5 * (x - m) * (x - m) / v); });
}

}  // namespace gudc
