#include "gudc/oracle.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>

namespace gudc {

namespace {

double log_sum_exp(const Eigen::ArrayXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v - m).exp().sum());
}

double discrete_kl(const Vec& p, const Vec& q) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) > 0.0) s += p(i) * std::log(p(i) / q(i));
    s += q(i) - p(i);
  }
  return s;
}

// Generalized Sinkhorn for
//   <C, P> + eps KL(P || a x b) + gamma KL(P 1 || a) + gamma KL(P^T 1 || b)
// with potentials (f, g): P_ij = a_i b_j exp((f_i + g_j - C_ij) / eps).
// Iterations run on a cached kernel K_ij = P_ij at absorbed potentials with
// scalings (u, v); the kernel is rebuilt when the scalings leave [e^-30, e^30],
// and rows that underflow in it are summed in the log domain. Residuals and the final plan are computed in the log domain.
class Sinkhorn {
 public:
  Sinkhorn(const Mat& C, const Vec& a, const Vec& b, double gamma)
      : C_(C), a_(a), b_(b), la_(a.array().log()), lb_(b.array().log()), gamma_(gamma),
        f_(Vec::Zero(a.size())), g_(Vec::Zero(b.size())) {}

  int solve(double eps, double tol, int max_iter) {
    eps_ = eps;
    const double k = gamma_ / (gamma_ + eps_);
    Eigen::ArrayXd lu = Eigen::ArrayXd::Zero(a_.size()), lv = Eigen::ArrayXd::Zero(b_.size());
    Mat K = kernel();
    const auto absorb = [&] {
      f_.array() += eps_ * lu;
      g_.array() += eps_ * lv;
      lu.setZero();
      lv.setZero();
      K = kernel();
    };
    int it = 0;
    for (; it < max_iter; ++it) {
      const Eigen::ArrayXd lu_old = lu + f_.array() / eps_, lv_old = lv + g_.array() / eps_;
      const Vec ev = lv.exp().matrix();
      Eigen::ArrayXd kv = (K * ev).array().log();
      for (Eigen::Index i = 0; i < kv.size(); ++i) {
        if (!(kv(i) > -650.0)) kv(i) = log_row(i, lv);
      }
      lu = -k * kv + (k - 1.0) * f_.array() / eps_ + k * la_;
      const Vec eu = lu.exp().matrix();
      Eigen::ArrayXd ku = (K.transpose() * eu).array().log();
      for (Eigen::Index j = 0; j < ku.size(); ++j) {
        if (!(ku(j) > -650.0)) ku(j) = log_col(j, lu);
      }
      lv = -k * ku + (k - 1.0) * g_.array() / eps_ + k * lb_;
      // The coupling term is invariant under (f + s, g - s); the best shift
      // is closed form and removes the slow mode when gamma >> eps.
      const double sa = log_sum_exp(la_ - (f_.array() + eps_ * lu) / gamma_);
      const double sb = log_sum_exp(lb_ - (g_.array() + eps_ * lv) / gamma_);
      const double s = 0.5 * gamma_ * (sa - sb);
      lu += s / eps_;
      lv -= s / eps_;
      if (!lu.allFinite() || !lv.allFinite()) {
        throw Error(ErrorCode::SinkhornDivergence, "Sinkhorn scalings are not finite");
      }
      const double change = eps_ * std::max((lu + f_.array() / eps_ - lu_old).abs().maxCoeff(),
                                            (lv + g_.array() / eps_ - lv_old).abs().maxCoeff());
      if (lu.abs().maxCoeff() > 30.0 || lv.abs().maxCoeff() > 30.0) absorb();
      if (change <= tol) break;
    }
    f_.array() += eps_ * lu;
    g_.array() += eps_ * lv;
    return it + 1;
  }

  double residual() const {
    return std::max((update_f(g_) - f_).cwiseAbs().maxCoeff(), (update_g(f_) - g_).cwiseAbs().maxCoeff());
  }

  Mat plan() const {
    Mat P(a_.size(), b_.size());
    for (Eigen::Index j = 0; j < b_.size(); ++j) {
      P.col(j) = ((la_ + (f_.array() + g_(j) - C_.col(j).array()) / eps_) + lb_(j)).exp().matrix();
    }
    return P;
  }

  double primal(const Mat& P, double eps) const {
    double ent = 0.0;
    if (eps > 0.0) {
      for (Eigen::Index j = 0; j < P.cols(); ++j) {
        for (Eigen::Index i = 0; i < P.rows(); ++i) {
          const double p = P(i, j), q = a_(i) * b_(j);
          if (p > 0.0) ent += p * std::log(p / q);
          ent += q - p;
        }
      }
    }
    return (C_.array() * P.array()).sum() + eps * ent + gamma_ * discrete_kl(P.rowwise().sum(), a_) +
           gamma_ * discrete_kl(P.colwise().sum().transpose(), b_);
  }

  double dual(const Mat& P) const {
    return -gamma_ * (a_.array() * ((-f_.array() / gamma_).exp() - 1.0)).sum() -
           gamma_ * (b_.array() * ((-g_.array() / gamma_).exp() - 1.0)).sum() - eps_ * (P.sum() - a_.sum() * b_.sum());
  }

 private:
  double kappa() const { return gamma_ / (gamma_ + eps_); }

  // log (K v)_i and log (K^T u)_j without underflow, for rows the cached kernel loses.
  double log_row(Eigen::Index i, const Eigen::ArrayXd& lv) const {
    return log_sum_exp(la_(i) + lb_ + lv + (f_(i) + g_.array() - C_.row(i).transpose().array()) / eps_);
  }
  double log_col(Eigen::Index j, const Eigen::ArrayXd& lu) const {
    return log_sum_exp(lb_(j) + la_ + lu + (g_(j) + f_.array() - C_.col(j).array()) / eps_);
  }

  // Entries below e^-650 are dropped: subnormals make every product far slower.
  Mat kernel() const {
    Mat P(a_.size(), b_.size());
    for (Eigen::Index j = 0; j < b_.size(); ++j) {
      const Eigen::ArrayXd e = (la_ + (f_.array() + g_(j) - C_.col(j).array()) / eps_) + lb_(j);
      P.col(j) = (e > -650.0).select(e.exp(), 0.0).matrix();
    }
    return P;
  }

  Vec update_f(const Vec& g) const {
    const Eigen::Index n = a_.size();
    Vec f(n);
    const Eigen::ArrayXd base = lb_ + g.array() / eps_;
    for (Eigen::Index i = 0; i < n; ++i) f(i) = -kappa() * eps_ * log_sum_exp(base - C_.row(i).transpose().array() / eps_);
    return f;
  }

  Vec update_g(const Vec& f) const {
    const Eigen::Index m = b_.size();
    Vec g(m);
    const Eigen::ArrayXd base = la_ + f.array() / eps_;
    for (Eigen::Index j = 0; j < m; ++j) g(j) = -kappa() * eps_ * log_sum_exp(base - C_.col(j).array() / eps_);
    return g;
  }

  const Mat& C_;
  Vec a_, b_;
  Eigen::ArrayXd la_, lb_;
  double gamma_;
  double eps_ = 1.0;
  Vec f_, g_;
};

Vec discretize(const UnbalancedGaussian& mu, const Grid1D& grid) {
  return density_on_grid(mu, grid).cwiseProduct(grid.weights);
}

Mat cost_matrix(const Grid1D& grid) {
  const int n = grid.n;
  Mat C(n, n);
  for (int j = 0; j < n; ++j) C.col(j) = (grid.points.array() - grid.points(j)).square().matrix();
  return C;
}

void check_grid_inputs(const UnbalancedGaussian& alpha, const UnbalancedGaussian& beta, double gamma) {
  UOTProblem{alpha, beta, gamma}.validate();
  if (alpha.dim() != 1) throw Error(ErrorCode::DimensionMismatch, "grid solvers are one-dimensional");
}

GridPlan finish(const Sinkhorn& sk, const Vec& a, const Vec& b, double eps, double eval_eps, int iterations) {
  GridPlan out;
  out.plan = sk.plan();
  out.a = a;
  out.b = b;
  out.iterations = iterations;
  out.residual = sk.residual();
  out.dual_gap = sk.primal(out.plan, eps) - sk.dual(out.plan);
  out.value = sk.primal(out.plan, eval_eps);
  return out;
}

constexpr double kSinkhornTol = 1e-11;
constexpr int kSinkhornMaxIter = 200000;

}  // namespace

Grid1D default_grid(const UnbalancedGaussian& alpha, const UnbalancedGaussian& beta, int n) {
  const double s = std::sqrt(std::max(alpha.cov(0, 0), beta.cov(0, 0)));
  return Grid1D::uniform(std::min(alpha.mean(0), beta.mean(0)) - 6.0 * s,
                         std::max(alpha.mean(0), beta.mean(0)) + 6.0 * s, n);
}

std::vector<double> default_eps_schedule(const Grid1D& grid) {
  const double unit = (grid.hi - grid.lo) * (grid.hi - grid.lo) / grid.n;
  return {1e-1 * unit, 3e-2 * unit, 1e-2 * unit};
}

GridPlan grid_uot(const UnbalancedGaussian& alpha, const UnbalancedGaussian& beta, double gamma,
                  const Grid1D& grid, std::vector<double> eps_schedule) {
  check_grid_inputs(alpha, beta, gamma);
  if (eps_schedule.empty()) eps_schedule = default_eps_schedule(grid);
  const Vec a = discretize(alpha, grid), b = discretize(beta, grid);
  const Mat C = cost_matrix(grid);
  Sinkhorn sk(C, a, b, gamma);
  int iterations = 0;
  for (double eps : eps_schedule) {
    if (!(eps > 0.0)) throw Error(ErrorCode::InvalidArgument, "entropic weights must be positive");
    iterations += sk.solve(eps, kSinkhornTol, kSinkhornMaxIter);
  }
  return finish(sk, a, b, eps_schedule.back(), 0.0, iterations);
}

GridPlan grid_euot(const UnbalancedGaussian& alpha, const UnbalancedGaussian& beta, double gamma, double sigma,
                   const Grid1D& grid) {
  check_grid_inputs(alpha, beta, gamma);
  if (!(sigma > 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma must be positive");
  const Vec a = discretize(alpha, grid), b = discretize(beta, grid);
  const Mat C = cost_matrix(grid);
  Sinkhorn sk(C, a, b, gamma);
  const int iterations = sk.solve(sigma, kSinkhornTol, kSinkhornMaxIter);
  return finish(sk, a, b, sigma, sigma, iterations);
}

GaussianPlan grid_plan_moments(const GridPlan& plan, const Grid1D& grid) {
  const double c = plan.plan.sum();
  const Vec p1 = plan.plan.rowwise().sum(), p2 = plan.plan.colwise().sum().transpose();
  const Vec& x = grid.points;
  const double m1 = p1.dot(x) / c, m2 = p2.dot(x) / c;
  const Vec dx = x.array() - m1, dy = x.array() - m2;
  GaussianPlan out;
  out.mass = c;
  out.mean1 = Vec::Constant(1, m1);
  out.mean2 = Vec::Constant(1, m2);
  out.cov1 = Mat::Constant(1, 1, p1.dot(dx.cwiseProduct(dx)) / c);
  out.cov2 = Mat::Constant(1, 1, p2.dot(dy.cwiseProduct(dy)) / c);
  out.cross = Mat::Constant(1, 1, dx.dot(plan.plan * dy) / c);
  return out;
}

// ---- multistart ----

namespace {

struct RawLayout {
  int d, du, T;
  bool entropy;
  int tri(int n) const { return n * (n + 1) / 2; }
  int size() const { return 1 + d + tri(d) + (T - 1) * (du + du * d + tri(du)); }
};

Mat lower_from(const double* p, int n, bool exp_diag) {
  Mat L = Mat::Zero(n, n);
  int k = 0;
  for (int j = 0; j < n; ++j)
    for (int i = j; i < n; ++i) L(i, j) = (i == j && exp_diag) ? std::exp(p[k++]) : p[k++];
  return L;
}

double raw_objective(const UDCProblem& problem, const RawLayout& lay, double epsilon, const double* p) {
  const double c = std::exp(p[0]);
  int k = 1;
  const Vec m1 = Eigen::Map<const Vec>(p + k, lay.d);
  k += lay.d;
  const Mat L1 = lower_from(p + k, lay.d, true);
  k += lay.tri(lay.d);
  AffinePolicy policy;
  for (int t = 0; t + 1 < lay.T; ++t) {
    policy.feedforwards.push_back(Eigen::Map<const Vec>(p + k, lay.du));
    k += lay.du;
    policy.gains.push_back(Eigen::Map<const Mat>(p + k, lay.du, lay.d));
    k += lay.du * lay.d;
    const Mat Lu = lower_from(p + k, lay.du, lay.entropy);
    k += lay.tri(lay.du);
    policy.noise_covs.push_back(Lu * Lu.transpose());
    policy.anchors.push_back(Vec::Zero(lay.d));
  }
  try {
    const double v = policy_objective(problem, {c, m1, L1 * L1.transpose()}, policy, epsilon);
    return std::isfinite(v) ? v : 1e30;
  } catch (const Error&) {
    return 1e30;
  }
}

struct GslContext {
  std::function<double(const double*)> f;
  int n;
};

double gsl_f(const gsl_vector* x, void* params) {
  const auto* ctx = static_cast<GslContext*>(params);
  return ctx->f(x->data);
}

void gsl_df(const gsl_vector* x, void* params, gsl_vector* g) {
  const auto* ctx = static_cast<GslContext*>(params);
  std::vector<double> p(x->data, x->data + ctx->n);
  for (int i = 0; i < ctx->n; ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(p[i]));
    const double xi = p[i];
    p[i] = xi + h;
    const double fp = ctx->f(p.data());
    p[i] = xi - h;
    const double fm = ctx->f(p.data());
    p[i] = xi;
    gsl_vector_set(g, i, (fp - fm) / (2.0 * h));
  }
}

void gsl_fdf(const gsl_vector* x, void* params, double* f, gsl_vector* g) {
  *f = gsl_f(x, params);
  gsl_df(x, params, g);
}

double bfgs_minimize(GslContext& ctx, std::vector<double>& x0) {
  gsl_set_error_handler_off();
  gsl_multimin_function_fdf fn{&gsl_f, &gsl_df, &gsl_fdf, static_cast<std::size_t>(ctx.n), &ctx};
  gsl_vector* x = gsl_vector_alloc(ctx.n);
  for (int i = 0; i < ctx.n; ++i) gsl_vector_set(x, i, x0[i]);
  gsl_multimin_fdfminimizer* s = gsl_multimin_fdfminimizer_alloc(gsl_multimin_fdfminimizer_vector_bfgs2, ctx.n);
  double best = ctx.f(x->data);
  // BFGS can stall on a poor Hessian model; a few cold restarts polish the minimum.
  for (int round = 0; round < 4; ++round) {
    gsl_multimin_fdfminimizer_set(s, &fn, x, 0.1, 0.1);
    for (int it = 0; it < 4000; ++it) {
      if (gsl_multimin_fdfminimizer_iterate(s) != GSL_SUCCESS) break;
      if (gsl_multimin_test_gradient(s->gradient, 1e-9) == GSL_SUCCESS) break;
    }
    gsl_vector_memcpy(x, s->x);
    const double v = s->f;
    const bool improved = v < best - 1e-12 * (1.0 + std::abs(best));
    best = std::min(best, v);
    if (!improved && round > 0) break;
  }
  for (int i = 0; i < ctx.n; ++i) x0[i] = gsl_vector_get(x, i);
  gsl_multimin_fdfminimizer_free(s);
  gsl_vector_free(x);
  return best;
}

}  // namespace

MultistartResult multistart_udc(const UDCProblem& problem, int restarts, std::uint64_t seed, double epsilon) {
  problem.validate();
  const RawLayout lay{problem.system.state_dim(), problem.system.control_dim(), problem.system.horizon,
                      epsilon > 0.0};
  GslContext ctx{[&](const double* p) { return raw_objective(problem, lay, epsilon, p); }, lay.size()};
  const Mat La = Eigen::LLT<Mat>(problem.alpha.cov).matrixL();

  MultistartResult out;
  out.best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    NormalStream rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    std::vector<double> x;
    x.push_back(0.5 * rng.next());
    for (int i = 0; i < lay.d; ++i) x.push_back(problem.alpha.mean(i) + rng.next());
    for (int j = 0; j < lay.d; ++j)
      for (int i = j; i < lay.d; ++i)
        x.push_back(i == j ? std::log(La(i, i)) + 0.3 * rng.next() : La(i, j) + 0.3 * rng.next());
    for (int t = 0; t + 1 < lay.T; ++t) {
      for (int i = 0; i < lay.du; ++i) x.push_back(rng.next());
      for (int i = 0; i < lay.du * lay.d; ++i) x.push_back(0.5 * rng.next());
      for (int j = 0; j < lay.du; ++j)
        for (int i = j; i < lay.du; ++i) x.push_back(i == j && lay.entropy ? std::log(0.3) + 0.3 * rng.next()
                                                                              : 0.3 * rng.next());
    }
    const double v = bfgs_minimize(ctx, x);
    out.values.push_back(v);
    out.best = std::min(out.best, v);
  }
  return out;
}

// ---- mixtures ----

void GaussianMixture::validate() const {
  if (!(mass > 0.0)) throw Error(ErrorCode::InvalidArgument, "mixture mass must be positive");
  if (weights.empty() || means.size() != weights.size() || covs.size() != weights.size()) {
    throw Error(ErrorCode::DimensionMismatch, "mixture components are inconsistent");
  }
  double s = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw Error(ErrorCode::InvalidArgument, "mixture weights must be nonnegative");
    s += w;
  }
  if (std::abs(s - 1.0) > 1e-12) throw Error(ErrorCode::InvalidArgument, "mixture weights must sum to one");
  // PSD suffices for sampling; densities need PD and check on use.
  for (const Mat& S : covs) {
    if (min_eigenvalue(S) < -1e-12 * std::max(1.0, S.norm())) {
      throw Error(ErrorCode::IndefiniteInput, "mixture covariances must be PSD");
    }
  }
}

double GaussianMixture::log_density(const Vec& x) const {
  Eigen::ArrayXd terms(components());
  for (int k = 0; k < components(); ++k) {
    const Eigen::LLT<Mat> llt(covs[k]);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularCovariance, "mixture density needs PD covariances");
    const Mat L = llt.matrixL();
    const double ld = 2.0 * L.diagonal().array().log().sum();
    terms(k) = std::log(weights[k]) + gaussian_log_density(x, means[k], L, ld);
  }
  return log_sum_exp(terms);
}

namespace {

int pick(const std::vector<double>& w, NormalStream& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    acc += w[k];
    if (u < acc) return static_cast<int>(k);
  }
  return static_cast<int>(w.size()) - 1;
}

}  // namespace

Vec GaussianMixture::sample(NormalStream& rng) const {
  const int k = pick(weights, rng);
  return means[k] + sampling_factor(covs[k]) * rng.next(dim());
}

Vec GaussianMixture::mean() const {
  Vec m = Vec::Zero(dim());
  for (int k = 0; k < components(); ++k) m += weights[k] * means[k];
  return m;
}

Mat GaussianMixture::cov() const {
  const Vec m = mean();
  Mat S = Mat::Zero(dim(), dim());
  for (int k = 0; k < components(); ++k) {
    const Vec dm = means[k] - m;
    S += weights[k] * (covs[k] + dm * dm.transpose());
  }
  return symmetrize(S);
}

GaussianMixture GaussianMixture::marginal(int begin, int size) const {
  GaussianMixture out;
  out.mass = mass;
  out.weights = weights;
  for (int k = 0; k < components(); ++k) {
    out.means.push_back(means[k].segment(begin, size));
    out.covs.push_back(covs[k].block(begin, begin, size, size));
  }
  return out;
}

double MixtureKernel::log_density(const Vec& u, const Vec& x) const {
  Eigen::ArrayXd terms(components());
  for (int k = 0; k < components(); ++k) {
    const Eigen::LLT<Mat> llt(covs[k]);
    const Mat L = llt.matrixL();
    terms(k) = std::log(weights[k]) +
               gaussian_log_density(u, gains[k] * x + offsets[k], L, 2.0 * L.diagonal().array().log().sum());
  }
  return log_sum_exp(terms);
}

Vec MixtureKernel::sample(const Vec& x, NormalStream& rng) const {
  const int k = pick(weights, rng);
  return gains[k] * x + offsets[k] + sampling_factor(covs[k]) * rng.next(static_cast<int>(covs[k].rows()));
}

ProcessMoments MixtureProcess::moments(const LinearSystem& sys) const {
  ProcessMoments out;
  out.mass = initial.mass;
  Vec m = initial.mean();
  Mat S = initial.cov();
  out.state_means.push_back(m);
  out.state_covs.push_back(S);
  for (const MixtureKernel& ker : kernels) {
    const int du = static_cast<int>(ker.offsets.front().size());
    Vec ubar = Vec::Zero(du);
    Mat lambda = Mat::Zero(du, m.size());
    Mat second = Mat::Zero(du, du);
    const Mat raw = S + m * m.transpose();
    for (int k = 0; k < ker.components(); ++k) {
      const Mat& K = ker.gains[k];
      const Vec& b = ker.offsets[k];
      const double w = ker.weights[k];
      ubar += w * (K * m + b);
      lambda += w * K * S;
      second += w * (K * raw * K.transpose() + K * m * b.transpose() + b * m.transpose() * K.transpose() +
                     b * b.transpose() + ker.covs[k]);
    }
    const Mat cu = symmetrize(second - ubar * ubar.transpose());
    out.control_means.push_back(ubar);
    out.control_covs.push_back(cu);
    out.control_state.push_back(lambda);
    m = sys.A * m + sys.B * ubar;
    S = symmetrize(sys.A * S * sys.A.transpose() + sys.A * lambda.transpose() * sys.B.transpose() +
                   sys.B * lambda * sys.A.transpose() + sys.B * cu * sys.B.transpose());
    out.state_means.push_back(m);
    out.state_covs.push_back(S);
  }
  return out;
}

GaussianMixture MixtureProcess::terminal(const LinearSystem& sys) const {
  GaussianMixture cur = initial;
  for (const MixtureKernel& ker : kernels) {
    GaussianMixture next;
    next.mass = cur.mass;
    for (int j = 0; j < cur.components(); ++j) {
      for (int k = 0; k < ker.components(); ++k) {
        const Mat F = sys.A + sys.B * ker.gains[k];
        next.weights.push_back(cur.weights[j] * ker.weights[k]);
        next.means.push_back(F * cur.means[j] + sys.B * ker.offsets[k]);
        next.covs.push_back(symmetrize(F * cur.covs[j] * F.transpose() + sys.B * ker.covs[k] * sys.B.transpose()));
      }
    }
    cur = std::move(next);
  }
  return cur;
}

// ---- Monte Carlo ----

namespace {

McEstimate summarize(const std::vector<double>& f) {
  const double n = static_cast<double>(f.size());
  double mean = 0.0;
  for (double v : f) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : f) var += (v - mean) * (v - mean);
  var /= (n - 1.0);
  return {mean, std::sqrt(var / n)};
}

void require_samples(int n) {
  if (n < 2) throw Error(ErrorCode::NotEnoughSamples, "Monte Carlo needs at least two samples");
}

struct RefDensity {
  Vec mean;
  Mat L;
  double logdet;
  explicit RefDensity(const UnbalancedGaussian& g)
      : mean(g.mean), L(Eigen::LLT<Mat>(g.cov).matrixL()), logdet(log_det(g.cov)) {}
  double operator()(const Vec& x) const { return gaussian_log_density(x, mean, L, logdet); }
};

McEstimate plan_functional(const UOTProblem& p, double sigma, const GaussianMixture& plan, int n,
                           std::uint64_t seed) {
  require_samples(n);
  plan.validate();
  p.validate();
  const int d = p.dim();
  if (plan.dim() != 2 * d) throw Error(ErrorCode::DimensionMismatch, "plan must live on the product space");
  const GaussianMixture p1 = plan.marginal(0, d), p2 = plan.marginal(d, d);
  const RefDensity ra(p.alpha), rb(p.beta);
  const double c = plan.mass, g = p.gamma;
  const double constant = g * mass_divergence(c, p.alpha.mass) + g * mass_divergence(c, p.beta.mass) +
                          sigma * mass_divergence(c, p.alpha.mass * p.beta.mass);
  NormalStream rng(seed);
  std::vector<double> f(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Vec z = plan.sample(rng);
    const Vec x1 = z.head(d), x2 = z.tail(d);
    const double la = ra(x1), lb = rb(x2);
    double v = c * (x2 - x1).squaredNorm() + g * c * (p1.log_density(x1) - la) + g * c * (p2.log_density(x2) - lb);
    if (sigma > 0.0) v += sigma * c * (plan.log_density(z) - la - lb);
    f[static_cast<std::size_t>(i)] = v + constant;
  }
  return summarize(f);
}

McEstimate process_functional(const UDCProblem& p, double epsilon, const MixtureProcess& proc, int n,
                              std::uint64_t seed) {
  require_samples(n);
  p.validate();
  proc.initial.validate();
  const LinearSystem& sys = p.system;
  if (static_cast<int>(proc.kernels.size()) != sys.horizon - 1) {
    throw Error(ErrorCode::DimensionMismatch, "process needs horizon - 1 kernels");
  }
  const GaussianMixture last = proc.terminal(sys);
  const RefDensity ra(p.alpha), rb(p.beta);
  const double c = proc.initial.mass, g = p.gamma;
  const double constant = g * mass_divergence(c, p.alpha.mass) + g * mass_divergence(c, p.beta.mass);
  NormalStream rng(seed);
  std::vector<double> f(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Vec x = proc.initial.sample(rng);
    double v = g * c * (proc.initial.log_density(x) - ra(x));
    for (const MixtureKernel& ker : proc.kernels) {
      const Vec u = ker.sample(x, rng);
      v += c * u.squaredNorm();
      // -eps c H(U(.|x)) estimated by eps c log U(u|x) with u drawn from U(.|x).
      if (epsilon > 0.0) v += epsilon * c * ker.log_density(u, x);
      x = sys.A * x + sys.B * u;
    }
    v += g * c * (last.log_density(x) - rb(x));
    f[static_cast<std::size_t>(i)] = v + constant;
  }
  return summarize(f);
}

}  // namespace

McEstimate mc_kl(const GaussianMixture& mu, const UnbalancedGaussian& nu, int n, std::uint64_t seed) {
  require_samples(n);
  mu.validate();
  const RefDensity rn(nu);
  NormalStream rng(seed);
  std::vector<double> f(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Vec x = mu.sample(rng);
    f[static_cast<std::size_t>(i)] = mu.mass * (mu.log_density(x) - rn(x)) + mass_divergence(mu.mass, nu.mass);
  }
  return summarize(f);
}

McEstimate mc_functional(const UOTProblem& problem, const GaussianMixture& plan, int n, std::uint64_t seed) {
  return plan_functional(problem, 0.0, plan, n, seed);
}

McEstimate mc_functional(const EUOTProblem& problem, const GaussianMixture& plan, int n, std::uint64_t seed) {
  problem.validate();
  return plan_functional(problem.base, problem.sigma, plan, n, seed);
}

McEstimate mc_functional(const UDCProblem& problem, const MixtureProcess& process, int n, std::uint64_t seed) {
  return process_functional(problem, 0.0, process, n, seed);
}

McEstimate mc_functional(const MaxEntUDCProblem& problem, const MixtureProcess& process, int n,
                         std::uint64_t seed) {
  problem.validate();
  return process_functional(problem.base, problem.epsilon, process, n, seed);
}

GaussianPlan gaussianize_plan(const GaussianMixture& plan) {
  const int d = plan.dim() / 2;
  const Vec m = plan.mean();
  const Mat S = plan.cov();
  GaussianPlan out;
  out.mass = plan.mass;
  out.mean1 = m.head(d);
  out.mean2 = m.tail(d);
  out.cov1 = S.topLeftCorner(d, d);
  out.cov2 = S.bottomRightCorner(d, d);
  out.cross = S.topRightCorner(d, d);
  return out;
}

}  // namespace gudc
