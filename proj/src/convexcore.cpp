#include "gudc/convexcore.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace gudc::convex {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Entry {
  int i;
  int j;
};

// Matrix entries set to one by a flat coordinate (two for off-diagonal
// symmetric coordinates).
int entries(const Variable& v, int local, Entry out[2]) {
  switch (v.kind) {
    case VarKind::Vector:
      out[0] = {local, 0};
      return 1;
    case VarKind::Matrix:
      out[0] = {local % v.rows, local / v.rows};
      return 1;
    case VarKind::Symmetric: {
      int j = 0;
      while ((j + 1) * (j + 2) / 2 <= local) ++j;
      const int i = local - j * (j + 1) / 2;
      out[0] = {i, j};
      if (i == j) return 1;
      out[1] = {j, i};
      return 2;
    }
  }
  return 0;
}

Mat sym(const Mat& m) { return 0.5 * (m + m.transpose()); }

// Cholesky of the symmetric part; false when not positive definite.
bool chol(const Mat& E, Eigen::LLT<Mat>& llt) {
  llt.compute(sym(E));
  if (llt.info() != Eigen::Success) return false;
  const Vec diag = llt.matrixLLT().diagonal();
  return diag.size() == 0 || (diag.minCoeff() > 0.0 && diag.allFinite());
}

double log_det_chol(const Eigen::LLT<Mat>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

void check_weight(double w, const char* what) {
  if (!(w >= 0.0) || !std::isfinite(w)) {
    throw Error(ErrorCode::InvalidArgument, std::string(what) + " weight must be finite and >= 0");
  }
}

}  // namespace

// ---------------------------------------------------------------- AffineExpr

AffineExpr& AffineExpr::operator+=(const AffineExpr& other) {
  if (rows() != other.rows() || cols() != other.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "adding affine expressions of different shapes");
  }
  constant_ += other.constant_;
  terms_.insert(terms_.end(), other.terms_.begin(), other.terms_.end());
  return *this;
}

AffineExpr& AffineExpr::operator-=(const AffineExpr& other) {
  AffineExpr neg = other;
  neg *= -1.0;
  return *this += neg;
}

AffineExpr& AffineExpr::operator*=(double s) {
  constant_ *= s;
  for (auto& t : terms_) t.left *= s;
  return *this;
}

AffineExpr AffineExpr::transpose() const {
  AffineExpr out(Mat(constant_.transpose()));
  for (const auto& t : terms_) {
    out.terms_.push_back({t.right.transpose(), t.var, !t.transposed, t.left.transpose()});
  }
  return out;
}

AffineExpr operator*(const Mat& m, const AffineExpr& a) {
  if (m.cols() != a.rows()) throw Error(ErrorCode::DimensionMismatch, "left multiply shape");
  AffineExpr out(Mat(m * a.constant_));
  for (const auto& t : a.terms_) out.terms_.push_back({m * t.left, t.var, t.transposed, t.right});
  return out;
}

AffineExpr operator*(const AffineExpr& a, const Mat& m) {
  if (a.cols() != m.rows()) throw Error(ErrorCode::DimensionMismatch, "right multiply shape");
  AffineExpr out(Mat(a.constant_ * m));
  for (const auto& t : a.terms_) out.terms_.push_back({t.left, t.var, t.transposed, t.right * m});
  return out;
}

AffineExpr operator+(AffineExpr a, const Mat& c) { return a += AffineExpr(c); }
AffineExpr operator-(AffineExpr a, const Mat& c) { return a += AffineExpr(Mat(-c)); }

AffineExpr embed(const AffineExpr& e, int row, int col, int rows, int cols) {
  if (row < 0 || col < 0 || row + e.rows() > rows || col + e.cols() > cols) {
    throw Error(ErrorCode::DimensionMismatch, "embedded block out of range");
  }
  Mat pl = Mat::Zero(rows, e.rows());
  pl.block(row, 0, e.rows(), e.rows()).setIdentity();
  Mat pr = Mat::Zero(e.cols(), cols);
  pr.block(0, col, e.cols(), e.cols()).setIdentity();
  return pl * e * pr;
}

Mat CompiledAffine::eval(const Vec& x) const {
  Mat out = constant;
  for (std::size_t k = 0; k < index.size(); ++k) out += x(index[k]) * coeff[k];
  return out;
}

// ------------------------------------------------------------- ConvexProgram

VarId ConvexProgram::add_variable(std::string name, VarKind kind, int rows, int cols) {
  if (rows <= 0 || cols <= 0) throw Error(ErrorCode::InvalidArgument, "variable dimensions must be positive");
  Variable v{std::move(name), kind, rows, cols, num_scalars_, 0};
  v.size = kind == VarKind::Symmetric ? rows * (rows + 1) / 2 : rows * cols;
  num_scalars_ += v.size;
  vars_.push_back(std::move(v));
  return VarId{static_cast<int>(vars_.size()) - 1};
}

VarId ConvexProgram::add_vector(std::string name, int n) {
  return add_variable(std::move(name), VarKind::Vector, n, 1);
}
VarId ConvexProgram::add_symmetric(std::string name, int n) {
  return add_variable(std::move(name), VarKind::Symmetric, n, n);
}
VarId ConvexProgram::add_matrix(std::string name, int rows, int cols) {
  return add_variable(std::move(name), VarKind::Matrix, rows, cols);
}

void ConvexProgram::check_var(VarId id) const {
  if (id.index < 0 || id.index >= num_variables()) {
    throw Error(ErrorCode::InvalidArgument, "undeclared variable");
  }
}

AffineExpr ConvexProgram::expr(VarId id) const {
  check_var(id);
  const Variable& v = variable(id);
  AffineExpr e = AffineExpr::zero(v.rows, v.cols);
  e.terms_.push_back({Mat::Identity(v.rows, v.rows), id.index, false, Mat::Identity(v.cols, v.cols)});
  return e;
}

std::vector<int> ConvexProgram::coordinates(int var) const {
  const Variable& v = vars_.at(static_cast<std::size_t>(var));
  std::vector<int> out(static_cast<std::size_t>(v.size));
  for (int k = 0; k < v.size; ++k) out[static_cast<std::size_t>(k)] = v.offset + k;
  return out;
}

Mat ConvexProgram::basis(int var, int local) const {
  const Variable& v = vars_.at(static_cast<std::size_t>(var));
  Mat b = Mat::Zero(v.rows, v.cols);
  Entry e[2];
  const int n = entries(v, local, e);
  for (int q = 0; q < n; ++q) b(e[q].i, e[q].j) = 1.0;
  return b;
}

CompiledAffine ConvexProgram::compile(const AffineExpr& e) const {
  std::map<int, Mat> acc;
  for (const auto& t : e.terms()) {
    check_var(VarId{t.var});
    const Variable& v = vars_[static_cast<std::size_t>(t.var)];
    for (int k = 0; k < v.size; ++k) {
      Entry ent[2];
      const int n = entries(v, k, ent);
      Mat contrib = Mat::Zero(e.rows(), e.cols());
      for (int q = 0; q < n; ++q) {
        const int i = t.transposed ? ent[q].j : ent[q].i;
        const int j = t.transposed ? ent[q].i : ent[q].j;
        contrib.noalias() += t.left.col(i) * t.right.row(j);
      }
      auto [it, inserted] = acc.try_emplace(v.offset + k, contrib);
      if (!inserted) it->second += contrib;
    }
  }
  CompiledAffine out;
  out.constant = e.constant();
  for (auto& [idx, m] : acc) {
    if (m.cwiseAbs().maxCoeff() == 0.0) continue;
    out.index.push_back(idx);
    out.coeff.push_back(std::move(m));
  }
  return out;
}

void ConvexProgram::add_squared_norm(const AffineExpr& e, double weight) {
  check_weight(weight, "squared norm");
  const CompiledAffine c = compile(e);
  const auto k = static_cast<int>(c.index.size());
  QuadraticAtom atom;
  atom.index = c.index;
  atom.hessian.resize(k, k);
  atom.linear.resize(k);
  for (int a = 0; a < k; ++a) {
    atom.linear(a) = 2.0 * weight * c.constant.cwiseProduct(c.coeff[static_cast<std::size_t>(a)]).sum();
    for (int b = a; b < k; ++b) {
      const double g = c.coeff[static_cast<std::size_t>(a)].cwiseProduct(c.coeff[static_cast<std::size_t>(b)]).sum();
      atom.hessian(a, b) = atom.hessian(b, a) = 2.0 * weight * g;
    }
  }
  atom.constant = weight * c.constant.squaredNorm();
  quad_.push_back(std::move(atom));
}

void ConvexProgram::add_mean_quadratic(const AffineExpr& e, const Vec& center, const Mat& W) {
  if (e.cols() != 1 || center.size() != e.rows() || W.rows() != e.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "mean quadratic shapes");
  }
  check_symmetric(W);
  if (min_eigenvalue(W) < -kPsdTol * std::max(1.0, W.cwiseAbs().maxCoeff())) {
    throw Error(ErrorCode::IndefiniteInput, "mean quadratic weight must be PSD");
  }
  const CompiledAffine c = compile(e);
  const auto k = static_cast<int>(c.index.size());
  Mat M(e.rows(), k);
  for (int a = 0; a < k; ++a) M.col(a) = c.coeff[static_cast<std::size_t>(a)].col(0);
  const Vec r0 = c.constant.col(0) - center;
  const Mat Ws = sym(W);
  QuadraticAtom atom;
  atom.kind = AtomKind::MeanQuadratic;
  atom.index = c.index;
  atom.hessian = 2.0 * M.transpose() * Ws * M;
  atom.linear = 2.0 * M.transpose() * (Ws * r0);
  atom.constant = r0.dot(Ws * r0);
  quad_.push_back(std::move(atom));
}

void ConvexProgram::add_trace_linear(const AffineExpr& e, const Mat& coefficient) {
  if (e.rows() != e.cols() || coefficient.rows() != e.rows() || coefficient.cols() != e.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "trace linear shapes");
  }
  const CompiledAffine c = compile(e);
  const auto k = static_cast<int>(c.index.size());
  const Mat ct = coefficient.transpose();
  QuadraticAtom atom;
  atom.kind = AtomKind::TraceLinear;
  atom.index = c.index;
  atom.hessian = Mat::Zero(k, k);
  atom.linear.resize(k);
  for (int a = 0; a < k; ++a) atom.linear(a) = ct.cwiseProduct(c.coeff[static_cast<std::size_t>(a)]).sum();
  atom.constant = ct.cwiseProduct(c.constant).sum();
  quad_.push_back(std::move(atom));
}

void ConvexProgram::add_neg_log_det(const AffineExpr& e, double weight) {
  check_weight(weight, "log det");
  if (e.rows() != e.cols()) throw Error(ErrorCode::DimensionMismatch, "log det of a non-square expression");
  logdet_.push_back({compile(e), weight});
}

void ConvexProgram::add_trace_sqrt_coupling(VarId s1, VarId s2, double weight) {
  check_weight(weight, "trace sqrt coupling");
  check_var(s1);
  check_var(s2);
  const Variable& a = variable(s1);
  const Variable& b = variable(s2);
  if (a.kind != VarKind::Symmetric || b.kind != VarKind::Symmetric || a.rows != b.rows) {
    throw Error(ErrorCode::DimensionMismatch, "trace sqrt coupling needs two symmetric variables of equal size");
  }
  if (s1.index == s2.index) throw Error(ErrorCode::InvalidArgument, "trace sqrt coupling needs distinct variables");
  tsc_.push_back({s1.index, s2.index, weight});
}

void ConvexProgram::add_equality(const AffineExpr& e, bool symmetric) {
  if (symmetric && e.rows() != e.cols()) throw Error(ErrorCode::DimensionMismatch, "symmetric equality must be square");
  const CompiledAffine c = compile(e);
  for (int j = 0; j < e.cols(); ++j) {
    for (int i = 0; i < e.rows(); ++i) {
      if (symmetric && i > j) continue;
      Eigen::SparseVector<double> row(num_scalars_);
      for (std::size_t k = 0; k < c.index.size(); ++k) {
        const double v = c.coeff[k](i, j);
        if (v != 0.0) row.coeffRef(c.index[k]) += v;
      }
      const double b = c.constant(i, j);
      if (row.nonZeros() == 0) {
        if (std::abs(b) > 1e-12) throw Error(ErrorCode::Infeasible, "constant equality constraint violated");
        continue;
      }
      eq_rows_.emplace_back(std::move(row), b);
    }
  }
}

void ConvexProgram::add_psd_constraint(const AffineExpr& e) {
  if (e.rows() != e.cols()) throw Error(ErrorCode::DimensionMismatch, "PSD constraint must be square");
  cones_.push_back(compile(e));
}

Assignment ConvexProgram::zeros() const {
  std::vector<Mat> values;
  for (const auto& v : vars_) values.push_back(Mat::Zero(v.rows, v.cols));
  return Assignment(std::move(values));
}

Vec ConvexProgram::pack(const Assignment& a) const {
  if (a.size() != vars_.size()) throw Error(ErrorCode::DimensionMismatch, "assignment size");
  Vec x(num_scalars_);
  for (std::size_t vi = 0; vi < vars_.size(); ++vi) {
    const Variable& v = vars_[vi];
    const Mat& m = a[VarId{static_cast<int>(vi)}];
    if (m.rows() != v.rows || m.cols() != v.cols) {
      throw Error(ErrorCode::DimensionMismatch, "assignment shape for variable " + v.name);
    }
    for (int k = 0; k < v.size; ++k) {
      Entry e[2];
      const int n = entries(v, k, e);
      double s = 0.0;
      for (int q = 0; q < n; ++q) s += m(e[q].i, e[q].j);
      x(v.offset + k) = s / n;
    }
  }
  return x;
}

Assignment ConvexProgram::unpack(const Vec& x) const {
  Assignment a = zeros();
  for (std::size_t vi = 0; vi < vars_.size(); ++vi) {
    const Variable& v = vars_[vi];
    Mat& m = a[VarId{static_cast<int>(vi)}];
    for (int k = 0; k < v.size; ++k) {
      Entry e[2];
      const int n = entries(v, k, e);
      for (int q = 0; q < n; ++q) m(e[q].i, e[q].j) = x(v.offset + k);
    }
  }
  return a;
}

double ConvexProgram::trace_sqrt_value(const TraceSqrtAtom& atom, const Vec& x) const {
  const Assignment a = unpack(x);
  return -atom.weight * trace_sqrt_coupling(a[VarId{atom.s1}], a[VarId{atom.s2}]);
}

Vec ConvexProgram::trace_sqrt_flat_gradient(const TraceSqrtAtom& atom, const Vec& x) const {
  const Variable& v1 = vars_[static_cast<std::size_t>(atom.s1)];
  const Variable& v2 = vars_[static_cast<std::size_t>(atom.s2)];
  const Mat S1 = unpack(x)[VarId{atom.s1}];
  const Mat S2 = unpack(x)[VarId{atom.s2}];
  const auto [G1, G2] = trace_sqrt_gradient(S1, S2);
  Vec g(v1.size + v2.size);
  for (int k = 0; k < v1.size; ++k) g(k) = -atom.weight * G1.cwiseProduct(basis(atom.s1, k)).sum();
  for (int k = 0; k < v2.size; ++k) g(v1.size + k) = -atom.weight * G2.cwiseProduct(basis(atom.s2, k)).sum();
  return g;
}

bool ConvexProgram::in_domain(const Vec& x) const {
  if (!x.allFinite()) return false;
  Eigen::LLT<Mat> llt;
  for (const auto& a : logdet_) {
    if (!chol(a.expr.eval(x), llt)) return false;
  }
  for (const auto& c : cones_) {
    if (!chol(c.eval(x), llt)) return false;
  }
  if (!tsc_.empty()) {
    const Assignment a = unpack(x);
    for (const auto& t : tsc_) {
      if (!chol(a[VarId{t.s1}], llt) || !chol(a[VarId{t.s2}], llt)) return false;
    }
  }
  return true;
}

double ConvexProgram::objective(const Vec& x) const {
  if (x.size() != num_scalars_) throw Error(ErrorCode::DimensionMismatch, "flat point size");
  double f = 0.0;
  for (const auto& q : quad_) {
    Vec xs(static_cast<Eigen::Index>(q.index.size()));
    for (std::size_t k = 0; k < q.index.size(); ++k) xs(static_cast<Eigen::Index>(k)) = x(q.index[k]);
    f += 0.5 * xs.dot(q.hessian * xs) + q.linear.dot(xs) + q.constant;
  }
  Eigen::LLT<Mat> llt;
  for (const auto& a : logdet_) {
    if (a.weight == 0.0) continue;
    if (!chol(a.expr.eval(x), llt)) return kInf;
    f -= a.weight * log_det_chol(llt);
  }
  for (const auto& t : tsc_) {
    if (t.weight == 0.0) continue;
    f += trace_sqrt_value(t, x);
  }
  return f;
}

Vec ConvexProgram::gradient(const Vec& x) const {
  Vec g = Vec::Zero(num_scalars_);
  for (const auto& q : quad_) {
    Vec xs(static_cast<Eigen::Index>(q.index.size()));
    for (std::size_t k = 0; k < q.index.size(); ++k) xs(static_cast<Eigen::Index>(k)) = x(q.index[k]);
    const Vec gs = q.hessian * xs + q.linear;
    for (std::size_t k = 0; k < q.index.size(); ++k) g(q.index[k]) += gs(static_cast<Eigen::Index>(k));
  }
  for (const auto& a : logdet_) {
    const Mat E = sym(a.expr.eval(x));
    const Mat Einv = neg_log_det_gradient(E);  // -E^{-1}
    for (std::size_t k = 0; k < a.expr.index.size(); ++k) {
      g(a.expr.index[k]) += a.weight * Einv.cwiseProduct(a.expr.coeff[k].transpose()).sum();
    }
  }
  for (const auto& t : tsc_) {
    if (t.weight == 0.0) continue;
    const Vec gt = trace_sqrt_flat_gradient(t, x);
    const auto c1 = coordinates(t.s1);
    const auto c2 = coordinates(t.s2);
    for (std::size_t k = 0; k < c1.size(); ++k) g(c1[k]) += gt(static_cast<Eigen::Index>(k));
    for (std::size_t k = 0; k < c2.size(); ++k) g(c2[k]) += gt(static_cast<Eigen::Index>(c1.size() + k));
  }
  return g;
}

Assignment ConvexProgram::gradient(const Assignment& a) const {
  const Vec g = gradient(pack(a));
  Assignment out = zeros();
  for (std::size_t vi = 0; vi < vars_.size(); ++vi) {
    const Variable& v = vars_[vi];
    Mat& m = out[VarId{static_cast<int>(vi)}];
    for (int k = 0; k < v.size; ++k) {
      Entry e[2];
      const int n = entries(v, k, e);
      for (int q = 0; q < n; ++q) m(e[q].i, e[q].j) = g(v.offset + k) / n;
    }
  }
  return out;
}

double ConvexProgram::equality_residual(const Vec& x) const {
  double r = 0.0;
  for (const auto& [row, b] : eq_rows_) r = std::max(r, std::abs(row.dot(x) + b));
  return r;
}

double ConvexProgram::min_cone_eigenvalue(const Vec& x) const {
  double lo = kInf;
  for (const auto& c : cones_) lo = std::min(lo, min_eigenvalue(sym(c.eval(x))));
  return lo;
}

// ------------------------------------------------------------------ gradients

Mat neg_log_det_gradient(const Mat& X) {
  Eigen::LLT<Mat> llt;
  if (!chol(X, llt)) throw Error(ErrorCode::DomainBoundary, "log det argument is not positive definite");
  return -sym(llt.solve(Mat::Identity(X.rows(), X.cols())));
}

std::pair<Mat, Mat> trace_sqrt_gradient(const Mat& S1, const Mat& S2) {
  if (S1.rows() != S2.rows()) throw Error(ErrorCode::DimensionMismatch, "covariance sizes differ");
  check_symmetric(S1);
  check_symmetric(S2);
  if (min_eigenvalue(S1) <= 1e-10 || min_eigenvalue(S2) <= 1e-10) {
    throw Error(ErrorCode::DomainBoundary, "trace sqrt argument is near singular");
  }
  const auto half = [](const Mat& A, const Mat& B) {
    const Mat r = psd_sqrt(A);
    return Mat(0.5 * sym(r * pd_inv_sqrt(sym(r * sym(B) * r)) * r));
  };
  return {half(S2, S1), half(S1, S2)};
}

std::string_view to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Optimal: return "Optimal";
    case SolveStatus::MaxIterations: return "MaxIterations";
    case SolveStatus::NumericalFailure: return "NumericalFailure";
  }
  return "Unknown";
}

// --------------------------------------------------------------------- solver

namespace {

using Triplets = std::vector<Eigen::Triplet<double>>;

class BarrierModel {
 public:
  BarrierModel(const ConvexProgram& p) : p_(p) {}

  // f(x) + mu * sum_j -log det G_j(x); +inf outside the domain.
  double value(const Vec& x, double mu) const {
    double f = p_.objective(x);
    if (!std::isfinite(f)) return kInf;
    Eigen::LLT<Mat> llt;
    for (const auto& c : p_.cones()) {
      if (!chol(c.eval(x), llt)) return kInf;
      f -= mu * log_det_chol(llt);
    }
    return f;
  }

  void derivatives(const Vec& x, double mu, Vec& g, Triplets& h) const {
    g = Vec::Zero(p_.num_scalars());
    h.clear();
    for (const auto& q : p_.quadratic_atoms()) {
      Vec xs(static_cast<Eigen::Index>(q.index.size()));
      for (std::size_t k = 0; k < q.index.size(); ++k) xs(static_cast<Eigen::Index>(k)) = x(q.index[k]);
      const Vec gs = q.hessian * xs + q.linear;
      for (std::size_t a = 0; a < q.index.size(); ++a) {
        g(q.index[a]) += gs(static_cast<Eigen::Index>(a));
        for (std::size_t b = 0; b < q.index.size(); ++b) {
          const double v = q.hessian(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
          if (v != 0.0) h.emplace_back(q.index[a], q.index[b], v);
        }
      }
    }
    for (const auto& a : p_.log_det_atoms()) log_det_terms(a.expr, a.weight, x, g, h);
    for (const auto& c : p_.cones()) log_det_terms(c, mu, x, g, h);
    for (const auto& t : p_.trace_sqrt_atoms()) trace_sqrt_terms(t, x, g, h);
  }

 private:
  // -w log det E(x): g_k = -w tr(A_k), H_kl = w <A_k, A_l>, A_k = L^{-1} M_k L^{-T}.
  static void log_det_terms(const CompiledAffine& e, double w, const Vec& x, Vec& g, Triplets& h) {
    if (w == 0.0 || e.index.empty()) return;
    Eigen::LLT<Mat> llt;
    if (!chol(e.eval(x), llt)) throw Error(ErrorCode::DomainBoundary, "iterate left the log det domain");
    const auto L = llt.matrixL();
    std::vector<Mat> A;
    A.reserve(e.index.size());
    for (const auto& m : e.coeff) {
      Mat t = L.solve(sym(m));
      t = L.solve(Mat(t.transpose()));
      A.push_back(std::move(t));
    }
    for (std::size_t a = 0; a < A.size(); ++a) {
      g(e.index[a]) -= w * A[a].trace();
      for (std::size_t b = a; b < A.size(); ++b) {
        const double v = w * A[a].cwiseProduct(A[b]).sum();
        h.emplace_back(e.index[a], e.index[b], v);
        if (b != a) h.emplace_back(e.index[b], e.index[a], v);
      }
    }
  }

  // Exact gradient; Hessian from central differences of the gradient,
  // projected onto the PSD cone.
  void trace_sqrt_terms(const ConvexProgram::TraceSqrtAtom& t, const Vec& x, Vec& g, Triplets& h) const {
    if (t.weight == 0.0) return;
    std::vector<int> idx = p_.coordinates(t.s1);
    const auto c2 = p_.coordinates(t.s2);
    idx.insert(idx.end(), c2.begin(), c2.end());
    const Vec g0 = p_.trace_sqrt_flat_gradient(t, x);
    const auto n = static_cast<Eigen::Index>(idx.size());
    for (Eigen::Index k = 0; k < n; ++k) g(idx[static_cast<std::size_t>(k)]) += g0(k);
    Mat H(n, n);
    Vec xp = x;
    for (Eigen::Index k = 0; k < n; ++k) {
      const int i = idx[static_cast<std::size_t>(k)];
      const double step = 1e-6 * std::max(1.0, std::abs(x(i)));
      xp(i) = x(i) + step;
      const Vec gp = p_.trace_sqrt_flat_gradient(t, xp);
      xp(i) = x(i) - step;
      const Vec gm = p_.trace_sqrt_flat_gradient(t, xp);
      xp(i) = x(i);
      H.col(k) = (gp - gm) / (2.0 * step);
    }
    Eigen::SelfAdjointEigenSolver<Mat> es(sym(H));
    H = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() * es.eigenvectors().transpose();
    for (Eigen::Index a = 0; a < n; ++a) {
      for (Eigen::Index b = 0; b < n; ++b) {
        h.emplace_back(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)], H(a, b));
      }
    }
  }

  const ConvexProgram& p_;
};

using SpMat = Eigen::SparseMatrix<double>;

// Solves [H A^T; A 0][dx; nu] = [-g; -r]. Returns false on factorization failure.
bool solve_kkt(int n, const Triplets& h, const SpMat& A, const Vec& g, const Vec& r, Vec& dx, Vec& nu) {
  const auto p = static_cast<int>(A.rows());
  for (double reg : {0.0, 1e-12, 1e-9}) {
    Triplets t = h;
    if (reg > 0.0) {
      for (int i = 0; i < n; ++i) t.emplace_back(i, i, reg);
      for (int i = 0; i < p; ++i) t.emplace_back(n + i, n + i, -reg);
    }
    for (int k = 0; k < A.outerSize(); ++k) {
      for (SpMat::InnerIterator it(A, k); it; ++it) {
        t.emplace_back(n + static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
        t.emplace_back(static_cast<int>(it.col()), n + static_cast<int>(it.row()), it.value());
      }
    }
    SpMat K(n + p, n + p);
    K.setFromTriplets(t.begin(), t.end());
    K.makeCompressed();
    Eigen::SparseLU<SpMat> lu;
    lu.compute(K);
    if (lu.info() != Eigen::Success) continue;
    Vec rhs(n + p);
    rhs << -g, -r;
    Vec sol = lu.solve(rhs);
    if (lu.info() != Eigen::Success || !sol.allFinite()) continue;
    sol += lu.solve(Vec(rhs - K * sol));  // one step of iterative refinement
    if (!sol.allFinite()) continue;
    dx = sol.head(n);
    nu = sol.tail(p);
    return true;
  }
  return false;
}

}  // namespace

Solution minimize(const ConvexProgram& program, const Assignment& start, const SolverConfig& config) {
  if (!(config.tol > 0.0) || config.max_iter <= 0 || !(config.mu_decrease > 1.0) ||
      !(config.mu_initial >= config.mu_final) || !(config.mu_final > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "invalid solver configuration");
  }
  const int n = program.num_scalars();
  Vec x = program.pack(start);
  if (!program.in_domain(x)) {
    throw Error(ErrorCode::Infeasible, "start point is not strictly inside the domain");
  }

  const auto& rows = program.equality_rows();
  const auto p = static_cast<int>(rows.size());
  SpMat A(p, n);
  Vec b(p);
  {
    Triplets t;
    for (int i = 0; i < p; ++i) {
      for (Eigen::SparseVector<double>::InnerIterator it(rows[static_cast<std::size_t>(i)].first); it; ++it) {
        t.emplace_back(i, static_cast<int>(it.index()), it.value());
      }
      b(i) = rows[static_cast<std::size_t>(i)].second;
    }
    A.setFromTriplets(t.begin(), t.end());
  }

  const BarrierModel model(program);
  SolveReport report;
  double mu = program.num_cones() > 0 ? config.mu_initial : config.mu_final;
  Vec g;
  Triplets h;
  Vec dx;
  Vec nu;
  double decrement = kInf;
  bool failed = false;
  bool out_of_iterations = false;

  while (true) {
    const bool final_stage = mu <= config.mu_final * (1.0 + 1e-12);
    const double target = final_stage ? config.tol : std::max(config.tol, config.centering_tol);
    while (true) {
      const double value = model.value(x, mu);
      model.derivatives(x, mu, g, h);
      const Vec r = A * x + b;
      if (!solve_kkt(n, h, A, g, r, dx, nu)) {
        failed = true;
        break;
      }
      SpMat H(n, n);
      H.setFromTriplets(h.begin(), h.end());
      decrement = std::sqrt(std::max(0.0, dx.dot(H * dx)));
      const double rnorm = r.size() ? r.cwiseAbs().maxCoeff() : 0.0;
      if (decrement <= target && rnorm <= 1e-10) break;
      if (report.iterations >= config.max_iter) {
        out_of_iterations = true;
        break;
      }

      // Domain-preserving halving, then Armijo on the barrier objective.
      double step = 1.0;
      while (step > 1e-20 && !program.in_domain(x + step * dx)) step *= 0.5;
      const double slope = g.dot(dx);
      const double slack = 1e-13 * (1.0 + std::abs(value));
      const bool feasible = rnorm <= 1e-8;
      while (feasible && step > 1e-20) {
        const double trial = model.value(x + step * dx, mu);
        if (trial <= value + config.armijo * step * slope + slack) break;
        step *= 0.5;
      }
      if (step <= 1e-20) {
        failed = decrement > 100.0 * target;
        break;
      }
      x += step * dx;
      ++report.iterations;
      if (step < 1e-14 && decrement <= 100.0 * target) break;
    }
    if (failed || out_of_iterations) break;
    report.outer_objectives.push_back(program.objective(x));
    if (final_stage) break;
    mu = std::max(mu / config.mu_decrease, config.mu_final);
  }

  report.objective_value = program.objective(x);
  report.stationarity_residual = decrement;
  report.barrier_parameter_final = mu;
  report.equality_residual = program.equality_residual(x);
  report.min_cone_eigenvalue = program.min_cone_eigenvalue(x);
  {
    model.derivatives(x, mu, g, h);
    if (p > 0) {
      const Mat At = Mat(A).transpose();
      const Vec lambda = At.colPivHouseholderQr().solve(Vec(-g));
      report.lagrangian_residual = (g + At * lambda).norm();
    } else {
      report.lagrangian_residual = g.norm();
    }
  }
  if (failed) {
    report.status = SolveStatus::NumericalFailure;
  } else if (out_of_iterations) {
    report.status = SolveStatus::MaxIterations;
  } else {
    report.status = decrement <= config.tol ? SolveStatus::Optimal : SolveStatus::NumericalFailure;
  }
  return {program.unpack(x), report};
}

}  // namespace gudc::convex
