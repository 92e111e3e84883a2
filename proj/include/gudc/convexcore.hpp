#pragma once

// Small smooth convex programs over vector and matrix variables:
//
//   minimize   sum of atoms (squared norms, weighted quadratics, trace-linear,
//              -w log det E(x), -w tr((S1^{1/2} S2 S1^{1/2})^{1/2}))
//   subject to E_i(x) = 0 (affine), G_j(x) >= 0 (PSD, affine)
//
// solved by a log-barrier interior point method with equality-constrained
// Newton steps. Problem sizes targeted are a few hundred scalars.

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "gudc/gaussmeas.hpp"

namespace gudc::convex {

enum class VarKind { Vector, Symmetric, Matrix };

struct VarId {
  int index = -1;
};

struct Variable {
  std::string name;
  VarKind kind;
  int rows = 0;
  int cols = 0;
  int offset = 0;  // first flat coordinate
  int size = 0;    // number of flat coordinates
};

/// One summand left * op(X) * right, op = identity or transpose.
struct AffineTerm {
  Mat left;
  int var = -1;
  bool transposed = false;
  Mat right;
};

/// constant + sum of AffineTerms; vectors are n x 1 matrices.
class AffineExpr {
 public:
  AffineExpr() = default;
  explicit AffineExpr(Mat constant) : constant_(std::move(constant)) {}

  static AffineExpr zero(int rows, int cols) { return AffineExpr(Mat::Zero(rows, cols)); }

  int rows() const { return static_cast<int>(constant_.rows()); }
  int cols() const { return static_cast<int>(constant_.cols()); }
  const Mat& constant() const { return constant_; }
  const std::vector<AffineTerm>& terms() const { return terms_; }

  AffineExpr& operator+=(const AffineExpr& other);
  AffineExpr& operator-=(const AffineExpr& other);
  AffineExpr& operator*=(double s);

  AffineExpr transpose() const;

  friend AffineExpr operator+(AffineExpr a, const AffineExpr& b) { return a += b; }
  friend AffineExpr operator-(AffineExpr a, const AffineExpr& b) { return a -= b; }
  friend AffineExpr operator*(double s, AffineExpr a) { return a *= s; }
  friend AffineExpr operator*(const Mat& m, const AffineExpr& a);
  friend AffineExpr operator*(const AffineExpr& a, const Mat& m);
  friend AffineExpr operator+(AffineExpr a, const Mat& c);
  friend AffineExpr operator-(AffineExpr a, const Mat& c);

 private:
  friend class ConvexProgram;
  Mat constant_;
  std::vector<AffineTerm> terms_;
};

/// Place e (r x c) at offset (row, col) inside a zero rows x cols matrix.
AffineExpr embed(const AffineExpr& e, int row, int col, int rows, int cols);

/// Values for every variable of a program, indexed by VarId.
class Assignment {
 public:
  Assignment() = default;
  explicit Assignment(std::vector<Mat> values) : values_(std::move(values)) {}

  Mat& operator[](VarId id) { return values_.at(static_cast<std::size_t>(id.index)); }
  const Mat& operator[](VarId id) const { return values_.at(static_cast<std::size_t>(id.index)); }
  Vec vector(VarId id) const { return (*this)[id].col(0); }
  std::size_t size() const { return values_.size(); }

 private:
  std::vector<Mat> values_;
};

/// Affine map x -> constant + sum_k x[index[k]] * coeff[k] over flat coordinates.
struct CompiledAffine {
  Mat constant;
  std::vector<int> index;
  std::vector<Mat> coeff;

  Mat eval(const Vec& x) const;
};

enum class AtomKind { Quadratic, TraceLinear, NegLogDet, TraceSqrtCoupling, MeanQuadratic };

class ConvexProgram {
 public:
  VarId add_vector(std::string name, int n);
  VarId add_symmetric(std::string name, int n);
  VarId add_matrix(std::string name, int rows, int cols);

  AffineExpr expr(VarId id) const;
  const Variable& variable(VarId id) const { return vars_.at(static_cast<std::size_t>(id.index)); }
  int num_variables() const { return static_cast<int>(vars_.size()); }
  int num_scalars() const { return num_scalars_; }
  int num_equalities() const { return static_cast<int>(eq_rows_.size()); }
  int num_cones() const { return static_cast<int>(cones_.size()); }

  /// weight * ||e||_F^2, weight >= 0.
  void add_squared_norm(const AffineExpr& e, double weight);
  /// (e - center)^T W (e - center) for a vector expression, W symmetric PSD.
  void add_mean_quadratic(const AffineExpr& e, const Vec& center, const Mat& W);
  /// tr(coefficient * e) for square e.
  void add_trace_linear(const AffineExpr& e, const Mat& coefficient);
  /// -weight * log det e, weight >= 0, e symmetric.
  void add_neg_log_det(const AffineExpr& e, double weight);
  /// -weight * tr((S1^{1/2} S2 S1^{1/2})^{1/2}) on two symmetric variables, weight >= 0.
  void add_trace_sqrt_coupling(VarId s1, VarId s2, double weight);
  /// e = 0; with symmetric = true only the upper triangle is imposed.
  void add_equality(const AffineExpr& e, bool symmetric = false);
  /// e >= 0 in the PSD order (e symmetric).
  void add_psd_constraint(const AffineExpr& e);

  Assignment zeros() const;
  Vec pack(const Assignment& a) const;
  Assignment unpack(const Vec& x) const;

  double objective(const Vec& x) const;
  double objective(const Assignment& a) const { return objective(pack(a)); }
  /// Flat gradient of the objective (no barrier).
  Vec gradient(const Vec& x) const;
  /// Matrix-valued gradient per variable, df = sum_v <G_v, dX_v>.
  Assignment gradient(const Assignment& a) const;

  /// All objective log-dets, tr-sqrt arguments and cone constraints positive definite.
  bool in_domain(const Vec& x) const;
  /// max |E_i(x)| over equality rows.
  double equality_residual(const Vec& x) const;
  /// Smallest eigenvalue over all cone constraints (+inf when there are none).
  double min_cone_eigenvalue(const Vec& x) const;

  // Internals used by the solver.
  struct QuadraticAtom {
    std::vector<int> index;
    Mat hessian;  // f = 0.5 x_S^T H x_S + linear^T x_S + constant
    Vec linear;
    double constant = 0.0;
    AtomKind kind = AtomKind::Quadratic;
  };
  struct LogDetAtom {
    CompiledAffine expr;
    double weight = 1.0;
  };
  struct TraceSqrtAtom {
    int s1 = -1;
    int s2 = -1;
    double weight = 0.0;
  };
  const std::vector<QuadraticAtom>& quadratic_atoms() const { return quad_; }
  const std::vector<LogDetAtom>& log_det_atoms() const { return logdet_; }
  const std::vector<TraceSqrtAtom>& trace_sqrt_atoms() const { return tsc_; }
  const std::vector<CompiledAffine>& cones() const { return cones_; }
  /// Equality constraints as rows a_i^T x + b_i = 0.
  const std::vector<std::pair<Eigen::SparseVector<double>, double>>& equality_rows() const {
    return eq_rows_;
  }

  CompiledAffine compile(const AffineExpr& e) const;
  /// Basis element of a flat coordinate in its variable's matrix shape.
  Mat basis(int var, int local) const;
  /// tr-sqrt atom value and flat gradient on (S1, S2) coordinates.
  double trace_sqrt_value(const TraceSqrtAtom& atom, const Vec& x) const;
  Vec trace_sqrt_flat_gradient(const TraceSqrtAtom& atom, const Vec& x) const;
  std::vector<int> coordinates(int var) const;

 private:
  VarId add_variable(std::string name, VarKind kind, int rows, int cols);
  void check_var(VarId id) const;

  std::vector<Variable> vars_;
  int num_scalars_ = 0;
  std::vector<QuadraticAtom> quad_;
  std::vector<LogDetAtom> logdet_;
  std::vector<TraceSqrtAtom> tsc_;
  std::vector<CompiledAffine> cones_;
  std::vector<std::pair<Eigen::SparseVector<double>, double>> eq_rows_;
};

struct SolverConfig {
  double tol = 1e-8;
  int max_iter = 500;
  double mu_initial = 1.0;
  double mu_final = 1e-9;
  double mu_decrease = 10.0;
  double armijo = 1e-4;
  /// Newton-decrement target for the intermediate barrier stages.
  double centering_tol = 1e-6;
};

enum class SolveStatus { Optimal, MaxIterations, NumericalFailure };

std::string_view to_string(SolveStatus s);

struct SolveReport {
  SolveStatus status = SolveStatus::NumericalFailure;
  double objective_value = 0.0;
  /// Newton decrement of the final barrier subproblem: the projected gradient
  /// measured in the local Hessian norm.
  double stationarity_residual = 0.0;
  /// ||grad f + mu grad phi + A^T lambda|| with least-squares multipliers.
  double lagrangian_residual = 0.0;
  double equality_residual = 0.0;
  double min_cone_eigenvalue = 0.0;
  int iterations = 0;
  double barrier_parameter_final = 0.0;
  /// True objective at the end of every barrier stage.
  std::vector<double> outer_objectives;
};

struct Solution {
  Assignment values;
  SolveReport report;
};

/// Runs the barrier method from a start point strictly inside every domain.
/// Throws Infeasible when the start is not strictly feasible for the cones
/// and log-dets. MaxIterations and NumericalFailure are reported in the status.
Solution minimize(const ConvexProgram& program, const Assignment& start,
                  const SolverConfig& config = {});

/// Gradient of -log det X: -X^{-1}.
Mat neg_log_det_gradient(const Mat& X);

/// Gradients of tr((S1^{1/2} S2 S1^{1/2})^{1/2}) with respect to S1 and S2.
/// Throws DomainBoundary when either argument is within 1e-10 of singular.
std::pair<Mat, Mat> trace_sqrt_gradient(const Mat& S1, const Mat& S2);

}  // namespace gudc::convex
