#pragma once

// Univariate basis machinery: cubic B-splines and Gaussian RBFs with
// first/second derivatives, difference matrices, and curvature Gram matrices.

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <numbers>

#include "kancurv/common.hpp"

namespace kancurv {

// Uniform knot grid over [lo, hi] with `intervals` knot spans.
struct GridSpec {
  double lo = -1.0;
  double hi = 1.0;
  int intervals = 5;  // G
  int order = 3;      // spline degree k, cubic throughout

  double spacing() const { return (hi - lo) / intervals; }

  void validate() const {
    if (!(hi > lo)) throw ConfigError("GridSpec: hi must exceed lo");
    if (intervals < order + 1)
      throw ConfigError("GridSpec: need at least order+1 intervals");
    if (order != 3) throw ConfigError("GridSpec: only cubic splines supported");
  }
};

enum class BasisKind { BSplineCubic, GaussianRbf };

// Number of basis functions. Cubic B-splines on G intervals extended by k
// knots per side have G+k functions with full local support; the Gaussian RBF
// places G+1 centers on the knots with bandwidth equal to the spacing.
inline int basis_count(const GridSpec& spec, BasisKind kind) {
  return kind == BasisKind::BSplineCubic ? spec.intervals + spec.order
                                         : spec.intervals + 1;
}

namespace silu {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline double value(double z) { return z * sigmoid(z); }

inline double d1(double z) {
  const double s = sigmoid(z);
  return s * (1.0 + z * (1.0 - s));
}

inline double d2(double z) {
  const double s = sigmoid(z);
  return s * (1.0 - s) * (2.0 + z * (1.0 - 2.0 * s));
}

}  // namespace silu

// K_silu = int (SiLU'')^2 dz = (30 + pi^2)/90.
constexpr double silu_curvature_constant() {
  return (30.0 + std::numbers::pi * std::numbers::pi) / 90.0;
}

namespace detail {

// Non-zero cubic B-spline window at a point: up to order+1 consecutive basis
// functions starting at index `first`. Indices outside [0, n_basis) carry
// zero weight and are clipped by callers.
struct LocalBasis {
  int first = 0;
  int count = 0;  // 0 when z lies outside the extended knot range
  std::array<double, 4> v{};
};

// Degree-p non-zero basis values at z for uniform knots t_i = lo + (i-k)h.
// Returns values for basis indices span-p .. span of the degree-p family.
inline void uniform_bspline_nonzero(double lo, double h, int n_knot_spans,
                                    int degree_k, int p, double z, int& span,
                                    std::array<double, 4>& out) {
  // span s: t_s <= z < t_{s+1} in global knot indexing (t_0 = lo - k*h).
  const double t0 = lo - degree_k * h;
  double u = (z - t0) / h;
  int s = static_cast<int>(std::floor(u));
  if (s < 0 || s >= n_knot_spans) {
    span = -1;
    return;
  }
  span = s;
  // Cox-de Boor triangle with uniform knots; left_j = z - t_{s+1-j},
  // right_j = t_{s+j} - z.
  std::array<double, 4> left{}, right{};
  out[0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = z - (t0 + (s + 1 - j) * h);
    right[j] = (t0 + (s + j) * h) - z;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double tmp = out[r] / (right[r + 1] + left[j - r]);
      out[r] = saved + right[r + 1] * tmp;
      saved = left[j - r] * tmp;
    }
    out[j] = saved;
  }
}

// Binomial coefficients for derivative differencing, deriv <= 2.
inline constexpr std::array<std::array<double, 3>, 3> kDiffStencil{
    {{1.0, 0.0, 0.0}, {1.0, -1.0, 0.0}, {1.0, -2.0, 1.0}}};

// Values (or derivatives) of the cubic B-spline basis functions that are
// non-zero at z. Derivatives use the uniform-knot identity
// B_{i,k}^{(d)} = h^{-d} sum_r (-1)^r C(d,r) B_{i+r,k-d}.
inline LocalBasis bspline_local(const GridSpec& spec, double z, int deriv) {
  const int k = spec.order;
  const double h = spec.spacing();
  const int n_spans = spec.intervals + 2 * k;
  const int p = k - deriv;
  int span = -1;
  std::array<double, 4> low{};
  uniform_bspline_nonzero(spec.lo, h, n_spans, k, p, z, span, low);
  LocalBasis lb;
  if (span < 0) return lb;
  // Degree-p values cover indices span-p..span; assemble degree-k derivative
  // values for indices span-k..span.
  lb.first = span - k;
  lb.count = k + 1;
  const double scale = std::pow(1.0 / h, deriv);
  const auto& st = kDiffStencil[deriv];
  for (int i = 0; i <= k; ++i) {
    // basis index span-k+i; B_{span-k+i, p} corresponds to low[i - deriv .. ].
    double acc = 0.0;
    for (int r = 0; r <= deriv; ++r) {
      const int j = i + r - deriv;  // offset into degree-p window [0, p]
      if (j >= 0 && j <= p) acc += st[r] * low[j];
    }
    lb.v[i] = scale * acc;
  }
  return lb;
}

// Gaussian RBF values/derivatives for the centers near z. Centers farther
// than 10 bandwidths contribute below 1e-43 and are skipped.
struct RbfWindow {
  int first = 0;
  int count = 0;
};

inline RbfWindow rbf_window(const GridSpec& spec, double z) {
  const double h = spec.spacing();
  const int n = spec.intervals + 1;
  const int g0 = static_cast<int>(std::floor((z - spec.lo) / h)) - 10;
  const int g1 = static_cast<int>(std::ceil((z - spec.lo) / h)) + 10;
  RbfWindow w;
  w.first = std::max(0, g0);
  const int last = std::min(n - 1, g1);
  w.count = std::max(0, last - w.first + 1);
  return w;
}

inline double rbf_value(double z, double mu, double h, int deriv) {
  const double t = (z - mu) / h;
  const double e = std::exp(-t * t);
  switch (deriv) {
    case 0: return e;
    case 1: return -2.0 * t / h * e;
    default: return (4.0 * t * t - 2.0) / (h * h) * e;
  }
}

}  // namespace detail

// All basis values (or derivative values) at z, length basis_count().
// Outside the extended knot range B-spline values are identically zero.
inline Eigen::VectorXd eval_basis(const GridSpec& spec, BasisKind kind,
                                  double z, int deriv) {
  spec.validate();
  if (deriv < 0 || deriv > 2) throw ConfigError("eval_basis: deriv must be 0..2");
  if (!std::isfinite(z)) throw NumericError("eval_basis: non-finite input");
  const int n = basis_count(spec, kind);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  if (kind == BasisKind::BSplineCubic) {
    const auto lb = detail::bspline_local(spec, z, deriv);
    for (int i = 0; i < lb.count; ++i) {
      const int idx = lb.first + i;
      if (idx >= 0 && idx < n) out[idx] = lb.v[i];
    }
  } else {
    const double h = spec.spacing();
    for (int g = 0; g < n; ++g)
      out[g] = detail::rbf_value(z, spec.lo + g * h, h, deriv);
  }
  return out;
}

// Rectangular forward-difference matrix of the given order.
inline Eigen::MatrixXd diff_matrix(int order, int n_coeff) {
  if (order != 1 && order != 2) throw ConfigError("diff_matrix: order must be 1 or 2");
  if (n_coeff < order + 1) throw ConfigError("diff_matrix: too few coefficients");
  const int rows = n_coeff - order;
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(rows, n_coeff);
  for (int i = 0; i < rows; ++i) {
    if (order == 1) {
      d(i, i) = 1.0;
      d(i, i + 1) = -1.0;
    } else {
      d(i, i) = 1.0;
      d(i, i + 1) = -2.0;
      d(i, i + 2) = 1.0;
    }
  }
  return d;
}

// In-place application of D_order to c, returning the difference vector.
inline Eigen::VectorXd apply_diff(int order, const Eigen::VectorXd& c) {
  const int rows = static_cast<int>(c.size()) - order;
  Eigen::VectorXd d(rows);
  if (order == 1)
    for (int i = 0; i < rows; ++i) d[i] = c[i] - c[i + 1];
  else
    for (int i = 0; i < rows; ++i) d[i] = c[i] - 2.0 * c[i + 1] + c[i + 2];
  return d;
}

// Adjoint of apply_diff: returns D^T d.
inline Eigen::VectorXd apply_diff_adjoint(int order, const Eigen::VectorXd& d) {
  const int n = static_cast<int>(d.size()) + order;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  if (order == 1)
    for (int i = 0; i < d.size(); ++i) {
      out[i] += d[i];
      out[i + 1] -= d[i];
    }
  else
    for (int i = 0; i < d.size(); ++i) {
      out[i] += d[i];
      out[i + 1] -= 2.0 * d[i];
      out[i + 2] += d[i];
    }
  return out;
}

// Curvature Gram matrix M_ij = int B_i'' B_j''. For cubic B-splines the
// integral runs over the grid range and 2-point Gauss-Legendre per knot span
// is exact (the integrand is piecewise quadratic). For Gaussian RBFs the
// closed form over the real line applies:
//   M_ij = sqrt(pi/2)/h^3 * exp(-D^2/2) * (D^4 - 6 D^2 + 3),  D = j - i.
inline Eigen::MatrixXd gram_matrix(const GridSpec& spec, BasisKind kind) {
  spec.validate();
  const int n = basis_count(spec, kind);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  if (kind == BasisKind::GaussianRbf) {
    const double h = spec.spacing();
    const double pref = std::sqrt(std::numbers::pi / 2.0) / (h * h * h);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double d = j - i;
        const double d2 = d * d;
        m(i, j) = pref * std::exp(-d2 / 2.0) * (d2 * d2 - 6.0 * d2 + 3.0);
      }
    return m;
  }
  const double h = spec.spacing();
  constexpr double kGlNode = 0.5773502691896257645091488;  // 1/sqrt(3)
  for (int span = 0; span < spec.intervals; ++span) {
    const double a = spec.lo + span * h;
    const double mid = a + 0.5 * h;
    for (const double s : {-kGlNode, kGlNode}) {
      const double z = mid + 0.5 * h * s;
      const auto lb = detail::bspline_local(spec, z, 2);
      const double w = 0.5 * h;  // GL weight 1 scaled to the span
      for (int i = 0; i < lb.count; ++i) {
        const int bi = lb.first + i;
        if (bi < 0 || bi >= n) continue;
        for (int j = 0; j < lb.count; ++j) {
          const int bj = lb.first + j;
          if (bj < 0 || bj >= n) continue;
          m(bi, bj) += w * lb.v[i] * lb.v[j];
        }
      }
    }
  }
  return m;
}

}  // namespace kancurv
