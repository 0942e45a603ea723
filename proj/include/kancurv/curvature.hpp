#pragma once

// Compositional curvature analysis: exact input Hessians via the diagonal
// chain rule, composition curvature estimation (exact and Hutchinson),
// dense-grid total edge curvature, and the edge-wise-bound verifier.

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <vector>

#include "kancurv/network.hpp"
#include "kancurv/penalty.hpp"

namespace kancurv {

// Per-sample input Hessian, one n0 x n0 matrix per output component.
using CompositionHessian = std::vector<Eigen::MatrixXd>;

namespace detail {

// Cumulative Jacobian products for one trace. D[l] maps input perturbations
// to z^(l); U[l] maps perturbations of z^(l+1) to the output.
inline void jacobian_products(const ForwardTrace& tr, int L,
                              std::vector<Eigen::MatrixXd>& D,
                              std::vector<Eigen::MatrixXd>& U) {
  D.resize(L);
  U.resize(L);
  const int n0 = static_cast<int>(tr.z[0].size());
  const int nL = static_cast<int>(tr.z[L].size());
  D[0] = Eigen::MatrixXd::Identity(n0, n0);
  for (int l = 1; l < L; ++l) D[l] = tr.dphi[l - 1] * D[l - 1];
  U[L - 1] = Eigen::MatrixXd::Identity(nL, nL);
  for (int l = L - 2; l >= 0; --l) U[l] = U[l + 1] * tr.dphi[l + 1];
}

}  // namespace detail

// Assembles nabla^2 f_a = sum_l sum_c (U_l)_{ac} D_l^T Phi''_{lc} D_l.
inline CompositionHessian composition_hessian(const KanNetwork& net,
                                              const ForwardTrace& tr) {
  const int L = net.depth();
  const int n0 = net.n_in(), nL = net.n_out();
  std::vector<Eigen::MatrixXd> D, U;
  detail::jacobian_products(tr, L, D, U);
  CompositionHessian H(nL, Eigen::MatrixXd::Zero(n0, n0));
  for (int l = 0; l < L; ++l) {
    const int ni = net.widths[l], no = net.widths[l + 1];
    for (int c = 0; c < no; ++c) {
      Eigen::MatrixXd term = Eigen::MatrixXd::Zero(n0, n0);
      for (int b = 0; b < ni; ++b) {
        const double curv = tr.d2phi[l](c, b);
        if (curv != 0.0)
          term.noalias() += curv * D[l].row(b).transpose() * D[l].row(b);
      }
      for (int a = 0; a < nL; ++a) {
        const double u = U[l](a, c);
        if (u != 0.0) H[a].noalias() += u * term;
      }
    }
  }
  return H;
}

enum class CurvatureMethod { Exact, Hutchinson };

// Composition curvature R(f) = E_x ||nabla^2 f(x)||_F^2 over the samples.
// The Hutchinson path uses Hessian-vector products assembled from the
// chain-rule decomposition without materializing the tensor.
inline double composition_curvature(const KanNetwork& net,
                                    const Eigen::MatrixXd& X,
                                    CurvatureMethod method,
                                    int probes = 64,
                                    std::uint64_t seed = 0) {
  if (X.rows() == 0) throw ShapeError("composition_curvature: no samples");
  const int L = net.depth();
  double acc = 0.0;
  ForwardTrace tr;
  if (method == CurvatureMethod::Exact) {
    for (int s = 0; s < X.rows(); ++s) {
      net.forward_one(X.row(s).transpose(), tr);
      for (const auto& H : composition_hessian(net, tr))
        acc += H.squaredNorm();
    }
    return acc / X.rows();
  }
  if (probes < 1) throw ConfigError("composition_curvature: probes must be >= 1");
  Rng rng(seed);
  std::bernoulli_distribution coin(0.5);
  const int n0 = net.n_in(), nL = net.n_out();
  for (int s = 0; s < X.rows(); ++s) {
    net.forward_one(X.row(s).transpose(), tr);
    std::vector<Eigen::MatrixXd> D, U;
    detail::jacobian_products(tr, L, D, U);
    for (int p = 0; p < probes; ++p) {
      Eigen::VectorXd v(n0);
      for (int i = 0; i < n0; ++i) v[i] = coin(rng) ? 1.0 : -1.0;
      Eigen::MatrixXd Hv = Eigen::MatrixXd::Zero(nL, n0);
      for (int l = 0; l < L; ++l) {
        const Eigen::VectorXd q = D[l] * v;
        const int ni = net.widths[l], no = net.widths[l + 1];
        for (int c = 0; c < no; ++c) {
          Eigen::VectorXd svec(ni);
          for (int b = 0; b < ni; ++b) svec[b] = tr.d2phi[l](c, b) * q[b];
          const Eigen::VectorXd t = D[l].transpose() * svec;
          for (int a = 0; a < nL; ++a) {
            const double u = U[l](a, c);
            if (u != 0.0) Hv.row(a) += u * t.transpose();
          }
        }
      }
      acc += Hv.squaredNorm() / probes;
    }
  }
  return acc / X.rows();
}

struct EdgeCurvature {
  Eigen::VectorXd per_edge;  // int over the grid range of (phi'')^2, per edge
  double total = 0.0;
};

// Trapezoidal bending energy per edge on a dense grid over the grid range,
// phi'' from the analytic identities.
inline EdgeCurvature total_edge_curvature(const KanNetwork& net,
                                          int points = 4096) {
  EdgeCurvature ec;
  ec.per_edge = Eigen::VectorXd::Zero(net.num_edges());
  int ei = 0;
  for (const auto& lay : net.layers)
    for (const auto& e : lay) {
      const double lo = e.grid.lo, hi = e.grid.hi;
      const double h = (hi - lo) / (points - 1);
      double acc = 0.0;
      for (int i = 0; i < points; ++i) {
        const double z = lo + i * h;
        const double d2 = edge_eval(e, z, 2);
        acc += (i == 0 || i == points - 1 ? 0.5 : 1.0) * d2 * d2;
      }
      ec.per_edge[ei++] = acc * h;
    }
  ec.total = ec.per_edge.sum();
  return ec;
}

// Diagnostics for the edge-wise-penalty-bounds-composition-curvature result,
// with the empirically measured assumption constants and the intermediate
// inequality chain.
struct BoundDiagnostics {
  Eigen::VectorXd wbar;        // per edge
  Eigen::VectorXd sigma_w;     // per edge
  Eigen::VectorXd gamma;       // per edge
  std::vector<int> zero_wbar_edges;  // 0/0 -> 1 convention applied here
  double kappa = 0.0;          // max_e sigma_w / wbar
  double density_bound = 0.0;  // empirical C
  double min_omega = 0.0;
  double max_h = 0.0;
  int num_edges = 0;
  int grid_size = 0;           // max over edges
  double k_lambda = 0.0;
  double penalty_value = 0.0;       // R(f)
  double composition_value = 0.0;   // exact composition curvature
  double ratio = 0.0;               // k_lambda * R / composition curvature
  bool a1_measured = false;    // kappa finite
  bool a2_holds = false;       // all traced inputs landed inside their grids
  bool a3_holds = false;       // max_e h_e <= 1
  // Inequality chain, composition curvature first, fully relaxed bound last.
  double chain[6] = {0, 0, 0, 0, 0, 0};
  // Per-sample Cauchy-Schwarz check: max over samples of
  // ||nabla^2 f||_F^2 - E * sum_e phi''^2 w_e  (should be <= 0).
  double cs_slack = 0.0;
};

struct BoundOptions {
  int histogram_bins = 64;
  int quad_points = 4096;
};

inline BoundDiagnostics verify_bound(const KanNetwork& net,
                                     const Eigen::MatrixXd& X,
                                     const BoundOptions& opt = {}) {
  for (const auto& lay : net.layers)
    for (const auto& e : lay)
      if (e.kind != BasisKind::BSplineCubic)
        throw ConfigError("verify_bound: B-spline networks only");
  const int N = static_cast<int>(X.rows());
  if (N == 0) throw ShapeError("verify_bound: no samples");
  const int L = net.depth();
  const int E = net.num_edges();

  BoundDiagnostics d;
  d.num_edges = E;
  Eigen::VectorXd w_sum = Eigen::VectorXd::Zero(E);
  Eigen::VectorXd w_sq = Eigen::VectorXd::Zero(E);
  Eigen::VectorXd c2_sum = Eigen::VectorXd::Zero(E);   // phi''^2 moments
  Eigen::VectorXd c2_sq = Eigen::VectorXd::Zero(E);
  Eigen::VectorXd wc2_sum = Eigen::VectorXd::Zero(E);  // joint product
  Eigen::MatrixXi hist = Eigen::MatrixXi::Zero(E, opt.histogram_bins);
  int outside = 0;
  double comp_acc = 0.0;
  double s1_acc = 0.0;
  d.cs_slack = -1e300;

  ForwardTrace tr;
  for (int s = 0; s < N; ++s) {
    net.forward_one(X.row(s).transpose(), tr);
    std::vector<Eigen::MatrixXd> D, U;
    detail::jacobian_products(tr, L, D, U);
    double h2 = 0.0;
    for (const auto& H : composition_hessian(net, tr)) h2 += H.squaredNorm();
    comp_acc += h2;
    double cs_rhs = 0.0;
    int at = 0;
    for (int l = 0; l < L; ++l) {
      const int ni = net.widths[l], no = net.widths[l + 1];
      for (int c = 0; c < no; ++c) {
        const double u2 = U[l].col(c).squaredNorm();
        for (int b = 0; b < ni; ++b) {
          const double r2 = D[l].row(b).squaredNorm();
          const double w = u2 * r2 * r2;
          const double curv2 = tr.d2phi[l](c, b) * tr.d2phi[l](c, b);
          const int ei = at + c * ni + b;
          w_sum[ei] += w;
          w_sq[ei] += w * w;
          c2_sum[ei] += curv2;
          c2_sq[ei] += curv2 * curv2;
          wc2_sum[ei] += w * curv2;
          cs_rhs += curv2 * w;
          const auto& g = net.layers[l][c * ni + b].grid;
          const double zb = tr.z[l][b];
          if (zb < g.lo || zb > g.hi) {
            ++outside;
          } else {
            int bin = static_cast<int>((zb - g.lo) / (g.hi - g.lo) *
                                       opt.histogram_bins);
            bin = std::min(bin, opt.histogram_bins - 1);
            ++hist(ei, bin);
          }
        }
      }
      at += ni * no;
    }
    s1_acc += cs_rhs;
    d.cs_slack = std::max(d.cs_slack, h2 - E * cs_rhs);
  }

  d.composition_value = comp_acc / N;
  d.chain[0] = d.composition_value;
  d.chain[1] = E * s1_acc / N;

  d.wbar = w_sum / N;
  d.sigma_w.resize(E);
  d.gamma.resize(E);
  d.kappa = 0.0;
  for (int e = 0; e < E; ++e) {
    const double var = std::max(0.0, w_sq[e] / N - d.wbar[e] * d.wbar[e]);
    d.sigma_w[e] = std::sqrt(var);
    double cv;
    if (d.wbar[e] <= 0.0) {
      cv = 1.0;  // 0/0 convention, flagged
      d.zero_wbar_edges.push_back(e);
    } else {
      cv = d.sigma_w[e] / d.wbar[e];
    }
    d.kappa = std::max(d.kappa, cv);
  }
  d.a1_measured = std::isfinite(d.kappa);

  // gamma_e = 1 + kappa * sigma(phi''^2) / E[phi''^2].
  for (int e = 0; e < E; ++e) {
    const double mean = c2_sum[e] / N;
    const double var = std::max(0.0, c2_sq[e] / N - mean * mean);
    d.gamma[e] = mean > 0 ? 1.0 + d.kappa * std::sqrt(var) / mean : 1.0;
  }

  // Empirical density bound: max bin density times the grid extent.
  d.density_bound = 0.0;
  d.min_omega = 1e300;
  d.max_h = 0.0;
  d.grid_size = 0;
  int ei = 0;
  for (const auto& lay : net.layers)
    for (const auto& e : lay) {
      const double omega = e.grid.hi - e.grid.lo;
      d.min_omega = std::min(d.min_omega, omega);
      d.max_h = std::max(d.max_h, e.grid.spacing());
      d.grid_size = std::max(d.grid_size, e.grid.intervals);
      const double binw = omega / opt.histogram_bins;
      const int peak = hist.row(ei).maxCoeff();
      d.density_bound =
          std::max(d.density_bound, peak / (N * binw) * omega);
      ++ei;
    }
  d.a2_holds = outside == 0;
  d.a3_holds = d.max_h <= 1.0;

  // Chain steps 2..5.
  double s2 = 0.0, s3 = 0.0, s4 = 0.0;
  const double K = silu_curvature_constant();
  ei = 0;
  for (const auto& lay : net.layers)
    for (const auto& e : lay) {
      const double omega = e.grid.hi - e.grid.lo;
      s2 += d.wbar[ei] * (c2_sum[ei] / N) * d.gamma[ei];
      // bending energy over the grid range
      double energy = 0.0;
      {
        const double h = omega / (opt.quad_points - 1);
        for (int i = 0; i < opt.quad_points; ++i) {
          const double z = e.grid.lo + i * h;
          const double v = edge_eval(e, z, 2);
          energy += (i == 0 || i == opt.quad_points - 1 ? 0.5 : 1.0) * v * v;
        }
        energy *= h;
      }
      const double cgw = d.density_bound * d.gamma[ei] * d.wbar[ei] / omega;
      s3 += cgw * energy;
      const Eigen::MatrixXd M = gram_matrix(e.grid, BasisKind::BSplineCubic);
      const double spline_quad =
          e.w_s * e.w_s * e.coeffs.dot(M * e.coeffs);
      s4 += 2.0 * cgw * (spline_quad + K * e.w_b * e.w_b);
      ++ei;
    }
  d.chain[2] = E * s2;
  d.chain[3] = E * s3;
  d.chain[4] = E * s4;

  const PenaltyResult pen = curvature_penalty(net);
  d.penalty_value = pen.value;
  const double gmax = d.gamma.maxCoeff();
  const double wmax = d.wbar.maxCoeff();
  const double g3 = std::pow(static_cast<double>(d.grid_size), 3.0);
  d.k_lambda = 2.0 * E * d.density_bound * gmax * wmax * g3 /
               std::pow(d.min_omega, 4.0);
  d.chain[5] = d.k_lambda * d.penalty_value;
  d.ratio = d.composition_value > 0
                ? d.chain[5] / d.composition_value
                : std::numeric_limits<double>::infinity();
  return d;
}

// Numerical check of the Gram domination M <= h^-3 D2^T D2 used by the
// bound's final step: smallest eigenvalue of the difference.
inline double gram_domination_margin(const GridSpec& spec) {
  const Eigen::MatrixXd M = gram_matrix(spec, BasisKind::BSplineCubic);
  const int n = static_cast<int>(M.rows());
  const Eigen::MatrixXd D2 = diff_matrix(2, n);
  const double h = spec.spacing();
  const Eigen::MatrixXd diff = D2.transpose() * D2 / (h * h * h) - M;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(diff);
  return es.eigenvalues().minCoeff();
}

}  // namespace kancurv
