#pragma once

// Regularization penalties and their analytic gradients: KAN magnitude +
// entropy penalty, first-difference penalty, uniform curvature penalty,
// path-weighted curvature penalty, and the RBF Gram-matrix curvature form.

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <mutex>
#include <vector>

#include "kancurv/basis.hpp"
#include "kancurv/network.hpp"

namespace kancurv {

enum class PenaltyKind { None, Kan, FirstDiff, Curvature, WeightedCurvature };

struct PenaltyConfig {
  PenaltyKind kind = PenaltyKind::None;
  double lambda = 0.0;
  double mu1 = 1.0;  // Kan kind only
  double mu2 = 1.0;  // Kan kind only
  int weight_refresh_epochs = 1;  // WeightedCurvature only

  void validate() const {
    if (lambda < 0) throw ConfigError("PenaltyConfig: lambda must be >= 0");
    if (mu1 < 0 || mu2 < 0) throw ConfigError("PenaltyConfig: mu weights must be >= 0");
    if (weight_refresh_epochs < 1)
      throw ConfigError("PenaltyConfig: weight_refresh_epochs must be >= 1");
  }
};

struct PenaltyResult {
  double value = 0.0;
  Eigen::VectorXd grad;  // get_params layout
};

// Batch-mean per-edge path weights (Eq. of the weighted penalty); treated as
// constants when differentiating.
struct PathWeights {
  Eigen::VectorXd wbar;  // global edge index order
  long epoch_stamp = 0;
};

// Per-edge batch-mean |phi| magnitudes and the within-layer entropy terms.
struct EdgeMagnitudes {
  Eigen::VectorXd mean_abs;           // global edge index order
  std::vector<Eigen::VectorXd> rho;   // per layer, normalized magnitudes
  std::vector<double> entropy;        // per layer
};

namespace detail {

// RBF curvature Gram matrices cached per grid; identical grids are common
// across edges and the closed form is re-evaluated often in training.
inline const Eigen::MatrixXd& cached_rbf_gram(const GridSpec& spec) {
  static std::map<std::tuple<double, double, int>, Eigen::MatrixXd> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  const auto key = std::make_tuple(spec.lo, spec.hi, spec.intervals);
  auto it = cache.find(key);
  if (it == cache.end())
    it = cache.emplace(key, gram_matrix(spec, BasisKind::GaussianRbf)).first;
  return it->second;
}

// Parameter offset of each edge in the flat layout.
inline std::vector<int> param_offsets(const KanNetwork& net) {
  std::vector<int> off;
  off.reserve(net.num_edges());
  int at = 0;
  for (const auto& lay : net.layers)
    for (const auto& e : lay) {
      off.push_back(at);
      at += e.num_params();
    }
  return off;
}

}  // namespace detail

inline EdgeMagnitudes edge_magnitudes(const KanNetwork& net,
                                      const std::vector<ForwardTrace>& traces) {
  if (traces.empty()) throw ShapeError("edge_magnitudes: empty batch");
  const int L = net.depth();
  EdgeMagnitudes m;
  m.mean_abs = Eigen::VectorXd::Zero(net.num_edges());
  const double inv_n = 1.0 / traces.size();
  int at = 0;
  for (int l = 0; l < L; ++l) {
    const int ne = static_cast<int>(net.layers[l].size());
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(ne);
    for (const auto& tr : traces) {
      const auto& phi = tr.phi[l];
      for (int c = 0; c < phi.rows(); ++c)
        for (int b = 0; b < phi.cols(); ++b)
          acc[c * phi.cols() + b] += std::abs(phi(c, b));
    }
    acc *= inv_n;
    m.mean_abs.segment(at, ne) = acc;
    const double total = acc.sum();
    Eigen::VectorXd rho = Eigen::VectorXd::Zero(ne);
    double s = 0.0;
    if (total > 0) {
      rho = acc / total;
      for (int i = 0; i < ne; ++i)
        if (rho[i] > 0) s -= rho[i] * std::log(rho[i]);
    }
    m.rho.push_back(rho);
    m.entropy.push_back(s);
    at += ne;
  }
  return m;
}

// KAN penalty mu1 * sum_e |phi_e|_1 + mu2 * sum_l S(rho^(l)) on the batch,
// with the exact gradient through the batch means, including the path back
// through earlier layers (phi_e depends on upstream parameters via z).
inline PenaltyResult kan_penalty(const KanNetwork& net,
                                 const std::vector<ForwardTrace>& traces,
                                 double mu1, double mu2) {
  const auto mags = edge_magnitudes(net, traces);
  PenaltyResult res;
  res.value = mu1 * mags.mean_abs.sum();
  for (double s : mags.entropy) res.value += mu2 * s;
  res.grad = Eigen::VectorXd::Zero(net.num_params());

  // d(value)/d(m_e) per edge: mu1 + mu2 * (-log rho_e - S_l)/T_l.
  const int L = net.depth();
  std::vector<Eigen::VectorXd> coeff(L);
  int at = 0;
  for (int l = 0; l < L; ++l) {
    const int ne = static_cast<int>(net.layers[l].size());
    coeff[l] = Eigen::VectorXd::Constant(ne, mu1);
    const double total = mags.mean_abs.segment(at, ne).sum();
    if (total > 0 && mu2 > 0) {
      for (int i = 0; i < ne; ++i) {
        const double rho = mags.rho[l][i];
        if (rho > 0)
          coeff[l][i] += mu2 * (-std::log(rho) - mags.entropy[l]) / total;
      }
    }
    at += ne;
  }

  const double inv_n = 1.0 / traces.size();
  std::vector<Eigen::MatrixXd> edge_adj(L);
  const Eigen::VectorXd zero_out = Eigen::VectorXd::Zero(net.n_out());
  for (const auto& tr : traces) {
    for (int l = 0; l < L; ++l) {
      const auto& phi = tr.phi[l];
      edge_adj[l].resize(phi.rows(), phi.cols());
      for (int c = 0; c < phi.rows(); ++c)
        for (int b = 0; b < phi.cols(); ++b) {
          const double v = phi(c, b);
          const double sgn = v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0);
          edge_adj[l](c, b) = inv_n * sgn * coeff[l][c * phi.cols() + b];
        }
    }
    net.backward_one(tr, zero_out, &edge_adj, res.grad);
  }
  return res;
}

// Shared edge-wise curvature core. Each edge contributes
//   scale_e * (w_s^2 c^T P c + K_silu w_b^2)
// with P = D2^T D2 for B-splines (h^-3 prefactor dropped) and P = M, the
// closed-form curvature Gram, for RBF edges (w_s pinned at 1).
inline PenaltyResult edgewise_curvature(const KanNetwork& net,
                                        const Eigen::VectorXd* scale) {
  PenaltyResult res;
  res.grad = Eigen::VectorXd::Zero(net.num_params());
  const double K = silu_curvature_constant();
  const auto offsets = detail::param_offsets(net);
  int ei = 0;
  for (const auto& lay : net.layers)
    for (const auto& e : lay) {
      const double s = scale ? (*scale)[ei] : 1.0;
      const int off = offsets[ei];
      ++ei;
      if (e.kind == BasisKind::BSplineCubic) {
        const Eigen::VectorXd d = apply_diff(2, e.coeffs);
        const double quad = d.squaredNorm();
        res.value += s * (e.w_s * e.w_s * quad + K * e.w_b * e.w_b);
        res.grad[off] += s * 2.0 * K * e.w_b;
        res.grad[off + 1] += s * 2.0 * e.w_s * quad;
        res.grad.segment(off + 2, e.coeffs.size()) +=
            s * 2.0 * e.w_s * e.w_s * apply_diff_adjoint(2, d);
      } else {
        const Eigen::MatrixXd& M = detail::cached_rbf_gram(e.grid);
        const Eigen::VectorXd mc = M * e.coeffs;
        res.value += s * (e.coeffs.dot(mc) + K * e.w_b * e.w_b);
        res.grad[off] += s * 2.0 * K * e.w_b;
        res.grad.segment(off + 1, e.coeffs.size()) += s * 2.0 * mc;
      }
    }
  return res;
}

// Data-free curvature penalty sum_e ||D2(w_s c_e)||^2 + K_silu w_b^2.
// RBF edges route through the Gram-matrix form automatically.
inline PenaltyResult curvature_penalty(const KanNetwork& net) {
  return edgewise_curvature(net, nullptr);
}

// RBF curvature penalty sum over edges of c^T M c + K_silu w_b^2, the
// cross-term vector dropped. Requires an all-RBF network.
inline PenaltyResult rbf_curvature_penalty(const KanNetwork& net) {
  for (const auto& lay : net.layers)
    for (const auto& e : lay)
      if (e.kind != BasisKind::GaussianRbf)
        throw ConfigError("rbf_curvature_penalty: network has non-RBF edges");
  return edgewise_curvature(net, nullptr);
}

// First-difference penalty sum_e ||D1(w_s c_e)||^2; constants null space.
// Comparison baseline only.
inline PenaltyResult first_diff_penalty(const KanNetwork& net) {
  PenaltyResult res;
  res.grad = Eigen::VectorXd::Zero(net.num_params());
  const auto offsets = detail::param_offsets(net);
  int ei = 0;
  for (const auto& lay : net.layers)
    for (const auto& e : lay) {
      const int off = offsets[ei++];
      const Eigen::VectorXd d = apply_diff(1, e.coeffs);
      const double quad = d.squaredNorm();
      res.value += e.w_s * e.w_s * quad;
      if (e.kind == BasisKind::BSplineCubic)
        res.grad[off + 1] += 2.0 * e.w_s * quad;
      const int coeff_at = off + (e.kind == BasisKind::BSplineCubic ? 2 : 1);
      res.grad.segment(coeff_at, e.coeffs.size()) +=
          2.0 * e.w_s * e.w_s * apply_diff_adjoint(1, d);
    }
  return res;
}

// Data-dependent path weights w_{cb}(x) = ||D_{l,b,:}||^4 ||U_{l,:,c}||^2,
// batch-meaned per edge. D_l and U_l are the cumulative downstream/upstream
// layer-Jacobian products.
inline PathWeights compute_path_weights(const KanNetwork& net,
                                        const std::vector<ForwardTrace>& traces,
                                        long epoch_stamp = 0) {
  if (traces.empty()) throw ShapeError("compute_path_weights: empty batch");
  const int L = net.depth();
  PathWeights pw;
  pw.epoch_stamp = epoch_stamp;
  pw.wbar = Eigen::VectorXd::Zero(net.num_edges());
  for (const auto& tr : traces) {
    // D[l]: Jacobian of z^(l) w.r.t. the input, l = 0..L-1 (D_1..D_L in
    // 1-based layer terms). U[l]: Jacobian of the output w.r.t. z^(l+1).
    std::vector<Eigen::MatrixXd> D(L), U(L);
    D[0] = Eigen::MatrixXd::Identity(net.widths[0], net.widths[0]);
    for (int l = 1; l < L; ++l) D[l] = tr.dphi[l - 1] * D[l - 1];
    U[L - 1] = Eigen::MatrixXd::Identity(net.n_out(), net.n_out());
    for (int l = L - 2; l >= 0; --l) U[l] = U[l + 1] * tr.dphi[l + 1];
    int at = 0;
    for (int l = 0; l < L; ++l) {
      const int ni = net.widths[l], no = net.widths[l + 1];
      Eigen::VectorXd drow4(ni), ucol2(no);
      for (int b = 0; b < ni; ++b) {
        const double r2 = D[l].row(b).squaredNorm();
        drow4[b] = r2 * r2;
      }
      for (int c = 0; c < no; ++c) ucol2[c] = U[l].col(c).squaredNorm();
      for (int c = 0; c < no; ++c)
        for (int b = 0; b < ni; ++b)
          pw.wbar[at + c * ni + b] += ucol2[c] * drow4[b];
      at += ni * no;
    }
  }
  pw.wbar /= static_cast<double>(traces.size());
  return pw;
}

// Weighted edge-wise penalty; the weights are constants (no gradient flows
// through them).
inline PenaltyResult weighted_curvature_penalty(const KanNetwork& net,
                                                const PathWeights& weights) {
  if (weights.wbar.size() != net.num_edges())
    throw ShapeError("weighted_curvature_penalty: weight count mismatch");
  return edgewise_curvature(net, &weights.wbar);
}

// Penalty dispatch on the current batch traces.
inline PenaltyResult evaluate_penalty(const KanNetwork& net,
                                      const std::vector<ForwardTrace>& traces,
                                      const PenaltyConfig& cfg,
                                      const PathWeights* weights = nullptr) {
  switch (cfg.kind) {
    case PenaltyKind::None: {
      PenaltyResult r;
      r.grad = Eigen::VectorXd::Zero(net.num_params());
      return r;
    }
    case PenaltyKind::Kan:
      return kan_penalty(net, traces, cfg.mu1, cfg.mu2);
    case PenaltyKind::FirstDiff:
      return first_diff_penalty(net);
    case PenaltyKind::Curvature:
      return curvature_penalty(net);
    case PenaltyKind::WeightedCurvature: {
      if (!weights)
        throw ConfigError("weighted curvature penalty requires path weights");
      return weighted_curvature_penalty(net, *weights);
    }
  }
  throw ConfigError("unknown penalty kind");
}

struct Objective {
  double loss = 0.0;     // mse + lambda * penalty
  double mse = 0.0;
  double penalty = 0.0;  // unscaled penalty value
  Eigen::VectorXd grad;
};

// Exact reverse-mode gradient of MSE + lambda * penalty over the batch.
// The KAN penalty's data coupling shares the single backward pass with the
// MSE term; data-free penalties add their coefficient-space gradients.
inline Objective loss_gradient(const KanNetwork& net, const Eigen::MatrixXd& X,
                               const Eigen::MatrixXd& Y,
                               const PenaltyConfig& cfg,
                               const PathWeights* weights = nullptr,
                               bool penalty_active = true) {
  if (X.rows() == 0) throw ShapeError("loss_gradient: empty batch");
  if (X.rows() != Y.rows()) throw ShapeError("loss_gradient: X/Y row mismatch");
  std::vector<ForwardTrace> traces;
  const Eigen::MatrixXd out = net.forward(X, traces);
  const Eigen::MatrixXd resid = out - Y;
  Objective obj;
  const double inv_n = 1.0 / X.rows();
  obj.mse = resid.squaredNorm() * inv_n;
  obj.grad = Eigen::VectorXd::Zero(net.num_params());
  for (int s = 0; s < X.rows(); ++s) {
    const Eigen::VectorXd out_adj = 2.0 * inv_n * resid.row(s).transpose();
    net.backward_one(traces[s], out_adj, nullptr, obj.grad);
  }
  const bool apply = penalty_active && cfg.kind != PenaltyKind::None &&
                     cfg.lambda > 0.0;
  if (apply) {
    const PenaltyResult pen = evaluate_penalty(net, traces, cfg, weights);
    obj.penalty = pen.value;
    obj.grad += cfg.lambda * pen.grad;
  }
  obj.loss = obj.mse + cfg.lambda * obj.penalty;
  if (!obj.grad.allFinite()) {
    int bad = 0;
    for (int i = 0; i < obj.grad.size(); ++i)
      if (!std::isfinite(obj.grad[i])) { bad = i; break; }
    throw NumericError("loss_gradient: non-finite gradient at parameter " +
                       std::to_string(bad));
  }
  return obj;
}

}  // namespace kancurv
