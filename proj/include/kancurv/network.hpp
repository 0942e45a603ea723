#pragma once

// KAN model structure: per-edge learnable activations, forward evaluation
// with trace caching, hand-derived reverse-mode gradients, and per-layer
// Jacobian / diagonal-Hessian extraction.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "kancurv/basis.hpp"
#include "kancurv/common.hpp"

namespace kancurv {

// One edge's activation phi(z) = w_b * SiLU(z) + w_s * c^T B(z).
// The RBF kind has no separate spline scale; w_s stays pinned at 1 and is
// not a trainable parameter.
struct EdgeActivation {
  double w_b = 1.0;
  double w_s = 1.0;
  Eigen::VectorXd coeffs;
  GridSpec grid;
  BasisKind kind = BasisKind::BSplineCubic;

  // Spline/RBF component value c^T B^(deriv)(z).
  double basis_component(double z, int deriv) const {
    if (kind == BasisKind::BSplineCubic) {
      const auto lb = detail::bspline_local(grid, z, deriv);
      double acc = 0.0;
      for (int i = 0; i < lb.count; ++i) {
        const int idx = lb.first + i;
        if (idx >= 0 && idx < coeffs.size()) acc += coeffs[idx] * lb.v[i];
      }
      return acc;
    }
    const auto w = detail::rbf_window(grid, z);
    const double h = grid.spacing();
    double acc = 0.0;
    for (int i = 0; i < w.count; ++i) {
      const int g = w.first + i;
      acc += coeffs[g] * detail::rbf_value(z, grid.lo + g * h, h, deriv);
    }
    return acc;
  }

  int num_params() const {
    // w_b [+ w_s] + coefficients
    return (kind == BasisKind::BSplineCubic ? 2 : 1) +
           static_cast<int>(coeffs.size());
  }
};

// phi and its first two derivatives at z.
inline double edge_eval(const EdgeActivation& e, double z, int deriv) {
  const double base = deriv == 0   ? silu::value(z)
                      : deriv == 1 ? silu::d1(z)
                                   : silu::d2(z);
  return e.w_b * base + e.w_s * e.basis_component(z, deriv);
}

// Per-sample cache of layer inputs and per-edge derivative values.
struct ForwardTrace {
  std::vector<Eigen::VectorXd> z;           // layer inputs, size L+1
  std::vector<Eigen::MatrixXd> phi;         // per layer, n_out x n_in
  std::vector<Eigen::MatrixXd> dphi;        // phi'
  std::vector<Eigen::MatrixXd> d2phi;       // phi''
  std::vector<Eigen::MatrixXd> spline_val;  // c^T B(z), for w_s gradients
};

class KanNetwork {
 public:
  std::vector<int> widths;
  // layers[l] holds n_{l+1} * n_l edges, indexed c * n_in + b.
  std::vector<std::vector<EdgeActivation>> layers;

  int depth() const { return static_cast<int>(layers.size()); }
  int n_in() const { return widths.front(); }
  int n_out() const { return widths.back(); }

  EdgeActivation& edge(int l, int c, int b) {
    return layers[l][c * widths[l] + b];
  }
  const EdgeActivation& edge(int l, int c, int b) const {
    return layers[l][c * widths[l] + b];
  }

  int num_edges() const {
    int e = 0;
    for (const auto& lay : layers) e += static_cast<int>(lay.size());
    return e;
  }

  // Flat global edge index: layers in order, c-major within a layer.
  int edge_index(int l, int c, int b) const {
    int off = 0;
    for (int k = 0; k < l; ++k) off += static_cast<int>(layers[k].size());
    return off + c * widths[l] + b;
  }

  // Spline coefficients start near zero so training begins close to the
  // SiLU residual. Layer-0 grids take the input domain per coordinate;
  // deeper grids default to [-3, 3].
  static KanNetwork create(const std::vector<int>& widths, int grid_size,
                           BasisKind kind,
                           const std::vector<std::pair<double, double>>& domain,
                           std::uint64_t seed, double coeff_std = 0.1) {
    if (widths.size() < 2) throw ConfigError("KanNetwork: need at least 2 widths");
    if (static_cast<int>(domain.size()) != widths.front())
      throw ConfigError("KanNetwork: domain size must match input width");
    KanNetwork net;
    net.widths = widths;
    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, coeff_std);
    const int L = static_cast<int>(widths.size()) - 1;
    net.layers.resize(L);
    for (int l = 0; l < L; ++l) {
      net.layers[l].resize(widths[l + 1] * widths[l]);
      for (int c = 0; c < widths[l + 1]; ++c)
        for (int b = 0; b < widths[l]; ++b) {
          EdgeActivation& e = net.edge(l, c, b);
          e.kind = kind;
          e.grid.intervals = grid_size;
          if (l == 0) {
            e.grid.lo = domain[b].first;
            e.grid.hi = domain[b].second;
          } else {
            e.grid.lo = -3.0;
            e.grid.hi = 3.0;
          }
          e.grid.validate();
          e.w_b = 1.0;
          e.w_s = 1.0;
          e.coeffs.resize(basis_count(e.grid, kind));
          for (int i = 0; i < e.coeffs.size(); ++i) e.coeffs[i] = gauss(rng);
        }
    }
    return net;
  }

  int num_params() const {
    int n = 0;
    for (const auto& lay : layers)
      for (const auto& e : lay) n += e.num_params();
    return n;
  }

  Eigen::VectorXd get_params() const {
    Eigen::VectorXd p(num_params());
    int at = 0;
    for (const auto& lay : layers)
      for (const auto& e : lay) {
        p[at++] = e.w_b;
        if (e.kind == BasisKind::BSplineCubic) p[at++] = e.w_s;
        p.segment(at, e.coeffs.size()) = e.coeffs;
        at += static_cast<int>(e.coeffs.size());
      }
    return p;
  }

  void set_params(const Eigen::VectorXd& p) {
    if (p.size() != num_params()) throw ShapeError("set_params: size mismatch");
    int at = 0;
    for (auto& lay : layers)
      for (auto& e : lay) {
        e.w_b = p[at++];
        if (e.kind == BasisKind::BSplineCubic) e.w_s = p[at++];
        e.coeffs = p.segment(at, e.coeffs.size());
        at += static_cast<int>(e.coeffs.size());
      }
  }

  // Forward pass for one sample, caching everything downstream passes need.
  Eigen::VectorXd forward_one(const Eigen::VectorXd& x, ForwardTrace& tr) const {
    if (x.size() != n_in()) throw ShapeError("forward: input width mismatch");
    const int L = depth();
    tr.z.assign(L + 1, Eigen::VectorXd());
    tr.phi.resize(L);
    tr.dphi.resize(L);
    tr.d2phi.resize(L);
    tr.spline_val.resize(L);
    tr.z[0] = x;
    for (int l = 0; l < L; ++l) {
      const int ni = widths[l], no = widths[l + 1];
      tr.phi[l].resize(no, ni);
      tr.dphi[l].resize(no, ni);
      tr.d2phi[l].resize(no, ni);
      tr.spline_val[l].resize(no, ni);
      Eigen::VectorXd out = Eigen::VectorXd::Zero(no);
      for (int b = 0; b < ni; ++b) {
        const double zb = tr.z[l][b];
        if (!std::isfinite(zb))
          throw NumericError("forward: non-finite input at layer " +
                             std::to_string(l) + ", node " + std::to_string(b));
        const double u0 = silu::value(zb);
        const double u1 = silu::d1(zb);
        const double u2 = silu::d2(zb);
        for (int c = 0; c < no; ++c) {
          const EdgeActivation& e = edge(l, c, b);
          const double s0 = e.basis_component(zb, 0);
          const double s1 = e.basis_component(zb, 1);
          const double s2 = e.basis_component(zb, 2);
          const double v = e.w_b * u0 + e.w_s * s0;
          tr.phi[l](c, b) = v;
          tr.dphi[l](c, b) = e.w_b * u1 + e.w_s * s1;
          tr.d2phi[l](c, b) = e.w_b * u2 + e.w_s * s2;
          tr.spline_val[l](c, b) = s0;
          out[c] += v;
        }
      }
      tr.z[l + 1] = out;
    }
    return tr.z[L];
  }

  // Batched forward. X has one sample per row.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& X,
                          std::vector<ForwardTrace>& traces) const {
    const int n = static_cast<int>(X.rows());
    traces.resize(n);
    Eigen::MatrixXd out(n, n_out());
    for (int s = 0; s < n; ++s)
      out.row(s) = forward_one(X.row(s).transpose(), traces[s]);
    return out;
  }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& X) const {
    std::vector<ForwardTrace> traces;
    return forward(X, traces);
  }

  // Reverse pass for one sample. `out_adj` is dLoss/dz^(L). `edge_adj`, when
  // non-null, carries direct adjoints on each edge's output phi_e(z_b) (used
  // by data-coupled penalties); it follows the phi matrix layout per layer.
  // Gradients accumulate into `grad` using the get_params layout.
  void backward_one(const ForwardTrace& tr, const Eigen::VectorXd& out_adj,
                    const std::vector<Eigen::MatrixXd>* edge_adj,
                    Eigen::VectorXd& grad) const {
    const int L = depth();
    Eigen::VectorXd node_adj = out_adj;
    // Parameter offsets per layer are contiguous; walk backwards.
    std::vector<int> layer_off(L + 1, 0);
    for (int l = 0; l < L; ++l) {
      int sz = 0;
      for (const auto& e : layers[l]) sz += e.num_params();
      layer_off[l + 1] = layer_off[l] + sz;
    }
    for (int l = L - 1; l >= 0; --l) {
      const int ni = widths[l], no = widths[l + 1];
      Eigen::VectorXd prev_adj = Eigen::VectorXd::Zero(ni);
      int at = layer_off[l];
      for (int c = 0; c < no; ++c)
        for (int b = 0; b < ni; ++b) {
          const EdgeActivation& e = edge(l, c, b);
          const double zb = tr.z[l][b];
          double a = node_adj[c];
          if (edge_adj) a += (*edge_adj)[l](c, b);
          prev_adj[b] += a * tr.dphi[l](c, b);
          if (a != 0.0) {
            grad[at] += a * silu::value(zb);  // w_b
            int coeff_at = at + 1;
            if (e.kind == BasisKind::BSplineCubic) {
              grad[at + 1] += a * tr.spline_val[l](c, b);  // w_s
              coeff_at = at + 2;
              const auto lb = detail::bspline_local(e.grid, zb, 0);
              for (int i = 0; i < lb.count; ++i) {
                const int idx = lb.first + i;
                if (idx >= 0 && idx < e.coeffs.size())
                  grad[coeff_at + idx] += a * e.w_s * lb.v[i];
              }
            } else {
              const auto w = detail::rbf_window(e.grid, zb);
              const double h = e.grid.spacing();
              for (int i = 0; i < w.count; ++i) {
                const int g = w.first + i;
                grad[coeff_at + g] +=
                    a * detail::rbf_value(zb, e.grid.lo + g * h, h, 0);
              }
            }
          }
          at += e.num_params();
        }
      node_adj = prev_adj;
    }
  }

  // One-shot grid range calibration: reset each edge's grid to the observed
  // min/max of its traced inputs padded by `pad`, then least-squares
  // re-project the spline component onto the new grid so the function is
  // preserved through the change.
  void calibrate_ranges(const Eigen::MatrixXd& X, double pad = 0.1) {
    const int L = depth();
    std::vector<Eigen::VectorXd> zmin(L), zmax(L);
    for (int l = 0; l < L; ++l) {
      zmin[l] = Eigen::VectorXd::Constant(widths[l], 1e300);
      zmax[l] = Eigen::VectorXd::Constant(widths[l], -1e300);
    }
    ForwardTrace tr;
    for (int s = 0; s < X.rows(); ++s) {
      forward_one(X.row(s).transpose(), tr);
      for (int l = 0; l < L; ++l) {
        zmin[l] = zmin[l].cwiseMin(tr.z[l]);
        zmax[l] = zmax[l].cwiseMax(tr.z[l]);
      }
    }
    for (int l = 0; l < L; ++l)
      for (int c = 0; c < widths[l + 1]; ++c)
        for (int b = 0; b < widths[l]; ++b) {
          EdgeActivation& e = edge(l, c, b);
          double lo = zmin[l][b], hi = zmax[l][b];
          double span = hi - lo;
          if (span < 1e-8) {
            lo -= 0.5;
            hi += 0.5;
            span = hi - lo;
          }
          GridSpec ng = e.grid;
          ng.lo = lo - pad * span;
          ng.hi = hi + pad * span;
          reproject_edge(e, ng);
        }
  }

  static void reproject_edge(EdgeActivation& e, const GridSpec& new_grid) {
    const int n = basis_count(new_grid, e.kind);
    const int m = 4 * n;
    Eigen::MatrixXd A(m, n);
    Eigen::VectorXd y(m);
    for (int i = 0; i < m; ++i) {
      const double z =
          new_grid.lo + (new_grid.hi - new_grid.lo) * i / (m - 1.0);
      A.row(i) = eval_basis(new_grid, e.kind, z, 0).transpose();
      y[i] = e.basis_component(z, 0);
    }
    e.grid = new_grid;
    e.coeffs = A.colPivHouseholderQr().solve(y);
  }
};

// Layer Jacobian (J_l)_{cb} = phi'_{cb}(z_{l-1,b}) from the trace.
inline Eigen::MatrixXd layer_jacobian(const KanNetwork& net,
                                      const ForwardTrace& tr, int l) {
  if (l < 0 || l >= net.depth()) throw ShapeError("layer_jacobian: bad layer");
  return tr.dphi[l];
}

// Diagonal layer Hessian entries phi''_{cb}(z_{l-1,b}); all mixed second
// partials of a KAN layer vanish.
inline Eigen::MatrixXd layer_hessian_diag(const KanNetwork& net,
                                          const ForwardTrace& tr, int l) {
  if (l < 0 || l >= net.depth()) throw ShapeError("layer_hessian_diag: bad layer");
  return tr.d2phi[l];
}

// --- checkpoint serialization ---------------------------------------------

inline nlohmann::json edge_to_json(const EdgeActivation& e) {
  nlohmann::json j;
  j["w_b"] = e.w_b;
  j["w_s"] = e.w_s;
  j["coeffs"] = std::vector<double>(e.coeffs.data(),
                                    e.coeffs.data() + e.coeffs.size());
  j["grid"] = {{"lo", e.grid.lo},
               {"hi", e.grid.hi},
               {"intervals", e.grid.intervals},
               {"order", e.grid.order}};
  j["kind"] = e.kind == BasisKind::BSplineCubic ? "bspline" : "rbf";
  return j;
}

inline EdgeActivation edge_from_json(const nlohmann::json& j) {
  EdgeActivation e;
  e.w_b = j.at("w_b").get<double>();
  e.w_s = j.at("w_s").get<double>();
  const auto c = j.at("coeffs").get<std::vector<double>>();
  e.coeffs = Eigen::Map<const Eigen::VectorXd>(c.data(), c.size());
  e.grid.lo = j.at("grid").at("lo").get<double>();
  e.grid.hi = j.at("grid").at("hi").get<double>();
  e.grid.intervals = j.at("grid").at("intervals").get<int>();
  e.grid.order = j.at("grid").at("order").get<int>();
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "bspline")
    e.kind = BasisKind::BSplineCubic;
  else if (kind == "rbf")
    e.kind = BasisKind::GaussianRbf;
  else
    throw ConfigError("unknown basis kind: " + kind);
  return e;
}

inline nlohmann::json network_to_json(const KanNetwork& net) {
  nlohmann::json j;
  j["widths"] = net.widths;
  j["layers"] = nlohmann::json::array();
  for (const auto& lay : net.layers) {
    nlohmann::json jl = nlohmann::json::array();
    for (const auto& e : lay) jl.push_back(edge_to_json(e));
    j["layers"].push_back(jl);
  }
  return j;
}

inline KanNetwork network_from_json(const nlohmann::json& j) {
  KanNetwork net;
  net.widths = j.at("widths").get<std::vector<int>>();
  for (const auto& jl : j.at("layers")) {
    std::vector<EdgeActivation> lay;
    for (const auto& je : jl) lay.push_back(edge_from_json(je));
    net.layers.push_back(std::move(lay));
  }
  const int L = static_cast<int>(net.widths.size()) - 1;
  if (net.depth() != L) throw ConfigError("checkpoint: layer count mismatch");
  for (int l = 0; l < L; ++l)
    if (static_cast<int>(net.layers[l].size()) !=
        net.widths[l + 1] * net.widths[l])
      throw ConfigError("checkpoint: edge count mismatch at layer " +
                        std::to_string(l));
  return net;
}

}  // namespace kancurv
