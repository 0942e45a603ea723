#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "kancurv/penalty.hpp"
#include "oracles.hpp"

using namespace kancurv;

namespace {

KanNetwork single_edge_net(double w_b, double w_s) {
  KanNetwork net = oracles::random_net({1, 1}, 6, 0);
  EdgeActivation& e = net.edge(0, 0, 0);
  e.w_b = w_b;
  e.w_s = w_s;
  e.coeffs.setZero();
  return net;
}

}  // namespace

TEST_CASE("zero network outputs zero") {
  KanNetwork net = oracles::random_net({2, 3, 1}, 6, 1);
  for (auto& lay : net.layers)
    for (auto& e : lay) {
      e.w_b = 0.0;
      e.coeffs.setZero();
    }
  ForwardTrace tr;
  CHECK(net.forward_one(Eigen::Vector2d(0.7, -1.3), tr)[0] == 0.0);
}

TEST_CASE("single edge with zero spline is SiLU") {
  KanNetwork net = single_edge_net(1.0, 1.0);
  ForwardTrace tr;
  Eigen::VectorXd x(1);
  x << 0.0;
  CHECK(net.forward_one(x, tr)[0] == 0.0);  // SiLU(0) = 0
  x << 0.8;
  CHECK(net.forward_one(x, tr)[0] == Catch::Approx(silu::value(0.8)));
}

TEST_CASE("edge_eval closed forms") {
  KanNetwork net = single_edge_net(1.0, 1.0);
  const EdgeActivation& e = net.edge(0, 0, 0);
  CHECK(edge_eval(e, 0.0, 1) == Catch::Approx(0.5));  // SiLU'(0)

  // affine spline, no base: second derivative vanishes at interior z
  KanNetwork affine = single_edge_net(0.0, 1.0);
  EdgeActivation& ea = affine.edge(0, 0, 0);
  for (int i = 0; i < ea.coeffs.size(); ++i) ea.coeffs[i] = 1.5 - 0.25 * i;
  for (double z : {-1.3, -0.2, 0.9, 1.7})
    CHECK(std::abs(edge_eval(ea, z, 2)) < 1e-10);

  // deriv=2 vs finite difference of deriv=1 on a random edge
  KanNetwork rnd = oracles::random_net({1, 1}, 8, 42);
  const EdgeActivation& er = rnd.edge(0, 0, 0);
  const double eps = 1e-6;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.9, 1.9);
  for (int t = 0; t < 30; ++t) {
    const double z = u(rng);
    const double fd = (edge_eval(er, z + eps, 1) - edge_eval(er, z - eps, 1)) /
                      (2 * eps);
    const double an = edge_eval(er, z, 2);
    CHECK(std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-3}) <
          1e-6);
  }
}

TEST_CASE("forward shape and finiteness errors") {
  KanNetwork net = oracles::random_net({2, 2, 1}, 6, 3);
  ForwardTrace tr;
  Eigen::VectorXd wrong(3);
  wrong.setZero();
  CHECK_THROWS_AS(net.forward_one(wrong, tr), ShapeError);
  Eigen::Vector2d bad(std::nan(""), 0.0);
  CHECK_THROWS_AS(net.forward_one(bad, tr), NumericError);
}

TEST_CASE("trace consistency") {
  KanNetwork net = oracles::random_net({2, 3, 2, 1}, 7, 5);
  ForwardTrace tr;
  const Eigen::Vector2d x(0.4, -1.1);
  const Eigen::VectorXd out = net.forward_one(x, tr);
  ForwardTrace tr2;
  const Eigen::VectorXd out2 = net.forward_one(tr.z[0], tr2);
  CHECK(out[0] == out2[0]);  // bit-identical replay
  CHECK(tr.z.back()[0] == out[0]);
}

TEST_CASE("loss gradient at zero residual is zero") {
  KanNetwork net = oracles::random_net({2, 3, 1}, 5, 8);
  Eigen::MatrixXd X(16, 2);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.8, 1.8);
  for (int i = 0; i < X.size(); ++i) X.data()[i] = u(rng);
  const Eigen::MatrixXd Y = net.forward(X);
  PenaltyConfig cfg;  // none, lambda 0
  const Objective obj = loss_gradient(net, X, Y, cfg);
  CHECK(obj.mse == 0.0);
  CHECK(obj.grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("loss gradient matches finite differences") {
  KanNetwork net = oracles::random_net({2, 3, 1}, 5, 12);
  Eigen::MatrixXd X(8, 2), Y(8, 1);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.8, 1.8);
  for (int i = 0; i < X.size(); ++i) X.data()[i] = u(rng);
  for (int i = 0; i < Y.size(); ++i) Y.data()[i] = u(rng);
  for (PenaltyKind kind : {PenaltyKind::None, PenaltyKind::Kan,
                           PenaltyKind::FirstDiff, PenaltyKind::Curvature,
                           PenaltyKind::WeightedCurvature}) {
    PenaltyConfig cfg;
    cfg.kind = kind;
    cfg.lambda = 0.3;
    std::vector<ForwardTrace> traces;
    net.forward(X, traces);
    const PathWeights weights = compute_path_weights(net, traces);
    const Objective obj = loss_gradient(net, X, Y, cfg, &weights);
    KanNetwork probe = net;
    auto f = [&](const Eigen::VectorXd& p) {
      probe.set_params(p);
      std::vector<ForwardTrace> trs;
      const Eigen::MatrixXd out = probe.forward(X, trs);
      double v = (out - Y).squaredNorm() / X.rows();
      if (kind != PenaltyKind::None)
        v += cfg.lambda * evaluate_penalty(probe, trs, cfg, &weights).value;
      return v;
    };
    const Eigen::VectorXd fd = oracles::fd_gradient(f, net.get_params());
    CHECK(oracles::max_rel_err(obj.grad, fd) < 1e-5);
  }
}

TEST_CASE("curvature penalty null space leaves gradients unchanged") {
  KanNetwork net = oracles::random_net({2, 2, 1}, 6, 17);
  for (auto& lay : net.layers)
    for (auto& e : lay) {
      e.w_b = 0.0;
      for (int i = 0; i < e.coeffs.size(); ++i) e.coeffs[i] = 0.3 + 0.1 * i;
    }
  Eigen::MatrixXd X(6, 2), Y(6, 1);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int i = 0; i < X.size(); ++i) X.data()[i] = u(rng);
  for (int i = 0; i < Y.size(); ++i) Y.data()[i] = u(rng);
  PenaltyConfig off;
  PenaltyConfig on;
  on.kind = PenaltyKind::Curvature;
  on.lambda = 2.0;
  const Eigen::VectorXd g0 = loss_gradient(net, X, Y, off).grad;
  const Eigen::VectorXd g1 = loss_gradient(net, X, Y, on).grad;
  CHECK((g0 - g1).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("layer jacobian and diagonal hessian") {
  KanNetwork net = oracles::random_net({2, 3, 2}, 6, 23);
  ForwardTrace tr;
  const Eigen::Vector2d x(0.3, -0.9);
  net.forward_one(x, tr);

  for (int l = 0; l < net.depth(); ++l) {
    const Eigen::MatrixXd J = layer_jacobian(net, tr, l);
    const Eigen::MatrixXd P = layer_hessian_diag(net, tr, l);
    // definitional check of the diagonal Hessian entries
    for (int c = 0; c < net.widths[l + 1]; ++c)
      for (int b = 0; b < net.widths[l]; ++b)
        CHECK(P(c, b) == edge_eval(net.edge(l, c, b), tr.z[l][b], 2));
    // finite-difference layer map
    const double eps = 1e-6;
    for (int b = 0; b < net.widths[l]; ++b) {
      Eigen::VectorXd zp = tr.z[l], zm = tr.z[l];
      zp[b] += eps;
      zm[b] -= eps;
      for (int c = 0; c < net.widths[l + 1]; ++c) {
        double fp = 0.0, fm = 0.0;
        for (int bb = 0; bb < net.widths[l]; ++bb) {
          fp += edge_eval(net.edge(l, c, bb), zp[bb], 0);
          fm += edge_eval(net.edge(l, c, bb), zm[bb], 0);
        }
        CHECK(std::abs(J(c, b) - (fp - fm) / (2 * eps)) < 1e-6);
      }
    }
  }
  CHECK_THROWS_AS(layer_jacobian(net, tr, 5), ShapeError);
}

TEST_CASE("chain of layer jacobians matches input jacobian") {
  KanNetwork net = oracles::random_net({2, 3, 2, 1}, 6, 31);
  ForwardTrace tr;
  const Eigen::Vector2d x(0.2, 0.8);
  net.forward_one(x, tr);
  Eigen::MatrixXd J = layer_jacobian(net, tr, 0);
  for (int l = 1; l < net.depth(); ++l) J = layer_jacobian(net, tr, l) * J;
  const double eps = 1e-6;
  for (int i = 0; i < 2; ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += eps;
    xm[i] -= eps;
    const double fd = (oracles::forward_from(net, 0, xp)[0] -
                       oracles::forward_from(net, 0, xm)[0]) /
                      (2 * eps);
    CHECK(std::abs(J(0, i) - fd) < 1e-5);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  KanNetwork net = oracles::random_net({2, 3, 1}, 7, 47);
  const nlohmann::json j = network_to_json(net);
  // through a text round trip, as the file path would do
  const KanNetwork back = network_from_json(nlohmann::json::parse(j.dump()));
  const Eigen::VectorXd a = net.get_params();
  const Eigen::VectorXd b = back.get_params();
  REQUIRE(a.size() == b.size());
  for (int i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  CHECK(back.edge(0, 0, 0).grid.lo == net.edge(0, 0, 0).grid.lo);
}

TEST_CASE("range calibration preserves the learned function") {
  KanNetwork net = oracles::random_net({2, 2, 1}, 8, 53);
  Eigen::MatrixXd X(64, 2);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int i = 0; i < X.size(); ++i) X.data()[i] = u(rng);
  const Eigen::MatrixXd before = net.forward(X);
  net.calibrate_ranges(X);
  const Eigen::MatrixXd after = net.forward(X);
  // re-projection onto the new knots is a least-squares refit, not exact
  CHECK((before - after).cwiseAbs().maxCoeff() < 1e-2);
}
