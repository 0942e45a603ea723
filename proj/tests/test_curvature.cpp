#include <catch2/catch_amalgamated.hpp>
#include <random>

#include "kancurv/curvature.hpp"
#include "oracles.hpp"

using namespace kancurv;

namespace {

Eigen::MatrixXd random_inputs(int n, int d, std::uint64_t seed,
                              double lim = 1.5) {
  Eigen::MatrixXd X(n, d);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-lim, lim);
  for (int i = 0; i < X.size(); ++i) X.data()[i] = u(rng);
  return X;
}

}  // namespace

TEST_CASE("single-layer composition hessian is diagonal") {
  KanNetwork net = oracles::random_net({3, 2}, 6, 1);
  ForwardTrace tr;
  const Eigen::Vector3d x(0.4, -0.8, 1.2);
  net.forward_one(x, tr);
  const CompositionHessian H = composition_hessian(net, tr);
  REQUIRE(H.size() == 2);
  for (int a = 0; a < 2; ++a)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        if (i == j)
          CHECK(H[a](i, i) ==
                Catch::Approx(edge_eval(net.edge(0, a, i), x[i], 2)));
        else
          CHECK(H[a](i, j) == 0.0);
      }
}

TEST_CASE("scalar chain matches the hand-expanded second derivative") {
  KanNetwork net = oracles::random_net({1, 1, 1}, 6, 2);
  ForwardTrace tr;
  Eigen::VectorXd x(1);
  x << 0.6;
  net.forward_one(x, tr);
  const CompositionHessian H = composition_hessian(net, tr);
  const EdgeActivation& e1 = net.edge(0, 0, 0);
  const EdgeActivation& e2 = net.edge(1, 0, 0);
  const double z1 = edge_eval(e1, x[0], 0);
  const double hand = edge_eval(e2, z1, 2) * std::pow(edge_eval(e1, x[0], 1), 2) +
                      edge_eval(e2, z1, 1) * edge_eval(e1, x[0], 2);
  CHECK(H[0](0, 0) == Catch::Approx(hand).epsilon(1e-12));
}

TEST_CASE("composition hessian symmetry and finite-difference agreement") {
  std::vector<std::vector<int>> shapes = {{2, 3, 1}, {2, 3, 2, 1}, {3, 2, 2, 2, 1}};
  for (size_t s = 0; s < shapes.size(); ++s) {
    KanNetwork net = oracles::random_net(shapes[s], 6, 100 + s);
    const Eigen::MatrixXd X = random_inputs(3, shapes[s][0], 200 + s);
    for (int r = 0; r < X.rows(); ++r) {
      ForwardTrace tr;
      net.forward_one(X.row(r).transpose(), tr);
      const CompositionHessian H = composition_hessian(net, tr);
      for (size_t a = 0; a < H.size(); ++a) {
        CHECK((H[a] - H[a].transpose()).cwiseAbs().maxCoeff() < 1e-10);
        const Eigen::MatrixXd ref =
            oracles::fd_hessian(net, X.row(r).transpose(), static_cast<int>(a));
        const double scale = std::max(ref.cwiseAbs().maxCoeff(), 1e-4);
        CHECK((H[a] - ref).cwiseAbs().maxCoeff() / scale < 1e-4);
      }
    }
  }
}

TEST_CASE("off-diagonal layer hessian entries vanish") {
  KanNetwork net = oracles::random_net({3, 3, 1}, 6, 3);
  ForwardTrace tr;
  const Eigen::Vector3d x(0.2, -0.5, 0.9);
  net.forward_one(x, tr);
  // finite-difference Hessian of the layer-0 map component c w.r.t. (b, b')
  const double eps = 1e-4;
  for (int c = 0; c < 3; ++c)
    for (int b = 0; b < 3; ++b)
      for (int bp = 0; bp < 3; ++bp) {
        if (b == bp) continue;
        auto layer_out = [&](const Eigen::VectorXd& z) {
          double acc = 0.0;
          for (int bb = 0; bb < 3; ++bb)
            acc += edge_eval(net.edge(0, c, bb), z[bb], 0);
          return acc;
        };
        Eigen::VectorXd z = tr.z[0];
        Eigen::VectorXd p = z;
        p[b] += eps; p[bp] += eps; const double fpp = layer_out(p);
        p = z; p[b] += eps; p[bp] -= eps; const double fpm = layer_out(p);
        p = z; p[b] -= eps; p[bp] += eps; const double fmp = layer_out(p);
        p = z; p[b] -= eps; p[bp] -= eps; const double fmm = layer_out(p);
        CHECK(std::abs((fpp - fpm - fmp + fmm) / (4 * eps * eps)) < 1e-8);
      }
}

TEST_CASE("composition curvature closed and degenerate cases") {
  // affine edges with no base: zero curvature on the visited range
  KanNetwork affine = oracles::random_net({2, 2, 1}, 6, 4);
  for (auto& lay : affine.layers)
    for (auto& e : lay) {
      e.w_b = 0.0;
      for (int i = 0; i < e.coeffs.size(); ++i) e.coeffs[i] = 0.1 + 0.05 * i;
    }
  const Eigen::MatrixXd X = random_inputs(16, 2, 5, 1.0);
  CHECK(composition_curvature(affine, X, CurvatureMethod::Exact) <
        1e-18);

  // single scalar edge: R = mean phi''(x)^2
  KanNetwork one = oracles::random_net({1, 1}, 6, 6);
  const Eigen::MatrixXd X1 = random_inputs(32, 1, 7);
  double expect = 0.0;
  for (int i = 0; i < X1.rows(); ++i)
    expect += std::pow(edge_eval(one.edge(0, 0, 0), X1(i, 0), 2), 2);
  expect /= X1.rows();
  CHECK(composition_curvature(one, X1, CurvatureMethod::Exact) ==
        Catch::Approx(expect).epsilon(1e-12));

  CHECK_THROWS_AS(
      composition_curvature(one, X1, CurvatureMethod::Hutchinson, 0),
      ConfigError);
}

TEST_CASE("hutchinson estimator self-consistency") {
  KanNetwork net = oracles::random_net({2, 3, 1}, 6, 8);
  const Eigen::MatrixXd X = random_inputs(256, 2, 9);
  const double exact = composition_curvature(net, X, CurvatureMethod::Exact);
  const double est =
      composition_curvature(net, X, CurvatureMethod::Hutchinson, 1000, 1);
  CHECK(std::abs(est - exact) / exact < 0.05);
}

TEST_CASE("total edge curvature") {
  // affine edges, no base: zero
  KanNetwork affine = oracles::random_net({1, 1}, 6, 10);
  {
    EdgeActivation& e = affine.edge(0, 0, 0);
    e.w_b = 0.0;
    for (int i = 0; i < e.coeffs.size(); ++i) e.coeffs[i] = 1.0 - 0.2 * i;
  }
  CHECK(total_edge_curvature(affine).total < 1e-16);

  // lone SiLU edge over a wide range integrates to K_silu
  KanNetwork base = oracles::random_net({1, 1}, 80, 11);
  {
    EdgeActivation& e = base.edge(0, 0, 0);
    e.grid = GridSpec{-40.0, 40.0, 80, 3};
    e.coeffs = Eigen::VectorXd::Zero(basis_count(e.grid, e.kind));
    e.w_b = 1.0;
  }
  CHECK(total_edge_curvature(base).total ==
        Catch::Approx(silu_curvature_constant()).margin(1e-3));

  // per-edge value equals the term-wise quadrature expansion
  KanNetwork net = oracles::random_net({1, 1}, 8, 12);
  const EdgeActivation& e = net.edge(0, 0, 0);
  const EdgeCurvature ec = total_edge_curvature(net);
  const int n = 4096;
  const double spline2 = oracles::trapezoid(
      [&](double z) { return std::pow(e.basis_component(z, 2), 2); },
      e.grid.lo, e.grid.hi, n);
  const double cross = oracles::trapezoid(
      [&](double z) { return e.basis_component(z, 2) * silu::d2(z); },
      e.grid.lo, e.grid.hi, n);
  const double base2 = oracles::trapezoid(
      [&](double z) { return silu::d2(z) * silu::d2(z); }, e.grid.lo,
      e.grid.hi, n);
  const double expanded = e.w_s * e.w_s * spline2 +
                          2.0 * e.w_b * e.w_s * cross + e.w_b * e.w_b * base2;
  CHECK(std::abs(ec.per_edge[0] - expanded) /
            std::max(std::abs(expanded), 1e-9) <
        1e-6);
}

TEST_CASE("cauchy-schwarz edge decomposition holds pointwise") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    KanNetwork net = oracles::random_net({2, 3, 1}, 8, 300 + seed);
    const Eigen::MatrixXd X = random_inputs(32, 2, 400 + seed);
    const BoundDiagnostics d = verify_bound(net, X);
    CHECK(d.cs_slack <= 1e-10);
  }
}

TEST_CASE("bound diagnostics on random nets") {
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    KanNetwork net = oracles::random_net({2, 3, 1}, 8, 500 + seed);
    const Eigen::MatrixXd X = random_inputs(128, 2, 600 + seed);
    const BoundDiagnostics d = verify_bound(net, X);
    // domain [-2,2], G=8 so h = 0.5 <= 1; deeper grids [-3,3], G=8, h = 0.75
    CHECK(d.a3_holds);
    CHECK(d.kappa >= 0.0);
    CHECK(d.density_bound >= 0.0);
    CHECK(d.gamma.minCoeff() >= 1.0);
    if (d.a1_measured && d.a2_holds && d.a3_holds) {
      ++checked;
      CHECK(d.ratio >= 1.0);
      // per-step inequality chain of the proof, small numerical slack
      for (int s = 0; s + 1 < 6; ++s)
        CHECK(d.chain[s] <= d.chain[s + 1] * (1.0 + 1e-9) + 1e-12);
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("bound verifier rejects rbf networks") {
  KanNetwork net = oracles::random_net({2, 2}, 8, 13, BasisKind::GaussianRbf);
  const Eigen::MatrixXd X = random_inputs(8, 2, 14);
  CHECK_THROWS_AS(verify_bound(net, X), ConfigError);
}

TEST_CASE("gram domination holds for the bound's final step") {
  for (int G : {8, 20, 50}) {
    const GridSpec spec{-1.0, 2.0, G, 3};
    CHECK(gram_domination_margin(spec) >= -1e-8);
  }
}
