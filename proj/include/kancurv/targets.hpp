#pragma once

// Closed-form target registry, domain sampling, and dataset generation.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "kancurv/common.hpp"

namespace kancurv {

struct TargetSpec {
  std::string name;
  int arity = 0;
  std::vector<std::pair<double, double>> domain;  // per coordinate
  std::function<double(const Eigen::VectorXd&)> eval;
  std::string formula;  // human-readable, for reports
};

struct Dataset {
  Eigen::MatrixXd inputs;   // n x d
  Eigen::MatrixXd targets;  // n x 1
  std::uint64_t seed = 0;
};

namespace detail {

// Default variable ranges: [0.5, 2] for generic positive quantities,
// [0.1, pi-0.1] for angles, [-1, 1] for signed coordinate differences.
// Equations whose defaults would hit a singularity (arcsin domain, zero
// denominator) carry explicitly narrowed ranges below.
constexpr double kAngleLo = 0.1;
inline double angle_hi() { return std::numbers::pi - 0.1; }

}  // namespace detail

inline std::vector<TargetSpec> registry() {
  using V = const Eigen::VectorXd&;
  const double pi = std::numbers::pi;
  std::vector<TargetSpec> r;
  const std::pair<double, double> gen{0.5, 2.0};
  const std::pair<double, double> ang{detail::kAngleLo, detail::angle_hi()};
  const std::pair<double, double> sgn{-1.0, 1.0};

  r.push_back({"sin_x_plus_y2", 2, {{-2, 2}, {-2, 2}},
               [](V x) { return std::sin(x[0] + x[1] * x[1]); },
               "sin(x + y^2)"});
  r.push_back({"exp_sin_pix_plus_y2", 2, {{-1, 1}, {-1, 1}},
               [pi](V x) { return std::exp(std::sin(pi * x[0]) + x[1] * x[1]); },
               "exp(sin(pi x) + y^2)"});

  // Feynman benchmark subset. Variable order follows each formula left to
  // right.
  r.push_back({"I.6.20", 2, {ang, gen},
               [pi](V x) {
                 const double th = x[0], sg = x[1];
                 return std::exp(-th * th / (2 * sg * sg)) /
                        std::sqrt(2 * pi * sg * sg);
               },
               "exp(-theta^2/(2 sigma^2)) / sqrt(2 pi sigma^2)"});
  r.push_back({"I.6.20b", 3, {ang, ang, gen},
               [pi](V x) {
                 const double th = x[0], th1 = x[1], sg = x[2];
                 const double d = th - th1;
                 return std::exp(-d * d / (2 * sg * sg)) /
                        std::sqrt(2 * pi * sg * sg);
               },
               "exp(-(theta-theta1)^2/(2 sigma^2)) / sqrt(2 pi sigma^2)"});
  r.push_back({"I.9.18", 6, {gen, gen, gen, sgn, sgn, sgn},
               [](V x) {
                 const double g = x[0], m1 = x[1], m2 = x[2];
                 const double dx = x[3], dy = x[4], dz = x[5];
                 return g * m1 * m2 / (dx * dx + dy * dy + dz * dz);
               },
               "G m1 m2 / ((dx)^2 + (dy)^2 + (dz)^2)"});
  r.push_back({"I.12.11", 5, {gen, gen, gen, gen, ang},
               [](V x) {
                 return x[0] * (x[1] + x[2] * x[3] * std::sin(x[4]));
               },
               "q (Ef + B v sin(theta))"});
  r.push_back({"I.16.6", 3, {gen, gen, gen},
               [](V x) {
                 const double u = x[0], v = x[1], c = x[2];
                 return u * v / (1.0 + u * v / (c * c));
               },
               "u v / (1 + u v / c^2)"});
  r.push_back({"I.18.4", 4, {gen, gen, gen, gen},
               [](V x) {
                 const double m1 = x[0], r1 = x[1], m2 = x[2], r2 = x[3];
                 return (m1 * r1 + m2 * r2) / (m1 + m2);
               },
               "(m1 r1 + m2 r2) / (m1 + m2)"});
  // n narrowed so n*sin(theta2) stays inside the arcsin domain.
  r.push_back({"I.26.2", 2, {{0.5, 0.95}, ang},
               [](V x) { return std::asin(x[0] * std::sin(x[1])); },
               "arcsin(n sin(theta2))"});
  r.push_back({"I.29.16", 4, {gen, gen, ang, ang},
               [](V x) {
                 const double x1 = x[0], x2 = x[1];
                 return std::sqrt(x1 * x1 + x2 * x2 -
                                  2 * x1 * x2 * std::cos(x[2] - x[3]));
               },
               "sqrt(x1^2 + x2^2 - 2 x1 x2 cos(theta1 - theta2))"});
  r.push_back({"I.30.3", 3, {gen, gen, ang},
               [](V x) {
                 const double i0 = x[0], n = x[1], th = x[2];
                 const double s = std::sin(th / 2);
                 const double sn = std::sin(n * th / 2);
                 return i0 * sn * sn / (s * s);
               },
               "I0 sin^2(n theta / 2) / sin^2(theta / 2)"});
  r.push_back({"I.50.26", 4, {gen, gen, gen, gen},
               [](V x) {
                 const double x1 = x[0], w = x[1], t = x[2], a = x[3];
                 const double c = std::cos(w * t);
                 return x1 * (c + a * c * c);
               },
               "x1 (cos(w t) + alpha cos^2(w t))"});
  // n, alpha narrowed so 1 - n*alpha/3 stays away from zero.
  r.push_back({"II.11.27", 4, {{0.5, 1.2}, {0.5, 1.2}, gen, gen},
               [](V x) {
                 const double n = x[0], a = x[1], eps = x[2], ef = x[3];
                 return n * a * eps * ef / (1.0 - n * a / 3.0);
               },
               "n alpha eps Ef / (1 - n alpha / 3)"});
  r.push_back({"II.35.18", 5, {gen, gen, gen, gen, gen},
               [](V x) {
                 const double n0 = x[0], mu = x[1], b = x[2], kb = x[3],
                              t = x[4];
                 const double a = mu * b / (kb * t);
                 return n0 / (std::exp(a) + std::exp(-a));
               },
               "n0 / (exp(mu B / (kb T)) + exp(-mu B / (kb T)))"});
  r.push_back({"III.10.19", 4, {gen, gen, gen, gen},
               [](V x) {
                 return x[0] * std::sqrt(x[1] * x[1] + x[2] * x[2] +
                                         x[3] * x[3]);
               },
               "mu sqrt(Bx^2 + By^2 + Bz^2)"});
  r.push_back({"III.17.37", 3, {gen, gen, ang},
               [](V x) { return x[0] * (1.0 + x[1] * std::cos(x[2])); },
               "beta (1 + alpha cos(theta))"});
  return r;
}

inline const TargetSpec& find_target(const std::string& name) {
  static const std::vector<TargetSpec> reg = registry();
  for (const auto& t : reg)
    if (t.name == name) return t;
  throw ConfigError("unknown target: " + name);
}

// Uniform i.i.d. inputs per coordinate, targets in closed form;
// deterministic per seed.
inline Dataset sample(const TargetSpec& spec, int n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("sample: n must be >= 1");
  Dataset d;
  d.seed = seed;
  d.inputs.resize(n, spec.arity);
  d.targets.resize(n, 1);
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < spec.arity; ++j) {
      std::uniform_real_distribution<double> u(spec.domain[j].first,
                                               spec.domain[j].second);
      d.inputs(i, j) = u(rng);
    }
    d.targets(i, 0) = spec.eval(d.inputs.row(i).transpose());
  }
  return d;
}

}  // namespace kancurv
