#pragma once

// Training loops: Adam with warmup-gated penalties, and full-batch L-BFGS
// with a strong-Wolfe line search.

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <functional>
#include <numeric>
#include <optional>
#include <vector>

#include "kancurv/network.hpp"
#include "kancurv/penalty.hpp"

namespace kancurv {

enum class OptimizerKind { Adam, Lbfgs };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::Adam;
  int epochs = 3000;          // Adam epochs, or L-BFGS outer steps
  int warmup_epochs = 200;    // penalty-free phase (Adam only)
  int batch_size = 256;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int history_size = 100;
  int max_inner_iter = 20;
  double tolerance_grad = 1e-9;
  double tolerance_change = 1e-12;
  std::uint64_t seed = 0;
  bool calibrate_ranges = true;  // one-shot at warmup end, Adam only
  double divergence_limit = 1e6;

  void validate() const {
    if (epochs < warmup_epochs || warmup_epochs < 0)
      throw ConfigError("TrainConfig: need epochs >= warmup_epochs >= 0");
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (learning_rate <= 0) throw ConfigError("TrainConfig: learning_rate must be > 0");
  }
};

struct EpochRecord {
  double train_rmse = 0.0;
  double test_rmse = 0.0;
  double penalty_value = 0.0;
  double lambda = 0.0;
  double wall_sec = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  bool aborted = false;
  int abort_epoch = -1;
  int wolfe_violations = 0;   // L-BFGS only
  int fallback_steps = 0;     // line-search failures handled by descent steps
};

struct EvalResult {
  double rmse = 0.0;
  std::optional<double> r2;  // missing when targets are constant
};

inline EvalResult evaluate(const KanNetwork& net, const Eigen::MatrixXd& X,
                           const Eigen::MatrixXd& Y) {
  if (X.rows() == 0) throw ShapeError("evaluate: no samples");
  const Eigen::MatrixXd out = net.forward(X);
  const double ss_res = (out - Y).squaredNorm();
  EvalResult r;
  r.rmse = std::sqrt(ss_res / (X.rows() * Y.cols()));
  const Eigen::RowVectorXd mean = Y.colwise().mean();
  const double ss_tot = (Y.rowwise() - mean).squaredNorm();
  if (ss_tot > 0) r.r2 = 1.0 - ss_res / ss_tot;
  return r;
}

namespace detail {

inline double penalty_value_now(const KanNetwork& net,
                                const Eigen::MatrixXd& X,
                                const PenaltyConfig& cfg,
                                const PathWeights* weights) {
  if (cfg.kind == PenaltyKind::None) return 0.0;
  std::vector<ForwardTrace> traces;
  net.forward(X, traces);
  return evaluate_penalty(net, traces, cfg, weights).value;
}

}  // namespace detail

// Standard Adam with bias correction. Penalty active only after warmup;
// minibatches reshuffled each epoch from the run seed; one-shot grid range
// calibration at warmup end when enabled.
inline TrainLog train_adam(KanNetwork& net, const Eigen::MatrixXd& Xtr,
                           const Eigen::MatrixXd& Ytr,
                           const Eigen::MatrixXd& Xte,
                           const Eigen::MatrixXd& Yte,
                           const PenaltyConfig& penalty,
                           const TrainConfig& cfg) {
  cfg.validate();
  penalty.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const int n = static_cast<int>(Xtr.rows());
  const int np = net.num_params();
  Eigen::VectorXd m = Eigen::VectorXd::Zero(np);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(np);
  Eigen::VectorXd theta = net.get_params();
  Rng rng(cfg.seed);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  TrainLog log;
  long step = 0;
  PathWeights weights;
  bool have_weights = false;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const bool penalty_on = epoch > cfg.warmup_epochs &&
                            penalty.kind != PenaltyKind::None;
    if (epoch == cfg.warmup_epochs + 1 &&
        (cfg.calibrate_ranges || penalty.kind != PenaltyKind::None)) {
      // the objective changes here (new grids and/or penalty onset), so the
      // accumulated moments no longer describe the gradient distribution
      if (cfg.calibrate_ranges) {
        net.calibrate_ranges(Xtr);
        theta = net.get_params();
      }
      m.setZero();
      v.setZero();
    }
    if (penalty_on && penalty.kind == PenaltyKind::WeightedCurvature) {
      const int since = epoch - cfg.warmup_epochs - 1;
      if (!have_weights || since % penalty.weight_refresh_epochs == 0) {
        std::vector<ForwardTrace> traces;
        net.forward(Xtr, traces);
        weights = compute_path_weights(net, traces, epoch);
        have_weights = true;
      }
    }
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_penalty = 0.0;
    int batches = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int bs = std::min(cfg.batch_size, n - start);
      Eigen::MatrixXd xb(bs, Xtr.cols()), yb(bs, Ytr.cols());
      for (int i = 0; i < bs; ++i) {
        xb.row(i) = Xtr.row(order[start + i]);
        yb.row(i) = Ytr.row(order[start + i]);
      }
      Objective obj;
      try {
        obj = loss_gradient(net, xb, yb, penalty,
                            have_weights ? &weights : nullptr, penalty_on);
      } catch (const NumericError&) {
        log.aborted = true;
        log.abort_epoch = epoch;
        return log;
      }
      // divergence is judged on the data-fit term: a large penalty value at
      // onset (weighted penalties can start huge) is not divergence
      if (!std::isfinite(obj.loss) || obj.mse > cfg.divergence_limit) {
        log.aborted = true;
        log.abort_epoch = epoch;
        return log;
      }
      epoch_penalty += obj.penalty;
      ++batches;
      ++step;
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * obj.grad;
      v = cfg.beta2 * v +
          (1.0 - cfg.beta2) * obj.grad.cwiseProduct(obj.grad).eval();
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      theta -= (cfg.learning_rate / bc1) *
               (m.array() / ((v.array() / bc2).sqrt() + cfg.adam_eps)).matrix();
      net.set_params(theta);
    }
    EpochRecord rec;
    rec.train_rmse = evaluate(net, Xtr, Ytr).rmse;
    rec.test_rmse = Xte.rows() > 0 ? evaluate(net, Xte, Yte).rmse : 0.0;
    rec.penalty_value = penalty_on ? epoch_penalty / std::max(1, batches) : 0.0;
    rec.lambda = penalty.lambda;
    rec.wall_sec = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - t0).count();
    log.epochs.push_back(rec);
  }
  return log;
}

// --- strong Wolfe line search ----------------------------------------------

struct LineSearchResult {
  double alpha = 0.0;
  double fval = 0.0;
  Eigen::VectorXd grad;
  int evals = 0;
  bool ok = false;
};

// Objective: returns f and fills the gradient.
using ScalarObjective =
    std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

namespace detail {

inline double cubic_interpolate(double a, double fa, double ga, double b,
                                double fb, double gb) {
  // Minimizer of the cubic through (a, fa, ga), (b, fb, gb); falls back to
  // bisection when the model degenerates.
  const double d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - ga * gb;
  if (disc < 0) return 0.5 * (a + b);
  const double d2 = std::copysign(std::sqrt(disc), b - a);
  double t = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2);
  const double lo = std::min(a, b), hi = std::max(a, b);
  if (!std::isfinite(t) || t <= lo || t >= hi) t = 0.5 * (a + b);
  // keep away from the bracket ends
  const double margin = 0.1 * (hi - lo);
  return std::clamp(t, lo + margin, hi - margin);
}

}  // namespace detail

// Strong Wolfe line search (bracket + zoom), c1 = 1e-4, c2 = 0.9.
inline LineSearchResult wolfe_line_search(const ScalarObjective& f,
                                          const Eigen::VectorXd& x,
                                          const Eigen::VectorXd& dir,
                                          double f0,
                                          const Eigen::VectorXd& g0,
                                          double init_alpha = 1.0,
                                          double c1 = 1e-4, double c2 = 0.9,
                                          int max_evals = 25) {
  LineSearchResult res;
  const double dg0 = g0.dot(dir);
  if (dg0 >= 0) return res;  // not a descent direction
  Eigen::VectorXd g(x.size());
  auto eval = [&](double a, double& fv, double& dg) {
    fv = f(x + a * dir, g);
    dg = g.dot(dir);
    ++res.evals;
  };
  auto zoom = [&](double lo, double flo, double glo, double hi, double fhi,
                  double ghi) {
    for (int i = 0; i < max_evals - res.evals; ++i) {
      const double a = detail::cubic_interpolate(lo, flo, glo, hi, fhi, ghi);
      double fa, ga;
      eval(a, fa, ga);
      if (fa > f0 + c1 * a * dg0 || fa >= flo) {
        hi = a; fhi = fa; ghi = ga;
      } else {
        if (std::abs(ga) <= -c2 * dg0) {
          res.alpha = a; res.fval = fa; res.grad = g; res.ok = true;
          return;
        }
        if (ga * (hi - lo) >= 0) { hi = lo; fhi = flo; ghi = glo; }
        lo = a; flo = fa; glo = ga;
      }
      if (std::abs(hi - lo) < 1e-16) break;
    }
  };

  double prev_a = 0.0, prev_f = f0, prev_g = dg0;
  double a = init_alpha;
  for (int i = 0; i < 10 && res.evals < max_evals; ++i) {
    double fa, ga;
    eval(a, fa, ga);
    if (!std::isfinite(fa)) { a *= 0.5; continue; }
    if (fa > f0 + c1 * a * dg0 || (i > 0 && fa >= prev_f)) {
      zoom(prev_a, prev_f, prev_g, a, fa, ga);
      return res;
    }
    if (std::abs(ga) <= -c2 * dg0) {
      res.alpha = a; res.fval = fa; res.grad = g; res.ok = true;
      return res;
    }
    if (ga >= 0) {
      zoom(a, fa, ga, prev_a, prev_f, prev_g);
      return res;
    }
    prev_a = a; prev_f = fa; prev_g = ga;
    a *= 2.0;
  }
  return res;
}

// Generic L-BFGS with two-loop recursion. `outer_steps` groups of up to
// `max_inner_iter` iterations; history persists across groups. Line-search
// failures fall back to a backtracking steepest-descent step.
struct LbfgsDriverResult {
  Eigen::VectorXd x;
  double fval = 0.0;
  bool converged = false;
  int wolfe_violations = 0;
  int fallback_steps = 0;
};

inline LbfgsDriverResult lbfgs_minimize(
    const ScalarObjective& f, Eigen::VectorXd x, const TrainConfig& cfg,
    const std::function<void(int, const Eigen::VectorXd&, double)>&
        per_outer_step = nullptr) {
  LbfgsDriverResult out;
  const int np = static_cast<int>(x.size());
  Eigen::VectorXd g(np);
  double fx = f(x, g);
  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;
  bool done = false;
  const double c1 = 1e-4, c2 = 0.9;

  for (int outer = 0; outer < cfg.epochs && !done; ++outer) {
    for (int inner = 0; inner < cfg.max_inner_iter; ++inner) {
      if (g.cwiseAbs().maxCoeff() <= cfg.tolerance_grad) {
        done = true;
        out.converged = true;
        break;
      }
      // two-loop recursion
      Eigen::VectorXd q = g;
      const int hist = static_cast<int>(s_hist.size());
      std::vector<double> alpha(hist);
      for (int i = hist - 1; i >= 0; --i) {
        alpha[i] = rho_hist[i] * s_hist[i].dot(q);
        q -= alpha[i] * y_hist[i];
      }
      if (hist > 0) {
        const double gamma = s_hist.back().dot(y_hist.back()) /
                             y_hist.back().squaredNorm();
        q *= gamma;
      }
      for (int i = 0; i < hist; ++i) {
        const double beta = rho_hist[i] * y_hist[i].dot(q);
        q += (alpha[i] - beta) * s_hist[i];
      }
      Eigen::VectorXd dir = -q;

      const double init_alpha =
          hist > 0 ? cfg.learning_rate
                   : std::min(cfg.learning_rate,
                              1.0 / std::max(1.0, g.cwiseAbs().maxCoeff()));
      // With sy > 0 enforced on every stored pair the two-loop direction is
      // a descent direction in exact arithmetic; a non-negative slope can
      // only come from rounding at the noise floor, so stop there.
      if (g.dot(dir) >= 0) {
        done = true;
        out.converged = true;
        break;
      }
      // once the predicted decrease falls below the rounding noise of the
      // objective the Armijo condition is unverifiable in f64; stop instead
      // of churning in the line search
      if (-g.dot(dir) <= 1e-15 * std::abs(fx)) {
        done = true;
        out.converged = true;
        break;
      }
      LineSearchResult ls = wolfe_line_search(f, x, dir, fx, g, init_alpha,
                                              c1, c2);
      if (!ls.ok) {
        // steepest descent with backtracking Armijo
        ++out.fallback_steps;
        dir = -g;
        double a = 1.0 / std::max(1.0, g.norm());
        Eigen::VectorXd gtry(np);
        bool accepted = false;
        for (int t = 0; t < 30; ++t) {
          const double ftry = f(x + a * dir, gtry);
          if (std::isfinite(ftry) &&
              ftry <= fx + c1 * a * dir.dot(g)) {
            const Eigen::VectorXd step = a * dir;
            const Eigen::VectorXd ydiff = gtry - g;
            const double fb_change = std::abs(ftry - fx);
            x += step;
            fx = ftry;
            g = gtry;
            const double sy = step.dot(ydiff);
            if (sy > 1e-10 * step.norm() * ydiff.norm()) {
              s_hist.push_back(step);
              y_hist.push_back(ydiff);
              rho_hist.push_back(1.0 / sy);
              if (static_cast<int>(s_hist.size()) > cfg.history_size) {
                s_hist.pop_front(); y_hist.pop_front(); rho_hist.pop_front();
              }
            }
            if (fb_change < cfg.tolerance_change &&
                step.cwiseAbs().maxCoeff() < cfg.tolerance_change) {
              done = true;
              out.converged = true;
            }
            accepted = true;
            break;
          }
          a *= 0.5;
        }
        if (!accepted || done) { done = true; break; }
        continue;
      }
      // strong Wolfe contract check on the accepted step
      if (ls.fval > fx + c1 * ls.alpha * dir.dot(g) + 1e-12 ||
          std::abs(ls.grad.dot(dir)) > -c2 * dir.dot(g) + 1e-12)
        ++out.wolfe_violations;
      const Eigen::VectorXd step = ls.alpha * dir;
      const Eigen::VectorXd ydiff = ls.grad - g;
      const double fchange = std::abs(fx - ls.fval);
      const double xchange = step.cwiseAbs().maxCoeff();
      x += step;
      fx = ls.fval;
      g = ls.grad;
      const double sy = step.dot(ydiff);
      if (sy > 1e-10 * step.norm() * ydiff.norm()) {
        s_hist.push_back(step);
        y_hist.push_back(ydiff);
        rho_hist.push_back(1.0 / sy);
        if (static_cast<int>(s_hist.size()) > cfg.history_size) {
          s_hist.pop_front(); y_hist.pop_front(); rho_hist.pop_front();
        }
      }
      if (fchange < cfg.tolerance_change && xchange < cfg.tolerance_change) {
        done = true;
        out.converged = true;
        break;
      }
    }
    if (per_outer_step) per_outer_step(outer, x, fx);
  }
  out.x = std::move(x);
  out.fval = fx;
  return out;
}

// Full-batch L-BFGS training. The penalty applies from the first step (no
// warmup) and no range calibration runs, keeping the objective fixed.
// Weighted-penalty path weights refresh at each outer step boundary.
inline TrainLog train_lbfgs(KanNetwork& net, const Eigen::MatrixXd& Xtr,
                            const Eigen::MatrixXd& Ytr,
                            const Eigen::MatrixXd& Xte,
                            const Eigen::MatrixXd& Yte,
                            const PenaltyConfig& penalty,
                            const TrainConfig& cfg) {
  cfg.validate();
  penalty.validate();
  const auto t0 = std::chrono::steady_clock::now();
  TrainLog log;
  PathWeights weights;
  bool have_weights = false;
  if (penalty.kind == PenaltyKind::WeightedCurvature) {
    std::vector<ForwardTrace> traces;
    net.forward(Xtr, traces);
    weights = compute_path_weights(net, traces, 0);
    have_weights = true;
  }
  bool failed = false;
  ScalarObjective f = [&](const Eigen::VectorXd& p, Eigen::VectorXd& grad) {
    KanNetwork& mutable_net = net;
    mutable_net.set_params(p);
    try {
      const Objective obj = loss_gradient(mutable_net, Xtr, Ytr, penalty,
                                          have_weights ? &weights : nullptr,
                                          true);
      grad = obj.grad;
      return obj.loss;
    } catch (const NumericError&) {
      grad = Eigen::VectorXd::Zero(p.size());
      return std::numeric_limits<double>::infinity();
    }
  };
  auto on_outer = [&](int outer, const Eigen::VectorXd& p, double fval) {
    net.set_params(p);
    if (!std::isfinite(fval) || fval > cfg.divergence_limit) {
      log.aborted = true;
      log.abort_epoch = outer + 1;
      failed = true;
      return;
    }
    EpochRecord rec;
    rec.train_rmse = evaluate(net, Xtr, Ytr).rmse;
    rec.test_rmse = Xte.rows() > 0 ? evaluate(net, Xte, Yte).rmse : 0.0;
    rec.penalty_value =
        detail::penalty_value_now(net, Xtr, penalty,
                                  have_weights ? &weights : nullptr);
    rec.lambda = penalty.lambda;
    rec.wall_sec = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - t0).count();
    log.epochs.push_back(rec);
    if (penalty.kind == PenaltyKind::WeightedCurvature) {
      std::vector<ForwardTrace> traces;
      net.forward(Xtr, traces);
      weights = compute_path_weights(net, traces, outer + 1);
    }
  };
  const LbfgsDriverResult res = lbfgs_minimize(f, net.get_params(), cfg, on_outer);
  if (!failed) net.set_params(res.x);
  log.wolfe_violations = res.wolfe_violations;
  log.fallback_steps = res.fallback_steps;
  return log;
}

inline TrainLog train(KanNetwork& net, const Eigen::MatrixXd& Xtr,
                      const Eigen::MatrixXd& Ytr, const Eigen::MatrixXd& Xte,
                      const Eigen::MatrixXd& Yte, const PenaltyConfig& penalty,
                      const TrainConfig& cfg) {
  return cfg.optimizer == OptimizerKind::Adam
             ? train_adam(net, Xtr, Ytr, Xte, Yte, penalty, cfg)
             : train_lbfgs(net, Xtr, Ytr, Xte, Yte, penalty, cfg);
}

}  // namespace kancurv
