#include "semintk/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "semintk/errors.hpp"

namespace semintk {

namespace {

// ---- B-spline basis ----

struct SplineBasis {
  int degree;
  int nbasis;                 // per dimension
  std::vector<double> knots;  // clamped, uniform interior

  // Cox-de Boor values of all nbasis functions at u in [0,1]
  Eigen::VectorXd eval(double u) const {
    const int q = degree, nb = nbasis;
    u = std::clamp(u, 0.0, 1.0);
    Eigen::VectorXd vals = Eigen::VectorXd::Zero(nb);
    // degree-0 seeds over the nb + q intervals
    std::vector<double> b(nb + q, 0.0);
    for (int j = 0; j < nb + q; ++j) {
      const bool last = knots[j + 1] >= 1.0 && knots[j] < 1.0;
      if ((u >= knots[j] && u < knots[j + 1]) || (u >= 1.0 && last)) b[j] = 1.0;
    }
    for (int r = 1; r <= q; ++r) {
      for (int j = 0; j + r < nb + q; ++j) {
        double left = 0.0, right = 0.0;
        const double den1 = knots[j + r] - knots[j];
        const double den2 = knots[j + r + 1] - knots[j + 1];
        if (den1 > 0.0) left = (u - knots[j]) / den1 * b[j];
        if (den2 > 0.0) right = (knots[j + r + 1] - u) / den2 * b[j + 1];
        b[j] = left + right;
      }
    }
    for (int j = 0; j < nb; ++j) vals(j) = b[j];
    return vals;
  }
};

SplineBasis make_basis(int nbasis) {
  if (nbasis < 2) throw std::invalid_argument("spline: need >= 2 basis functions per dim");
  SplineBasis basis;
  basis.nbasis = nbasis;
  basis.degree = std::min(3, nbasis - 1);
  const int segments = nbasis - basis.degree;
  // clamped knot vector: degree+1 zeros, uniform interior, degree+1 ones
  for (int k = 0; k <= basis.degree; ++k) basis.knots.push_back(0.0);
  for (int k = 1; k < segments; ++k)
    basis.knots.push_back(static_cast<double>(k) / segments);
  for (int k = 0; k <= basis.degree; ++k) basis.knots.push_back(1.0);
  return basis;
}

Eigen::VectorXd tensor_features(const SplineBasis& basis,
                                const Eigen::VectorXd& x) {
  Eigen::VectorXd feat = basis.eval(x(0));
  for (Eigen::Index j = 1; j < x.size(); ++j) {
    const Eigen::VectorXd next = basis.eval(x(j));
    Eigen::VectorXd out(feat.size() * next.size());
    Eigen::Index pos = 0;
    for (Eigen::Index a = 0; a < feat.size(); ++a)
      for (Eigen::Index b = 0; b < next.size(); ++b) out(pos++) = feat(a) * next(b);
    feat = std::move(out);
  }
  return feat;
}

struct LinearFeatureFit {
  FitResult result;
  Eigen::VectorXd coef;
};

// joint gradient descent of the (optionally penalized) empirical risk over
// (beta, coef) for a linear feature model u2 = features * coef; `quad` is the
// penalty matrix Q in lambda * coef' Q coef (empty for none)
LinearFeatureFit fit_linear_features(const Dataset& data, const LossSpec& loss,
                                     const Eigen::MatrixXd& features,
                                     const Eigen::MatrixXd& quad,
                                     const TrainConfig& config) {
  const Eigen::Index n = data.n(), p = data.p(), k = features.cols();
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd coef = Eigen::VectorXd::Zero(k);
  std::vector<double> history;
  history.reserve(config.steps + 1);
  double initial = 0.0;
  Eigen::VectorXd u1(n), u2(n), l1(n), l2(n);
  double last_beta_grad = 0.0, last_coef_grad = 0.0;

  for (int t = 0; t <= config.steps; ++t) {
    u1 = data.z * beta;
    u2 = features * coef;
    double obj = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      obj += loss_value(loss, u1(i), u2(i), data.y(i));
      const LossGrad g = loss_grad(loss, u1(i), u2(i), data.y(i));
      l1(i) = g.l1;
      l2(i) = g.l2;
    }
    obj /= static_cast<double>(n);
    Eigen::VectorXd qc;
    if (quad.size() > 0) {
      qc = quad * coef;
      obj += config.lambda * coef.dot(qc);
    }
    if (t == 0) initial = obj;
    if (!std::isfinite(obj) ||
        (obj > config.divergence_factor * std::max(initial, 1e-12) && obj > initial))
      throw NumericalError("baseline fit diverged at step " + std::to_string(t));
    history.push_back(obj);

    Eigen::VectorXd gbeta = data.z.transpose() * l1 / static_cast<double>(n);
    Eigen::VectorXd gcoef = features.transpose() * l2 / static_cast<double>(n);
    if (quad.size() > 0) gcoef += 2.0 * config.lambda * qc;
    last_beta_grad = gbeta.norm();
    last_coef_grad = gcoef.norm();
    if (t == config.steps) break;
    beta -= config.step * gbeta;
    coef -= config.step * gcoef;
  }

  LinearFeatureFit out;
  out.coef = coef;
  out.result.beta_hat = beta;
  out.result.fitted_f = features * coef;
  out.result.diagnostics.final_objective = history.back();
  out.result.diagnostics.beta_grad_norm = last_beta_grad;
  out.result.diagnostics.f_grad_norm = last_coef_grad;
  out.result.diagnostics.lambda = config.lambda;
  out.result.diagnostics.step = config.step;
  out.result.diagnostics.steps_run = config.steps;
  out.result.diagnostics.objective_history = std::move(history);
  return out;
}

}  // namespace

double epanechnikov_weight(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                           double bandwidth) {
  return std::max(0.0, 1.0 - (a - b).squaredNorm() / bandwidth);
}

FitResult fit_kernel_ridge_baseline(const Dataset& data, const LossSpec& loss,
                                    double bandwidth, double lambda,
                                    const TrainConfig& config) {
  if (bandwidth <= 0.0)
    throw std::invalid_argument("kernel ridge baseline: bandwidth must be > 0");
  TrainConfig cfg = config;
  cfg.lambda = lambda;
  return fit_rkhs(data, loss, laplacian_kernel(bandwidth), cfg);
}

LocalLinearResult fit_local_linear_baseline(
    const Dataset& data, const LossSpec& loss, double bandwidth,
    const TrainConfig& config, const std::optional<Eigen::MatrixXd>& extra_grid) {
  data.validate();
  if (bandwidth <= 0.0)
    throw std::invalid_argument("local linear baseline: bandwidth must be > 0");
  const Eigen::Index n = data.n(), d = data.d(), p = data.p();

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd fvals = Eigen::VectorXd::Zero(n);
  LocalLinearResult out;

  // guarded beta step size from the loss curvature and covariate scale
  double zmax = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    zmax = std::max(zmax, data.z.row(i).squaredNorm());
  const double beta_eta = 1.0 / (loss.grad_lipschitz() * (zmax + 1.0));
  const int beta_steps = 200;

  Eigen::VectorXd l1(n), l2(n), curv(n), work(n);

  auto loss_state = [&]() {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double u1 = data.z.row(i) * beta;
      const LossGrad g = loss_grad(loss, u1, fvals(i), data.y(i));
      l1(i) = g.l1;
      l2(i) = g.l2;
      curv(i) = std::max(loss_hess(loss, u1, fvals(i), data.y(i))(0, 0), 1e-8);
      work(i) = fvals(i) - l2(i) / curv(i);  // working response
    }
  };

  // local-linear fit of the working response at x0; returns the intercept
  auto smooth_at = [&](const Eigen::VectorXd& x0) {
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d + 1, d + 1);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d + 1);
    int in_window = 0;
    double wtot = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::VectorXd xi = data.x.row(i);
      const double kw = epanechnikov_weight(x0, xi, bandwidth);
      if (kw <= 0.0) continue;
      ++in_window;
      const double w = kw * curv(i);
      wtot += w;
      Eigen::VectorXd u(d + 1);
      u(0) = 1.0;
      u.tail(d) = xi - x0;
      gram.noalias() += w * u * u.transpose();
      rhs.noalias() += w * work(i) * u;
    }
    if (in_window < 2 || wtot <= 0.0) {
      // empty window: nearest-neighbor fallback
      ++out.fallback_count;
      Eigen::Index nearest = 0;
      double best = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < n; ++i) {
        const double dist = (x0 - Eigen::VectorXd(data.x.row(i))).squaredNorm();
        if (dist < best) best = dist, nearest = i;
      }
      return work(nearest);
    }
    gram.diagonal().array() += 1e-8 * wtot;
    return Eigen::VectorXd(gram.ldlt().solve(rhs))(0);
  };

  const int max_rounds = 50;
  for (int round = 0; round < max_rounds; ++round) {
    const Eigen::VectorXd beta_prev = beta;
    // (a) beta gradient steps at fixed fhat
    for (int t = 0; t < beta_steps; ++t) {
      Eigen::VectorXd g = Eigen::VectorXd::Zero(p);
      for (Eigen::Index i = 0; i < n; ++i) {
        const LossGrad gr = loss_grad(loss, data.z.row(i) * beta, fvals(i), data.y(i));
        g += gr.l1 * data.z.row(i).transpose();
      }
      beta -= beta_eta * g / static_cast<double>(n);
    }
    // (b) refresh fhat at the training points
    loss_state();
    Eigen::VectorXd fnew(n);
    for (Eigen::Index i = 0; i < n; ++i) fnew(i) = smooth_at(data.x.row(i));
    fvals = fnew;
    out.rounds_run = round + 1;
    if (round > 0 && (beta - beta_prev).norm() < 1e-5) break;
  }

  // final evaluation grid: training points plus the supplied fresh sample
  loss_state();
  Eigen::MatrixXd grid;
  if (extra_grid && extra_grid->size() > 0) {
    if (extra_grid->cols() != d)
      throw std::invalid_argument("local linear: extra grid dimension mismatch");
    grid.resize(n + extra_grid->rows(), d);
    grid.topRows(n) = data.x;
    grid.bottomRows(extra_grid->rows()) = *extra_grid;
  } else {
    grid = data.x;
  }
  Eigen::VectorXd gridvals(grid.rows());
  gridvals.head(n) = fvals;
  for (Eigen::Index i = n; i < grid.rows(); ++i) gridvals(i) = smooth_at(grid.row(i));

  auto grid_ptr = std::make_shared<Eigen::MatrixXd>(std::move(grid));
  auto vals_ptr = std::make_shared<Eigen::VectorXd>(std::move(gridvals));
  auto nearest_value = [grid_ptr, vals_ptr](const Eigen::VectorXd& x) {
    Eigen::Index best_i = 0;
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < grid_ptr->rows(); ++i) {
      const double dist = (x.transpose() - grid_ptr->row(i)).squaredNorm();
      if (dist < best) best = dist, best_i = i;
    }
    return (*vals_ptr)(best_i);
  };

  out.fit.beta_hat = beta;
  out.fit.fitted_f = fvals;
  out.fit.predictor = nearest_value;
  out.fit.predict_rows = [nearest_value](const Eigen::MatrixXd& rows) {
    Eigen::VectorXd v(rows.rows());
    for (Eigen::Index i = 0; i < rows.rows(); ++i) v(i) = nearest_value(rows.row(i));
    return v;
  };
  out.fit.diagnostics.lambda = config.lambda;
  out.fit.diagnostics.step = config.step;
  out.fit.diagnostics.steps_run = out.rounds_run;
  return out;
}

FitResult fit_spline_baseline(const Dataset& data, const LossSpec& loss,
                              int knots_per_dim, const TrainConfig& config) {
  data.validate();
  const Eigen::Index n = data.n(), d = data.d();
  if (d > 5)
    throw std::invalid_argument("spline baseline: refuses d > 5 (basis blow-up)");
  const SplineBasis basis = make_basis(knots_per_dim);
  double total = 1.0;
  for (Eigen::Index j = 0; j < d; ++j) total *= basis.nbasis;
  if (total >= static_cast<double>(n))
    throw std::invalid_argument("spline baseline: basis size " +
                                std::to_string(static_cast<long long>(total)) +
                                " must stay below n = " + std::to_string(n));

  const Eigen::Index k = static_cast<Eigen::Index>(total);
  Eigen::MatrixXd features(n, k);
  for (Eigen::Index i = 0; i < n; ++i)
    features.row(i) = tensor_features(basis, data.x.row(i)).transpose();

  LinearFeatureFit fitted =
      fit_linear_features(data, loss, features, Eigen::MatrixXd(), config);
  FitResult result = std::move(fitted.result);
  const Eigen::VectorXd coef = std::move(fitted.coef);
  result.predictor = [basis, coef](const Eigen::VectorXd& x) {
    return tensor_features(basis, x).dot(coef);
  };
  result.predict_rows = [basis, coef](const Eigen::MatrixXd& rows) {
    Eigen::VectorXd v(rows.rows());
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
      v(i) = tensor_features(basis, rows.row(i)).dot(coef);
    return v;
  };
  return result;
}

FitResult fit_small_nn_baseline(const Dataset& data, const LossSpec& loss,
                                int width, int depth, const TrainConfig& config) {
  data.validate();
  NetArch arch{depth, width, static_cast<int>(data.d())};
  if (arch.param_count() >= data.n())
    throw std::invalid_argument(
        "small-nn baseline: parameter count " + std::to_string(arch.param_count()) +
        " must stay below n = " + std::to_string(data.n()));
  return fit_nn(data, loss, arch, config);
}

}  // namespace semintk
