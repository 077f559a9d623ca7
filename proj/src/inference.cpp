#include "semintk/inference.hpp"

#include <algorithm>
#include <cmath>

#include "semintk/errors.hpp"
#include "semintk/rng.hpp"

namespace semintk {

namespace {

// symmetric solve with the documented diagonal jitter; hard failure beyond it
Eigen::MatrixXd invert_spd(const Eigen::MatrixXd& m, const char* what) {
  const Eigen::Index p = m.rows();
  Eigen::MatrixXd jittered = 0.5 * (m + m.transpose());
  jittered.diagonal().array() += 1e-10 * jittered.trace() / static_cast<double>(p);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(jittered);
  const double dmax = p > 0 ? ldlt.vectorD().maxCoeff() : 0.0;
  const double dmin = p > 0 ? ldlt.vectorD().minCoeff() : 0.0;
  // Eigen's LDLT quietly zeroes rank-deficient directions, so inspect pivots
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || dmin <= 0.0 ||
      dmin < 1e-14 * dmax)
    throw NumericalError(std::string(what) + ": matrix singular after jitter");
  Eigen::MatrixXd inv = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
  if (!inv.allFinite())
    throw NumericalError(std::string(what) + ": matrix singular after jitter");
  return inv;
}

Eigen::MatrixXd weighted_outer(const Eigen::MatrixXd& centered,
                               const Eigen::VectorXd& w) {
  return centered.transpose() * w.asDiagonal() * centered /
         static_cast<double>(centered.rows());
}

}  // namespace

Eigen::VectorXd NuisanceProjection::eval(const Eigen::VectorXd& x) const {
  Eigen::VectorXd out(p());
  for (int j = 0; j < p(); ++j) out(j) = components[j].predictor(x);
  return out;
}

Eigen::MatrixXd NuisanceProjection::eval_rows(const Eigen::MatrixXd& rows) const {
  Eigen::MatrixXd out(rows.rows(), p());
  for (int j = 0; j < p(); ++j) out.col(j) = components[j].predict_rows(rows);
  return out;
}

NuisanceProjection fit_conditional_mean(const Eigen::MatrixXd& x,
                                        const Eigen::MatrixXd& z,
                                        const Eigen::VectorXd& weights,
                                        const NetArch& arch,
                                        const TrainConfig& config,
                                        const std::string& weights_tag) {
  const Eigen::Index n = x.rows(), p = z.cols();
  if (z.rows() != n) throw std::invalid_argument("fit_conditional_mean: X/Z rows differ");
  if (weights.size() != n || weights.minCoeff() < 0.0)
    throw std::invalid_argument("fit_conditional_mean: weights must be >= 0");
  const double wsum = weights.sum();
  if (wsum <= 0.0)
    throw std::invalid_argument("fit_conditional_mean: weights are degenerate");
  const Eigen::VectorXd wnorm = weights * (static_cast<double>(n) / wsum);

  NuisanceProjection proj;
  proj.weights_used = weights_tag;
  const LossSpec squared{LossFamily::Squared};
  for (Eigen::Index j = 0; j < p; ++j) {
    Dataset target;
    target.kind = TaskKind::Regression;
    target.y = z.col(j);
    target.z = Eigen::MatrixXd(n, 0);
    target.x = x;
    TrainConfig cfg = config;
    cfg.seed = derive_stream(config.seed, 0xA0 + j);
    proj.components.push_back(fit_nn(target, squared, arch, cfg, &wnorm));
  }
  return proj;
}

VarianceEstimate variance_regression(const Eigen::VectorXd& residuals,
                                     const Eigen::MatrixXd& z,
                                     const Eigen::MatrixXd& h_vals) {
  const Eigen::Index n = z.rows();
  if (residuals.size() != n || h_vals.rows() != n || h_vals.cols() != z.cols())
    throw std::invalid_argument("variance_regression: dimension mismatch");
  const Eigen::MatrixXd centered = z - h_vals;
  const Eigen::MatrixXd m = centered.transpose() * centered / static_cast<double>(n);
  const double noise = residuals.squaredNorm() / static_cast<double>(n);
  VarianceEstimate est;
  est.method = VarianceMethod::PlugInRegression;
  est.sigma_hat = noise * invert_spd(m, "variance_regression");
  // the equivalent sandwich pieces under squared loss l(r) = r^2
  est.a_hat = 2.0 * m;
  est.b_hat = 4.0 * noise * m;
  return est;
}

VarianceEstimate variance_classification(const Eigen::VectorXd& p_hat,
                                         const Eigen::MatrixXd& z,
                                         const Eigen::MatrixXd& h_vals) {
  const Eigen::Index n = z.rows();
  if (p_hat.size() != n || h_vals.rows() != n || h_vals.cols() != z.cols())
    throw std::invalid_argument("variance_classification: dimension mismatch");
  VarianceEstimate est;
  est.method = VarianceMethod::PlugInClassification;
  Eigen::VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double q = p_hat(i);
    if (q < 1e-8 || q > 1.0 - 1e-8) {
      est.clamped = true;
      q = std::clamp(q, 1e-8, 1.0 - 1e-8);
    }
    w(i) = q * (1.0 - q);
  }
  const Eigen::MatrixXd centered = z - h_vals;
  const Eigen::MatrixXd info = weighted_outer(centered, w);
  est.sigma_hat = invert_spd(info, "variance_classification");
  est.a_hat = info;
  est.b_hat = info;  // information equality under the correctly specified NLL
  return est;
}

Eigen::MatrixXd efficient_score_samples(const Dataset& data, const LossSpec& loss,
                                        const FitResult& fit,
                                        const NuisanceProjection& proj) {
  data.validate();
  if (proj.p() != data.p())
    throw std::invalid_argument("efficient_score_samples: projection dimension mismatch");
  const Eigen::VectorXd u2 = fit.predict_rows(data.x);
  const Eigen::VectorXd u1 = data.z * fit.beta_hat;
  const Eigen::MatrixXd h = proj.eval_rows(data.x);
  Eigen::MatrixXd scores(data.n(), data.p());
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const LossGrad g = loss_grad(loss, u1(i), u2(i), data.y(i));
    scores.row(i) = g.l1 * data.z.row(i) - g.l2 * h.row(i);
  }
  return scores;
}

VarianceEstimate sandwich_variance(const Eigen::MatrixXd& scores,
                                   const Dataset& data, const LossSpec& loss,
                                   const FitResult& fit,
                                   const NuisanceProjection& proj) {
  data.validate();
  const Eigen::Index n = data.n();
  if (scores.rows() != n || scores.cols() != data.p())
    throw std::invalid_argument("sandwich_variance: score matrix mismatch");
  const Eigen::VectorXd u2 = fit.predict_rows(data.x);
  const Eigen::VectorXd u1 = data.z * fit.beta_hat;
  const Eigen::MatrixXd h = proj.eval_rows(data.x);
  const Eigen::MatrixXd centered = data.z - h;
  Eigen::VectorXd curv(n);
  for (Eigen::Index i = 0; i < n; ++i)
    curv(i) = loss_hess(loss, u1(i), u2(i), data.y(i))(0, 0);

  VarianceEstimate est;
  est.method = VarianceMethod::Sandwich;
  est.a_hat = weighted_outer(centered, curv);
  est.b_hat = scores.transpose() * scores / static_cast<double>(n);
  const Eigen::MatrixXd ainv = invert_spd(est.a_hat, "sandwich_variance");
  est.sigma_hat = ainv * est.b_hat * ainv.transpose();
  est.sigma_hat = 0.5 * (est.sigma_hat + est.sigma_hat.transpose()).eval();
  return est;
}

VarianceEstimate plug_in_variance(const Dataset& data, const LossSpec& loss,
                                  const FitResult& fit,
                                  const NuisanceProjection& proj) {
  const Eigen::VectorXd u2 = fit.predict_rows(data.x);
  const Eigen::VectorXd u1 = data.z * fit.beta_hat;
  const Eigen::MatrixXd h = proj.eval_rows(data.x);
  if (data.kind == TaskKind::Regression) {
    return variance_regression(data.y - u1 - u2, data.z, h);
  }
  if (loss.family != LossFamily::LogisticNll)
    throw std::invalid_argument(
        "plug_in_variance: classification display assumes the logistic working "
        "loss; use the sandwich estimator");
  Eigen::VectorXd p_hat(data.n());
  for (Eigen::Index i = 0; i < data.n(); ++i)
    p_hat(i) = logistic_link(u1(i) + u2(i));
  return variance_classification(p_hat, data.z, h);
}

double normal_quantile(double prob) {
  if (!(prob > 0.0 && prob < 1.0))
    throw std::invalid_argument("normal_quantile: prob must be in (0,1)");
  // documented constants for the standard levels
  if (prob == 0.95) return 1.644854;
  if (prob == 0.975) return 1.959964;
  if (prob == 0.995) return 2.575829;
  // Acklam's rational approximation plus one Newton step through the CDF
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double dd[] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1 - plow;
  double x;
  if (prob < plow) {
    const double q = std::sqrt(-2 * std::log(prob));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1);
  } else if (prob <= phigh) {
    const double q = prob - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    const double q = std::sqrt(-2 * std::log(1 - prob));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1);
  }
  const double pdf = std::exp(-0.5 * x * x) * 0.39894228040143267794;
  return x - (probit_link(x) - prob) / pdf;
}

ConfidenceIntervals confidence_intervals(const Eigen::VectorXd& beta_hat,
                                         const VarianceEstimate& var, int n,
                                         double level) {
  if (!(level > 0.0 && level < 1.0))
    throw std::invalid_argument("confidence_intervals: level must be in (0,1)");
  if (n < 1) throw std::invalid_argument("confidence_intervals: n must be >= 1");
  const Eigen::Index p = beta_hat.size();
  if (var.sigma_hat.rows() != p)
    throw std::invalid_argument("confidence_intervals: dimension mismatch");
  const double z = normal_quantile(1.0 - (1.0 - level) / 2.0);
  ConfidenceIntervals ci;
  ci.level = level;
  ci.lower.resize(p);
  ci.upper.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double v = var.sigma_hat(j, j);
    if (v < 0.0)
      throw NumericalError("confidence_intervals: negative variance diagonal");
    const double half = z * std::sqrt(v / static_cast<double>(n));
    ci.lower(j) = beta_hat(j) - half;
    ci.upper(j) = beta_hat(j) + half;
  }
  return ci;
}

Eigen::VectorXd coverage(const std::vector<ConfidenceIntervals>& intervals_per_rep,
                         const Eigen::VectorXd& beta0) {
  if (intervals_per_rep.empty())
    throw std::invalid_argument("coverage: need at least one repetition");
  Eigen::VectorXd rates = Eigen::VectorXd::Zero(beta0.size());
  for (const auto& ci : intervals_per_rep) {
    if (ci.lower.size() != beta0.size())
      throw std::invalid_argument("coverage: interval dimension mismatch");
    for (Eigen::Index j = 0; j < beta0.size(); ++j)
      if (ci.contains(j, beta0(j))) rates(j) += 1.0;
  }
  return rates / static_cast<double>(intervals_per_rep.size());
}

InferenceResult run_inference(const Dataset& data, const LossSpec& loss,
                              const FitResult& fit, const NetArch& aux_arch,
                              const TrainConfig& aux_config, double level,
                              VarianceMethod method) {
  data.validate();
  Eigen::VectorXd weights;
  std::string tag;
  if (data.kind == TaskKind::Regression) {
    weights = Eigen::VectorXd::Ones(data.n());
    tag = "uniform";
  } else {
    // the least-favorable-direction weights are the loss curvature at the
    // fitted index; for the logistic NLL this is exactly phi(1-phi)
    const Eigen::VectorXd u2 = fit.predict_rows(data.x);
    const Eigen::VectorXd u1 = data.z * fit.beta_hat;
    weights.resize(data.n());
    for (Eigen::Index i = 0; i < data.n(); ++i)
      weights(i) = std::max(loss_hess(loss, u1(i), u2(i), data.y(i))(0, 0), 1e-8);
    tag = loss.family == LossFamily::LogisticNll ? "phi(1-phi)" : "general";
  }

  InferenceResult out;
  out.projection =
      fit_conditional_mean(data.x, data.z, weights, aux_arch, aux_config, tag);
  if (method == VarianceMethod::Sandwich) {
    const Eigen::MatrixXd scores =
        efficient_score_samples(data, loss, fit, out.projection);
    out.variance = sandwich_variance(scores, data, loss, fit, out.projection);
  } else {
    out.variance = plug_in_variance(data, loss, fit, out.projection);
  }
  out.intervals = confidence_intervals(fit.beta_hat, out.variance,
                                       static_cast<int>(data.n()), level);
  return out;
}

}  // namespace semintk
