#pragma once

#include <Eigen/Dense>

namespace semintk {

// Loss l(u1, u2, y) with u1 = z'beta and u2 = f(x). Regression families are
// even functions of the residual y - u1 - u2 with l(0) = l'(0) = 0; the
// classification families are negative log-likelihoods of a link applied to
// u1 + u2. All families are convex with Lipschitz gradients.
enum class LossFamily { Squared, Huber, LogisticNll, ProbitNll };

struct LossSpec {
  LossFamily family = LossFamily::Squared;
  double huber_delta = 1.345;  // classical 95%-efficiency tuning

  bool is_classification() const {
    return family == LossFamily::LogisticNll || family == LossFamily::ProbitNll;
  }
  // Lipschitz constant of the gradient (an upper bound for probit).
  double grad_lipschitz() const;
};

struct LossGrad {
  double l1;  // d l / d u1
  double l2;  // d l / d u2
};

double loss_value(const LossSpec& spec, double u1, double u2, double y);
LossGrad loss_grad(const LossSpec& spec, double u1, double u2, double y);
// 2x2 matrix of second partials in (u1, u2); Huber uses the a.e. second
// derivative.
Eigen::Matrix2d loss_hess(const LossSpec& spec, double u1, double u2, double y);

// Link functions for the classification families.
double logistic_link(double t);
double probit_link(double t);  // standard normal CDF
// log(link) and log(1-link), stable for |t| up to ~1e3.
double log_logistic(double t);
double log_probit(double t);

}  // namespace semintk
