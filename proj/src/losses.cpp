#include "semintk/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace semintk {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void check_class_label(const LossSpec& spec, double y) {
  if (spec.is_classification() && y != 0.0 && y != 1.0)
    throw std::invalid_argument("classification loss requires y in {0,1}");
}

double softplus(double t) {
  return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)));
}

// 1 - 1/t^2 + 3/t^4 - 15/t^6 + 105/t^8, the Mills-ratio tail series
double mills_series(double t) {
  const double w = 1.0 / (t * t);
  return 1.0 + w * (-1.0 + w * (3.0 + w * (-15.0 + w * 105.0)));
}

// phi(t) / Phi(t); switches to the asymptotic form deep in the lower tail
// where both numerator and denominator underflow.
double mills(double t) {
  if (t < -30.0) return -t / mills_series(t);
  return kInvSqrt2Pi * std::exp(-0.5 * t * t) / (0.5 * std::erfc(-t * kInvSqrt2));
}

}  // namespace

double LossSpec::grad_lipschitz() const {
  switch (family) {
    case LossFamily::Squared: return 2.0;
    case LossFamily::Huber: return 1.0;
    case LossFamily::LogisticNll: return 0.25;
    case LossFamily::ProbitNll: return 1.0;
  }
  return 2.0;
}

double logistic_link(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double probit_link(double t) { return 0.5 * std::erfc(-t * kInvSqrt2); }

double log_logistic(double t) { return -softplus(-t); }

double log_probit(double t) {
  if (t > 8.0) return std::log1p(-0.5 * std::erfc(t * kInvSqrt2));
  if (t >= -30.0) return std::log(0.5 * std::erfc(-t * kInvSqrt2));
  return -0.5 * t * t - std::log(-t) - 0.91893853320467274178 +
         std::log(mills_series(t));
}

double loss_value(const LossSpec& spec, double u1, double u2, double y) {
  check_class_label(spec, y);
  switch (spec.family) {
    case LossFamily::Squared: {
      const double r = y - u1 - u2;
      return r * r;
    }
    case LossFamily::Huber: {
      const double r = y - u1 - u2, a = std::abs(r), d = spec.huber_delta;
      return a <= d ? 0.5 * r * r : d * (a - 0.5 * d);
    }
    case LossFamily::LogisticNll:
      return softplus(u1 + u2) - y * (u1 + u2);
    case LossFamily::ProbitNll: {
      const double t = u1 + u2;
      return -y * log_probit(t) - (1.0 - y) * log_probit(-t);
    }
  }
  throw std::logic_error("unknown loss family");
}

LossGrad loss_grad(const LossSpec& spec, double u1, double u2, double y) {
  check_class_label(spec, y);
  double g = 0.0;
  switch (spec.family) {
    case LossFamily::Squared:
      g = -2.0 * (y - u1 - u2);
      break;
    case LossFamily::Huber: {
      const double r = y - u1 - u2, d = spec.huber_delta;
      g = std::abs(r) <= d ? -r : -d * (r > 0 ? 1.0 : -1.0);
      break;
    }
    case LossFamily::LogisticNll:
      g = logistic_link(u1 + u2) - y;
      break;
    case LossFamily::ProbitNll: {
      const double t = u1 + u2;
      g = -y * mills(t) + (1.0 - y) * mills(-t);
      break;
    }
  }
  // every supported family depends on its arguments through u1 + u2 (or the
  // residual y - u1 - u2), so the two partials coincide
  return {g, g};
}

Eigen::Matrix2d loss_hess(const LossSpec& spec, double u1, double u2, double y) {
  check_class_label(spec, y);
  double h = 0.0;
  switch (spec.family) {
    case LossFamily::Squared:
      h = 2.0;
      break;
    case LossFamily::Huber:
      h = std::abs(y - u1 - u2) <= spec.huber_delta ? 1.0 : 0.0;
      break;
    case LossFamily::LogisticNll: {
      const double p = logistic_link(u1 + u2);
      h = p * (1.0 - p);
      break;
    }
    case LossFamily::ProbitNll: {
      const double t = u1 + u2;
      const double m1 = mills(t), m0 = mills(-t);
      h = y * m1 * (t + m1) + (1.0 - y) * m0 * (m0 - t);
      break;
    }
  }
  return Eigen::Matrix2d::Constant(h);
}

}  // namespace semintk
