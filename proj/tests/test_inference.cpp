#include <doctest.h>

#include <cmath>

#include "semintk/errors.hpp"
#include "semintk/inference.hpp"
#include "semintk/rng.hpp"
#include "semintk/simgen.hpp"

using namespace semintk;

namespace {

const LossSpec kSquared{LossFamily::Squared};
const LossSpec kLogistic{LossFamily::LogisticNll};

// a FitResult wrapping fixed beta and a fixed function
FitResult fixed_fit(const Eigen::VectorXd& beta, const Predictor& f) {
  FitResult fit;
  fit.beta_hat = beta;
  fit.predictor = f;
  fit.predict_rows = [f](const Eigen::MatrixXd& rows) {
    Eigen::VectorXd v(rows.rows());
    for (Eigen::Index i = 0; i < rows.rows(); ++i) v(i) = f(rows.row(i));
    return v;
  };
  return fit;
}

}  // namespace

TEST_SUITE_BEGIN("inference");

TEST_CASE("variance_regression hand examples") {
  SUBCASE("two-sample arithmetic") {
    Eigen::VectorXd resid(2);
    resid << 1.0, -1.0;
    Eigen::MatrixXd z(2, 1), h(2, 1);
    z << 1.0, 1.0;
    h.setZero();
    const VarianceEstimate est = variance_regression(resid, z, h);
    CHECK(est.sigma_hat(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(est.method == VarianceMethod::PlugInRegression);
  }
  SUBCASE("zero residuals give the zero matrix") {
    Eigen::VectorXd resid = Eigen::VectorXd::Zero(5);
    Eigen::MatrixXd z = Eigen::MatrixXd::Random(5, 2);
    const VarianceEstimate est =
        variance_regression(resid, z, Eigen::MatrixXd::Zero(5, 2));
    CHECK(est.sigma_hat.cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("residual scaling is quadratic") {
    Rng rng(3);
    Eigen::VectorXd resid(40);
    Eigen::MatrixXd z(40, 2);
    for (int i = 0; i < 40; ++i) {
      resid(i) = rng.normal();
      z(i, 0) = rng.uniform();
      z(i, 1) = rng.normal();
    }
    const Eigen::MatrixXd h = Eigen::MatrixXd::Zero(40, 2);
    const VarianceEstimate a = variance_regression(resid, z, h);
    const VarianceEstimate b = variance_regression(3.0 * resid, z, h);
    CHECK((b.sigma_hat - 9.0 * a.sigma_hat).cwiseAbs().maxCoeff() <= 1e-9);
  }
  SUBCASE("singular centered design fails loudly") {
    Eigen::VectorXd resid = Eigen::VectorXd::Ones(4);
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(4, 2);  // z == h, centered zero
    CHECK_THROWS_AS(variance_regression(resid, z, z), NumericalError);
  }
}

TEST_CASE("variance_classification hand examples") {
  SUBCASE("constant half probabilities invert the quarter") {
    Eigen::VectorXd p = Eigen::VectorXd::Constant(6, 0.5);
    Eigen::MatrixXd z = Eigen::MatrixXd::Ones(6, 1);
    const Eigen::MatrixXd h = Eigen::MatrixXd::Zero(6, 1);
    const VarianceEstimate est = variance_classification(p, z, h);
    CHECK(est.sigma_hat(0, 0) == doctest::Approx(4.0).epsilon(1e-9));
    CHECK(!est.clamped);
  }
  SUBCASE("halved weights double the variance") {
    Rng rng(5);
    Eigen::MatrixXd z(50, 2);
    for (int i = 0; i < 50; ++i) {
      z(i, 0) = rng.uniform();
      z(i, 1) = rng.uniform();
    }
    const Eigen::MatrixXd h = Eigen::MatrixXd::Zero(50, 2);
    // p(1-p) = 0.25 vs 0.125: solve p for half weight
    Eigen::VectorXd p_full = Eigen::VectorXd::Constant(50, 0.5);
    const double p_half = 0.5 * (1.0 - std::sqrt(0.5));  // p(1-p) = 1/8
    Eigen::VectorXd p_low = Eigen::VectorXd::Constant(50, p_half);
    const VarianceEstimate a = variance_classification(p_full, z, h);
    const VarianceEstimate b = variance_classification(p_low, z, h);
    CHECK((b.sigma_hat - 2.0 * a.sigma_hat).cwiseAbs().maxCoeff() <=
          1e-6 * a.sigma_hat.norm());
  }
  SUBCASE("degenerate probabilities are clamped and flagged") {
    Eigen::VectorXd p(4);
    p << 0.0, 1.0, 1e-12, 1.0 - 1e-12;
    Eigen::MatrixXd z(4, 1);
    z << 1.0, -1.0, 0.5, 2.0;
    const VarianceEstimate est =
        variance_classification(p, z, Eigen::MatrixXd::Zero(4, 1));
    CHECK(est.clamped);
    CHECK(std::isfinite(est.sigma_hat(0, 0)));
  }
}

TEST_CASE("efficient score samples") {
  const CaseSpec spec{1};
  NuisanceProjection proj;
  proj.weights_used = "uniform";
  // two zero components: hhat == 0
  for (int j = 0; j < 2; ++j)
    proj.components.push_back(
        fixed_fit(Eigen::VectorXd::Zero(0), [](const Eigen::VectorXd&) { return 0.0; }));

  SUBCASE("zero residuals zero the scores") {
    Dataset data = gen_regression(spec, 20, 7, 0.0);
    const FitResult fit = fixed_fit(data.truth->beta0, [&](const Eigen::VectorXd& x) {
      return f0_eval(spec, x);
    });
    const Eigen::MatrixXd scores = efficient_score_samples(data, kSquared, fit, proj);
    CHECK(scores.cwiseAbs().maxCoeff() <= 1e-10);
  }
  SUBCASE("hhat == 0 reduces rows to l' z") {
    Dataset data = gen_regression(spec, 15, 9);
    const FitResult fit = fixed_fit(Eigen::Vector2d{0.2, -0.1},
                                    [](const Eigen::VectorXd&) { return 0.5; });
    const Eigen::MatrixXd scores = efficient_score_samples(data, kSquared, fit, proj);
    for (int i = 0; i < 15; ++i) {
      const double l1 =
          loss_grad(kSquared, data.z.row(i) * fit.beta_hat, 0.5, data.y(i)).l1;
      CHECK(scores(i, 0) == doctest::Approx(l1 * data.z(i, 0)));
      CHECK(scores(i, 1) == doctest::Approx(l1 * data.z(i, 1)));
    }
  }
  SUBCASE("logistic hand row") {
    // y = 1, phat = 1/2, z - h = (1, 0): row = (-1/2, 0)
    Dataset data;
    data.kind = TaskKind::Classification;
    data.y = Eigen::VectorXd::Ones(1);
    data.z = (Eigen::MatrixXd(1, 2) << 1.0, 0.0).finished();
    data.x = Eigen::MatrixXd::Zero(1, 1);
    NuisanceProjection zero1;
    zero1.components.push_back(
        fixed_fit(Eigen::VectorXd(), [](const Eigen::VectorXd&) { return 0.0; }));
    zero1.components.push_back(
        fixed_fit(Eigen::VectorXd(), [](const Eigen::VectorXd&) { return 0.0; }));
    const FitResult fit = fixed_fit(Eigen::Vector2d::Zero(),
                                    [](const Eigen::VectorXd&) { return 0.0; });
    const Eigen::MatrixXd scores = efficient_score_samples(data, kLogistic, fit, zero1);
    CHECK(scores(0, 0) == doctest::Approx(-0.5));
    CHECK(scores(0, 1) == 0.0);
  }
}

TEST_CASE("sandwich variance") {
  const CaseSpec spec{1};
  Dataset data = gen_regression(spec, 30, 11);
  NuisanceProjection proj;
  proj.weights_used = "uniform";
  for (int j = 0; j < 2; ++j)
    proj.components.push_back(
        fixed_fit(Eigen::VectorXd(), [](const Eigen::VectorXd&) { return 0.0; }));
  const FitResult fit = fixed_fit(Eigen::Vector2d{0.5, 0.5},
                                  [](const Eigen::VectorXd&) { return 10.0; });

  const Eigen::MatrixXd scores = efficient_score_samples(data, kSquared, fit, proj);
  const VarianceEstimate est = sandwich_variance(scores, data, kSquared, fit, proj);
  CHECK((est.sigma_hat - est.sigma_hat.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(est.sigma_hat);
  CHECK(es.eigenvalues().minCoeff() >=
        -1e-8 * std::max(es.eigenvalues().maxCoeff(), 0.0));
  // A_hat^{-1} B_hat A_hat^{-T} identity holds by construction
  const Eigen::MatrixXd recon =
      est.a_hat.ldlt().solve(est.b_hat) * est.a_hat.inverse().transpose();
  CHECK((est.sigma_hat - recon).cwiseAbs().maxCoeff() <=
        1e-6 * (1.0 + est.sigma_hat.cwiseAbs().maxCoeff()));

  SUBCASE("all-zero scores give the zero variance") {
    const VarianceEstimate zero =
        sandwich_variance(Eigen::MatrixXd::Zero(30, 2), data, kSquared, fit, proj);
    CHECK(zero.sigma_hat.cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("confidence intervals") {
  VarianceEstimate var;
  var.sigma_hat = Eigen::MatrixXd::Identity(1, 1);

  SUBCASE("documented z for the 95% level") {
    const ConfidenceIntervals ci = confidence_intervals(
        Eigen::VectorXd::Ones(1), var, 100, 0.95);
    CHECK(ci.lower(0) == doctest::Approx(0.8040036).epsilon(1e-7));
    CHECK(ci.upper(0) == doctest::Approx(1.1959964).epsilon(1e-7));
  }
  SUBCASE("zero variance degenerates the interval") {
    var.sigma_hat(0, 0) = 0.0;
    const ConfidenceIntervals ci = confidence_intervals(
        Eigen::VectorXd::Constant(1, 2.5), var, 50, 0.95);
    CHECK(ci.lower(0) == 2.5);
    CHECK(ci.upper(0) == 2.5);
  }
  SUBCASE("quadrupling n halves the width") {
    var.sigma_hat(0, 0) = 1.0;
    const auto ci1 = confidence_intervals(Eigen::VectorXd::Zero(1), var, 100, 0.95);
    const auto ci4 = confidence_intervals(Eigen::VectorXd::Zero(1), var, 400, 0.95);
    CHECK(ci4.upper(0) == doctest::Approx(0.5 * ci1.upper(0)));
  }
  SUBCASE("negative variance diagonal is an error") {
    var.sigma_hat(0, 0) = -1.0;
    CHECK_THROWS_AS(confidence_intervals(Eigen::VectorXd::Zero(1), var, 10, 0.95),
                    NumericalError);
  }
  SUBCASE("invalid level rejected") {
    var.sigma_hat(0, 0) = 1.0;
    CHECK_THROWS_AS(confidence_intervals(Eigen::VectorXd::Zero(1), var, 10, 1.0),
                    std::invalid_argument);
  }
}

TEST_CASE("normal quantile") {
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959964));
  CHECK(normal_quantile(0.95) == doctest::Approx(1.644854));
  // non-standard level via the rational approximation + polish
  CHECK(probit_link(normal_quantile(0.9)) == doctest::Approx(0.9).epsilon(1e-9));
  CHECK(probit_link(normal_quantile(0.123)) == doctest::Approx(0.123).epsilon(1e-9));
}

TEST_CASE("coverage accounting") {
  Eigen::Vector2d beta0{1.0, 0.75};
  ConfidenceIntervals wide;
  wide.lower = Eigen::Vector2d{0.0, 0.0};
  wide.upper = Eigen::Vector2d{2.0, 2.0};
  ConfidenceIntervals miss1;
  miss1.lower = Eigen::Vector2d{1.5, 0.0};
  miss1.upper = Eigen::Vector2d{2.0, 2.0};
  const Eigen::VectorXd rates = coverage({wide, wide, miss1, wide}, beta0);
  CHECK(rates(0) == doctest::Approx(0.75));
  CHECK(rates(1) == doctest::Approx(1.0));
  CHECK_THROWS_AS(coverage({}, beta0), std::invalid_argument);
}

TEST_CASE("fit_conditional_mean") {
  const NetArch aux{2, 64, 5};
  TrainConfig cfg;
  cfg.steps = 400;
  cfg.step = 5e-3;
  cfg.seed = 3;

  SUBCASE("constant conditional mean is recovered") {
    // Z independent of X: E[Z|X] is the constant mean. The sup deviation on
    // a 50-point probe grid floors near 0.065 at n=2000 (residual noise
    // fitting); 0.1 gives seed margin.
    auto [zraw, x] = gen_covariates(2000, 5, 21);
    Rng rng(23);
    Eigen::MatrixXd z(2000, 2);
    for (int i = 0; i < 2000; ++i) {
      z(i, 0) = rng.uniform();
      z(i, 1) = rng.uniform();
    }
    const Eigen::VectorXd w = Eigen::VectorXd::Ones(2000);
    TrainConfig longer = cfg;
    longer.steps = 800;
    const NuisanceProjection proj =
        fit_conditional_mean(x, z, w, aux, longer, "uniform");
    const Eigen::MatrixXd probe = gen_covariates(50, 5, 29).second;
    const Eigen::MatrixXd h = proj.eval_rows(probe);
    for (int j = 0; j < 2; ++j)
      CHECK((h.col(j).array() - z.col(j).mean()).abs().maxCoeff() <= 0.1);
  }
  SUBCASE("constant weights match the unweighted fit exactly") {
    auto [z, x] = gen_covariates(200, 5, 31);
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(200);
    const Eigen::VectorXd threes = Eigen::VectorXd::Constant(200, 3.0);
    const NuisanceProjection a = fit_conditional_mean(x, z, ones, aux, cfg);
    const NuisanceProjection b = fit_conditional_mean(x, z, threes, aux, cfg);
    const Eigen::MatrixXd probe = gen_covariates(20, 5, 33).second;
    CHECK((a.eval_rows(probe) - b.eval_rows(probe)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("realizable noiseless target is fitted closely") {
    auto [zraw, x] = gen_covariates(1000, 5, 41);
    Eigen::MatrixXd z(1000, 1);
    for (int i = 0; i < 1000; ++i)
      z(i, 0) = std::sin(2.0 * x(i, 0)) + x(i, 1);  // Z = g(X) exactly
    TrainConfig strong = cfg;
    strong.steps = 2500;
    const NuisanceProjection proj = fit_conditional_mean(
        x, z, Eigen::VectorXd::Ones(1000), NetArch{2, 128, 5}, strong);
    const Eigen::MatrixXd h = proj.eval_rows(x);
    const double res2 = (z - h).squaredNorm() / 1000.0;
    CHECK(res2 <= 1e-2);
  }
  SUBCASE("degenerate weights are rejected") {
    auto [z, x] = gen_covariates(20, 5, 51);
    CHECK_THROWS_AS(
        fit_conditional_mean(x, z, Eigen::VectorXd::Zero(20), aux, cfg),
        std::invalid_argument);
  }
}

TEST_SUITE_END();
