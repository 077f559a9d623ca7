#include <doctest.h>

#include <cmath>

#include "semintk/mlp.hpp"
#include "semintk/rng.hpp"

using namespace semintk;

namespace {

NetParams random_params(const NetArch& arch, std::uint64_t seed) {
  return init_params(arch, seed);
}

Eigen::VectorXd random_x(int d, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Eigen::VectorXd x(d);
  for (int j = 0; j < d; ++j) x(j) = rng.uniform(lo, hi);
  return x;
}

// smallest |pre-activation| across hidden units, to steer clear of ReLU kinks
double kink_margin(const NetParams& p, const Eigen::VectorXd& x) {
  const NetArch& arch = p.arch;
  Eigen::VectorXd a = x;
  double margin = std::numeric_limits<double>::infinity();
  for (int i = 0; i < arch.depth; ++i) {
    const double scale = std::sqrt(2.0 / arch.layer_out(i));
    Eigen::VectorXd pre = scale * (p.weights[i] * a + p.biases[i]);
    margin = std::min(margin, pre.cwiseAbs().minCoeff());
    a = pre.cwiseMax(0.0);
  }
  return margin;
}

}  // namespace

TEST_SUITE_BEGIN("mlp");

TEST_CASE("init is deterministic and bit-identical") {
  const NetArch arch{2, 4, 3};
  const NetParams a = init_params(arch, 7), b = init_params(arch, 7);
  for (int i = 0; i <= arch.depth; ++i) {
    CHECK(a.weights[i] == b.weights[i]);
    CHECK(a.biases[i] == b.biases[i]);
  }
  const NetParams c = init_params(arch, 8);
  CHECK(a.weights[0] != c.weights[0]);
}

TEST_CASE("hidden biases start at zero") {
  const NetParams p = init_params(NetArch{3, 8, 2}, 123);
  for (int i = 1; i <= 3; ++i) CHECK(p.biases[i].isZero(0.0));
  CHECK(!p.biases[0].isZero(0.0));
}

TEST_CASE("first-layer weights look standard normal at scale") {
  const NetArch arch{5, 1000, 5};
  const NetParams p = init_params(arch, 99);
  const double mean = p.weights[0].mean();
  CHECK(std::abs(mean) <= 4.0 / std::sqrt(5000.0));
  const double var = (p.weights[0].array() - mean).square().mean();
  CHECK(var == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("forward_base hand values") {
  NetArch arch{1, 1, 1};
  NetParams p;
  p.arch = arch;
  p.weights = {Eigen::MatrixXd::Constant(1, 1, 1.0), Eigen::MatrixXd::Constant(1, 1, 1.0)};
  p.biases = {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)};
  CHECK(forward_base(p, Eigen::VectorXd::Constant(1, 1.0)) ==
        doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));

  SUBCASE("zero params give zero") {
    p.weights[0].setZero();
    p.weights[1].setZero();
    CHECK(forward_base(p, Eigen::VectorXd::Constant(1, 3.0)) == 0.0);
  }
  SUBCASE("constant output layer") {
    NetParams q = init_params(NetArch{2, 6, 3}, 5);
    q.weights[2].setZero();
    q.biases[2](0) = 4.25;
    Rng rng(3);
    for (int k = 0; k < 5; ++k)
      CHECK(forward_base(q, random_x(3, rng)) == doctest::Approx(4.25));
  }
}

TEST_CASE("difference network vanishes at init and matches the definition") {
  const NetArch arch{2, 16, 4};
  const NetParams theta0 = init_params(arch, 11);
  Rng rng(17);
  for (int k = 0; k < 10; ++k) {
    const Eigen::VectorXd x = random_x(4, rng);
    CHECK(forward(theta0, theta0, x) == 0.0);
  }
  NetParams theta = init_params(arch, 12);
  const Eigen::VectorXd x = random_x(4, rng);
  CHECK(forward(theta, theta0, x) ==
        doctest::Approx(forward_base(theta, x) - forward_base(theta0, x)));

  SUBCASE("shifting the init output bias shifts forward by -1 everywhere") {
    NetParams shifted0 = theta0;
    shifted0.biases[2](0) += 1.0;
    for (int k = 0; k < 5; ++k) {
      const Eigen::VectorXd xx = random_x(4, rng);
      CHECK(forward(theta, shifted0, xx) ==
            doctest::Approx(forward(theta, theta0, xx) - 1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("batched forward matches the scalar recursion") {
  const NetArch arch{3, 12, 5};
  const NetParams p = init_params(arch, 21);
  Rng rng(22);
  Eigen::MatrixXd xs(7, 5);
  for (int i = 0; i < 7; ++i) xs.row(i) = random_x(5, rng).transpose();
  const Eigen::VectorXd batch = forward_base_batch(p, xs);
  for (int i = 0; i < 7; ++i)
    CHECK(batch(i) == doctest::Approx(forward_base(p, xs.row(i))).epsilon(1e-12));
}

TEST_CASE("gradient of the output bias is one") {
  const NetArch arch{2, 8, 3};
  const NetParams p = init_params(arch, 31);
  Rng rng(32);
  const FlatParams g = param_gradient(p, random_x(3, rng));
  CHECK(g.values(g.values.size() - 1) == 1.0);
}

TEST_CASE("gradient matches central finite differences away from kinks") {
  Rng rng(41);
  int tested = 0;
  const NetArch arch{2, 6, 3};
  for (std::uint64_t seed = 0; tested < 25 && seed < 200; ++seed) {
    const NetParams p = random_params(arch, 1000 + seed);
    const Eigen::VectorXd x = random_x(3, rng);
    if (kink_margin(p, x) < 1e-3) continue;
    ++tested;
    const FlatParams grad = param_gradient(p, x);
    FlatParams flat = flatten(p);
    const double h = 1e-5;
    // probe a spread of coordinates rather than every one
    for (Eigen::Index c = 0; c < flat.values.size(); c += 7) {
      FlatParams plus = flat, minus = flat;
      plus.values(c) += h;
      minus.values(c) -= h;
      const double fd = (forward_base(unflatten(arch, plus), x) -
                         forward_base(unflatten(arch, minus), x)) /
                        (2.0 * h);
      if (std::abs(grad.values(c)) < 1e-6) {
        CHECK(std::abs(fd - grad.values(c)) <= 1e-9);
      } else {
        CHECK(fd == doctest::Approx(grad.values(c)).epsilon(1e-6));
      }
    }
  }
  CHECK(tested == 25);
}

TEST_CASE("dead input path zeroes the first-layer gradient block") {
  NetArch arch{1, 3, 2};
  NetParams p;
  p.arch = arch;
  p.weights = {Eigen::MatrixXd::Constant(3, 2, 1.0), Eigen::MatrixXd::Constant(1, 3, 1.0)};
  p.biases = {Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(1)};
  // all pre-activations negative at x
  const Eigen::VectorXd x = Eigen::VectorXd::Constant(2, -1.0);
  const FlatParams g = param_gradient(p, x);
  CHECK(g.values.head(3 * 2 + 3).isZero(0.0));
}

TEST_CASE("penalty") {
  const NetArch arch{2, 5, 3};
  const NetParams p = init_params(arch, 51);
  CHECK(penalty(p, p) == 0.0);

  NetParams q = p;
  q.weights[1](2, 3) += 2.0;
  CHECK(penalty(q, p) == doctest::Approx(4.0));

  SUBCASE("matches a naive double loop") {
    NetParams r = init_params(arch, 52);
    double naive = 0.0;
    for (int i = 0; i <= arch.depth; ++i) {
      for (Eigen::Index a = 0; a < r.weights[i].rows(); ++a)
        for (Eigen::Index b = 0; b < r.weights[i].cols(); ++b) {
          const double diff = r.weights[i](a, b) - p.weights[i](a, b);
          naive += diff * diff;
        }
      for (Eigen::Index a = 0; a < r.biases[i].size(); ++a) {
        const double diff = r.biases[i](a) - p.biases[i](a);
        naive += diff * diff;
      }
    }
    CHECK(penalty(r, p) == doctest::Approx(naive).epsilon(1e-12));
  }
}

TEST_CASE("flat round-trip is lossless") {
  const NetArch arch{3, 4, 2};
  const NetParams p = init_params(arch, 61);
  const NetParams q = unflatten(arch, flatten(p));
  for (int i = 0; i <= arch.depth; ++i) {
    CHECK(p.weights[i] == q.weights[i]);
    CHECK(p.biases[i] == q.biases[i]);
  }
  CHECK(flatten(p).values.size() == arch.param_count());
}

TEST_CASE("positive homogeneity with zero biases") {
  NetParams p = init_params(NetArch{2, 8, 3}, 71);
  p.biases[0].setZero();
  Rng rng(72);
  for (int k = 0; k < 10; ++k) {
    const Eigen::VectorXd x = random_x(3, rng);
    const double f1 = forward_base(p, x);
    const double f2 = forward_base(p, (2.5 * x).eval());
    CHECK(f2 == doctest::Approx(2.5 * f1).epsilon(1e-12));
  }
}

TEST_CASE("dimension mismatch is rejected") {
  const NetParams p = init_params(NetArch{1, 2, 3}, 81);
  CHECK_THROWS_AS(forward_base(p, Eigen::VectorXd::Zero(2)), std::invalid_argument);
  const NetParams q = init_params(NetArch{1, 2, 4}, 81);
  CHECK_THROWS_AS(forward(p, q, Eigen::VectorXd::Zero(3)), std::invalid_argument);
  CHECK_THROWS_AS(penalty(p, q), std::invalid_argument);
}

TEST_SUITE_END();
