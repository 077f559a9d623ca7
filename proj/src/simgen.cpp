#include "semintk/simgen.hpp"

#include <cmath>
#include <mutex>
#include <stdexcept>
#include <unordered_map>

#include "semintk/losses.hpp"
#include "semintk/rng.hpp"

namespace semintk {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr std::uint64_t kCenteringSeed = 0x5eed0f0cafeULL;

void check_case(const CaseSpec& spec) {
  if (spec.case_id < 1 || spec.case_id > 4)
    throw std::invalid_argument("case_id must be in 1..4");
}

double block_sum(const Eigen::VectorXd& x, int off) {
  // x1^2 x2^3 + log(1+x3) + sqrt(1+x4 x5) + exp(x5/2), shifted by `off`
  return x(off) * x(off) * std::pow(x(off + 1), 3) + std::log1p(x(off + 2)) +
         std::sqrt(1.0 + x(off + 3) * x(off + 4)) + std::exp(0.5 * x(off + 4));
}

}  // namespace

double f0_eval(const CaseSpec& spec, const Eigen::VectorXd& x) {
  check_case(spec);
  if (x.size() != spec.d())
    throw std::invalid_argument("f0_eval: x dimension does not match case");
  switch (spec.case_id) {
    case 1:
      return 5.0 * block_sum(x, 0);
    case 2:
      return 2.5 * (block_sum(x, 0) + block_sum(x, 5));
    default: {  // cases 3 and 4
      const int d = spec.d();
      double s = 0.0;
      for (int l = 1; l <= d; ++l) s += l * x(l - 1);
      return 5.0 * std::sin(6.0 * kPi / (d * (d + 1.0)) * s);
    }
  }
}

double f0_mean(const CaseSpec& spec) {
  check_case(spec);
  static std::unordered_map<int, double> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(spec.case_id);
  if (it != cache.end()) return it->second;

  const int chunk = 100000, chunks = 10;  // 1e6 draws total
  double sum = 0.0;
  for (int c = 0; c < chunks; ++c) {
    auto [z, x] = gen_covariates(chunk, spec.d(),
                                 derive_stream(kCenteringSeed, spec.case_id * 100 + c));
    for (int i = 0; i < chunk; ++i) sum += f0_eval(spec, x.row(i));
  }
  const double mean = sum / (static_cast<double>(chunk) * chunks);
  cache[spec.case_id] = mean;
  return mean;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> gen_covariates(int n, int d,
                                                           std::uint64_t seed) {
  if (n < 1 || d < 1) throw std::invalid_argument("gen_covariates: n, d >= 1");
  Rng rng(seed);
  Eigen::MatrixXd z(n, 2), x(n, d);
  for (int i = 0; i < n; ++i) {
    z(i, 0) = rng.uniform();
    z(i, 1) = rng.uniform();
    const double shift = 0.05 * (z(i, 0) + z(i, 1));
    for (int j = 0; j < d; ++j) x(i, j) = 0.9 * rng.uniform() + shift;
  }
  return {std::move(z), std::move(x)};
}

Dataset gen_regression(const CaseSpec& spec, int n, std::uint64_t seed,
                       double sigma) {
  check_case(spec);
  auto [z, x] = gen_covariates(n, spec.d(), derive_stream(seed, 1));
  Rng noise = Rng::from_stream(seed, 2);
  Dataset data;
  data.kind = TaskKind::Regression;
  data.z = std::move(z);
  data.x = std::move(x);
  data.y.resize(n);
  const Eigen::Vector2d beta0 = spec.beta0();
  for (int i = 0; i < n; ++i)
    data.y(i) = f0_eval(spec, data.x.row(i)) + data.z.row(i) * beta0 +
                sigma * noise.normal();
  data.truth = DatasetTruth{beta0, spec.case_id, seed};
  return data;
}

Dataset gen_classification(const CaseSpec& spec, int n, std::uint64_t seed) {
  check_case(spec);
  auto [z, x] = gen_covariates(n, spec.d(), derive_stream(seed, 1));
  Rng draws = Rng::from_stream(seed, 2);
  const double center = f0_mean(spec);
  Dataset data;
  data.kind = TaskKind::Classification;
  data.z = std::move(z);
  data.x = std::move(x);
  data.y.resize(n);
  const Eigen::Vector2d beta0 = spec.beta0();
  for (int i = 0; i < n; ++i) {
    const double p =
        logistic_link(f0_eval(spec, data.x.row(i)) + data.z.row(i) * beta0 - center);
    data.y(i) = draws.uniform() < p ? 1.0 : 0.0;
  }
  data.truth = DatasetTruth{beta0, spec.case_id, seed};
  return data;
}

double mse_beta(const Eigen::VectorXd& beta_hat, const Eigen::VectorXd& beta0) {
  if (beta_hat.size() != beta0.size())
    throw std::invalid_argument("mse_beta: dimension mismatch");
  return (beta_hat - beta0).squaredNorm();
}

Eigen::MatrixXd mse_f_test_points(const CaseSpec& spec, int test_n,
                                  std::uint64_t seed) {
  check_case(spec);
  if (test_n < 1) throw std::invalid_argument("mse_f: test_n >= 1");
  return gen_covariates(test_n, spec.d(), derive_stream(seed, 3)).second;
}

double mse_f(const Predictor& fhat, const CaseSpec& spec, int test_n,
             std::uint64_t seed, bool centered) {
  return mse_f_batch(
      [&fhat](const Eigen::MatrixXd& rows) {
        Eigen::VectorXd v(rows.rows());
        for (Eigen::Index i = 0; i < rows.rows(); ++i) v(i) = fhat(rows.row(i));
        return v;
      },
      spec, test_n, seed, centered);
}

double mse_f_batch(const std::function<Eigen::VectorXd(const Eigen::MatrixXd&)>& fhat,
                   const CaseSpec& spec, int test_n, std::uint64_t seed,
                   bool centered) {
  const Eigen::MatrixXd x = mse_f_test_points(spec, test_n, seed);
  Eigen::VectorXd pred = fhat(x);
  Eigen::VectorXd truth(test_n);
  for (int i = 0; i < test_n; ++i) truth(i) = f0_eval(spec, x.row(i));
  if (centered) {
    pred.array() -= pred.mean();
    truth.array() -= truth.mean();
  }
  return (pred - truth).squaredNorm() / test_n;
}

}  // namespace semintk
