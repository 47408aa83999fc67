#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "sfm/flows.hpp"
#include "sfm/theory.hpp"
#include "test_util.hpp"

using namespace sfm;
using namespace sfm::testing;

namespace {

// E[g(exp(mu + sigma z))] for z ~ N(0,1) by the trapezoid rule.
template <class G>
double gauss_expect(double mu, double sigma, G g) {
  const double lo = -12.0, hi = 12.0;
  const int n = 200000;
  const double h = (hi - lo) / n;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double z = lo + i * h;
    const double w = (i == 0 || i == n) ? 0.5 : 1.0;
    acc += w * g(std::exp(mu + sigma * z)) * std::exp(-0.5 * z * z);
  }
  return acc * h / std::sqrt(2.0 * std::numbers::pi);
}

}  // namespace

TEST_CASE("lognormal closed forms against quadrature") {
  for (double mu : {-1.0, 0.0, 0.7}) {
    for (double sigma : {0.1, 0.5, 1.0}) {
      const double m = gauss_expect(mu, sigma, [](double x) { return x; });
      const double m2 = gauss_expect(mu, sigma, [](double x) { return x * x; });
      CHECK(rel_err(lognormal_mean(mu, sigma), m, 1e-300) < 1e-9);
      CHECK(rel_err(lognormal_variance(mu, sigma), m2 - m * m, 1e-300) < 1e-8);
    }
  }
  CHECK(lognormal_variance(0.3, 0.0) == 0.0);
}

TEST_CASE("lognormal monte carlo") {
  const auto r = check_lognormal(0.0, 0.5, 200000, 1);
  CHECK(r.mean_relative_error < 0.01);
  CHECK(r.variance_relative_error < 0.03);
  const auto flat = check_lognormal(0.2, 0.0, 1000, 1);
  CHECK(flat.empirical_variance == 0.0);
  CHECK(flat.variance_relative_error == 0.0);
}

TEST_CASE("layernormed feature") {
  const Vector v = layernormed_feature(64, 3);
  CHECK(std::abs(v.mean()) < 1e-12);
  CHECK(std::abs(v.squaredNorm() / 64.0 - 1.0) < 1e-12);
  CHECK(layernormed_feature(64, 3) == v);
}

TEST_CASE("exchangeability on a small problem") {
  McConfig cfg;
  cfg.num_classes = 5;
  cfg.feature_dim = 16;
  cfg.sigma_w = 0.5;
  cfg.trials = 4000;
  const auto r = check_exchangeability(cfg, layernormed_feature(16, 1));
  CHECK(r.mean_probs.size() == 5);
  CHECK(std::abs(r.mean_probs.sum() - 1.0) < 1e-12);
  CHECK(r.max_deviation_in_se < 5.0);
  cfg.sigma_w = 0.0;
  const auto zero = check_exchangeability(cfg, layernormed_feature(16, 1));
  CHECK(zero.max_deviation < 1e-12);
  CHECK(zero.max_deviation_in_se == 0.0);
}

TEST_CASE("softmax variance prediction for small logit variance") {
  McConfig cfg;
  cfg.num_classes = 100;
  cfg.feature_dim = 32;
  cfg.sigma_w = 0.02;
  cfg.trials = 20000;
  const Vector phi = layernormed_feature(32, 2);
  const auto r = check_softmax_variance(cfg, phi);
  CHECK(r.logit_variance == doctest::Approx(0.02 * 0.02 * phi.squaredNorm()));
  CHECK(r.predicted == doctest::Approx(std::expm1(r.logit_variance) / 1e4));
  CHECK(r.relative_error < 0.05);
}

TEST_CASE("gradient degeneration") {
  std::mt19937_64 rng(4);
  const Matrix f = random_matrix(12, 6, rng);
  const auto y = balanced_labels(12, 3);
  McConfig cfg;
  cfg.num_classes = 3;
  cfg.feature_dim = 6;
  cfg.sigma_w = 0.0;
  cfg.trials = 3;
  const auto exact = check_gradient_degeneration(cfg, f, y);
  CHECK(exact.max_cosine_error < 1e-12);
  cfg.sigma_w = 0.01;
  cfg.trials = 200;
  const auto noisy = check_gradient_degeneration(cfg, f, y);
  CHECK(noisy.mean_cosine > 0.999);
  cfg.sigma_w = 5.0;
  CHECK(check_gradient_degeneration(cfg, f, y).mean_cosine < noisy.mean_cosine);
}

TEST_CASE("theory suite output") {
  McConfig cfg;
  cfg.num_classes = 10;
  cfg.feature_dim = 32;
  cfg.trials = 2000;
  const auto checks = run_theory_suite(cfg);
  REQUIRE(!checks.empty());
  const std::string csv = theory_csv(checks);
  CHECK(csv.rfind("check,statistic,standard_error,threshold,passed\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(checks.size() + 1));
  for (const auto& c : checks) CHECK(theory_table(checks).find(c.name) != std::string::npos);
  CHECK(run_theory_suite(cfg).front().statistic == checks.front().statistic);
}

TEST_CASE("mc config validation") {
  McConfig cfg;
  cfg.num_classes = 1;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = McConfig{};
  cfg.sigma_w = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = McConfig{};
  cfg.trials = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}
