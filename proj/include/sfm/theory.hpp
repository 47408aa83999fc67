#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sfm/core.hpp"

namespace sfm {

struct McConfig {
  int num_classes = 100;
  std::size_t feature_dim = 768;
  double sigma_w = 0.01;
  std::size_t trials = 10000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct ExchangeabilityResult {
  Vector mean_probs;       // per class, over trials
  Vector standard_errors;  // per class
  double max_deviation = 0.0;             // max_c |mean_c - 1/C|
  double max_deviation_in_se = 0.0;       // max_c |mean_c - 1/C| / se_c (0 when se_c = 0)
};

// W (C x F, i.i.d. N(0, sigma_w^2)) is redrawn every trial; the feature is fixed.
ExchangeabilityResult check_exchangeability(const McConfig& cfg, const Vector& feature);

struct LognormalResult {
  double empirical_mean = 0.0;
  double empirical_variance = 0.0;
  double closed_form_mean = 0.0;      // exp(mu + sigma^2/2)
  double closed_form_variance = 0.0;  // exp(2mu + sigma^2)(exp(sigma^2) - 1)
  double mean_relative_error = 0.0;
  double variance_relative_error = 0.0;  // absolute error when the closed form is 0
};

LognormalResult check_lognormal(double mu, double sigma, std::size_t trials, std::uint64_t seed);
double lognormal_mean(double mu, double sigma);
double lognormal_variance(double mu, double sigma);

struct SoftmaxVarianceResult {
  double empirical_variance = 0.0;  // Var[p_c] across trials, class 0
  double logit_variance = 0.0;      // sigma_w^2 ||phi||^2
  double predicted = 0.0;           // (exp(logit_variance) - 1) / C^2
  // Alternative reading that treats sigma_w^2 ||phi||^2 as the standard deviation.
  double predicted_std_reading = 0.0;
  double relative_error = 0.0;  // |empirical - predicted| / predicted (0 when both are 0)
};

// Logits are drawn as z_c ~ N(0, sigma_w^2 ||phi||^2) i.i.d., which is the
// exact law of W phi for i.i.d. Gaussian W, without materializing W.
SoftmaxVarianceResult check_softmax_variance(const McConfig& cfg, const Vector& feature);

struct DegenerationResult {
  Vector per_class_cosine;
  double mean_cosine = 0.0;
  double max_cosine_error = 0.0;  // max_c (1 - cos_c)
};

// Averages ce_linear_gradient over cfg.trials draws of W and compares each row
// with the analytic flow. sigma_w = 0 reproduces the W = 0 identity.
DegenerationResult check_gradient_degeneration(const McConfig& cfg, const Matrix& features, std::span<const int> labels);

// Uniform report row for every check.
struct McCheck {
  std::string name;
  double statistic = 0.0;
  double standard_error = 0.0;
  double threshold = 0.0;
  bool passed = false;
};

// The default battery behind the CLI `theory` command.
std::vector<McCheck> run_theory_suite(const McConfig& cfg);
std::string theory_csv(const std::vector<McCheck>& checks);
std::string theory_table(const std::vector<McCheck>& checks);

// A layer-normalized (mean 0, variance 1) Gaussian feature vector.
Vector layernormed_feature(std::size_t dim, std::uint64_t seed);

}  // namespace sfm
