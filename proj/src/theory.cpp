#include "sfm/theory.hpp"

#include <cmath>
#include <random>

#include "sfm/flows.hpp"
#include "sfm/io.hpp"
#include "sfm/rng.hpp"

namespace sfm {

void McConfig::validate() const {
  if (trials < 1) throw ValidationError("trials must be >= 1");
  if (sigma_w < 0.0) throw ValidationError("sigma_w must be >= 0");
  if (num_classes < 2) throw ValidationError("num_classes must be >= 2");
  if (feature_dim < 1) throw ValidationError("feature_dim must be >= 1");
}

namespace {

// Softmax of one logit vector into `out` (max-subtracted).
void softmax_into(const Vector& z, Vector& out) {
  const double mx = z.maxCoeff();
  out = (z.array() - mx).exp();
  out /= out.sum();
}

}  // namespace

ExchangeabilityResult check_exchangeability(const McConfig& cfg, const Vector& feature) {
  cfg.validate();
  if (feature.size() != static_cast<Eigen::Index>(cfg.feature_dim)) throw ShapeError("feature length must equal feature_dim");
  std::mt19937_64 rng(derive_seed(cfg.seed, {21}));
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::Index c_count = cfg.num_classes;
  Vector sum = Vector::Zero(c_count), sum_sq = Vector::Zero(c_count);
  Vector z(c_count), p(c_count);
  for (std::size_t t = 0; t < cfg.trials; ++t) {
    for (Eigen::Index c = 0; c < c_count; ++c) {
      double acc = 0.0;
      for (Eigen::Index f = 0; f < feature.size(); ++f) acc += normal(rng) * feature(f);
      z(c) = cfg.sigma_w * acc;
    }
    softmax_into(z, p);
    sum += p;
    sum_sq += p.cwiseProduct(p);
  }
  const double n = static_cast<double>(cfg.trials);
  ExchangeabilityResult r;
  r.mean_probs = sum / n;
  r.standard_errors.resize(c_count);
  const double uniform = 1.0 / static_cast<double>(cfg.num_classes);
  for (Eigen::Index c = 0; c < c_count; ++c) {
    const double var = cfg.trials > 1 ? std::max(0.0, (sum_sq(c) - n * r.mean_probs(c) * r.mean_probs(c)) / (n - 1.0)) : 0.0;
    r.standard_errors(c) = std::sqrt(var / n);
    const double dev = std::abs(r.mean_probs(c) - uniform);
    r.max_deviation = std::max(r.max_deviation, dev);
    if (r.standard_errors(c) > 0.0) r.max_deviation_in_se = std::max(r.max_deviation_in_se, dev / r.standard_errors(c));
  }
  return r;
}

double lognormal_mean(double mu, double sigma) { return std::exp(mu + sigma * sigma / 2.0); }

double lognormal_variance(double mu, double sigma) {
  return std::exp(2.0 * mu + sigma * sigma) * std::expm1(sigma * sigma);
}

LognormalResult check_lognormal(double mu, double sigma, std::size_t trials, std::uint64_t seed) {
  if (trials < 1000) throw ValidationError("check_lognormal needs at least 1000 trials");
  std::mt19937_64 rng(derive_seed(seed, {22}));
  std::normal_distribution<double> normal(mu, sigma > 0.0 ? sigma : 1.0);
  // Welford for a stable variance.
  double mean = 0.0, m2 = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const double x = std::exp(sigma > 0.0 ? normal(rng) : mu);
    const double delta = x - mean;
    mean += delta / static_cast<double>(t + 1);
    m2 += delta * (x - mean);
  }
  LognormalResult r;
  r.empirical_mean = mean;
  r.empirical_variance = m2 / static_cast<double>(trials - 1);
  r.closed_form_mean = lognormal_mean(mu, sigma);
  r.closed_form_variance = lognormal_variance(mu, sigma);
  r.mean_relative_error = std::abs(r.empirical_mean - r.closed_form_mean) / r.closed_form_mean;
  r.variance_relative_error = r.closed_form_variance > 0.0
                                  ? std::abs(r.empirical_variance - r.closed_form_variance) / r.closed_form_variance
                                  : std::abs(r.empirical_variance);
  return r;
}

SoftmaxVarianceResult check_softmax_variance(const McConfig& cfg, const Vector& feature) {
  cfg.validate();
  SoftmaxVarianceResult r;
  const double norm_sq = feature.squaredNorm();
  r.logit_variance = cfg.sigma_w * cfg.sigma_w * norm_sq;
  const double c2 = static_cast<double>(cfg.num_classes) * cfg.num_classes;
  r.predicted = std::expm1(r.logit_variance) / c2;
  r.predicted_std_reading = std::expm1(r.logit_variance * r.logit_variance) / c2;
  std::mt19937_64 rng(derive_seed(cfg.seed, {23}));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sd = std::sqrt(r.logit_variance);
  Vector z(cfg.num_classes), p(cfg.num_classes);
  double mean = 0.0, m2 = 0.0;
  for (std::size_t t = 0; t < cfg.trials; ++t) {
    for (Eigen::Index c = 0; c < z.size(); ++c) z(c) = sd * normal(rng);
    softmax_into(z, p);
    const double delta = p(0) - mean;
    mean += delta / static_cast<double>(t + 1);
    m2 += delta * (p(0) - mean);
  }
  r.empirical_variance = cfg.trials > 1 ? m2 / static_cast<double>(cfg.trials - 1) : 0.0;
  if (r.predicted > 0.0) {
    r.relative_error = std::abs(r.empirical_variance - r.predicted) / r.predicted;
  } else {
    r.relative_error = r.empirical_variance == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  }
  return r;
}

DegenerationResult check_gradient_degeneration(const McConfig& cfg, const Matrix& features, std::span<const int> labels) {
  cfg.validate();
  const Matrix y = one_hot(labels, cfg.num_classes);
  const Matrix flow = analytic_flow(features, labels, cfg.num_classes);
  std::mt19937_64 rng(derive_seed(cfg.seed, {24}));
  Matrix mean_grad = Matrix::Zero(cfg.num_classes, features.cols());
  for (std::size_t t = 0; t < cfg.trials; ++t) {
    const LinearHead head = LinearHead::sample(cfg.num_classes, static_cast<std::size_t>(features.cols()), cfg.sigma_w,
                                               HeadMode::kRandom, rng);
    mean_grad += ce_linear_gradient(features, y, head.weight);
  }
  mean_grad /= static_cast<double>(cfg.trials);
  DegenerationResult r;
  r.per_class_cosine = rowwise_cosine(mean_grad, flow);
  r.mean_cosine = r.per_class_cosine.mean();
  r.max_cosine_error = (1.0 - r.per_class_cosine.array()).maxCoeff();
  return r;
}

Vector layernormed_feature(std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, {25}));
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = normal(rng);
  v.array() -= v.mean();
  v /= std::sqrt(v.squaredNorm() / static_cast<double>(dim));
  return v;
}

std::vector<McCheck> run_theory_suite(const McConfig& cfg) {
  cfg.validate();
  std::vector<McCheck> checks;
  const Vector feature = layernormed_feature(cfg.feature_dim, cfg.seed);

  const auto ex = check_exchangeability(cfg, feature);
  checks.push_back({"exchangeability_max_dev_se", ex.max_deviation_in_se, ex.standard_errors.maxCoeff(), 3.0,
                    ex.max_deviation_in_se < 3.0});

  for (double sigma : {0.1, 0.5}) {
    const auto ln = check_lognormal(0.0, sigma, 100 * cfg.trials, cfg.seed);
    const std::string tag = "lognormal_sigma_" + format_fixed(sigma, 1);
    checks.push_back({tag + "_mean_rel_err", ln.mean_relative_error, 0.0, 0.02, ln.mean_relative_error < 0.02});
    checks.push_back({tag + "_var_rel_err", ln.variance_relative_error, 0.0, 0.02, ln.variance_relative_error < 0.02});
  }

  McConfig var_cfg = cfg;
  var_cfg.trials = 10 * cfg.trials;
  const auto sv = check_softmax_variance(var_cfg, feature);
  checks.push_back({"softmax_variance_rel_err", sv.relative_error, 0.0, 0.20, sv.relative_error < 0.20});

  McConfig deg_cfg = cfg;
  deg_cfg.num_classes = 10;
  deg_cfg.feature_dim = 32;
  deg_cfg.trials = 1000;
  Matrix features(40, 32);
  std::vector<int> labels;
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    features.row(i) = layernormed_feature(32, cfg.seed + 1000 + static_cast<std::uint64_t>(i)).transpose();
    labels.push_back(static_cast<int>(i % 10));
  }
  const auto dg = check_gradient_degeneration(deg_cfg, features, labels);
  checks.push_back({"gradient_degeneration_mean_cos", dg.mean_cosine, 0.0, 0.999, dg.mean_cosine > 0.999});
  return checks;
}

std::string theory_csv(const std::vector<McCheck>& checks) {
  std::string out = "check,statistic,standard_error,threshold,passed\n";
  for (const auto& c : checks) {
    out += c.name + "," + format_double(c.statistic) + "," + format_double(c.standard_error) + "," +
           format_double(c.threshold) + "," + (c.passed ? "true" : "false") + "\n";
  }
  return out;
}

std::string theory_table(const std::vector<McCheck>& checks) {
  std::string out;
  for (const auto& c : checks) {
    std::string name = c.name;
    name.resize(std::max<std::size_t>(name.size(), 36), ' ');
    out += (c.passed ? "PASS  " : "FAIL  ") + name + "  stat=" + format_double(c.statistic) +
           "  se=" + format_double(c.standard_error) + "  threshold=" + format_double(c.threshold) + "\n";
  }
  return out;
}

}  // namespace sfm
