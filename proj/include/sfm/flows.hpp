#pragma once

#include <cstdint>
#include <random>
#include <span>

#include "sfm/core.hpp"

namespace sfm {

enum class HeadMode { kRandom, kFixed, kAnalytic };

// Bias-free linear classifier z = W phi used only to define matching gradients.
struct LinearHead {
  Matrix weight;  // C x F; unused in analytic mode
  double init_sigma = 0.01;
  HeadMode mode = HeadMode::kRandom;

  static LinearHead sample(int num_classes, std::size_t feature_dim, double sigma, HeadMode mode,
                           std::mt19937_64& rng);
};

enum class Aggregation { kFlatten, kPerClassMean };

// Row-wise softmax with max subtraction. Throws NumericError on non-finite logits.
Matrix softmax_probs(const Matrix& logits);

// (1/B) sum_i (p_i - y_i) phi_i^T with p_i = softmax(W phi_i). C x F.
Matrix ce_linear_gradient(const Matrix& features, const Matrix& one_hot_labels,
                          const Matrix& weight);

// Vector-Jacobian product of ce_linear_gradient w.r.t. the features, given
// dL/dG (C x F). Returns B x F.
Matrix ce_linear_gradient_backward(const Matrix& features, const Matrix& one_hot_labels,
                                   const Matrix& weight, const Matrix& grad_output);

// Row c = mean of features whose label is not c minus mean of features with label c.
// Throws ValidationError when a class is missing from the batch or covers all of it.
Matrix analytic_flow(const Matrix& features, std::span<const int> labels, int num_classes);
Matrix analytic_flow_backward(std::span<const int> labels, int num_classes,
                              const Matrix& grad_output);

// Per-class means (rows) of the features; tcdd target-center component.
Matrix class_means(const Matrix& features, std::span<const int> labels, int num_classes);
Matrix class_means_backward(std::span<const int> labels, int num_classes, const Matrix& grad_output);
// Per-class means of the other classes' features; ncdd non-target component.
Matrix nontarget_means(const Matrix& features, std::span<const int> labels, int num_classes);
Matrix nontarget_means_backward(std::span<const int> labels, int num_classes,
                                const Matrix& grad_output);

struct CosineResult {
  double distance = 0.0;
  Matrix grad_b;  // d distance / d b, same shape as b
};

// 1 - cos over the flattened matrices, or the mean over rows of (1 - cos).
// Result lies in [0,2]. Throws NumericError for a zero aggregation unit.
double cosine_distance(const Matrix& a, const Matrix& b, Aggregation aggregation = Aggregation::kFlatten);
CosineResult cosine_distance_with_grad(const Matrix& a, const Matrix& b,
                                       Aggregation aggregation = Aggregation::kFlatten);

// Cosine similarity of row c of a and b for every c.
Vector rowwise_cosine(const Matrix& a, const Matrix& b);

// Mean softmax cross entropy; used by the finite-difference oracles and the probes.
double mean_cross_entropy(const Matrix& logits, const Matrix& one_hot_labels);

}  // namespace sfm
