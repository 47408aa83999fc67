#include "sfm/flows.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace sfm {

LinearHead LinearHead::sample(int num_classes, std::size_t feature_dim, double sigma, HeadMode mode,
                              std::mt19937_64& rng) {
  LinearHead head;
  head.init_sigma = sigma;
  head.mode = mode;
  head.weight = Matrix::Zero(num_classes, static_cast<Eigen::Index>(feature_dim));
  if (mode == HeadMode::kAnalytic || sigma == 0.0) return head;
  std::normal_distribution<double> normal(0.0, sigma);
  for (Eigen::Index i = 0; i < head.weight.size(); ++i) head.weight.data()[i] = normal(rng);
  return head;
}

Matrix softmax_probs(const Matrix& logits) {
  if (!logits.allFinite()) throw NumericError("softmax_probs: non-finite logits");
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

namespace {

void check_gradient_shapes(const Matrix& features, const Matrix& y, const Matrix& w) {
  if (features.rows() < 1) throw ShapeError("ce_linear_gradient: empty batch");
  if (y.rows() != features.rows() || w.rows() != y.cols() || w.cols() != features.cols()) {
    throw ShapeError("ce_linear_gradient: features " + std::to_string(features.rows()) + "x" +
                     std::to_string(features.cols()) + ", labels " + std::to_string(y.rows()) +
                     "x" + std::to_string(y.cols()) + ", weight " + std::to_string(w.rows()) +
                     "x" + std::to_string(w.cols()));
  }
}

std::vector<double> class_counts(std::span<const int> labels, int num_classes) {
  std::vector<double> counts(static_cast<std::size_t>(num_classes), 0.0);
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw ValidationError("label out of range");
    counts[static_cast<std::size_t>(y)] += 1.0;
  }
  return counts;
}

// Mixing matrix M (C x B) such that analytic_flow = M * features.
Matrix flow_mixing(std::span<const int> labels, int num_classes) {
  const auto counts = class_counts(labels, num_classes);
  const double total = static_cast<double>(labels.size());
  Matrix m = Matrix::Zero(num_classes, static_cast<Eigen::Index>(labels.size()));
  for (int c = 0; c < num_classes; ++c) {
    const double in = counts[static_cast<std::size_t>(c)];
    if (in == 0.0) throw ValidationError("analytic_flow: class " + std::to_string(c) + " absent from batch");
    if (in == total) throw ValidationError("analytic_flow: class " + std::to_string(c) + " covers the whole batch");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      m(c, static_cast<Eigen::Index>(i)) = labels[i] == c ? -1.0 / in : 1.0 / (total - in);
    }
  }
  return m;
}

Matrix mean_mixing(std::span<const int> labels, int num_classes, bool nontarget) {
  const auto counts = class_counts(labels, num_classes);
  const double total = static_cast<double>(labels.size());
  Matrix m = Matrix::Zero(num_classes, static_cast<Eigen::Index>(labels.size()));
  for (int c = 0; c < num_classes; ++c) {
    const double n = nontarget ? total - counts[static_cast<std::size_t>(c)] : counts[static_cast<std::size_t>(c)];
    if (n == 0.0) {
      throw ValidationError(std::string(nontarget ? "non-target" : "target") + " mean of class " +
                            std::to_string(c) + " has no members");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if ((labels[i] == c) != nontarget) m(c, static_cast<Eigen::Index>(i)) = 1.0 / n;
    }
  }
  return m;
}

}  // namespace

Matrix ce_linear_gradient(const Matrix& features, const Matrix& one_hot_labels, const Matrix& weight) {
  check_gradient_shapes(features, one_hot_labels, weight);
  const Matrix p = softmax_probs(features * weight.transpose());
  return (p - one_hot_labels).transpose() * features / static_cast<double>(features.rows());
}

Matrix ce_linear_gradient_backward(const Matrix& features, const Matrix& one_hot_labels,
                                   const Matrix& weight, const Matrix& grad_output) {
  check_gradient_shapes(features, one_hot_labels, weight);
  const double inv_b = 1.0 / static_cast<double>(features.rows());
  const Matrix p = softmax_probs(features * weight.transpose());
  // Direct term: G depends linearly on phi_i with coefficient (p_i - y_i).
  Matrix grad = (p - one_hot_labels) * grad_output * inv_b;
  // Softmax term: dL/dp_i = Gbar phi_i / B, pulled back through the softmax Jacobian and W.
  const Matrix dp = features * grad_output.transpose() * inv_b;  // B x C
  Matrix dz(p.rows(), p.cols());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double inner = p.row(i).dot(dp.row(i));
    dz.row(i) = p.row(i).array() * (dp.row(i).array() - inner);
  }
  grad += dz * weight;
  return grad;
}

Matrix analytic_flow(const Matrix& features, std::span<const int> labels, int num_classes) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) throw ShapeError("analytic_flow: label count mismatch");
  return flow_mixing(labels, num_classes) * features;
}

Matrix analytic_flow_backward(std::span<const int> labels, int num_classes, const Matrix& grad_output) {
  return flow_mixing(labels, num_classes).transpose() * grad_output;
}

Matrix class_means(const Matrix& features, std::span<const int> labels, int num_classes) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) throw ShapeError("class_means: label count mismatch");
  return mean_mixing(labels, num_classes, false) * features;
}

Matrix class_means_backward(std::span<const int> labels, int num_classes, const Matrix& grad_output) {
  return mean_mixing(labels, num_classes, false).transpose() * grad_output;
}

Matrix nontarget_means(const Matrix& features, std::span<const int> labels, int num_classes) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) throw ShapeError("nontarget_means: label count mismatch");
  return mean_mixing(labels, num_classes, true) * features;
}

Matrix nontarget_means_backward(std::span<const int> labels, int num_classes, const Matrix& grad_output) {
  return mean_mixing(labels, num_classes, true).transpose() * grad_output;
}

namespace {

// 1 - cos(a, b) and its gradient w.r.t. b for one aggregation unit.
double unit_cosine(const double* a, const double* b, std::size_t n, double* grad_b, double scale) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    ab += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  if (aa == 0.0 || bb == 0.0) throw NumericError("cosine distance undefined for a zero vector");
  const double na = std::sqrt(aa), nb = std::sqrt(bb);
  const double cos = std::clamp(ab / (na * nb), -1.0, 1.0);
  if (grad_b) {
    for (std::size_t k = 0; k < n; ++k) {
      grad_b[k] = -scale * (a[k] / (na * nb) - ab * b[k] / (na * nb * bb));
    }
  }
  return 1.0 - cos;
}

CosineResult cosine_impl(const Matrix& a, const Matrix& b, Aggregation aggregation, bool want_grad) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("cosine_distance: shape mismatch");
  CosineResult result;
  if (want_grad) result.grad_b.resize(b.rows(), b.cols());
  if (aggregation == Aggregation::kFlatten) {
    result.distance = unit_cosine(a.data(), b.data(), static_cast<std::size_t>(a.size()),
                                  want_grad ? result.grad_b.data() : nullptr, 1.0);
    return result;
  }
  const double scale = 1.0 / static_cast<double>(a.rows());
  double total = 0.0;
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    try {
      total += unit_cosine(a.row(r).data(), b.row(r).data(), static_cast<std::size_t>(a.cols()),
                           want_grad ? result.grad_b.row(r).data() : nullptr, scale);
    } catch (const NumericError&) {
      throw NumericError("cosine distance undefined: row " + std::to_string(r) + " is zero");
    }
  }
  result.distance = total * scale;
  return result;
}

}  // namespace

double cosine_distance(const Matrix& a, const Matrix& b, Aggregation aggregation) {
  return cosine_impl(a, b, aggregation, false).distance;
}

CosineResult cosine_distance_with_grad(const Matrix& a, const Matrix& b, Aggregation aggregation) {
  return cosine_impl(a, b, aggregation, true);
}

Vector rowwise_cosine(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("rowwise_cosine: shape mismatch");
  Vector out(a.rows());
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    const double denom = a.row(r).norm() * b.row(r).norm();
    out(r) = denom > 0.0 ? a.row(r).dot(b.row(r)) / denom : 0.0;
  }
  return out;
}

double mean_cross_entropy(const Matrix& logits, const Matrix& one_hot_labels) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    total += lse * one_hot_labels.row(i).sum() - logits.row(i).dot(one_hot_labels.row(i));
  }
  return total / static_cast<double>(logits.rows());
}

}  // namespace sfm
