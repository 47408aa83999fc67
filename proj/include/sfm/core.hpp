#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace sfm {

// Row-major so that row i of a feature batch is contiguous (one sample).
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing or unreadable files.
class LoadError : public Error {
 public:
  using Error::Error;
};

// Inputs that violate a documented precondition or invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Undefined numeric quantities (zero-norm cosine, NaN logits, empty means).
class NumericError : public Error {
 public:
  using Error::Error;
};

struct ImageShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t numel() const { return channels * height * width; }
  bool operator==(const ImageShape&) const = default;
};

std::string to_string(const ImageShape& shape);

// Dense batch of images laid out N x C x H x W, pixels in [0,1] by convention.
class ImageBatch {
 public:
  ImageBatch() = default;
  ImageBatch(std::size_t count, ImageShape shape, double fill = 0.0)
      : count_(count), shape_(shape), data_(count * shape.numel(), fill) {}

  std::size_t size() const { return count_; }
  const ImageShape& shape() const { return shape_; }
  std::size_t image_numel() const { return shape_.numel(); }

  std::span<double> image(std::size_t i) {
    return {data_.data() + i * shape_.numel(), shape_.numel()};
  }
  std::span<const double> image(std::size_t i) const {
    return {data_.data() + i * shape_.numel(), shape_.numel()};
  }

  double& at(std::size_t i, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((i * shape_.channels + c) * shape_.height + y) * shape_.width + x];
  }
  double at(std::size_t i, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((i * shape_.channels + c) * shape_.height + y) * shape_.width + x];
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  // Copy of the selected images, in the given order.
  ImageBatch select(std::span<const std::size_t> indices) const;
  void append(const ImageBatch& other);

 private:
  std::size_t count_ = 0;
  ImageShape shape_{};
  std::vector<double> data_;
};

// Images with integer class labels in [0, num_classes).
struct LabeledImages {
  ImageBatch images;
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  LabeledImages select(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> class_counts() const;
  // Throws ValidationError for an inconsistent label vector or out-of-range label.
  void validate() const;
};

Matrix one_hot(std::span<const int> labels, int num_classes);

}  // namespace sfm
