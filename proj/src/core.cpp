#include "sfm/core.hpp"

#include <algorithm>

namespace sfm {

std::string to_string(const ImageShape& shape) {
  return std::to_string(shape.channels) + "x" + std::to_string(shape.height) + "x" +
         std::to_string(shape.width);
}

ImageBatch ImageBatch::select(std::span<const std::size_t> indices) const {
  ImageBatch out(indices.size(), shape_);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= count_) throw ShapeError("image index out of range");
    const auto src = image(indices[k]);
    std::copy(src.begin(), src.end(), out.image(k).begin());
  }
  return out;
}

void ImageBatch::append(const ImageBatch& other) {
  if (count_ == 0) {
    *this = other;
    return;
  }
  if (other.shape_ != shape_) {
    throw ShapeError("cannot append images of shape " + to_string(other.shape_) + " to " +
                     to_string(shape_));
  }
  data_.insert(data_.end(), other.data_.begin(), other.data_.end());
  count_ += other.count_;
}

LabeledImages LabeledImages::select(std::span<const std::size_t> indices) const {
  LabeledImages out;
  out.images = images.select(indices);
  out.num_classes = num_classes;
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(labels[i]);
  return out;
}

std::vector<std::size_t> LabeledImages::class_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
  for (int y : labels) {
    if (y >= 0 && y < num_classes) ++counts[static_cast<std::size_t>(y)];
  }
  return counts;
}

void LabeledImages::validate() const {
  if (labels.size() != images.size()) {
    throw ValidationError("label count " + std::to_string(labels.size()) +
                          " does not match image count " + std::to_string(images.size()));
  }
  if (num_classes < 1) throw ValidationError("num_classes must be positive");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw ValidationError("label " + std::to_string(labels[i]) + " at index " +
                            std::to_string(i) + " outside [0, " + std::to_string(num_classes) +
                            ")");
    }
  }
}

Matrix one_hot(std::span<const int> labels, int num_classes) {
  Matrix y = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) throw ValidationError("label out of range");
    y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return y;
}

}  // namespace sfm
