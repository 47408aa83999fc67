#pragma once

#include <cstdint>
#include <filesystem>

#include "sfm/core.hpp"

namespace sfm {

// Procedural 10-class, 32x32 RGB dataset used for desk-scale runs. Each class
// pairs a texture family with a hue; per-image phase, frequency, position,
// palette jitter, and pixel noise make single exemplars unrepresentative.
struct ToyDataConfig {
  int num_classes = 10;
  std::size_t per_class = 200;
  std::size_t resolution = 32;
  double noise_std = 0.08;
  double hue_confusion = 0.35;  // probability that the foreground hue is random
  std::uint64_t seed = 0;
};

LabeledImages make_toy_dataset(const ToyDataConfig& config);

// Gaussian-blob features for identity encoders: F x 1 x 1 "images" in [0,1].
LabeledImages make_feature_dataset(int num_classes, std::size_t per_class, std::size_t feature_dim,
                                   double spread, std::uint64_t seed);

// Deterministic bilinear resize (half-pixel centers) of every image to res x res.
ImageBatch resize_bilinear(const ImageBatch& images, std::size_t res);

// Tensor container with "images" (N x C x H x W, f32) and "labels" (N, f64)
// plus num_classes in the header.
void save_dataset(const LabeledImages& data, const std::filesystem::path& path);
LabeledImages load_dataset(const std::filesystem::path& path);

std::uint64_t dataset_fingerprint(const LabeledImages& data);

}  // namespace sfm
