#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "sfm/core.hpp"

namespace sfm {

struct PyramidLevel {
  std::size_t resolution = 0;
  std::vector<double> values;  // channels x resolution x resolution, raw (pre-squash) units
};

// One synthetic image as a sum of bilinearly upsampled levels passed through a
// logistic squash, so raw 0 maps to pixel 0.5 and every pixel stays in (0,1).
class PyramidImage {
 public:
  PyramidImage() = default;
  PyramidImage(std::size_t channels, std::size_t base_resolution, std::size_t target_resolution);

  std::size_t channels() const { return channels_; }
  std::size_t base_resolution() const { return base_resolution_; }
  std::size_t target_resolution() const { return target_resolution_; }
  ImageShape output_shape() const { return {channels_, target_resolution_, target_resolution_}; }

  const std::vector<PyramidLevel>& levels() const { return levels_; }
  std::vector<PyramidLevel>& levels() { return levels_; }
  std::size_t top_resolution() const { return levels_.back().resolution; }
  bool can_grow() const { return top_resolution() < target_resolution_; }
  std::size_t parameter_count() const;

 private:
  std::size_t channels_ = 0;
  std::size_t base_resolution_ = 0;
  std::size_t target_resolution_ = 0;
  std::vector<PyramidLevel> levels_;
};

double pixel_map(double raw);

// Composed image at target resolution, CHW.
std::vector<double> compose(const PyramidImage& pyramid);
// Gradient w.r.t. every level, given the composed output and dL/d(output).
std::vector<std::vector<double>> compose_backward(const PyramidImage& pyramid,
                                                  std::span<const double> composed,
                                                  std::span<const double> grad_output);
ImageBatch compose_all(std::span<const PyramidImage> pyramids);

// Appends a zero level at twice the current top resolution, capped at the
// target. Returns false (and changes nothing) when already at the target.
bool add_level(PyramidImage& pyramid);

// Differentiable augmentation family. Magnitudes: brightness adds
// mag*(u-0.5); saturation and contrast scale deviations by 1+mag*(2u-1);
// translate shifts by up to mag*resolution pixels with zero fill; cutout
// zeroes a square of side mag*resolution; flip mirrors horizontally with p=0.5.
struct AugmentParams {
  std::uint64_t seed = 0;
  bool brightness = true;
  bool saturation = true;
  bool contrast = true;
  bool translate_crop = true;
  bool cutout = true;
  bool flip = true;
  double brightness_mag = 1.0;
  double saturation_mag = 1.0;
  double contrast_mag = 0.5;
  double translate_mag = 0.125;
  double cutout_mag = 0.5;

  // Throws ValidationError when a magnitude is outside its documented bound.
  void validate() const;
  static AugmentParams none();
};

struct AugmentTransform {
  double brightness_delta = 0.0;
  double saturation_factor = 1.0;
  double contrast_factor = 1.0;
  bool flip = false;
  long shift_x = 0;
  long shift_y = 0;
  long cutout_size = 0;
  long cutout_x = 0;  // top-left corner
  long cutout_y = 0;
};

AugmentTransform sample_transform(const AugmentParams& params, ImageShape shape);

struct AugmentTape {
  AugmentTransform transform;
  ImageShape shape;
  std::vector<unsigned char> pass_through;  // 1 where the final clamp was inactive
};

// Applies one sampled transform to every image in the batch, then clamps to [0,1].
ImageBatch apply_transform(const ImageBatch& images, const AugmentTransform& transform,
                           AugmentTape* tape = nullptr);
ImageBatch transform_backward(const AugmentTape& tape, const ImageBatch& grad_output);

// Samples the transform from params.seed; the same seed gives the same output.
ImageBatch augment(const ImageBatch& images, const AugmentParams& params, AugmentTape* tape = nullptr);

}  // namespace sfm
