#include "sfm/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>

namespace sfm {

namespace {

struct AxisTap {
  std::size_t i0, i1;
  double w;  // weight of i1
};

// Half-pixel-center bilinear taps from src to dst samples.
std::vector<AxisTap> axis_taps(std::size_t src, std::size_t dst) {
  std::vector<AxisTap> taps(dst);
  for (std::size_t o = 0; o < dst; ++o) {
    double pos = (static_cast<double>(o) + 0.5) * static_cast<double>(src) / static_cast<double>(dst) - 0.5;
    pos = std::clamp(pos, 0.0, static_cast<double>(src - 1));
    const auto i0 = static_cast<std::size_t>(pos);
    taps[o] = {i0, std::min(i0 + 1, src - 1), pos - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

PyramidImage::PyramidImage(std::size_t channels, std::size_t base_resolution,
                           std::size_t target_resolution)
    : channels_(channels), base_resolution_(base_resolution), target_resolution_(target_resolution) {
  if (channels == 0 || base_resolution == 0 || base_resolution > target_resolution) {
    throw ValidationError("pyramid needs channels > 0 and 0 < base_resolution <= target_resolution");
  }
  levels_.push_back({base_resolution, std::vector<double>(channels * base_resolution * base_resolution, 0.0)});
}

std::size_t PyramidImage::parameter_count() const {
  std::size_t n = 0;
  for (const auto& level : levels_) n += level.values.size();
  return n;
}

double pixel_map(double raw) { return 1.0 / (1.0 + std::exp(-raw)); }

std::vector<double> compose(const PyramidImage& pyramid) {
  const std::size_t r = pyramid.target_resolution(), ch = pyramid.channels();
  std::vector<double> raw(ch * r * r, 0.0);
  for (const auto& level : pyramid.levels()) {
    const std::size_t lr = level.resolution;
    if (level.values.size() != ch * lr * lr) throw ShapeError("pyramid level has wrong size");
    const auto taps = axis_taps(lr, r);
    for (std::size_t c = 0; c < ch; ++c) {
      const double* src = level.values.data() + c * lr * lr;
      double* dst = raw.data() + c * r * r;
      for (std::size_t y = 0; y < r; ++y) {
        const auto& ty = taps[y];
        for (std::size_t x = 0; x < r; ++x) {
          const auto& tx = taps[x];
          const double top = (1 - tx.w) * src[ty.i0 * lr + tx.i0] + tx.w * src[ty.i0 * lr + tx.i1];
          const double bot = (1 - tx.w) * src[ty.i1 * lr + tx.i0] + tx.w * src[ty.i1 * lr + tx.i1];
          dst[y * r + x] += (1 - ty.w) * top + ty.w * bot;
        }
      }
    }
  }
  for (double& v : raw) v = pixel_map(v);
  return raw;
}

std::vector<std::vector<double>> compose_backward(const PyramidImage& pyramid,
                                                  std::span<const double> composed,
                                                  std::span<const double> grad_output) {
  const std::size_t r = pyramid.target_resolution(), ch = pyramid.channels();
  if (composed.size() != ch * r * r || grad_output.size() != composed.size()) {
    throw ShapeError("compose_backward: buffers do not match the pyramid output");
  }
  std::vector<double> graw(composed.size());
  for (std::size_t k = 0; k < graw.size(); ++k) graw[k] = grad_output[k] * composed[k] * (1.0 - composed[k]);
  std::vector<std::vector<double>> grads;
  for (const auto& level : pyramid.levels()) {
    const std::size_t lr = level.resolution;
    std::vector<double> g(ch * lr * lr, 0.0);
    const auto taps = axis_taps(lr, r);
    for (std::size_t c = 0; c < ch; ++c) {
      const double* src = graw.data() + c * r * r;
      double* dst = g.data() + c * lr * lr;
      for (std::size_t y = 0; y < r; ++y) {
        const auto& ty = taps[y];
        for (std::size_t x = 0; x < r; ++x) {
          const auto& tx = taps[x];
          const double v = src[y * r + x];
          dst[ty.i0 * lr + tx.i0] += (1 - ty.w) * (1 - tx.w) * v;
          dst[ty.i0 * lr + tx.i1] += (1 - ty.w) * tx.w * v;
          dst[ty.i1 * lr + tx.i0] += ty.w * (1 - tx.w) * v;
          dst[ty.i1 * lr + tx.i1] += ty.w * tx.w * v;
        }
      }
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

ImageBatch compose_all(std::span<const PyramidImage> pyramids) {
  if (pyramids.empty()) return {};
  ImageBatch out(pyramids.size(), pyramids.front().output_shape());
  for (std::size_t i = 0; i < pyramids.size(); ++i) {
    if (pyramids[i].output_shape() != out.shape()) throw ShapeError("pyramids have different output shapes");
    const auto img = compose(pyramids[i]);
    std::copy(img.begin(), img.end(), out.image(i).begin());
  }
  return out;
}

bool add_level(PyramidImage& pyramid) {
  if (!pyramid.can_grow()) return false;
  const std::size_t res = std::min(pyramid.top_resolution() * 2, pyramid.target_resolution());
  pyramid.levels().push_back({res, std::vector<double>(pyramid.channels() * res * res, 0.0)});
  return true;
}

void AugmentParams::validate() const {
  auto check = [](double v, double hi, const char* name) {
    if (!(v >= 0.0 && v <= hi)) {
      throw ValidationError(std::string("augmentation magnitude ") + name + " = " + std::to_string(v) +
                            " outside [0, " + std::to_string(hi) + "]");
    }
  };
  check(brightness_mag, 1.0, "brightness");
  check(saturation_mag, 1.0, "saturation");
  check(contrast_mag, 1.0, "contrast");
  check(translate_mag, 0.5, "translate");
  check(cutout_mag, 1.0, "cutout");
}

AugmentParams AugmentParams::none() {
  AugmentParams p;
  p.brightness = p.saturation = p.contrast = p.translate_crop = p.cutout = p.flip = false;
  p.brightness_mag = p.saturation_mag = p.contrast_mag = p.translate_mag = p.cutout_mag = 0.0;
  return p;
}

AugmentTransform sample_transform(const AugmentParams& params, ImageShape shape) {
  params.validate();
  std::mt19937_64 rng(params.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  // Draw every variate unconditionally so toggling one op does not shift the others.
  const double u_b = unif(rng), u_s = unif(rng), u_c = unif(rng), u_f = unif(rng);
  const double u_tx = unif(rng), u_ty = unif(rng), u_cx = unif(rng), u_cy = unif(rng);
  AugmentTransform t;
  const double res = static_cast<double>(std::min(shape.height, shape.width));
  if (params.brightness) t.brightness_delta = params.brightness_mag * (u_b - 0.5);
  if (params.saturation) t.saturation_factor = 1.0 + params.saturation_mag * (2.0 * u_s - 1.0);
  if (params.contrast) t.contrast_factor = 1.0 + params.contrast_mag * (2.0 * u_c - 1.0);
  if (params.flip) t.flip = u_f < 0.5;
  if (params.translate_crop) {
    const double max_shift = params.translate_mag * res;
    t.shift_x = std::lround(max_shift * (2.0 * u_tx - 1.0));
    t.shift_y = std::lround(max_shift * (2.0 * u_ty - 1.0));
  }
  if (params.cutout) {
    t.cutout_size = std::lround(params.cutout_mag * res);
    const double span_x = static_cast<double>(shape.width) - static_cast<double>(t.cutout_size);
    const double span_y = static_cast<double>(shape.height) - static_cast<double>(t.cutout_size);
    t.cutout_x = std::lround(std::max(span_x, 0.0) * u_cx);
    t.cutout_y = std::lround(std::max(span_y, 0.0) * u_cy);
  }
  return t;
}

namespace {

// Affine part of the transform applied in place to one CHW image.
void forward_affine(std::span<double> img, ImageShape s, const AugmentTransform& t) {
  const std::size_t plane = s.height * s.width;
  if (t.brightness_delta != 0.0) {
    for (double& v : img) v += t.brightness_delta;
  }
  if (t.saturation_factor != 1.0) {
    for (std::size_t p = 0; p < plane; ++p) {
      double mean = 0.0;
      for (std::size_t c = 0; c < s.channels; ++c) mean += img[c * plane + p];
      mean /= static_cast<double>(s.channels);
      for (std::size_t c = 0; c < s.channels; ++c) {
        img[c * plane + p] = mean + t.saturation_factor * (img[c * plane + p] - mean);
      }
    }
  }
  if (t.contrast_factor != 1.0) {
    double mean = 0.0;
    for (double v : img) mean += v;
    mean /= static_cast<double>(img.size());
    for (double& v : img) v = mean + t.contrast_factor * (v - mean);
  }
  if (t.flip) {
    for (std::size_t c = 0; c < s.channels; ++c) {
      for (std::size_t y = 0; y < s.height; ++y) {
        auto row = img.subspan(c * plane + y * s.width, s.width);
        std::reverse(row.begin(), row.end());
      }
    }
  }
  if (t.shift_x != 0 || t.shift_y != 0) {
    std::vector<double> src(img.begin(), img.end());
    for (std::size_t c = 0; c < s.channels; ++c) {
      for (std::size_t y = 0; y < s.height; ++y) {
        for (std::size_t x = 0; x < s.width; ++x) {
          const long sy = static_cast<long>(y) - t.shift_y, sx = static_cast<long>(x) - t.shift_x;
          const bool inside = sy >= 0 && sy < static_cast<long>(s.height) && sx >= 0 && sx < static_cast<long>(s.width);
          img[c * plane + y * s.width + x] =
              inside ? src[c * plane + static_cast<std::size_t>(sy) * s.width + static_cast<std::size_t>(sx)] : 0.0;
        }
      }
    }
  }
  if (t.cutout_size > 0) {
    for (std::size_t c = 0; c < s.channels; ++c) {
      for (long y = t.cutout_y; y < std::min<long>(t.cutout_y + t.cutout_size, static_cast<long>(s.height)); ++y) {
        for (long x = t.cutout_x; x < std::min<long>(t.cutout_x + t.cutout_size, static_cast<long>(s.width)); ++x) {
          img[c * plane + static_cast<std::size_t>(y) * s.width + static_cast<std::size_t>(x)] = 0.0;
        }
      }
    }
  }
}

// Adjoint of forward_affine, applied in place.
void backward_affine(std::span<double> g, ImageShape s, const AugmentTransform& t) {
  const std::size_t plane = s.height * s.width;
  if (t.cutout_size > 0) {
    for (std::size_t c = 0; c < s.channels; ++c) {
      for (long y = t.cutout_y; y < std::min<long>(t.cutout_y + t.cutout_size, static_cast<long>(s.height)); ++y) {
        for (long x = t.cutout_x; x < std::min<long>(t.cutout_x + t.cutout_size, static_cast<long>(s.width)); ++x) {
          g[c * plane + static_cast<std::size_t>(y) * s.width + static_cast<std::size_t>(x)] = 0.0;
        }
      }
    }
  }
  if (t.shift_x != 0 || t.shift_y != 0) {
    std::vector<double> src(g.begin(), g.end());
    std::fill(g.begin(), g.end(), 0.0);
    for (std::size_t c = 0; c < s.channels; ++c) {
      for (std::size_t y = 0; y < s.height; ++y) {
        for (std::size_t x = 0; x < s.width; ++x) {
          const long sy = static_cast<long>(y) - t.shift_y, sx = static_cast<long>(x) - t.shift_x;
          if (sy >= 0 && sy < static_cast<long>(s.height) && sx >= 0 && sx < static_cast<long>(s.width)) {
            g[c * plane + static_cast<std::size_t>(sy) * s.width + static_cast<std::size_t>(sx)] +=
                src[c * plane + y * s.width + x];
          }
        }
      }
    }
  }
  if (t.flip) {
    for (std::size_t c = 0; c < s.channels; ++c) {
      for (std::size_t y = 0; y < s.height; ++y) {
        auto row = g.subspan(c * plane + y * s.width, s.width);
        std::reverse(row.begin(), row.end());
      }
    }
  }
  if (t.contrast_factor != 1.0) {
    double mean = 0.0;
    for (double v : g) mean += v;
    mean /= static_cast<double>(g.size());
    for (double& v : g) v = t.contrast_factor * v + (1.0 - t.contrast_factor) * mean;
  }
  if (t.saturation_factor != 1.0) {
    for (std::size_t p = 0; p < plane; ++p) {
      double mean = 0.0;
      for (std::size_t c = 0; c < s.channels; ++c) mean += g[c * plane + p];
      mean /= static_cast<double>(s.channels);
      for (std::size_t c = 0; c < s.channels; ++c) {
        g[c * plane + p] = t.saturation_factor * g[c * plane + p] + (1.0 - t.saturation_factor) * mean;
      }
    }
  }
}

}  // namespace

ImageBatch apply_transform(const ImageBatch& images, const AugmentTransform& transform, AugmentTape* tape) {
  ImageBatch out = images;
  if (tape) {
    tape->transform = transform;
    tape->shape = images.shape();
    tape->pass_through.assign(out.data().size(), 1);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto img = out.image(i);
    forward_affine(img, out.shape(), transform);
    for (std::size_t k = 0; k < img.size(); ++k) {
      const double clamped = std::clamp(img[k], 0.0, 1.0);
      if (tape && clamped != img[k]) tape->pass_through[i * img.size() + k] = 0;
      img[k] = clamped;
    }
  }
  return out;
}

ImageBatch transform_backward(const AugmentTape& tape, const ImageBatch& grad_output) {
  if (grad_output.shape() != tape.shape || grad_output.data().size() != tape.pass_through.size()) {
    throw ShapeError("transform_backward: gradient does not match recorded batch");
  }
  ImageBatch grad = grad_output;
  for (std::size_t k = 0; k < grad.data().size(); ++k) {
    if (!tape.pass_through[k]) grad.data()[k] = 0.0;
  }
  for (std::size_t i = 0; i < grad.size(); ++i) backward_affine(grad.image(i), grad.shape(), tape.transform);
  return grad;
}

ImageBatch augment(const ImageBatch& images, const AugmentParams& params, AugmentTape* tape) {
  return apply_transform(images, sample_transform(params, images.shape()), tape);
}

}  // namespace sfm
