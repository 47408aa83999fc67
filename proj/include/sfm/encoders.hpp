#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sfm/core.hpp"

namespace sfm {

struct EncoderSpec {
  std::string name;
  std::size_t input_resolution = 32;
  std::size_t channels = 3;
  std::size_t feature_dim = 128;
  std::vector<double> norm_mean;  // per channel, applied to [0,1] pixels
  std::vector<double> norm_std;
  bool final_layernorm = true;  // affine-free

  ImageShape input_shape() const { return {channels, input_resolution, input_resolution}; }
  // Identity encoders take F x 1 x 1 "images" and are exempt from the resolution floor.
  bool is_identity() const;
  void validate() const;
};

// 3x3, stride 1, zero padding 1, followed by ReLU and an optional 2x2 average pool.
struct ConvLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  bool pool_after = false;
  Matrix weight;  // out x (in * 9), row layout (in, ky, kx)
  Vector bias;    // out
};

// Per-call activation record needed to backpropagate to the input pixels.
// Owned by the caller so a shared Encoder stays immutable.
struct EncoderTape {
  struct ImageRecord {
    std::vector<Matrix> relu_outputs;  // per conv layer, out x (H*W) before pooling
    Vector normalized;                 // layernorm output
    double inv_std = 1.0;
  };
  std::vector<ImageRecord> images;
};

inline constexpr double kLayerNormEpsilon = 1e-12;

class Encoder {
 public:
  Encoder(EncoderSpec spec, std::vector<ConvLayer> layers);

  const EncoderSpec& spec() const { return spec_; }
  const std::vector<ConvLayer>& layers() const { return layers_; }
  ImageShape input_shape() const { return spec_.input_shape(); }
  std::size_t feature_dim() const { return spec_.feature_dim; }

  // B x F features. Throws ShapeError on a resolution or channel mismatch.
  Matrix encode(const ImageBatch& images) const;
  Matrix encode(const ImageBatch& images, EncoderTape* tape) const;
  // Gradient of sum(grad_features .* features) w.r.t. the input pixels.
  ImageBatch backward(const EncoderTape& tape, const Matrix& grad_features) const;

  // Fingerprint over spec and parameters; identical for functionally identical encoders.
  std::uint64_t checksum() const { return checksum_; }
  // Recomputed from the current parameters; equals checksum() unless they were modified.
  std::uint64_t compute_checksum() const;
  std::size_t parameter_count() const;

 private:
  Vector encode_one(std::span<const double> pixels, EncoderTape::ImageRecord* record) const;

  EncoderSpec spec_;
  std::vector<ConvLayer> layers_;
  std::uint64_t checksum_ = 0;
};

// Builtins: "toy-conv-32" (F=128), "toy-conv-32-narrow" (F=64), "identity-<F>".
// Anything else is treated as a path to a weight file written by save_encoder.
Encoder load_encoder(const std::string& source, std::uint64_t seed);
std::vector<std::string> builtin_encoder_names();

// Weight file: tensor container whose header JSON carries the spec fields and
// per-layer pooling flags; tensors "conv<i>.weight" (out x in x 3 x 3) and
// "conv<i>.bias" in float32.
void save_encoder(const Encoder& encoder, const std::filesystem::path& path);
Encoder load_encoder_file(const std::filesystem::path& path);

}  // namespace sfm
