#include "sfm/encoders.hpp"

#include <cmath>
#include <random>

#include "json.hpp"

#include "sfm/io.hpp"

namespace sfm {

namespace {

using json = nlohmann::json;

// cols: (in*9) x (H*W). Row index = (c*3 + ky)*3 + kx.
void im2col(const Matrix& x, std::size_t h, std::size_t w, Matrix& cols) {
  const auto in = static_cast<std::size_t>(x.rows());
  cols.setZero(static_cast<Eigen::Index>(in * 9), static_cast<Eigen::Index>(h * w));
  for (std::size_t c = 0; c < in; ++c) {
    const double* plane = x.row(static_cast<Eigen::Index>(c)).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double* dst = cols.row(static_cast<Eigen::Index>((c * 3 + ky) * 3 + kx)).data();
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + ky - 1;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          for (std::size_t xx = 0; xx < w; ++xx) {
            const long sx = static_cast<long>(xx) + kx - 1;
            if (sx < 0 || sx >= static_cast<long>(w)) continue;
            dst[y * w + xx] = plane[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)];
          }
        }
      }
    }
  }
}

// Adjoint of im2col.
Matrix col2im(const Matrix& cols, std::size_t in, std::size_t h, std::size_t w) {
  Matrix x = Matrix::Zero(static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(h * w));
  for (std::size_t c = 0; c < in; ++c) {
    double* plane = x.row(static_cast<Eigen::Index>(c)).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const double* src = cols.row(static_cast<Eigen::Index>((c * 3 + ky) * 3 + kx)).data();
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + ky - 1;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          for (std::size_t xx = 0; xx < w; ++xx) {
            const long sx = static_cast<long>(xx) + kx - 1;
            if (sx < 0 || sx >= static_cast<long>(w)) continue;
            plane[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)] += src[y * w + xx];
          }
        }
      }
    }
  }
  return x;
}

Matrix avg_pool2(const Matrix& x, std::size_t h, std::size_t w) {
  const std::size_t oh = h / 2, ow = w / 2;
  Matrix out(x.rows(), static_cast<Eigen::Index>(oh * ow));
  for (Eigen::Index c = 0; c < x.rows(); ++c) {
    const double* src = x.row(c).data();
    double* dst = out.row(c).data();
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const std::size_t base = 2 * y * w + 2 * xx;
        dst[y * ow + xx] = 0.25 * (src[base] + src[base + 1] + src[base + w] + src[base + w + 1]);
      }
    }
  }
  return out;
}

Matrix avg_unpool2(const Matrix& g, std::size_t h, std::size_t w) {
  const std::size_t oh = h / 2, ow = w / 2;
  Matrix out = Matrix::Zero(g.rows(), static_cast<Eigen::Index>(h * w));
  for (Eigen::Index c = 0; c < g.rows(); ++c) {
    const double* src = g.row(c).data();
    double* dst = out.row(c).data();
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const double v = 0.25 * src[y * ow + xx];
        const std::size_t base = 2 * y * w + 2 * xx;
        dst[base] = dst[base + 1] = dst[base + w] = dst[base + w + 1] = v;
      }
    }
  }
  return out;
}

std::vector<ConvLayer> random_conv_stack(std::size_t in_channels,
                                         const std::vector<std::size_t>& widths,
                                         const std::vector<bool>& pools, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<ConvLayer> layers;
  std::size_t in = in_channels;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    ConvLayer layer;
    layer.in_channels = in;
    layer.out_channels = widths[l];
    layer.pool_after = pools[l];
    const double scale = std::sqrt(2.0 / static_cast<double>(in * 9));
    layer.weight.resize(static_cast<Eigen::Index>(widths[l]), static_cast<Eigen::Index>(in * 9));
    // Rounded through float32 so that save_encoder/load_encoder_file is lossless.
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
      layer.weight.data()[i] = static_cast<float>(scale * normal(rng));
    }
    layer.bias = Vector::Zero(static_cast<Eigen::Index>(widths[l]));
    layers.push_back(std::move(layer));
    in = widths[l];
  }
  return layers;
}

EncoderSpec toy_spec(std::string name, std::size_t feature_dim) {
  EncoderSpec spec;
  spec.name = std::move(name);
  spec.input_resolution = 32;
  spec.channels = 3;
  spec.feature_dim = feature_dim;
  spec.norm_mean = {0.5, 0.5, 0.5};
  spec.norm_std = {0.25, 0.25, 0.25};
  spec.final_layernorm = true;
  return spec;
}

}  // namespace

bool EncoderSpec::is_identity() const {
  return name.rfind("identity", 0) == 0 && input_resolution == 1;
}

void EncoderSpec::validate() const {
  if (feature_dim < 2) throw ValidationError("feature_dim must be >= 2");
  if (!is_identity() && input_resolution < 8) {
    throw ValidationError("input_resolution must be >= 8, got " + std::to_string(input_resolution));
  }
  if (channels == 0) throw ValidationError("channels must be positive");
  if (norm_mean.size() != channels || norm_std.size() != channels) {
    throw ValidationError("normalization needs one mean/std per channel");
  }
  for (double s : norm_std) {
    if (!(s > 0.0)) throw ValidationError("normalization std must be strictly positive");
  }
}

Encoder::Encoder(EncoderSpec spec, std::vector<ConvLayer> layers)
    : spec_(std::move(spec)), layers_(std::move(layers)) {
  spec_.validate();
  std::size_t in = spec_.channels;
  std::size_t res = spec_.input_resolution;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.in_channels != in ||
        layer.weight.rows() != static_cast<Eigen::Index>(layer.out_channels) ||
        layer.weight.cols() != static_cast<Eigen::Index>(in * 9) ||
        layer.bias.size() != static_cast<Eigen::Index>(layer.out_channels)) {
      throw ValidationError("conv layer " + std::to_string(l) + " has mismatched dimensions");
    }
    if (layer.pool_after) {
      if (res % 2 != 0) throw ValidationError("pooling an odd resolution");
      res /= 2;
    }
    in = layer.out_channels;
  }
  if (in != spec_.feature_dim) {
    throw ValidationError("encoder output width " + std::to_string(in) +
                          " does not match feature_dim " + std::to_string(spec_.feature_dim));
  }
  checksum_ = compute_checksum();
}

std::size_t Encoder::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

std::uint64_t Encoder::compute_checksum() const {
  Fingerprint fp;
  fp.add(spec_.name).add(std::uint64_t{spec_.input_resolution}).add(std::uint64_t{spec_.channels});
  fp.add(std::uint64_t{spec_.feature_dim}).add(std::span<const double>(spec_.norm_mean));
  fp.add(std::span<const double>(spec_.norm_std)).add(std::uint64_t{spec_.final_layernorm});
  for (const auto& l : layers_) {
    fp.add(std::uint64_t{l.pool_after}).add(l.weight);
    fp.add(std::span<const double>(l.bias.data(), static_cast<std::size_t>(l.bias.size())));
  }
  return fp.value();
}

Vector Encoder::encode_one(std::span<const double> pixels, EncoderTape::ImageRecord* record) const {
  std::size_t h = spec_.input_resolution, w = spec_.input_resolution;
  Matrix x(static_cast<Eigen::Index>(spec_.channels), static_cast<Eigen::Index>(h * w));
  for (std::size_t c = 0; c < spec_.channels; ++c) {
    const double mean = spec_.norm_mean[c], inv = 1.0 / spec_.norm_std[c];
    for (std::size_t p = 0; p < h * w; ++p) {
      x(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(p)) = (pixels[c * h * w + p] - mean) * inv;
    }
  }
  Matrix cols;
  for (const auto& layer : layers_) {
    im2col(x, h, w, cols);
    Matrix y = layer.weight * cols;
    y.colwise() += layer.bias;
    y = y.cwiseMax(0.0);
    if (layer.pool_after) {
      x = avg_pool2(y, h, w);
      h /= 2;
      w /= 2;
    } else {
      x = y;
    }
    if (record) record->relu_outputs.push_back(std::move(y));
  }
  Vector feature = x.rowwise().mean();
  if (spec_.final_layernorm) {
    const double mean = feature.mean();
    const double var = (feature.array() - mean).square().mean();
    const double inv_std = 1.0 / std::sqrt(var + kLayerNormEpsilon);
    feature = (feature.array() - mean) * inv_std;
    if (record) {
      record->normalized = feature;
      record->inv_std = inv_std;
    }
  }
  return feature;
}

Matrix Encoder::encode(const ImageBatch& images) const { return encode(images, nullptr); }

Matrix Encoder::encode(const ImageBatch& images, EncoderTape* tape) const {
  if (images.shape() != input_shape()) {
    throw ShapeError("encoder '" + spec_.name + "' expects " + to_string(input_shape()) +
                     " images, got " + to_string(images.shape()));
  }
  Matrix features(static_cast<Eigen::Index>(images.size()),
                  static_cast<Eigen::Index>(spec_.feature_dim));
  if (tape) tape->images.assign(images.size(), {});
  for (std::size_t i = 0; i < images.size(); ++i) {
    features.row(static_cast<Eigen::Index>(i)) =
        encode_one(images.image(i), tape ? &tape->images[i] : nullptr).transpose();
  }
  return features;
}

ImageBatch Encoder::backward(const EncoderTape& tape, const Matrix& grad_features) const {
  if (grad_features.rows() != static_cast<Eigen::Index>(tape.images.size()) ||
      grad_features.cols() != static_cast<Eigen::Index>(spec_.feature_dim)) {
    throw ShapeError("feature gradient does not match recorded batch");
  }
  ImageBatch grad(tape.images.size(), input_shape());
  for (std::size_t i = 0; i < tape.images.size(); ++i) {
    const auto& rec = tape.images[i];
    Vector g = grad_features.row(static_cast<Eigen::Index>(i)).transpose();
    if (spec_.final_layernorm) {
      const Vector& yhat = rec.normalized;
      const double n = static_cast<double>(g.size());
      const double mean_g = g.sum() / n;
      const double mean_gy = g.dot(yhat) / n;
      g = rec.inv_std * (g.array() - mean_g - yhat.array() * mean_gy).matrix();
    }
    // Spatial size after the conv stack.
    std::size_t h = spec_.input_resolution;
    for (const auto& layer : layers_) {
      if (layer.pool_after) h /= 2;
    }
    Matrix gx = (g / static_cast<double>(h * h)).replicate(1, static_cast<Eigen::Index>(h * h));
    for (std::size_t l = layers_.size(); l-- > 0;) {
      const auto& layer = layers_[l];
      if (layer.pool_after) {
        gx = avg_unpool2(gx, h * 2, h * 2);
        h *= 2;
      }
      gx = (rec.relu_outputs[l].array() > 0.0).select(gx, 0.0);
      Matrix gcols = layer.weight.transpose() * gx;
      gx = col2im(gcols, layer.in_channels, h, h);
    }
    auto out = grad.image(i);
    const std::size_t plane = h * h;
    for (std::size_t c = 0; c < spec_.channels; ++c) {
      const double inv = 1.0 / spec_.norm_std[c];
      for (std::size_t p = 0; p < plane; ++p) {
        out[c * plane + p] = gx(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(p)) * inv;
      }
    }
  }
  return grad;
}

std::vector<std::string> builtin_encoder_names() {
  return {"toy-conv-32", "toy-conv-32-narrow", "identity-<F>"};
}

Encoder load_encoder(const std::string& source, std::uint64_t seed) {
  if (source == "toy-conv-32") {
    return Encoder(toy_spec(source, 128), random_conv_stack(3, {16, 32, 128}, {true, true, false}, seed));
  }
  if (source == "toy-conv-32-narrow") {
    return Encoder(toy_spec(source, 64), random_conv_stack(3, {16, 32, 64}, {true, true, false}, seed));
  }
  if (source.rfind("identity-", 0) == 0) {
    std::size_t f = 0;
    try {
      f = std::stoul(source.substr(9));
    } catch (const std::exception&) {
      throw ValidationError("malformed identity encoder name '" + source + "'");
    }
    EncoderSpec spec;
    spec.name = source;
    spec.input_resolution = 1;
    spec.channels = f;
    spec.feature_dim = f;
    spec.norm_mean.assign(f, 0.0);
    spec.norm_std.assign(f, 1.0);
    spec.final_layernorm = false;
    return Encoder(std::move(spec), {});
  }
  return load_encoder_file(source);
}

void save_encoder(const Encoder& encoder, const std::filesystem::path& path) {
  const auto& spec = encoder.spec();
  json header = {{"format", "sfm-encoder"},
                 {"name", spec.name},
                 {"input_resolution", spec.input_resolution},
                 {"channels", spec.channels},
                 {"feature_dim", spec.feature_dim},
                 {"norm_mean", spec.norm_mean},
                 {"norm_std", spec.norm_std},
                 {"final_layernorm", spec.final_layernorm}};
  json pools = json::array();
  TensorFile file;
  for (std::size_t l = 0; l < encoder.layers().size(); ++l) {
    const auto& layer = encoder.layers()[l];
    pools.push_back(layer.pool_after);
    Tensor w{DType::kFloat32, {layer.out_channels, layer.in_channels, 3, 3}, {}};
    w.values.assign(layer.weight.data(), layer.weight.data() + layer.weight.size());
    Tensor b{DType::kFloat32, {layer.out_channels}, {}};
    b.values.assign(layer.bias.data(), layer.bias.data() + layer.bias.size());
    file.tensors["conv" + std::to_string(l) + ".weight"] = std::move(w);
    file.tensors["conv" + std::to_string(l) + ".bias"] = std::move(b);
  }
  header["pool_after"] = pools;
  file.header_json = header.dump();
  save_tensor_file(path, file);
}

Encoder load_encoder_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw LoadError("encoder '" + path.string() + "' is neither a builtin nor an existing file");
  }
  const TensorFile file = load_tensor_file(path);
  json header;
  try {
    header = json::parse(file.header_json);
    if (header.at("format") != "sfm-encoder") throw ValidationError("not an encoder weight file");
    EncoderSpec spec;
    spec.name = header.at("name").get<std::string>();
    spec.input_resolution = header.at("input_resolution").get<std::size_t>();
    spec.channels = header.at("channels").get<std::size_t>();
    spec.feature_dim = header.at("feature_dim").get<std::size_t>();
    spec.norm_mean = header.at("norm_mean").get<std::vector<double>>();
    spec.norm_std = header.at("norm_std").get<std::vector<double>>();
    spec.final_layernorm = header.at("final_layernorm").get<bool>();
    const auto pools = header.at("pool_after").get<std::vector<bool>>();
    std::vector<ConvLayer> layers;
    for (std::size_t l = 0; l < pools.size(); ++l) {
      const Tensor& w = file.at("conv" + std::to_string(l) + ".weight");
      const Tensor& b = file.at("conv" + std::to_string(l) + ".bias");
      if (w.dims.size() != 4 || w.dims[2] != 3 || w.dims[3] != 3 || b.dims.size() != 1 ||
          b.dims[0] != w.dims[0]) {
        throw ValidationError("conv" + std::to_string(l) + " tensors have unexpected shapes");
      }
      ConvLayer layer;
      layer.out_channels = w.dims[0];
      layer.in_channels = w.dims[1];
      layer.pool_after = pools[l];
      layer.weight = Eigen::Map<const Matrix>(w.values.data(), static_cast<Eigen::Index>(w.dims[0]),
                                              static_cast<Eigen::Index>(w.dims[1] * 9));
      layer.bias = Eigen::Map<const Vector>(b.values.data(), static_cast<Eigen::Index>(b.dims[0]));
      layers.push_back(std::move(layer));
    }
    if (file.tensors.size() != 2 * pools.size()) {
      throw ValidationError("weight file has tensors not described by its header");
    }
    return Encoder(std::move(spec), std::move(layers));
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": malformed encoder header: " + e.what());
  }
}

}  // namespace sfm
