#include "sfm/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "json.hpp"

#include "sfm/io.hpp"

namespace sfm {

namespace {

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// Foreground mask in [0,1] for texture family `family` at normalized coords u,v in [-1,1].
double texture(int family, double u, double v, double freq, double phase, double cx, double cy) {
  constexpr double pi = std::numbers::pi;
  const double du = u - cx, dv = v - cy;
  auto wave = [](double t) { return 0.5 + 0.5 * std::sin(t); };
  switch (family % 10) {
    case 0: return wave(freq * pi * v + phase);                      // horizontal stripes
    case 1: return wave(freq * pi * u + phase);                      // vertical stripes
    case 2: return wave(freq * pi * (u + v) * 0.7071 + phase);       // diagonal
    case 3: return wave(freq * pi * (u - v) * 0.7071 + phase);       // anti-diagonal
    case 4: return wave(freq * pi * u + phase) * wave(freq * pi * v + phase) > 0.25 ? 1.0 : 0.0;
    case 5: return wave(freq * pi * std::hypot(du, dv) * 1.5 + phase);  // rings
    case 6: return std::exp(-(du * du + dv * dv) / 0.18);             // blob
    case 7: return (std::abs(du) < 0.22 || std::abs(dv) < 0.22) ? 1.0 : 0.0;  // cross
    case 8: return std::clamp(0.5 + 0.5 * (du * std::cos(phase) + dv * std::sin(phase)), 0.0, 1.0);
    default: {  // dot grid
      const double a = wave(freq * pi * u + phase), b = wave(freq * pi * v + phase);
      return a * b > 0.6 ? 1.0 : 0.0;
    }
  }
}

}  // namespace

LabeledImages make_toy_dataset(const ToyDataConfig& config) {
  if (config.num_classes < 2 || config.per_class == 0 || config.resolution < 8) {
    throw ValidationError("toy dataset needs >= 2 classes, >= 1 image per class, resolution >= 8");
  }
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = config.per_class * static_cast<std::size_t>(config.num_classes);
  const std::size_t r = config.resolution;
  LabeledImages data;
  data.num_classes = config.num_classes;
  data.images = ImageBatch(n, {3, r, r});
  data.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Interleaved labels so any prefix is roughly balanced.
    const int label = static_cast<int>(i % static_cast<std::size_t>(config.num_classes));
    data.labels[i] = label;
    const double class_hue = static_cast<double>(label) / config.num_classes;
    const double fg_hue =
        unif(rng) < config.hue_confusion ? unif(rng) : class_hue + 0.04 * normal(rng);
    const double bg_hue = unif(rng);
    const auto fg = hsv_to_rgb(fg_hue, 0.55 + 0.4 * unif(rng), 0.6 + 0.4 * unif(rng));
    const auto bg = hsv_to_rgb(bg_hue, 0.2 + 0.4 * unif(rng), 0.2 + 0.5 * unif(rng));
    const double freq = 2.0 + 1.5 * unif(rng);
    const double phase = 2.0 * std::numbers::pi * unif(rng);
    const double cx = 0.35 * (2.0 * unif(rng) - 1.0), cy = 0.35 * (2.0 * unif(rng) - 1.0);
    const double strength = 0.6 + 0.4 * unif(rng);
    for (std::size_t y = 0; y < r; ++y) {
      for (std::size_t x = 0; x < r; ++x) {
        const double u = 2.0 * (static_cast<double>(x) + 0.5) / static_cast<double>(r) - 1.0;
        const double v = 2.0 * (static_cast<double>(y) + 0.5) / static_cast<double>(r) - 1.0;
        const double m = strength * texture(label, u, v, freq, phase, cx, cy);
        for (std::size_t c = 0; c < 3; ++c) {
          const double pixel = m * fg[c] + (1.0 - m) * bg[c] + config.noise_std * normal(rng);
          data.images.at(i, c, y, x) = std::clamp(pixel, 0.0, 1.0);
        }
      }
    }
  }
  return data;
}

LabeledImages make_feature_dataset(int num_classes, std::size_t per_class, std::size_t feature_dim,
                                   double spread, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.2, 0.8);
  std::normal_distribution<double> normal(0.0, spread);
  LabeledImages data;
  data.num_classes = num_classes;
  const std::size_t n = per_class * static_cast<std::size_t>(num_classes);
  data.images = ImageBatch(n, {feature_dim, 1, 1});
  data.labels.resize(n);
  std::vector<std::vector<double>> centers(static_cast<std::size_t>(num_classes));
  for (auto& c : centers) {
    for (std::size_t f = 0; f < feature_dim; ++f) c.push_back(unif(rng));
  }
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % static_cast<std::size_t>(num_classes));
    data.labels[i] = label;
    for (std::size_t f = 0; f < feature_dim; ++f) {
      data.images.image(i)[f] =
          std::clamp(centers[static_cast<std::size_t>(label)][f] + normal(rng), 0.0, 1.0);
    }
  }
  return data;
}

ImageBatch resize_bilinear(const ImageBatch& images, std::size_t res) {
  const auto& s = images.shape();
  if (s.height == res && s.width == res) return images;
  ImageBatch out(images.size(), {s.channels, res, res});
  auto axis = [](std::size_t src, std::size_t dst, std::size_t o) {
    double pos = (static_cast<double>(o) + 0.5) * static_cast<double>(src) / static_cast<double>(dst) - 0.5;
    pos = std::clamp(pos, 0.0, static_cast<double>(src - 1));
    const auto i0 = static_cast<std::size_t>(pos);
    const std::size_t i1 = std::min(i0 + 1, src - 1);
    return std::tuple{i0, i1, pos - static_cast<double>(i0)};
  };
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (std::size_t c = 0; c < s.channels; ++c) {
      for (std::size_t y = 0; y < res; ++y) {
        const auto [y0, y1, wy] = axis(s.height, res, y);
        for (std::size_t x = 0; x < res; ++x) {
          const auto [x0, x1, wx] = axis(s.width, res, x);
          const double top = (1 - wx) * images.at(i, c, y0, x0) + wx * images.at(i, c, y0, x1);
          const double bot = (1 - wx) * images.at(i, c, y1, x0) + wx * images.at(i, c, y1, x1);
          out.at(i, c, y, x) = (1 - wy) * top + wy * bot;
        }
      }
    }
  }
  return out;
}

void save_dataset(const LabeledImages& data, const std::filesystem::path& path) {
  data.validate();
  const auto& s = data.images.shape();
  TensorFile file;
  file.header_json = nlohmann::json{{"format", "sfm-dataset"}, {"num_classes", data.num_classes}}.dump();
  file.tensors["images"] = Tensor{DType::kFloat32, {data.size(), s.channels, s.height, s.width},
                                  data.images.data()};
  Tensor labels{DType::kFloat64, {data.size()}, {}};
  for (int y : data.labels) labels.values.push_back(y);
  file.tensors["labels"] = std::move(labels);
  save_tensor_file(path, file);
}

LabeledImages load_dataset(const std::filesystem::path& path) {
  const TensorFile file = load_tensor_file(path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(file.header_json);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": malformed dataset header");
  }
  if (header.value("format", "") != "sfm-dataset") throw ValidationError(path.string() + ": not a dataset file");
  const Tensor& images = file.at("images");
  const Tensor& labels = file.at("labels");
  if (images.dims.size() != 4 || labels.dims.size() != 1 || labels.dims[0] != images.dims[0]) {
    throw ValidationError(path.string() + ": dataset tensors have inconsistent shapes");
  }
  LabeledImages data;
  data.num_classes = header.at("num_classes").get<int>();
  data.images = ImageBatch(images.dims[0], {images.dims[1], images.dims[2], images.dims[3]});
  data.images.data() = images.values;
  for (double y : labels.values) data.labels.push_back(static_cast<int>(y));
  data.validate();
  return data;
}

std::uint64_t dataset_fingerprint(const LabeledImages& data) {
  Fingerprint fp;
  fp.add(std::uint64_t(data.num_classes)).add(std::span<const double>(data.images.data()));
  for (int y : data.labels) fp.add(std::uint64_t(y));
  return fp.value();
}

}  // namespace sfm
