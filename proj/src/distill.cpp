#include "sfm/distill.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "json.hpp"

#include "sfm/data.hpp"
#include "sfm/io.hpp"
#include "sfm/optim.hpp"
#include "sfm/rng.hpp"

namespace sfm {

namespace {

enum Stream : std::uint64_t { kInitStream = 1, kHeadStream = 2, kRealStream = 3, kAugStream = 4 };

}  // namespace

std::string to_string(DistillMethod method) {
  switch (method) {
    case DistillMethod::kSfm: return "sfm";
    case DistillMethod::kTcdd: return "tcdd";
    case DistillMethod::kNcdd: return "ncdd";
    case DistillMethod::kLgm: return "lgm";
  }
  return "?";
}

DistillMethod parse_distill_method(const std::string& text) {
  if (text == "sfm") return DistillMethod::kSfm;
  if (text == "tcdd") return DistillMethod::kTcdd;
  if (text == "ncdd") return DistillMethod::kNcdd;
  if (text == "lgm") return DistillMethod::kLgm;
  throw ValidationError("unknown distillation method '" + text + "' (sfm|tcdd|ncdd|lgm)");
}

std::string to_string(HeadMode mode) {
  switch (mode) {
    case HeadMode::kRandom: return "random";
    case HeadMode::kFixed: return "fixed";
    case HeadMode::kAnalytic: return "analytic";
  }
  return "?";
}

HeadMode parse_head_mode(const std::string& text) {
  if (text == "random") return HeadMode::kRandom;
  if (text == "fixed") return HeadMode::kFixed;
  if (text == "analytic") return HeadMode::kAnalytic;
  throw ValidationError("unknown W mode '" + text + "' (random|fixed|analytic)");
}

std::string to_string(Aggregation aggregation) {
  return aggregation == Aggregation::kFlatten ? "flatten" : "per_class_mean";
}

Aggregation parse_aggregation(const std::string& text) {
  if (text == "flatten") return Aggregation::kFlatten;
  if (text == "per_class_mean") return Aggregation::kPerClassMean;
  throw ValidationError("unknown aggregation '" + text + "' (flatten|per_class_mean)");
}

void DistillConfig::validate() const {
  if (augmentations_per_batch < 1) throw ValidationError("augmentations_per_batch must be >= 1");
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  if (method == DistillMethod::kLgm && real_batch_per_class < 1) {
    throw ValidationError("real_batch_per_class must be >= 1");
  }
  if (head_sigma < 0.0) throw ValidationError("head_sigma must be >= 0");
  if (init_std < 0.0) throw ValidationError("init_std must be >= 0");
  augment.validate();
}

LabeledImages SyntheticDataset::composed() const {
  LabeledImages out;
  out.images = compose_all(pyramids);
  out.labels = labels;
  out.num_classes = num_classes;
  return out;
}

std::uint64_t SyntheticDataset::content_fingerprint() const {
  Fingerprint fp;
  fp.add(std::uint64_t(num_classes));
  for (std::size_t i = 0; i < pyramids.size(); ++i) {
    fp.add(std::uint64_t(labels[i]));
    for (const auto& level : pyramids[i].levels()) {
      fp.add(std::uint64_t{level.resolution}).add(std::span<const double>(level.values));
    }
  }
  return fp.value();
}

void SyntheticDataset::validate() const {
  if (pyramids.size() != labels.size() || static_cast<int>(labels.size()) != num_classes) {
    throw ValidationError("synthetic dataset must hold exactly one image per class");
  }
  std::vector<bool> seen(static_cast<std::size_t>(num_classes), false);
  for (int y : labels) {
    if (y < 0 || y >= num_classes || seen[static_cast<std::size_t>(y)]) {
      throw ValidationError("synthetic labels must cover [0, C) bijectively");
    }
    seen[static_cast<std::size_t>(y)] = true;
  }
}

SyntheticDataset initialize_synthetic(const DistillConfig& config, int num_classes, ImageShape shape) {
  if (shape.height != shape.width) throw ShapeError("synthetic images must be square");
  const std::size_t target = shape.height;
  const std::size_t base = config.base_resolution > 0 ? config.base_resolution : std::max<std::size_t>(1, target / 4);
  SyntheticDataset data;
  data.num_classes = num_classes;
  data.method = config.method;
  std::mt19937_64 rng(derive_seed(config.seed, {kInitStream}));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int c = 0; c < num_classes; ++c) {
    PyramidImage p(shape.channels, base, target);
    for (double& v : p.levels().front().values) v = config.init_std * normal(rng);
    data.pyramids.push_back(std::move(p));
    data.labels.push_back(c);
  }
  return data;
}

namespace {

// Loss over the encoded synthetic batch (pass-major rows, labels 0..C-1 per pass).
using MatchFn = std::function<MatchResult(std::size_t step, std::span<const AugmentTransform> transforms,
                                          const Matrix& features, std::span<const int> labels)>;

SyntheticDataset run_distillation(const DistillConfig& config, const Encoder& encoder, int num_classes,
                                  std::uint64_t config_fingerprint, const MatchFn& match) {
  config.validate();
  SyntheticDataset data = initialize_synthetic(config, num_classes, encoder.input_shape());
  data.config_fingerprint = config_fingerprint;
  data.encoder_fingerprint = encoder.checksum();
  Adam adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon);
  const std::size_t passes = config.augmentations_per_batch;
  const auto c_count = static_cast<std::size_t>(num_classes);

  std::vector<int> labels;
  for (std::size_t p = 0; p < passes; ++p) {
    for (int c = 0; c < num_classes; ++c) labels.push_back(c);
  }
  std::size_t max_levels = 1;
  for (std::size_t r = data.pyramids.front().base_resolution(); r < encoder.spec().input_resolution; r *= 2) ++max_levels;

  double best = std::numeric_limits<double>::infinity();
  std::size_t best_step = 0;
  for (std::size_t step = 0; step < config.iterations; ++step) {
    if (step > 0 && config.level_interval > 0 && step % config.level_interval == 0) {
      for (auto& p : data.pyramids) add_level(p);
    }
    const ImageBatch composed = compose_all(data.pyramids);
    std::vector<AugmentTransform> transforms;
    std::vector<AugmentTape> aug_tapes(passes);
    std::vector<EncoderTape> enc_tapes(passes);
    Matrix features(static_cast<Eigen::Index>(passes * c_count), static_cast<Eigen::Index>(encoder.feature_dim()));
    for (std::size_t p = 0; p < passes; ++p) {
      AugmentParams params = config.augment;
      params.seed = derive_seed(config.seed, {kAugStream, step, p});
      transforms.push_back(sample_transform(params, composed.shape()));
      const ImageBatch augmented = apply_transform(composed, transforms.back(), &aug_tapes[p]);
      features.middleRows(static_cast<Eigen::Index>(p * c_count), static_cast<Eigen::Index>(c_count)) =
          encoder.encode(augmented, &enc_tapes[p]);
    }
    MatchResult result = match(step, transforms, features, labels);
    if (!std::isfinite(result.loss)) {
      throw NumericError("non-finite loss at step " + std::to_string(step));
    }
    data.trace.push_back({step, result.loss, result.mean_cosine});

    ImageBatch grad_images(c_count, composed.shape());
    for (std::size_t p = 0; p < passes; ++p) {
      const Matrix g = result.grad_synthetic.middleRows(static_cast<Eigen::Index>(p * c_count),
                                                        static_cast<Eigen::Index>(c_count));
      const ImageBatch g_aug = transform_backward(aug_tapes[p], encoder.backward(enc_tapes[p], g));
      for (std::size_t k = 0; k < g_aug.data().size(); ++k) grad_images.data()[k] += g_aug.data()[k];
    }
    for (std::size_t i = 0; i < c_count; ++i) {
      auto level_grads = compose_backward(data.pyramids[i], composed.image(i), grad_images.image(i));
      auto& levels = data.pyramids[i].levels();
      for (std::size_t l = 0; l < levels.size(); ++l) {
        adam.step(i * max_levels + l, levels[l].values, level_grads[l]);
      }
    }

    if (config.plateau_window > 0) {
      if (result.loss < best * (1.0 - config.plateau_tolerance)) {
        best = result.loss;
        best_step = step;
      } else if (step - best_step >= config.plateau_window) {
        break;
      }
    }
  }
  return data;
}

void check_flow_rows(const Matrix& target, const char* what) {
  for (Eigen::Index c = 0; c < target.rows(); ++c) {
    if (target.row(c).squaredNorm() == 0.0) {
      throw NumericError(std::string(what) + " row for class " + std::to_string(c) +
                         " is zero; its cosine is undefined");
    }
  }
}

MatchResult match_target(const Matrix& target, const Matrix& synthetic, Aggregation aggregation) {
  auto cos = cosine_distance_with_grad(target, synthetic, aggregation);
  return {cos.distance, std::move(cos.grad_b), rowwise_cosine(target, synthetic).mean()};
}

}  // namespace

SyntheticDataset distill_sfm(const DistillConfig& config, const Encoder& encoder, const StatFlow& flow,
                             std::uint64_t config_fingerprint) {
  if (config.method != DistillMethod::kSfm) throw ValidationError("distill_sfm requires method = sfm");
  if (flow.encoder_fingerprint != encoder.checksum()) {
    throw ValidationError("statistical flow was built with encoder " + hex64(flow.encoder_fingerprint) +
                          ", refusing to distill with " + hex64(encoder.checksum()));
  }
  if (flow.flow.cols() != static_cast<Eigen::Index>(encoder.feature_dim())) {
    throw ShapeError("statistical flow width does not match the encoder");
  }
  check_flow_rows(flow.flow, "statistical flow");
  const int num_classes = static_cast<int>(flow.flow.rows());
  return run_distillation(config, encoder, num_classes, config_fingerprint,
                          [&](std::size_t, std::span<const AugmentTransform>, const Matrix& features,
                              std::span<const int> labels) {
                            const Matrix synthetic = analytic_flow(features, labels, num_classes);
                            MatchResult r = match_target(flow.flow, synthetic, config.aggregation);
                            r.grad_synthetic = analytic_flow_backward(labels, num_classes, r.grad_synthetic);
                            return r;
                          });
}

double sfm_objective(const Encoder& encoder, const Matrix& statistical_flow, const LabeledImages& images,
                     Aggregation aggregation) {
  const Matrix features = encoder.encode(resize_bilinear(images.images, encoder.spec().input_resolution));
  return cosine_distance(statistical_flow, analytic_flow(features, images.labels, images.num_classes), aggregation);
}

SyntheticDataset distill_ablation(const DistillConfig& config, const Encoder& encoder,
                                  const ClassStatistics& stats, std::uint64_t config_fingerprint) {
  if (config.method != DistillMethod::kTcdd && config.method != DistillMethod::kNcdd) {
    throw ValidationError("distill_ablation requires method = tcdd or ncdd");
  }
  if (stats.encoder_fingerprint != encoder.checksum()) {
    throw ValidationError("statistics were computed with a different encoder");
  }
  const bool target_part = config.method == DistillMethod::kTcdd;
  const Matrix target = target_part ? stats.class_centers() : nontarget_centers(stats);
  check_flow_rows(target, target_part ? "class center" : "non-target center");
  const int num_classes = stats.num_classes;
  return run_distillation(config, encoder, num_classes, config_fingerprint,
                          [&](std::size_t, std::span<const AugmentTransform>, const Matrix& features,
                              std::span<const int> labels) {
                            if (target_part) {
                              MatchResult r = match_target(target, class_means(features, labels, num_classes),
                                                           config.aggregation);
                              r.grad_synthetic = class_means_backward(labels, num_classes, r.grad_synthetic);
                              return r;
                            }
                            MatchResult r = match_target(target, nontarget_means(features, labels, num_classes),
                                                         config.aggregation);
                            r.grad_synthetic = nontarget_means_backward(labels, num_classes, r.grad_synthetic);
                            return r;
                          });
}

MatchResult lgm_match(const Matrix& real_features, std::span<const int> real_labels,
                      const Matrix& synthetic_features, std::span<const int> synthetic_labels,
                      int num_classes, const LinearHead& head, Aggregation aggregation) {
  if (head.mode == HeadMode::kAnalytic) {
    const Matrix real = analytic_flow(real_features, real_labels, num_classes);
    const Matrix syn = analytic_flow(synthetic_features, synthetic_labels, num_classes);
    MatchResult r = match_target(real, syn, aggregation);
    r.grad_synthetic = analytic_flow_backward(synthetic_labels, num_classes, r.grad_synthetic);
    return r;
  }
  const Matrix y_real = one_hot(real_labels, num_classes);
  const Matrix y_syn = one_hot(synthetic_labels, num_classes);
  const Matrix real = ce_linear_gradient(real_features, y_real, head.weight);
  const Matrix syn = ce_linear_gradient(synthetic_features, y_syn, head.weight);
  MatchResult r = match_target(real, syn, aggregation);
  r.grad_synthetic = ce_linear_gradient_backward(synthetic_features, y_syn, head.weight, r.grad_synthetic);
  return r;
}

SyntheticDataset distill_lgm(const DistillConfig& config, const Encoder& encoder, const LabeledImages& real_data,
                             std::uint64_t config_fingerprint) {
  if (config.method != DistillMethod::kLgm) throw ValidationError("distill_lgm requires method = lgm");
  real_data.validate();
  const int num_classes = real_data.num_classes;
  const ImageBatch real_images = resize_bilinear(real_data.images, encoder.spec().input_resolution);
  if (real_images.shape() != encoder.input_shape()) throw ShapeError("real images do not match the encoder input");

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < real_data.size(); ++i) by_class[static_cast<std::size_t>(real_data.labels[i])].push_back(i);
  for (int c = 0; c < num_classes; ++c) {
    if (by_class[static_cast<std::size_t>(c)].empty()) {
      throw ValidationError("class " + std::to_string(c) + " has no real images");
    }
  }
  std::mt19937_64 real_rng(derive_seed(config.seed, {kRealStream}));
  std::mt19937_64 head_rng(derive_seed(config.seed, {kHeadStream}));
  // Per-class shuffled queues, reshuffled on exhaustion.
  std::vector<std::vector<std::size_t>> queues(by_class.size());
  std::vector<std::size_t> cursor(by_class.size(), 0);
  auto draw = [&](std::size_t c) {
    auto& pool = by_class[c];
    if (config.real_batch_per_class >= pool.size()) return pool;
    std::vector<std::size_t> picked;
    while (picked.size() < config.real_batch_per_class) {
      if (cursor[c] == queues[c].size()) {
        queues[c] = pool;
        std::shuffle(queues[c].begin(), queues[c].end(), real_rng);
        cursor[c] = 0;
      }
      picked.push_back(queues[c][cursor[c]++]);
    }
    return picked;
  };

  const std::size_t feature_dim = encoder.feature_dim();
  LinearHead head = LinearHead::sample(num_classes, feature_dim, config.head_sigma, config.lgm_w_mode, head_rng);
  return run_distillation(
      config, encoder, num_classes, config_fingerprint,
      [&](std::size_t step, std::span<const AugmentTransform> transforms, const Matrix& features,
          std::span<const int> labels) {
        std::vector<std::size_t> idx;
        std::vector<int> batch_labels;
        for (std::size_t c = 0; c < by_class.size(); ++c) {
          for (auto i : draw(c)) {
            idx.push_back(i);
            batch_labels.push_back(static_cast<int>(c));
          }
        }
        const ImageBatch batch = real_images.select(idx);
        Matrix real(static_cast<Eigen::Index>(transforms.size() * idx.size()), static_cast<Eigen::Index>(feature_dim));
        std::vector<int> real_labels;
        for (std::size_t p = 0; p < transforms.size(); ++p) {
          real.middleRows(static_cast<Eigen::Index>(p * idx.size()), static_cast<Eigen::Index>(idx.size())) =
              encoder.encode(apply_transform(batch, transforms[p]));
          real_labels.insert(real_labels.end(), batch_labels.begin(), batch_labels.end());
        }
        if (config.lgm_w_mode == HeadMode::kRandom && step > 0) {
          head = LinearHead::sample(num_classes, feature_dim, config.head_sigma, HeadMode::kRandom, head_rng);
        }
        return lgm_match(real, real_labels, features, labels, num_classes, head, config.aggregation);
      });
}

std::string loss_trace_csv(const std::vector<LossRecord>& trace) {
  std::string out = "step,loss,mean_cosine\n";
  for (const auto& r : trace) {
    out += std::to_string(r.step) + "," + format_double(r.loss) + "," + format_double(r.mean_cosine) + "\n";
  }
  return out;
}

void save_synthetic(const SyntheticDataset& data, const std::filesystem::path& dir, const std::string& config_json) {
  data.validate();
  namespace fs = std::filesystem;
  fs::path tmp = dir;
  tmp += ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  TensorFile tensors;
  nlohmann::json levels = nlohmann::json::array();
  for (std::size_t i = 0; i < data.pyramids.size(); ++i) {
    const auto& p = data.pyramids[i];
    nlohmann::json res = nlohmann::json::array();
    for (std::size_t l = 0; l < p.levels().size(); ++l) {
      const auto& level = p.levels()[l];
      res.push_back(level.resolution);
      tensors.tensors["pyramid" + std::to_string(i) + ".level" + std::to_string(l)] =
          Tensor{DType::kFloat64, {p.channels(), level.resolution, level.resolution}, level.values};
    }
    levels.push_back({{"channels", p.channels()},
                      {"base_resolution", p.base_resolution()},
                      {"target_resolution", p.target_resolution()},
                      {"levels", res}});
  }
  tensors.header_json = nlohmann::json{{"format", "sfm-pyramids"}, {"pyramids", levels}}.dump();
  save_tensor_file(tmp / "pyramids.sfmt", tensors);

  nlohmann::json meta = {{"format", "sfm-synthetic"},
                         {"tool_version", kToolVersion},
                         {"num_classes", data.num_classes},
                         {"labels", data.labels},
                         {"method", to_string(data.method)},
                         {"config_fingerprint", hex64(data.config_fingerprint)},
                         {"encoder_fingerprint", hex64(data.encoder_fingerprint)},
                         {"content_fingerprint", hex64(data.content_fingerprint())},
                         {"config", nlohmann::json::parse(config_json)}};
  write_file_atomic(tmp / "metadata.json", meta.dump(2) + "\n");
  write_file_atomic(tmp / "loss_trace.csv", loss_trace_csv(data.trace));
  for (std::size_t i = 0; i < data.pyramids.size(); ++i) {
    const auto img = compose(data.pyramids[i]);
    const auto shape = data.pyramids[i].output_shape();
    if (shape.channels == 1 || shape.channels == 3) {
      write_png(tmp / ("class_" + std::to_string(data.labels[i]) + ".png"), img, shape);
    }
  }
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

SyntheticDataset load_synthetic(const std::filesystem::path& dir) {
  const auto meta_path = dir / "metadata.json";
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(meta_path));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(meta_path.string() + ": malformed metadata: " + e.what());
  }
  if (meta.value("format", "") != "sfm-synthetic") throw ValidationError(meta_path.string() + ": not a synthetic dataset");
  const TensorFile tensors = load_tensor_file(dir / "pyramids.sfmt");
  const auto header = nlohmann::json::parse(tensors.header_json);
  SyntheticDataset data;
  try {
    data.num_classes = meta.at("num_classes").get<int>();
    data.labels = meta.at("labels").get<std::vector<int>>();
    data.method = parse_distill_method(meta.at("method").get<std::string>());
    data.config_fingerprint = parse_hex64(meta.at("config_fingerprint").get<std::string>());
    data.encoder_fingerprint = parse_hex64(meta.at("encoder_fingerprint").get<std::string>());
    const auto& pyramids = header.at("pyramids");
    for (std::size_t i = 0; i < pyramids.size(); ++i) {
      const auto& spec = pyramids[i];
      PyramidImage p(spec.at("channels").get<std::size_t>(), spec.at("base_resolution").get<std::size_t>(),
                     spec.at("target_resolution").get<std::size_t>());
      const auto res = spec.at("levels").get<std::vector<std::size_t>>();
      p.levels().clear();
      for (std::size_t l = 0; l < res.size(); ++l) {
        const Tensor& t = tensors.at("pyramid" + std::to_string(i) + ".level" + std::to_string(l));
        if (t.numel() != p.channels() * res[l] * res[l]) throw ValidationError("pyramid level size mismatch");
        p.levels().push_back({res[l], t.values});
      }
      data.pyramids.push_back(std::move(p));
    }
    if (parse_hex64(meta.at("content_fingerprint").get<std::string>()) != data.content_fingerprint()) {
      throw ValidationError(dir.string() + ": pyramid tensors do not match the recorded content fingerprint");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(meta_path.string() + ": " + e.what());
  }
  data.validate();
  return data;
}

}  // namespace sfm
