#include "sfm/evaluate.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "sfm/data.hpp"
#include "sfm/flows.hpp"
#include "sfm/io.hpp"
#include "sfm/optim.hpp"
#include "sfm/rng.hpp"

namespace sfm {

namespace {

enum Stream : std::uint64_t { kTrainAugStream = 11, kBaselineStream = 12 };

std::span<double> span_of(Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<double> span_of(Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
std::span<const double> cspan_of(const Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
std::span<const double> cspan_of(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

// Training view for iteration `it`: one shared augmentation over the batch.
ImageBatch training_view(const ImageBatch& images, const EvalConfig& config, std::size_t it) {
  if (!config.train_augmentation) return images;
  AugmentParams params = config.augment;
  params.seed = derive_seed(config.seed, {kTrainAugStream, it});
  return augment(images, params);
}

Matrix encode_at_resolution(const Encoder& encoder, const ImageBatch& images) {
  return encoder.encode(resize_bilinear(images, encoder.spec().input_resolution));
}

}  // namespace

double classification_loss_grad(const Matrix& logits, const Matrix& y, const Matrix* teacher_probs, double alpha,
                                Matrix& grad_logits) {
  const Matrix p = softmax_probs(logits);
  const double n = static_cast<double>(logits.rows());
  double loss = (1.0 - alpha) * mean_cross_entropy(logits, y);
  grad_logits = (1.0 - alpha) * (p - y) / n;
  if (alpha > 0.0) {
    const Matrix& t = *teacher_probs;
    if (t.rows() != p.rows() || t.cols() != p.cols()) throw ShapeError("teacher probabilities do not match logits");
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      Vector log_ratio(p.cols());
      for (Eigen::Index j = 0; j < p.cols(); ++j) {
        log_ratio(j) = std::log(std::max(p(i, j), 1e-300)) - std::log(std::max(t(i, j), 1e-300));
      }
      const double kl = p.row(i).dot(log_ratio.transpose());
      loss += alpha * kl / n;
      grad_logits.row(i) += alpha / n * (p.row(i).array() * (log_ratio.transpose().array() - kl)).matrix();
    }
  }
  return loss;
}

namespace {

Classifier zero_classifier(int num_classes, std::size_t dim) {
  Classifier c;
  c.weight = Matrix::Zero(num_classes, static_cast<Eigen::Index>(dim));
  c.bias = Vector::Zero(num_classes);
  c.provenance = Provenance::kProbe;
  return c;
}

// Trains `classifier` in place on features produced per iteration by `features_at`.
std::vector<double> fit_classifier(Classifier& classifier, const Matrix& y, std::size_t iterations, double lr,
                                   const std::function<Matrix(std::size_t)>& features_at,
                                   const std::function<Matrix(std::size_t)>* teacher_at, double alpha) {
  Adam adam(lr);
  std::vector<double> curve;
  Matrix grad_logits;
  for (std::size_t it = 0; it < iterations; ++it) {
    const Matrix f = features_at(it);
    Matrix teacher;
    if (alpha > 0.0) teacher = (*teacher_at)(it);
    const double loss = classification_loss_grad(classifier.logits(f), y, alpha > 0.0 ? &teacher : nullptr, alpha,
                                                 grad_logits);
    curve.push_back(loss);
    Matrix gw = grad_logits.transpose() * f;
    Vector gb = grad_logits.colwise().sum().transpose();
    adam.step(0, span_of(classifier.weight), cspan_of(gw));
    adam.step(1, span_of(classifier.bias), cspan_of(gb));
  }
  return curve;
}

double alignment_loss(const Matrix& distill_features, const Matrix& projected) {
  return (distill_features - projected).rowwise().squaredNorm().mean();
}

void check_labels(const LabeledImages& data) {
  data.validate();
  if (data.size() == 0) throw ValidationError("empty training set");
}

}  // namespace

Matrix Classifier::logits(const Matrix& features) const {
  if (features.cols() != weight.cols()) {
    throw ShapeError("classifier expects " + std::to_string(weight.cols()) + " features, got " +
                     std::to_string(features.cols()));
  }
  Matrix z = features * weight.transpose();
  z.rowwise() += bias.transpose();
  return z;
}

std::vector<int> Classifier::predict(const Matrix& features) const {
  const Matrix z = logits(features);
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index arg = 0;
    z.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

std::uint64_t Classifier::checksum() const {
  Fingerprint fp;
  fp.add(weight).add(cspan_of(bias)).add(std::uint64_t(provenance == Provenance::kGolden));
  return fp.value();
}

Projector Projector::identity(std::size_t eval_dim, std::size_t distill_dim) {
  Projector p;
  p.weight = Matrix::Identity(static_cast<Eigen::Index>(distill_dim), static_cast<Eigen::Index>(eval_dim));
  p.bias = Vector::Zero(static_cast<Eigen::Index>(distill_dim));
  return p;
}

Matrix Projector::apply(const Matrix& eval_features) const {
  if (eval_features.cols() != weight.cols()) throw ShapeError("projector input width mismatch");
  Matrix out = eval_features * weight.transpose();
  out.rowwise() += bias.transpose();
  return out;
}

std::string to_string(EvalStrategy strategy) {
  switch (strategy) {
    case EvalStrategy::kVanilla: return "vanilla";
    case EvalStrategy::kCi: return "ci";
    case EvalStrategy::kJt: return "jt";
    case EvalStrategy::kSt: return "st";
  }
  return "?";
}

EvalStrategy parse_eval_strategy(const std::string& text) {
  if (text == "vanilla") return EvalStrategy::kVanilla;
  if (text == "ci") return EvalStrategy::kCi;
  if (text == "jt") return EvalStrategy::kJt;
  if (text == "st") return EvalStrategy::kSt;
  throw ValidationError("unknown evaluation strategy '" + text + "' (vanilla|ci|jt|st)");
}

void EvalConfig::validate() const {
  if (iterations < 1) throw ValidationError("eval iterations must be >= 1");
  if (!(soft_label_alpha >= 0.0 && soft_label_alpha <= 1.0)) throw ValidationError("soft_label_alpha must lie in [0,1]");
  if (soft_label_alpha > 0.0 && strategy == EvalStrategy::kCi) {
    throw ValidationError("soft labels apply to vanilla, jt and st only");
  }
  if (!(probe_lr > 0.0) || !(projector_lr > 0.0) || !(golden_lr > 0.0)) {
    throw ValidationError("learning rates must be positive");
  }
  augment.validate();
}

const Matrix& ValidationSet::features(const Encoder& encoder) {
  auto it = cache_.find(encoder.checksum());
  if (it == cache_.end()) it = cache_.emplace(encoder.checksum(), encode_dataset(encoder, data_)).first;
  return it->second;
}

nlohmann::json EvalReport::to_json() const {
  return {{"name", name},
          {"strategy", strategy},
          {"inherit_initial_parameters", inherit_initial_parameters},
          {"soft_label_alpha", soft_label_alpha},
          {"iterations", iterations},
          {"distill_encoder", distill_encoder},
          {"eval_encoder", eval_encoder},
          {"seed", seed},
          {"accuracy", accuracy},
          {"final_classifier_loss", classifier_loss.empty() ? 0.0 : classifier_loss.back()},
          {"final_projector_loss", projector_loss.empty() ? 0.0 : projector_loss.back()},
          {"trained_parameters", trained_parameters},
          {"wall_clock_seconds", wall_clock_seconds},
          {"fingerprint", hex64(fingerprint())},
          {"tool_version", kToolVersion}};
}

std::uint64_t EvalReport::fingerprint() const {
  Fingerprint fp;
  fp.add(name).add(strategy).add(std::uint64_t{inherit_initial_parameters}).add(soft_label_alpha);
  fp.add(std::uint64_t{iterations}).add(distill_encoder).add(eval_encoder).add(seed).add(accuracy);
  fp.add(std::span<const double>(classifier_loss)).add(std::span<const double>(projector_loss));
  fp.add(std::uint64_t{trained_parameters});
  return fp.value();
}

Matrix encode_dataset(const Encoder& encoder, const LabeledImages& data, std::size_t batch_size) {
  Matrix out(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(encoder.feature_dim()));
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) =
        encode_at_resolution(encoder, data.images.select(idx));
  }
  return out;
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size() || labels.empty()) throw ShapeError("accuracy: size mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

Classifier train_golden_classifier(const Matrix& features, std::span<const int> labels, int num_classes,
                                   const EvalConfig& config) {
  if (features.rows() == 0) throw ValidationError("cannot train a golden classifier on an empty dataset");
  Classifier golden = zero_classifier(num_classes, static_cast<std::size_t>(features.cols()));
  const Matrix y = one_hot(labels, num_classes);
  const std::function<Matrix(std::size_t)> same = [&](std::size_t) { return features; };
  fit_classifier(golden, y, config.golden_iterations, config.golden_lr, same, nullptr, 0.0);
  golden.provenance = Provenance::kGolden;
  return golden;
}

Classifier train_golden_classifier(const Encoder& encoder_d, const LabeledImages& original, const EvalConfig& config) {
  if (original.size() == 0) throw ValidationError("cannot train a golden classifier on an empty dataset");
  check_labels(original);
  return train_golden_classifier(encode_dataset(encoder_d, original), original.labels, original.num_classes, config);
}

ProbeResult train_linear_probe(const LabeledImages& train, const Encoder& encoder_e, const EvalConfig& config,
                               ValidationSet& validation, const SoftLabelTeacher* teacher) {
  config.validate();
  check_labels(train);
  if (config.soft_label_alpha > 0.0 && !teacher) throw ValidationError("soft labels need a teacher (alpha > 0)");
  if (teacher && teacher->golden.provenance != Provenance::kGolden) {
    throw ValidationError("the soft-label teacher must be the golden classifier");
  }
  const auto start = std::chrono::steady_clock::now();
  const Matrix y = one_hot(train.labels, train.num_classes);
  Classifier probe = zero_classifier(train.num_classes, encoder_e.feature_dim());
  const std::function<Matrix(std::size_t)> features_at = [&](std::size_t it) {
    return encode_at_resolution(encoder_e, training_view(train.images, config, it));
  };
  const std::function<Matrix(std::size_t)> teacher_at = [&](std::size_t it) {
    const Matrix fd = encode_at_resolution(teacher->encoder_d, training_view(train.images, config, it));
    return softmax_probs(teacher->golden.logits(fd));
  };
  ProbeResult result;
  result.report.classifier_loss =
      fit_classifier(probe, y, config.iterations, config.probe_lr, features_at, &teacher_at, config.soft_label_alpha);
  result.report.name = "probe";
  result.report.strategy = "vanilla";
  result.report.soft_label_alpha = config.soft_label_alpha;
  result.report.iterations = config.iterations;
  result.report.distill_encoder = teacher ? teacher->encoder_d.spec().name : "";
  result.report.eval_encoder = encoder_e.spec().name;
  result.report.seed = config.seed;
  result.report.trained_parameters = static_cast<std::size_t>(probe.weight.size() + probe.bias.size());
  result.report.accuracy = accuracy(probe.predict(validation.features(encoder_e)), validation.data().labels);
  result.report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  result.classifier = std::move(probe);
  return result;
}

ProbeResult train_linear_probe(const SyntheticDataset& synthetic, const Encoder& encoder_e, const EvalConfig& config,
                               ValidationSet& validation, const SoftLabelTeacher* teacher) {
  return train_linear_probe(synthetic.composed(), encoder_e, config, validation, teacher);
}

ProjectorResult train_projector_ci(const LabeledImages& synthetic, const Encoder& encoder_e, const Encoder& encoder_d,
                                   const EvalConfig& config, std::optional<Projector> init) {
  config.validate();
  if (synthetic.size() == 0) throw ValidationError("projector training needs at least one image");
  ProjectorResult result;
  result.projector = init ? *init : Projector::identity(encoder_e.feature_dim(), encoder_d.feature_dim());
  Projector& p = result.projector;
  if (p.weight.rows() != static_cast<Eigen::Index>(encoder_d.feature_dim()) ||
      p.weight.cols() != static_cast<Eigen::Index>(encoder_e.feature_dim()) || p.bias.size() != p.weight.rows()) {
    throw ShapeError("projector must map " + std::to_string(encoder_e.feature_dim()) + " -> " +
                     std::to_string(encoder_d.feature_dim()));
  }
  Adam adam(config.projector_lr);
  const double n = static_cast<double>(synthetic.size());
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const ImageBatch view = training_view(synthetic.images, config, it);
    const Matrix fe = encode_at_resolution(encoder_e, view);
    const Matrix fd = encode_at_resolution(encoder_d, view);
    const Matrix h = p.apply(fe);
    result.loss_curve.push_back(alignment_loss(fd, h));
    const Matrix dh = 2.0 * (h - fd) / n;
    Matrix gw = dh.transpose() * fe;
    Vector gb = dh.colwise().sum().transpose();
    adam.step(0, span_of(p.weight), cspan_of(gw));
    adam.step(1, span_of(p.bias), cspan_of(gb));
  }
  const ImageBatch final_view = training_view(synthetic.images, config, config.iterations);
  result.final_loss = alignment_loss(encode_at_resolution(encoder_d, final_view),
                                     p.apply(encode_at_resolution(encoder_e, final_view)));
  result.initial_loss = result.loss_curve.empty() ? result.final_loss : result.loss_curve.front();
  return result;
}

std::vector<int> infer_inherited_features(const Matrix& eval_features, const Projector& projector,
                                          const Classifier& golden) {
  if (golden.provenance != Provenance::kGolden) {
    throw ValidationError("classifier inheritance requires a golden classifier, got a probe head");
  }
  return golden.predict(projector.apply(eval_features));
}

std::vector<int> infer_inherited(const ImageBatch& images, const Encoder& encoder_e, const Projector& projector,
                                 const Classifier& golden) {
  return infer_inherited_features(encode_at_resolution(encoder_e, images), projector, golden);
}

EvalReport evaluate_ci(const LabeledImages& synthetic, const Encoder& encoder_e, const Encoder& encoder_d,
                       const Classifier& golden, const EvalConfig& config, ValidationSet& validation,
                       Projector* trained) {
  if (golden.provenance != Provenance::kGolden) throw ValidationError("classifier inheritance requires a golden classifier");
  const auto start = std::chrono::steady_clock::now();
  ProjectorResult pr = train_projector_ci(synthetic, encoder_e, encoder_d, config);
  EvalReport report;
  report.name = "ci";
  report.strategy = "ci";
  report.iterations = config.iterations;
  report.distill_encoder = encoder_d.spec().name;
  report.eval_encoder = encoder_e.spec().name;
  report.seed = config.seed;
  report.projector_loss = pr.loss_curve;
  report.trained_parameters = pr.projector.parameter_count();
  report.accuracy = accuracy(infer_inherited_features(validation.features(encoder_e), pr.projector, golden),
                             validation.data().labels);
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (trained) *trained = std::move(pr.projector);
  return report;
}

EvalReport evaluate_strategy(const LabeledImages& synthetic, const Encoder& encoder_e, const Encoder& encoder_d,
                             const Classifier& golden, const EvalConfig& config, ValidationSet& validation,
                             const SoftLabelTeacher* teacher) {
  config.validate();
  check_labels(synthetic);
  if (config.strategy != EvalStrategy::kJt && config.strategy != EvalStrategy::kSt) {
    throw ValidationError("evaluate_strategy handles jt and st only");
  }
  if (golden.provenance != Provenance::kGolden) throw ValidationError("strategies inherit from a golden classifier");
  if (config.soft_label_alpha > 0.0 && !teacher) throw ValidationError("soft labels need a teacher (alpha > 0)");
  const auto start = std::chrono::steady_clock::now();
  const int num_classes = synthetic.num_classes;
  const Matrix y = one_hot(synthetic.labels, num_classes);
  Classifier classifier = config.inherit_initial_parameters ? golden : zero_classifier(num_classes, encoder_d.feature_dim());
  classifier.provenance = Provenance::kProbe;

  EvalReport report;
  report.name = to_string(config.strategy);
  report.strategy = to_string(config.strategy);
  report.inherit_initial_parameters = config.inherit_initial_parameters;
  report.soft_label_alpha = config.soft_label_alpha;
  report.iterations = config.iterations;
  report.distill_encoder = encoder_d.spec().name;
  report.eval_encoder = encoder_e.spec().name;
  report.seed = config.seed;

  const std::function<Matrix(std::size_t)> teacher_at = [&](std::size_t it) {
    const Matrix fd = encode_at_resolution(teacher->encoder_d, training_view(synthetic.images, config, it));
    return softmax_probs(teacher->golden.logits(fd));
  };

  Projector projector;
  if (config.strategy == EvalStrategy::kSt) {
    ProjectorResult pr = train_projector_ci(synthetic, encoder_e, encoder_d, config);
    report.projector_loss = pr.loss_curve;
    const Projector frozen = std::move(pr.projector);
    const std::function<Matrix(std::size_t)> features_at = [&](std::size_t it) {
      return frozen.apply(encode_at_resolution(encoder_e, training_view(synthetic.images, config, it)));
    };
    const std::size_t steps = config.st_classifier_iterations.value_or(config.iterations);
    report.classifier_loss =
        fit_classifier(classifier, y, steps, config.probe_lr, features_at, &teacher_at, config.soft_label_alpha);
    projector = frozen;
  } else {
    projector = Projector::identity(encoder_e.feature_dim(), encoder_d.feature_dim());
    Adam adam_p(config.projector_lr), adam_c(config.probe_lr);
    const double n = static_cast<double>(synthetic.size());
    Matrix grad_logits;
    for (std::size_t it = 0; it < config.iterations; ++it) {
      const ImageBatch view = training_view(synthetic.images, config, it);
      const Matrix fe = encode_at_resolution(encoder_e, view);
      const Matrix fd = encode_at_resolution(encoder_d, view);
      const Matrix h = projector.apply(fe);
      Matrix teacher_probs;
      if (config.soft_label_alpha > 0.0) teacher_probs = teacher_at(it);
      const double ce = classification_loss_grad(classifier.logits(h), y,
                                                 config.soft_label_alpha > 0.0 ? &teacher_probs : nullptr,
                                                 config.soft_label_alpha, grad_logits);
      const double align = alignment_loss(fd, h);
      report.classifier_loss.push_back(ce);
      report.projector_loss.push_back(align);
      Matrix gw = grad_logits.transpose() * h;
      Vector gb = grad_logits.colwise().sum().transpose();
      Matrix dh = grad_logits * classifier.weight + 2.0 * (h - fd) / n;
      Matrix gpw = dh.transpose() * fe;
      Vector gpb = dh.colwise().sum().transpose();
      adam_c.step(0, span_of(classifier.weight), cspan_of(gw));
      adam_c.step(1, span_of(classifier.bias), cspan_of(gb));
      adam_p.step(0, span_of(projector.weight), cspan_of(gpw));
      adam_p.step(1, span_of(projector.bias), cspan_of(gpb));
    }
  }
  report.trained_parameters = projector.parameter_count() + static_cast<std::size_t>(classifier.weight.size() + classifier.bias.size());
  report.accuracy = accuracy(classifier.predict(projector.apply(validation.features(encoder_e))), validation.data().labels);
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

EvalReport evaluate(const LabeledImages& synthetic, const Encoder& encoder_e, const Encoder& encoder_d,
                    const Classifier& golden, const EvalConfig& config, ValidationSet& validation) {
  const SoftLabelTeacher teacher{encoder_d, golden};
  switch (config.strategy) {
    case EvalStrategy::kVanilla: {
      auto result = train_linear_probe(synthetic, encoder_e, config, validation,
                                       config.soft_label_alpha > 0.0 ? &teacher : nullptr);
      result.report.distill_encoder = encoder_d.spec().name;
      return result.report;
    }
    case EvalStrategy::kCi: return evaluate_ci(synthetic, encoder_e, encoder_d, golden, config, validation);
    case EvalStrategy::kJt:
    case EvalStrategy::kSt:
      return evaluate_strategy(synthetic, encoder_e, encoder_d, golden, config, validation,
                               config.soft_label_alpha > 0.0 ? &teacher : nullptr);
  }
  throw ValidationError("unknown strategy");
}

std::string to_string(BaselineMethod method) {
  switch (method) {
    case BaselineMethod::kRandom: return "random";
    case BaselineMethod::kCentroids: return "centroids";
    case BaselineMethod::kNeighbors: return "neighbors";
  }
  return "?";
}

BaselineMethod parse_baseline_method(const std::string& text) {
  if (text == "random") return BaselineMethod::kRandom;
  if (text == "centroids") return BaselineMethod::kCentroids;
  if (text == "neighbors") return BaselineMethod::kNeighbors;
  throw ValidationError("unknown baseline '" + text + "' (random|centroids|neighbors)");
}

std::vector<std::size_t> select_baseline_indices(BaselineMethod method, const LabeledImages& original,
                                                 const Matrix& original_features, const Matrix* synthetic_features,
                                                 std::uint64_t seed) {
  original.validate();
  if (method == BaselineMethod::kNeighbors && !synthetic_features) {
    throw ValidationError("the neighbors baseline needs a synthetic dataset");
  }
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(original.num_classes));
  for (std::size_t i = 0; i < original.size(); ++i) by_class[static_cast<std::size_t>(original.labels[i])].push_back(i);
  std::mt19937_64 rng(derive_seed(seed, {kBaselineStream}));
  std::vector<std::size_t> picked;
  for (int c = 0; c < original.num_classes; ++c) {
    const auto& members = by_class[static_cast<std::size_t>(c)];
    if (members.empty()) throw ValidationError("class " + std::to_string(c) + " has no real images to select from");
    if (method == BaselineMethod::kRandom) {
      std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
      picked.push_back(members[pick(rng)]);
      continue;
    }
    Eigen::RowVectorXd anchor;
    if (method == BaselineMethod::kCentroids) {
      anchor = Eigen::RowVectorXd::Zero(original_features.cols());
      for (auto i : members) anchor += original_features.row(static_cast<Eigen::Index>(i));
      anchor /= static_cast<double>(members.size());
    } else {
      anchor = synthetic_features->row(c);
    }
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = members.front();
    for (auto i : members) {
      const double d = (original_features.row(static_cast<Eigen::Index>(i)) - anchor).squaredNorm();
      if (d < best) {
        best = d;
        arg = i;
      }
    }
    picked.push_back(arg);
  }
  return picked;
}

LabeledImages select_baseline(BaselineMethod method, const LabeledImages& original, const Encoder& encoder_d,
                              const SyntheticDataset* synthetic, std::uint64_t seed) {
  Matrix features;
  if (method != BaselineMethod::kRandom) features = encode_dataset(encoder_d, original);
  Matrix syn_features;
  if (synthetic) {
    // Rows ordered by class label.
    const LabeledImages composed = synthetic->composed();
    const Matrix f = encode_dataset(encoder_d, composed);
    syn_features.resize(f.rows(), f.cols());
    for (std::size_t i = 0; i < composed.size(); ++i) syn_features.row(composed.labels[i]) = f.row(static_cast<Eigen::Index>(i));
  }
  const auto idx = select_baseline_indices(method, original, features, synthetic ? &syn_features : nullptr, seed);
  return original.select(idx);
}

void save_feature_cache(const Matrix& features, std::span<const int> labels, std::uint64_t encoder_fingerprint,
                        const std::filesystem::path& path) {
  TensorFile file;
  file.header_json = nlohmann::json{{"format", "sfm-features"},
                                    {"encoder_fingerprint", hex64(encoder_fingerprint)},
                                    {"tool_version", kToolVersion}}
                         .dump();
  file.tensors["features"] = Tensor{DType::kFloat64,
                                    {static_cast<std::uint64_t>(features.rows()), static_cast<std::uint64_t>(features.cols())},
                                    std::vector<double>(features.data(), features.data() + features.size())};
  Tensor l{DType::kFloat64, {labels.size()}, {}};
  for (int y : labels) l.values.push_back(y);
  file.tensors["labels"] = std::move(l);
  save_tensor_file(path, file);
}

Matrix load_feature_cache(const std::filesystem::path& path, std::uint64_t expected_encoder_fingerprint,
                          std::vector<int>* labels) {
  const TensorFile file = load_tensor_file(path);
  const auto header = nlohmann::json::parse(file.header_json);
  if (header.value("format", "") != "sfm-features") throw ValidationError(path.string() + ": not a feature cache");
  if (parse_hex64(header.at("encoder_fingerprint").get<std::string>()) != expected_encoder_fingerprint) {
    throw ValidationError(path.string() + ": feature cache belongs to a different encoder");
  }
  const Tensor& f = file.at("features");
  if (f.dims.size() != 2) throw ValidationError("feature tensor must be 2-D");
  Matrix out = Eigen::Map<const Matrix>(f.values.data(), static_cast<Eigen::Index>(f.dims[0]),
                                        static_cast<Eigen::Index>(f.dims[1]));
  if (labels) {
    labels->clear();
    for (double y : file.at("labels").values) labels->push_back(static_cast<int>(y));
  }
  return out;
}

}  // namespace sfm
