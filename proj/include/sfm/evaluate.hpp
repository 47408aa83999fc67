#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "sfm/core.hpp"
#include "sfm/distill.hpp"
#include "sfm/encoders.hpp"
#include "sfm/synthesis.hpp"

namespace sfm {

enum class Provenance { kGolden, kProbe };

struct Classifier {
  Matrix weight;  // C x F_d
  Vector bias;    // C
  Provenance provenance = Provenance::kProbe;

  int num_classes() const { return static_cast<int>(weight.rows()); }
  Matrix logits(const Matrix& features) const;
  std::vector<int> predict(const Matrix& features) const;
  std::uint64_t checksum() const;
};

// Single linear layer F_e -> F_d.
struct Projector {
  Matrix weight;  // F_d x F_e
  Vector bias;    // F_d

  // Rectangular identity with zero bias; the exact identity when F_e = F_d.
  static Projector identity(std::size_t eval_dim, std::size_t distill_dim);
  Matrix apply(const Matrix& eval_features) const;
  std::size_t parameter_count() const { return static_cast<std::size_t>(weight.size() + bias.size()); }
};

enum class EvalStrategy { kVanilla, kCi, kJt, kSt };
std::string to_string(EvalStrategy strategy);
EvalStrategy parse_eval_strategy(const std::string& text);

struct EvalConfig {
  EvalStrategy strategy = EvalStrategy::kVanilla;
  bool inherit_initial_parameters = false;  // IP: start the trainable classifier from golden weights
  double soft_label_alpha = 0.0;
  std::size_t iterations = 1000;
  double probe_lr = 0.001;
  double projector_lr = 0.01;
  std::size_t golden_iterations = 1000;
  double golden_lr = 0.01;
  // Classifier steps after the frozen projector in st; defaults to iterations, may be 0.
  std::optional<std::size_t> st_classifier_iterations;
  bool train_augmentation = true;
  AugmentParams augment;  // seed field ignored; derived per iteration
  std::uint64_t seed = 0;

  void validate() const;
};

// Held-out images plus per-encoder feature cache (deterministic resize, no augmentation).
class ValidationSet {
 public:
  explicit ValidationSet(LabeledImages data) : data_(std::move(data)) { data_.validate(); }
  const LabeledImages& data() const { return data_; }
  const Matrix& features(const Encoder& encoder);

 private:
  LabeledImages data_;
  std::map<std::uint64_t, Matrix> cache_;
};

struct EvalReport {
  std::string name;  // what was evaluated, e.g. "sfm" or "baseline-random"
  std::string strategy;
  bool inherit_initial_parameters = false;
  double soft_label_alpha = 0.0;
  std::size_t iterations = 0;
  std::string distill_encoder;
  std::string eval_encoder;
  std::uint64_t seed = 0;
  double accuracy = 0.0;  // top-1 on the validation set, in [0,1]
  std::vector<double> classifier_loss;
  std::vector<double> projector_loss;
  std::size_t trained_parameters = 0;
  double wall_clock_seconds = 0.0;

  nlohmann::json to_json() const;
  // Over every field except wall-clock time.
  std::uint64_t fingerprint() const;
};

// Frozen distillation-encoder features of the full original dataset (no augmentation).
Matrix encode_dataset(const Encoder& encoder, const LabeledImages& data, std::size_t batch_size = 256);

double accuracy(std::span<const int> predictions, std::span<const int> labels);

Classifier train_golden_classifier(const Encoder& encoder_d, const LabeledImages& original, const EvalConfig& config);
Classifier train_golden_classifier(const Matrix& features, std::span<const int> labels, int num_classes,
                                   const EvalConfig& config);

// alpha*KL(student||teacher) + (1-alpha)*CE averaged over rows, temperature 1.
// Writes the gradient w.r.t. the logits.
double classification_loss_grad(const Matrix& logits, const Matrix& y, const Matrix* teacher_probs, double alpha,
                                Matrix& grad_logits);

struct SoftLabelTeacher {
  const Encoder& encoder_d;
  const Classifier& golden;
};

struct ProbeResult {
  Classifier classifier;
  EvalReport report;
};

// Vanilla linear probe on the IPC-1 training images; loss alpha*KL(student||teacher) + (1-alpha)*CE.
ProbeResult train_linear_probe(const LabeledImages& train, const Encoder& encoder_e, const EvalConfig& config,
                               ValidationSet& validation, const SoftLabelTeacher* teacher = nullptr);
ProbeResult train_linear_probe(const SyntheticDataset& synthetic, const Encoder& encoder_e, const EvalConfig& config,
                               ValidationSet& validation, const SoftLabelTeacher* teacher = nullptr);

struct ProjectorResult {
  Projector projector;
  std::vector<double> loss_curve;  // alignment loss before each step
  double initial_loss = 0.0;
  double final_loss = 0.0;         // after the last step
};

// Minimizes mean ||phi_d(x) - P(phi_e(x))||^2 over the synthetic images; labels never enter.
ProjectorResult train_projector_ci(const LabeledImages& synthetic, const Encoder& encoder_e, const Encoder& encoder_d,
                                   const EvalConfig& config, std::optional<Projector> init = std::nullopt);

// argmax f(P(phi_e(x))). Throws ValidationError unless golden.provenance is golden.
std::vector<int> infer_inherited(const ImageBatch& images, const Encoder& encoder_e, const Projector& projector,
                                 const Classifier& golden);
std::vector<int> infer_inherited_features(const Matrix& eval_features, const Projector& projector,
                                          const Classifier& golden);

// Classifier inheritance: train the projector, then score through the golden head.
EvalReport evaluate_ci(const LabeledImages& synthetic, const Encoder& encoder_e, const Encoder& encoder_d,
                       const Classifier& golden, const EvalConfig& config, ValidationSet& validation,
                       Projector* trained = nullptr);

// jt: projector and classifier trained together (CE + alignment). st: projector
// trained by alignment, frozen, then the classifier trained on projected features.
EvalReport evaluate_strategy(const LabeledImages& synthetic, const Encoder& encoder_e, const Encoder& encoder_d,
                             const Classifier& golden, const EvalConfig& config, ValidationSet& validation,
                             const SoftLabelTeacher* teacher = nullptr);

// Dispatches on config.strategy.
EvalReport evaluate(const LabeledImages& synthetic, const Encoder& encoder_e, const Encoder& encoder_d,
                    const Classifier& golden, const EvalConfig& config, ValidationSet& validation);

enum class BaselineMethod { kRandom, kCentroids, kNeighbors };
std::string to_string(BaselineMethod method);
BaselineMethod parse_baseline_method(const std::string& text);

// One real image per class: random (seeded), nearest to the class mean
// embedding, or nearest to that class's synthetic image embedding. Distances
// are squared Euclidean in distillation-encoder feature space.
LabeledImages select_baseline(BaselineMethod method, const LabeledImages& original, const Encoder& encoder_d,
                              const SyntheticDataset* synthetic = nullptr, std::uint64_t seed = 0);
std::vector<std::size_t> select_baseline_indices(BaselineMethod method, const LabeledImages& original,
                                                 const Matrix& original_features, const Matrix* synthetic_features,
                                                 std::uint64_t seed);

// Feature cache file: tensor container with "features" (N x F, f64), "labels"
// (N, f64) and the encoder fingerprint in the header.
void save_feature_cache(const Matrix& features, std::span<const int> labels, std::uint64_t encoder_fingerprint,
                        const std::filesystem::path& path);
Matrix load_feature_cache(const std::filesystem::path& path, std::uint64_t expected_encoder_fingerprint,
                          std::vector<int>* labels = nullptr);

}  // namespace sfm
