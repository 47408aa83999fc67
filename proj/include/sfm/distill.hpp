#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sfm/core.hpp"
#include "sfm/encoders.hpp"
#include "sfm/flows.hpp"
#include "sfm/statistics.hpp"
#include "sfm/synthesis.hpp"

namespace sfm {

enum class DistillMethod { kSfm, kTcdd, kNcdd, kLgm };

std::string to_string(DistillMethod method);
DistillMethod parse_distill_method(const std::string& text);
std::string to_string(HeadMode mode);
HeadMode parse_head_mode(const std::string& text);
std::string to_string(Aggregation aggregation);
Aggregation parse_aggregation(const std::string& text);

struct DistillConfig {
  DistillMethod method = DistillMethod::kSfm;
  HeadMode lgm_w_mode = HeadMode::kRandom;
  std::size_t iterations = 5000;
  std::size_t level_interval = 200;
  double learning_rate = 0.002;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t augmentations_per_batch = 1;
  std::size_t real_batch_per_class = 16;  // lgm only; >= class size takes the whole class
  double head_sigma = 0.01;
  std::uint64_t seed = 0;
  Aggregation aggregation = Aggregation::kFlatten;
  std::size_t base_resolution = 0;  // 0: target / 4 (at least 1)
  double init_std = 0.1;            // base-level noise, raw units
  AugmentParams augment;            // seed field ignored; derived per step and pass
  // Early stop once the best loss has not improved by plateau_tolerance
  // (relative) over plateau_window steps. 0 disables.
  std::size_t plateau_window = 0;
  double plateau_tolerance = 1e-3;

  void validate() const;
};

struct LossRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double mean_cosine = 0.0;  // mean per-class cosine similarity of the matched rows
};

struct SyntheticDataset {
  std::vector<PyramidImage> pyramids;  // one per class
  std::vector<int> labels;
  int num_classes = 0;
  DistillMethod method = DistillMethod::kSfm;
  std::uint64_t config_fingerprint = 0;
  std::uint64_t encoder_fingerprint = 0;
  std::vector<LossRecord> trace;

  LabeledImages composed() const;
  // Hash of labels and raw pyramid tensors.
  std::uint64_t content_fingerprint() const;
  void validate() const;
};

// Fresh IPC-1 initialization: seeded noise on the base level, shared by every method.
SyntheticDataset initialize_synthetic(const DistillConfig& config, int num_classes, ImageShape image_shape);

// Matches the synthetic batch flow to the statistical flow.
SyntheticDataset distill_sfm(const DistillConfig& config, const Encoder& encoder, const StatFlow& flow,
                             std::uint64_t config_fingerprint = 0);

// SFM loss of a fixed image set without augmentation (images resized to the encoder).
double sfm_objective(const Encoder& encoder, const Matrix& statistical_flow, const LabeledImages& images,
                     Aggregation aggregation = Aggregation::kFlatten);

// tcdd: synthetic class means vs statistical class centers.
// ncdd: synthetic non-target means vs statistical non-target centers.
SyntheticDataset distill_ablation(const DistillConfig& config, const Encoder& encoder,
                                  const ClassStatistics& stats, std::uint64_t config_fingerprint = 0);

// Linear gradient matching against sampled real batches.
SyntheticDataset distill_lgm(const DistillConfig& config, const Encoder& encoder,
                             const LabeledImages& real_data, std::uint64_t config_fingerprint = 0);

struct MatchResult {
  double loss = 0.0;
  Matrix grad_synthetic;  // d loss / d synthetic features
  double mean_cosine = 0.0;
};

// One LGM matching evaluation. The real branch is read-only: no gradient is
// formed for it.
MatchResult lgm_match(const Matrix& real_features, std::span<const int> real_labels,
                      const Matrix& synthetic_features, std::span<const int> synthetic_labels,
                      int num_classes, const LinearHead& head, Aggregation aggregation);

// Directory layout: metadata.json, pyramids.sfmt (raw level tensors, f64),
// class_<c>.png composed images, loss_trace.csv.
void save_synthetic(const SyntheticDataset& data, const std::filesystem::path& dir,
                    const std::string& config_json = "{}");
SyntheticDataset load_synthetic(const std::filesystem::path& dir);

std::string loss_trace_csv(const std::vector<LossRecord>& trace);

}  // namespace sfm
