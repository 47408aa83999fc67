#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "sfm/data.hpp"
#include "sfm/distill.hpp"
#include "sfm/evaluate.hpp"
#include "sfm/theory.hpp"

namespace sfm {

enum class DataSource { kToy, kFeatures, kFile };
std::string to_string(DataSource source);
DataSource parse_data_source(const std::string& text);

struct EncoderSection {
  std::string distill = "toy-conv-32";
  std::string eval;  // empty: same as distill
  std::uint64_t weight_seed = 0;  // builtin weight initialization

  const std::string& eval_or_distill() const { return eval.empty() ? distill : eval; }
};

struct DataSection {
  DataSource source = DataSource::kToy;
  ToyDataConfig toy;                   // seed is overwritten from the run seed
  std::size_t validation_per_class = 50;
  double feature_spread = 0.6;         // features source only
  std::filesystem::path train_path;    // file source only
  std::filesystem::path validation_path;
  std::size_t stats_batch_size = 64;
};

struct BaselineSection {
  BaselineMethod method = BaselineMethod::kRandom;
};

struct VizSection {
  int k_classes = 10;
};

// Every field has a default; the file may name any subset. Unknown keys anywhere
// are rejected with a ValidationError naming the key.
struct RunConfig {
  std::uint64_t seed = 0;
  EncoderSection encoder;
  DataSection data;
  DistillConfig distill;
  EvalConfig eval;
  BaselineSection baseline;
  McConfig theory;
  VizSection viz;
  std::filesystem::path output_dir = "sfm-run";

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  // Pushes the run seed into every module config.
  void propagate_seed();
  void validate() const;

  std::uint64_t fingerprint() const;
  // Over the sections a stage's artifact depends on: "stats" (encoder, data),
  // "distill" (+ distill), "golden" (+ eval golden fields).
  std::uint64_t stage_fingerprint(const std::string& stage) const;
};

}  // namespace sfm
