#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sfm/config.hpp"
#include "sfm/evaluate.hpp"

namespace sfm {

enum class Command { kStats, kDistill, kEval, kBaseline, kTheory, kViz };
std::string to_string(Command command);
Command parse_command(const std::string& text);

// Artifact locations inside the output directory.
struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path effective_config() const { return root / "config.json"; }
  std::filesystem::path stats() const { return root / "stats.sfmstats"; }
  std::filesystem::path stats_meta() const { return root / "stats.json"; }
  std::filesystem::path synthetic(const DistillConfig& config) const;
  std::filesystem::path golden(std::uint64_t fingerprint) const;
  std::filesystem::path baseline(BaselineMethod method) const;
  std::filesystem::path reports_dir() const { return root / "reports"; }
  std::filesystem::path reports() const { return root / "reports.jsonl"; }
  std::filesystem::path summary() const { return root / "summary.txt"; }
  std::filesystem::path theory_csv() const { return root / "theory.csv"; }
  std::filesystem::path theory_text() const { return root / "theory.txt"; }
  std::filesystem::path viz_dir() const { return root / "viz"; }
};

struct PipelineResult {
  std::vector<std::filesystem::path> artifacts;
  std::string summary;                // human-readable, also printed by the CLI
  std::optional<EvalReport> report;   // eval and baseline
  std::uint64_t encoder_checksum_start = 0;
  std::uint64_t encoder_checksum_end = 0;  // recomputed from the parameters after the command
};

// Runs one command. Missing upstream artifacts raise LoadError naming the
// expected file; fingerprint mismatches raise ValidationError. All files are
// written atomically.
PipelineResult run_pipeline(Command command, const RunConfig& config);

// Training and validation splits for the configured data source.
struct DataSplits {
  LabeledImages train;
  LabeledImages validation;
};
DataSplits load_data(const RunConfig& config, const Encoder& encoder);

}  // namespace sfm
