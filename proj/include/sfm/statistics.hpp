#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sfm/core.hpp"
#include "sfm/encoders.hpp"

namespace sfm {

// Per-class feature sums over the original dataset, accumulated in double.
struct ClassStatistics {
  std::size_t feature_dim = 0;
  int num_classes = 0;
  std::vector<std::uint64_t> counts;  // N_c
  Matrix class_sums;                  // C x F
  Vector global_sum;                  // F
  std::uint64_t total = 0;            // N
  std::uint64_t encoder_fingerprint = 0;

  static ClassStatistics empty(int num_classes, std::size_t feature_dim, std::uint64_t encoder_fingerprint);

  // Folds a batch of already-encoded features into the sums.
  void accumulate(const Matrix& features, std::span<const int> labels);
  // Commutative, associative combination of two disjoint shards.
  void merge(const ClassStatistics& other);

  Vector class_center(int c) const;  // S_c / N_c
  Matrix class_centers() const;      // C x F
  // Throws ValidationError naming the first class without samples.
  void require_all_classes() const;
};

// Resizes images to the encoder resolution when needed, encodes them without
// augmentation in batches of batch_size, and accumulates per-class sums.
ClassStatistics compute_class_statistics(const Encoder& encoder, const LabeledImages& dataset,
                                         std::size_t batch_size);

// (S - S_c) / (N - N_c). Throws NumericError when no other-class sample exists.
Vector nontarget_center(const ClassStatistics& stats, int c);
Matrix nontarget_centers(const ClassStatistics& stats);

struct StatFlow {
  Matrix flow;  // C x F, row c = nontarget_center(c) - class_center(c)
  std::uint64_t encoder_fingerprint = 0;
  std::uint64_t stats_fingerprint = 0;
};

StatFlow build_statistical_flow(const ClassStatistics& stats);

std::uint64_t statistics_fingerprint(const ClassStatistics& stats);

// Layout (little-endian): "SFMSTATS" | u32 version | u64 C | u64 F | u64 N |
// u64 encoder fingerprint | u64 counts[C] | f64 class sums[C*F] (row-major) |
// f64 global sum[F].
inline constexpr std::uint32_t kStatsVersion = 1;
void save_statistics(const ClassStatistics& stats, const std::filesystem::path& path);
ClassStatistics load_statistics(const std::filesystem::path& path);

}  // namespace sfm
