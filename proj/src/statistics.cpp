#include "sfm/statistics.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

#include "sfm/data.hpp"
#include "sfm/io.hpp"

namespace sfm {

ClassStatistics ClassStatistics::empty(int num_classes, std::size_t feature_dim,
                                       std::uint64_t encoder_fingerprint) {
  ClassStatistics s;
  s.feature_dim = feature_dim;
  s.num_classes = num_classes;
  s.counts.assign(static_cast<std::size_t>(num_classes), 0);
  s.class_sums = Matrix::Zero(num_classes, static_cast<Eigen::Index>(feature_dim));
  s.global_sum = Vector::Zero(static_cast<Eigen::Index>(feature_dim));
  s.encoder_fingerprint = encoder_fingerprint;
  return s;
}

void ClassStatistics::accumulate(const Matrix& features, std::span<const int> labels) {
  if (static_cast<std::size_t>(features.rows()) != labels.size() ||
      features.cols() != static_cast<Eigen::Index>(feature_dim)) {
    throw ShapeError("accumulate: feature batch does not match labels or feature_dim");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= num_classes) {
      throw ValidationError("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) + ")");
    }
    const auto row = features.row(static_cast<Eigen::Index>(i));
    class_sums.row(y) += row;
    global_sum += row.transpose();
    ++counts[static_cast<std::size_t>(y)];
    ++total;
  }
}

void ClassStatistics::merge(const ClassStatistics& other) {
  if (other.num_classes != num_classes || other.feature_dim != feature_dim) {
    throw ShapeError("merge: statistics have different shapes");
  }
  if (other.encoder_fingerprint != encoder_fingerprint) {
    throw ValidationError("merge: statistics come from different encoders");
  }
  for (std::size_t c = 0; c < counts.size(); ++c) counts[c] += other.counts[c];
  class_sums += other.class_sums;
  global_sum += other.global_sum;
  total += other.total;
}

Vector ClassStatistics::class_center(int c) const {
  if (c < 0 || c >= num_classes) throw ValidationError("class index out of range");
  const auto n = counts[static_cast<std::size_t>(c)];
  if (n == 0) throw ValidationError("class " + std::to_string(c) + " has no samples");
  return class_sums.row(c).transpose() / static_cast<double>(n);
}

Matrix ClassStatistics::class_centers() const {
  Matrix centers(num_classes, static_cast<Eigen::Index>(feature_dim));
  for (int c = 0; c < num_classes; ++c) centers.row(c) = class_center(c).transpose();
  return centers;
}

void ClassStatistics::require_all_classes() const {
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) throw ValidationError("class " + std::to_string(c) + " has no samples");
  }
}

ClassStatistics compute_class_statistics(const Encoder& encoder, const LabeledImages& dataset,
                                         std::size_t batch_size) {
  dataset.validate();
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  const auto& shape = dataset.images.shape();
  if (shape.channels != encoder.spec().channels) {
    throw ShapeError("dataset has " + std::to_string(shape.channels) + " channels, encoder expects " +
                     std::to_string(encoder.spec().channels));
  }
  auto stats = ClassStatistics::empty(dataset.num_classes, encoder.feature_dim(), encoder.checksum());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    const std::size_t end = std::min(dataset.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    ImageBatch batch = resize_bilinear(dataset.images.select(idx), encoder.spec().input_resolution);
    stats.accumulate(encoder.encode(batch),
                     std::span<const int>(dataset.labels).subspan(start, end - start));
  }
  stats.require_all_classes();
  return stats;
}

Vector nontarget_center(const ClassStatistics& stats, int c) {
  if (c < 0 || c >= stats.num_classes) throw ValidationError("class index out of range");
  const auto others = stats.total - stats.counts[static_cast<std::size_t>(c)];
  if (others == 0) {
    throw NumericError("non-target center of class " + std::to_string(c) + " is undefined: no other-class samples");
  }
  return (stats.global_sum - stats.class_sums.row(c).transpose()) / static_cast<double>(others);
}

Matrix nontarget_centers(const ClassStatistics& stats) {
  Matrix out(stats.num_classes, static_cast<Eigen::Index>(stats.feature_dim));
  for (int c = 0; c < stats.num_classes; ++c) out.row(c) = nontarget_center(stats, c).transpose();
  return out;
}

StatFlow build_statistical_flow(const ClassStatistics& stats) {
  if (stats.num_classes < 2) throw ValidationError("a statistical flow needs at least two classes");
  stats.require_all_classes();
  StatFlow flow;
  flow.flow = nontarget_centers(stats) - stats.class_centers();
  if (!flow.flow.allFinite()) throw NumericError("statistical flow has non-finite entries");
  flow.encoder_fingerprint = stats.encoder_fingerprint;
  flow.stats_fingerprint = statistics_fingerprint(stats);
  return flow;
}

std::uint64_t statistics_fingerprint(const ClassStatistics& stats) {
  Fingerprint fp;
  fp.add(std::uint64_t(stats.num_classes)).add(std::uint64_t{stats.feature_dim}).add(stats.total);
  fp.add(stats.encoder_fingerprint);
  for (auto n : stats.counts) fp.add(n);
  fp.add(stats.class_sums);
  fp.add(std::span<const double>(stats.global_sum.data(), static_cast<std::size_t>(stats.global_sum.size())));
  return fp.value();
}

namespace {

constexpr char kStatsMagic[8] = {'S', 'F', 'M', 'S', 'T', 'A', 'T', 'S'};

template <typename T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

}  // namespace

void save_statistics(const ClassStatistics& stats, const std::filesystem::path& path) {
  std::string out(kStatsMagic, sizeof kStatsMagic);
  put<std::uint32_t>(out, kStatsVersion);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(stats.num_classes));
  put<std::uint64_t>(out, stats.feature_dim);
  put<std::uint64_t>(out, stats.total);
  put<std::uint64_t>(out, stats.encoder_fingerprint);
  for (auto n : stats.counts) put<std::uint64_t>(out, n);
  out.append(reinterpret_cast<const char*>(stats.class_sums.data()),
             static_cast<std::size_t>(stats.class_sums.size()) * sizeof(double));
  out.append(reinterpret_cast<const char*>(stats.global_sum.data()),
             static_cast<std::size_t>(stats.global_sum.size()) * sizeof(double));
  write_file_atomic(path, out);
}

ClassStatistics load_statistics(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  std::size_t pos = 0;
  auto take = [&](void* dst, std::size_t n) {
    if (bytes.size() - pos < n) throw ValidationError(path.string() + ": statistics cache truncated");
    std::memcpy(dst, bytes.data() + pos, n);
    pos += n;
  };
  char magic[8];
  take(magic, 8);
  if (std::memcmp(magic, kStatsMagic, 8) != 0) throw ValidationError(path.string() + ": not an SFMSTATS file");
  std::uint32_t version = 0;
  take(&version, 4);
  if (version != kStatsVersion) {
    throw ValidationError(path.string() + ": unsupported SFMSTATS version " + std::to_string(version));
  }
  std::uint64_t c = 0, f = 0, n = 0, fingerprint = 0;
  take(&c, 8);
  take(&f, 8);
  take(&n, 8);
  take(&fingerprint, 8);
  if (c == 0 || c > (1u << 20) || f == 0 || f > (1u << 20)) {
    throw ValidationError(path.string() + ": implausible statistics dimensions");
  }
  auto stats = ClassStatistics::empty(static_cast<int>(c), f, fingerprint);
  stats.total = n;
  for (auto& count : stats.counts) take(&count, 8);
  take(stats.class_sums.data(), c * f * sizeof(double));
  take(stats.global_sum.data(), f * sizeof(double));
  if (pos != bytes.size()) throw ValidationError(path.string() + ": trailing bytes in statistics cache");
  if (std::accumulate(stats.counts.begin(), stats.counts.end(), std::uint64_t{0}) != n) {
    throw ValidationError(path.string() + ": class counts do not sum to N");
  }
  return stats;
}

}  // namespace sfm
