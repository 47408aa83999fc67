#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sfm/core.hpp"

namespace sfm {

inline constexpr std::string_view kToolVersion = "1.0.0";

// 64-bit FNV-1a, used for every fingerprint and checksum the tool emits.
class Fingerprint {
 public:
  Fingerprint& add_bytes(const void* data, std::size_t size);
  Fingerprint& add(std::string_view text);
  Fingerprint& add(std::uint64_t value);
  Fingerprint& add(double value);
  Fingerprint& add(std::span<const double> values);
  Fingerprint& add(std::span<const float> values);
  Fingerprint& add(const Matrix& m);
  std::uint64_t value() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hex64(std::uint64_t value);
std::uint64_t parse_hex64(const std::string& text);

// Tensor container shared by encoder weights, feature caches, and pyramid
// snapshots. Layout (all little-endian):
//   magic "SFMTNSR\0" | u32 version | u32 header length | header JSON bytes |
//   u32 tensor count | per tensor: u32 name length, name, u8 dtype (0 f32, 1 f64),
//   u32 rank, u64 dims[rank], payload.
enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1 };

struct Tensor {
  DType dtype = DType::kFloat32;
  std::vector<std::uint64_t> dims;
  std::vector<double> values;  // widened on load; narrowed on save for f32

  std::uint64_t numel() const;
};

struct TensorFile {
  std::string header_json = "{}";
  std::map<std::string, Tensor> tensors;

  const Tensor& at(const std::string& name) const;
};

inline constexpr std::uint32_t kTensorFileVersion = 1;

void save_tensor_file(const std::filesystem::path& path, const TensorFile& file);
// Throws LoadError when missing, ValidationError when malformed or truncated.
TensorFile load_tensor_file(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

// 8-bit RGB (or gray for one channel) PNG of one CHW image with pixels in [0,1].
void write_png(const std::filesystem::path& path, std::span<const double> chw, ImageShape shape);

// Locale-independent shortest round-trip formatting.
std::string format_double(double value);
std::string format_fixed(double value, int decimals);

}  // namespace sfm
