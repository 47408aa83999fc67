#include "sfm/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <png.h>

namespace sfm {

static_assert(std::endian::native == std::endian::little,
              "binary formats are written in host order and assume a little-endian host");

Fingerprint& Fingerprint::add_bytes(const void* data, std::size_t size) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    state_ ^= bytes[i];
    state_ *= 0x100000001b3ULL;
  }
  return *this;
}

Fingerprint& Fingerprint::add(std::string_view text) {
  add(static_cast<std::uint64_t>(text.size()));
  return add_bytes(text.data(), text.size());
}

Fingerprint& Fingerprint::add(std::uint64_t value) { return add_bytes(&value, sizeof value); }

Fingerprint& Fingerprint::add(double value) { return add_bytes(&value, sizeof value); }

Fingerprint& Fingerprint::add(std::span<const double> values) {
  add(static_cast<std::uint64_t>(values.size()));
  return add_bytes(values.data(), values.size_bytes());
}

Fingerprint& Fingerprint::add(std::span<const float> values) {
  add(static_cast<std::uint64_t>(values.size()));
  return add_bytes(values.data(), values.size_bytes());
}

Fingerprint& Fingerprint::add(const Matrix& m) {
  add(static_cast<std::uint64_t>(m.rows()));
  add(static_cast<std::uint64_t>(m.cols()));
  return add_bytes(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::uint64_t parse_hex64(const std::string& text) {
  std::uint64_t value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value, 16);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ValidationError("malformed fingerprint '" + text + "'");
  }
  return value;
}

std::uint64_t Tensor::numel() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

const Tensor& TensorFile::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ValidationError("tensor '" + name + "' missing from file");
  return it->second;
}

namespace {

constexpr char kTensorMagic[8] = {'S', 'F', 'M', 'T', 'N', 'S', 'R', '\0'};

template <typename T>
void put(std::string& out, T value) {
  out.append(reinterpret_cast<const char*>(&value), sizeof value);
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  template <typename T>
  T get() {
    T value;
    need(sizeof value);
    std::memcpy(&value, bytes_.data() + pos_, sizeof value);
    pos_ += sizeof value;
    return value;
  }

  std::string get_string(std::size_t size) {
    need(size);
    std::string s = bytes_.substr(pos_, size);
    pos_ += size;
    return s;
  }

  const char* take(std::size_t size) {
    need(size);
    const char* p = bytes_.data() + pos_;
    pos_ += size;
    return p;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t size) const {
    if (bytes_.size() - pos_ < size) throw ValidationError("tensor file truncated");
  }

  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  std::string out(kTensorMagic, sizeof kTensorMagic);
  put<std::uint32_t>(out, kTensorFileVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(file.header_json.size()));
  out += file.header_json;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& [name, tensor] : file.tensors) {
    if (tensor.values.size() != tensor.numel()) {
      throw ValidationError("tensor '" + name + "' has inconsistent dims");
    }
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(tensor.dtype));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.dims.size()));
    for (auto d : tensor.dims) put<std::uint64_t>(out, d);
    if (tensor.dtype == DType::kFloat32) {
      for (double v : tensor.values) put<float>(out, static_cast<float>(v));
    } else {
      for (double v : tensor.values) put<double>(out, v);
    }
  }
  write_file_atomic(path, out);
}

TensorFile load_tensor_file(const std::filesystem::path& path) {
  Reader in(read_file(path));
  const std::string magic = in.get_string(sizeof kTensorMagic);
  if (std::memcmp(magic.data(), kTensorMagic, sizeof kTensorMagic) != 0) {
    throw ValidationError(path.string() + ": not a tensor file (bad magic)");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kTensorFileVersion) {
    throw ValidationError(path.string() + ": unsupported tensor file version " +
                          std::to_string(version));
  }
  TensorFile file;
  file.header_json = in.get_string(in.get<std::uint32_t>());
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t t = 0; t < count; ++t) {
    std::string name = in.get_string(in.get<std::uint32_t>());
    Tensor tensor;
    const auto dtype = in.get<std::uint8_t>();
    if (dtype > 1) throw ValidationError("tensor '" + name + "' has unknown dtype");
    tensor.dtype = static_cast<DType>(dtype);
    const auto rank = in.get<std::uint32_t>();
    if (rank > 8) throw ValidationError("tensor '" + name + "' has implausible rank");
    for (std::uint32_t r = 0; r < rank; ++r) tensor.dims.push_back(in.get<std::uint64_t>());
    const auto n = tensor.numel();
    const std::size_t width = tensor.dtype == DType::kFloat32 ? 4 : 8;
    if (n > (std::uint64_t{1} << 34) / width) throw ValidationError("tensor too large");
    const char* raw = in.take(static_cast<std::size_t>(n) * width);
    tensor.values.resize(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < tensor.values.size(); ++i) {
      if (tensor.dtype == DType::kFloat32) {
        float f;
        std::memcpy(&f, raw + i * 4, 4);
        tensor.values[i] = f;
      } else {
        std::memcpy(&tensor.values[i], raw + i * 8, 8);
      }
    }
    file.tensors.emplace(std::move(name), std::move(tensor));
  }
  if (!in.done()) throw ValidationError(path.string() + ": trailing bytes after tensors");
  return file;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error("write to " + tmp.string() + " failed");
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_png(const std::filesystem::path& path, std::span<const double> chw, ImageShape shape) {
  if (shape.channels != 1 && shape.channels != 3) {
    throw ShapeError("PNG output needs 1 or 3 channels, got " + std::to_string(shape.channels));
  }
  if (chw.size() != shape.numel()) throw ShapeError("PNG buffer does not match shape");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  FILE* fp = std::fopen(tmp.c_str(), "wb");
  if (!fp) throw Error("cannot open " + tmp.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw Error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  const int color = shape.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
  png_set_IHDR(png, info, static_cast<png_uint_32>(shape.width),
               static_cast<png_uint_32>(shape.height), 8, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(shape.width * shape.channels);
  const std::size_t plane = shape.height * shape.width;
  for (std::size_t y = 0; y < shape.height; ++y) {
    for (std::size_t x = 0; x < shape.width; ++x) {
      for (std::size_t c = 0; c < shape.channels; ++c) {
        const double v = std::clamp(chw[c * plane + y * shape.width + x], 0.0, 1.0);
        row[x * shape.channels + c] = static_cast<png_byte>(std::lround(v * 255.0));
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
  std::filesystem::rename(tmp, path);
}

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

std::string format_fixed(double value, int decimals) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::fixed, decimals);
  return std::string(buf, ptr);
}

}  // namespace sfm
