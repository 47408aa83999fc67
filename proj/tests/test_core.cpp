#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>

#include "sfm/core.hpp"
#include "sfm/io.hpp"
#include "sfm/optim.hpp"
#include "sfm/rng.hpp"
#include "test_util.hpp"

using namespace sfm;
using namespace sfm::testing;

TEST_CASE("image batch indexing, select and append") {
  ImageBatch b(3, {2, 4, 4});
  b.at(1, 1, 2, 3) = 0.7;
  CHECK(b.image(1)[1 * 16 + 2 * 4 + 3] == 0.7);
  const std::vector<std::size_t> idx = {1, 1};
  ImageBatch s = b.select(idx);
  CHECK(s.size() == 2);
  CHECK(s.at(0, 1, 2, 3) == 0.7);
  CHECK(s.at(1, 1, 2, 3) == 0.7);
  s.append(b);
  CHECK(s.size() == 5);
  CHECK_THROWS_AS(s.append(ImageBatch(1, {3, 4, 4})), ShapeError);
}

TEST_CASE("labeled images validate and count") {
  LabeledImages d;
  d.images = ImageBatch(4, {1, 2, 2});
  d.labels = {0, 1, 1, 2};
  d.num_classes = 3;
  CHECK_NOTHROW(d.validate());
  CHECK(d.class_counts() == std::vector<std::size_t>{1, 2, 1});
  d.labels[0] = 3;
  CHECK_THROWS_AS(d.validate(), ValidationError);
  d.labels = {0, 1};
  CHECK_THROWS_AS(d.validate(), ValidationError);
}

TEST_CASE("one hot") {
  const std::vector<int> y = {2, 0};
  const Matrix m = one_hot(y, 3);
  CHECK(m(0, 2) == 1.0);
  CHECK(m(1, 0) == 1.0);
  CHECK(m.sum() == 2.0);
  const std::vector<int> bad = {3};
  CHECK_THROWS_AS(one_hot(bad, 3), ValidationError);
}

TEST_CASE("fnv-1a reference values") {
  // Published FNV-1a 64 test vectors.
  CHECK(Fingerprint().add_bytes("", 0).value() == 0xcbf29ce484222325ULL);
  CHECK(Fingerprint().add_bytes("a", 1).value() == 0xaf63dc4c8601ec8cULL);
  CHECK(Fingerprint().add_bytes("foobar", 6).value() == 0x85944171f73967e8ULL);
  // Strings are length-prefixed so concatenations stay distinct.
  CHECK(Fingerprint().add(std::string_view("ab")).add(std::string_view("c")).value() !=
        Fingerprint().add(std::string_view("a")).add(std::string_view("bc")).value());
  CHECK(parse_hex64(hex64(0x0123456789abcdefULL)) == 0x0123456789abcdefULL);
  CHECK(hex64(1) == "0000000000000001");
  CHECK_THROWS_AS(parse_hex64("xyz"), ValidationError);
}

TEST_CASE("tensor file round trip in both dtypes") {
  TempDir dir("tensor");
  TensorFile f;
  f.header_json = R"({"k":1})";
  f.tensors["a"] = {DType::kFloat64, {2, 3}, {1.0 / 3, 2, 3, 4, 5, 6}};
  f.tensors["b"] = {DType::kFloat32, {2}, {0.1, -2.5}};
  save_tensor_file(dir.path / "t.sfmt", f);
  const TensorFile g = load_tensor_file(dir.path / "t.sfmt");
  CHECK(g.header_json == f.header_json);
  CHECK(g.at("a").values == f.tensors["a"].values);
  CHECK(g.at("a").dims == std::vector<std::uint64_t>{2, 3});
  CHECK(g.at("b").values[0] == static_cast<double>(0.1f));
  CHECK(g.at("b").values[1] == -2.5);
  CHECK_THROWS_AS(g.at("missing"), ValidationError);
}

TEST_CASE("tensor file errors: missing and truncated") {
  TempDir dir("tensor_err");
  CHECK_THROWS_AS(load_tensor_file(dir.path / "nope.sfmt"), LoadError);
  TensorFile f;
  f.tensors["a"] = {DType::kFloat64, {4}, {1, 2, 3, 4}};
  save_tensor_file(dir.path / "t.sfmt", f);
  std::string bytes = read_file(dir.path / "t.sfmt");
  for (std::size_t cut : {std::size_t{3}, bytes.size() / 2, bytes.size() - 1}) {
    write_file_atomic(dir.path / "cut.sfmt", bytes.substr(0, cut));
    CHECK_THROWS_AS(load_tensor_file(dir.path / "cut.sfmt"), ValidationError);
  }
  bytes[0] = 'X';
  write_file_atomic(dir.path / "bad.sfmt", bytes);
  CHECK_THROWS_AS(load_tensor_file(dir.path / "bad.sfmt"), ValidationError);
}

TEST_CASE("atomic write leaves no temporary behind") {
  TempDir dir("atomic");
  write_file_atomic(dir.path / "x.txt", "one");
  write_file_atomic(dir.path / "x.txt", "two");
  CHECK(read_file(dir.path / "x.txt") == "two");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir.path)) ++files;
  CHECK(files == 1);
}

TEST_CASE("png writer emits a png signature") {
  TempDir dir("png");
  std::vector<double> px(3 * 4 * 4, 0.5);
  write_png(dir.path / "a.png", px, {3, 4, 4});
  const std::string bytes = read_file(dir.path / "a.png");
  REQUIRE(bytes.size() > 8);
  CHECK(bytes.substr(1, 3) == "PNG");
}

TEST_CASE("locale independent formatting") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(-2.5e-10) == "-2.5e-10");
  CHECK(format_fixed(88.1999, 1) == "88.2");
  CHECK(format_fixed(1.0, 2) == "1.00");
}

TEST_CASE("derived seeds are stable and stream separated") {
  CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
  CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
  CHECK(derive_seed(1, {2}) != derive_seed(2, {2}));
}

TEST_CASE("adam first step moves each coordinate by about lr against the gradient") {
  Adam adam(0.1);
  std::vector<double> p = {1.0, -1.0, 0.0};
  const std::vector<double> g = {2.0, -0.5, 0.0};
  adam.step(0, p, g);
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(-0.9).epsilon(1e-6));
  CHECK(p[2] == 0.0);
}

TEST_CASE("adam slots are independent") {
  Adam a(0.01), b(0.01);
  std::vector<double> p1 = {1.0}, p2 = {1.0}, q = {5.0};
  const std::vector<double> g = {1.0}, h = {-3.0};
  for (int i = 0; i < 5; ++i) {
    a.step(0, p1, g);
    a.step(7, q, h);
    b.step(0, p2, g);
  }
  CHECK(p1[0] == p2[0]);
}

TEST_CASE("adam minimizes a quadratic") {
  Adam adam(0.05);
  std::vector<double> x = {3.0, -2.0};
  for (int i = 0; i < 2000; ++i) {
    const std::vector<double> g = {2 * (x[0] - 1), 2 * (x[1] + 1)};
    adam.step(0, x, g);
  }
  CHECK(x[0] == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(x[1] == doctest::Approx(-1.0).epsilon(1e-3));
}
