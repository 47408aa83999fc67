#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "sfm/data.hpp"
#include "sfm/synthesis.hpp"
#include "test_util.hpp"

using namespace sfm;
using namespace sfm::testing;

namespace {

PyramidImage random_pyramid(std::mt19937_64& rng, std::size_t base = 4, std::size_t target = 16) {
  PyramidImage p(3, base, target);
  while (add_level(p)) {}
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto& level : p.levels()) {
    for (double& v : level.values) v = n(rng);
  }
  return p;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("pixel map convention") {
  CHECK(pixel_map(0.0) == 0.5);
  CHECK(pixel_map(-50.0) >= 0.0);
  CHECK(pixel_map(50.0) <= 1.0);
  CHECK(pixel_map(1.0) > pixel_map(0.5));
}

TEST_CASE("single zero level at target composes to a constant 0.5") {
  const PyramidImage p(3, 8, 8);
  const auto img = compose(p);
  CHECK(img.size() == 3 * 8 * 8);
  CHECK(std::all_of(img.begin(), img.end(), [](double v) { return v == 0.5; }));
}

TEST_CASE("a constant level upsamples to a constant") {
  PyramidImage p(1, 2, 8);
  std::fill(p.levels()[0].values.begin(), p.levels()[0].values.end(), 0.3);
  const auto img = compose(p);
  for (double v : img) CHECK(v == doctest::Approx(pixel_map(0.3)).epsilon(1e-14));
}

TEST_CASE("half-pixel bilinear upsampling of a 2-pixel ramp") {
  // Row [0, 1] at resolution 2 -> 4: centers map to -0.25, 0.25, 0.75, 1.25 (clamped).
  PyramidImage p(1, 2, 4);
  p.levels()[0].values = {0.0, 1.0, 0.0, 1.0};
  const auto img = compose(p);
  const double expect[4] = {0.0, 0.25, 0.75, 1.0};
  for (int x = 0; x < 4; ++x) CHECK(img[static_cast<std::size_t>(x)] == doctest::Approx(pixel_map(expect[x])).epsilon(1e-14));
}

TEST_CASE("add level doubles, caps, and keeps the composition") {
  std::mt19937_64 rng(1);
  PyramidImage p(3, 8, 32);
  std::normal_distribution<double> n;
  for (double& v : p.levels()[0].values) v = n(rng);
  const auto before = compose(p);
  CHECK(add_level(p));
  CHECK(p.top_resolution() == 16);
  const auto after = compose(p);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(std::abs(before[i] - after[i]) < 1e-6);
  CHECK(add_level(p));
  CHECK_FALSE(add_level(p));
  std::vector<std::size_t> res;
  for (const auto& l : p.levels()) res.push_back(l.resolution);
  CHECK(res == std::vector<std::size_t>{8, 16, 32});
  CHECK_FALSE(p.can_grow());
}

TEST_CASE("compose gradient w.r.t. a coarse entry matches finite differences") {
  std::mt19937_64 rng(2);
  PyramidImage p = random_pyramid(rng);
  const auto img = compose(p);
  const std::size_t pixel = 3 * 16 + 5 + 256;  // channel 1
  std::vector<double> grad_out(img.size(), 0.0);
  grad_out[pixel] = 1.0;
  const auto grads = compose_backward(p, img, grad_out);
  const double h = 1e-6;
  for (std::size_t entry : {std::size_t{16 + 0}, std::size_t{16 + 5}, std::size_t{16 + 1}}) {
    PyramidImage pp = p, pm = p;
    pp.levels()[0].values[entry] += h;
    pm.levels()[0].values[entry] -= h;
    const double fd = (compose(pp)[pixel] - compose(pm)[pixel]) / (2 * h);
    CHECK(rel_err(grads[0][entry], fd, 1e-10) < 1e-3);
  }
}

TEST_CASE("compose backward is the exact vector-Jacobian product for every level") {
  std::mt19937_64 rng(3);
  const PyramidImage p = random_pyramid(rng);
  const auto img = compose(p);
  std::vector<double> g(img.size());
  std::normal_distribution<double> n;
  for (double& v : g) v = n(rng);
  const auto grads = compose_backward(p, img, g);
  for (std::size_t l = 0; l < p.levels().size(); ++l) {
    std::vector<double> dir(p.levels()[l].values.size());
    for (double& v : dir) v = n(rng);
    const double h = 1e-6;
    PyramidImage pp = p, pm = p;
    for (std::size_t k = 0; k < dir.size(); ++k) {
      pp.levels()[l].values[k] += h * dir[k];
      pm.levels()[l].values[k] -= h * dir[k];
    }
    const auto ip = compose(pp), im = compose(pm);
    std::vector<double> diff(ip.size());
    for (std::size_t k = 0; k < ip.size(); ++k) diff[k] = (ip[k] - im[k]) / (2 * h);
    CHECK(rel_err(dot(grads[l], dir), dot(diff, g)) < 1e-6);
  }
}

TEST_CASE("composed pixels stay in [0,1] for extreme raw values") {
  std::mt19937_64 rng(4);
  PyramidImage p = random_pyramid(rng, 8, 32);
  for (auto& l : p.levels()) {
    for (double& v : l.values) v *= 1000.0;
  }
  const auto img = compose(p);
  CHECK(std::all_of(img.begin(), img.end(), [](double v) { return v >= 0.0 && v <= 1.0; }));
}

TEST_CASE("pyramid construction errors") {
  CHECK_THROWS_AS(PyramidImage(3, 16, 8), ValidationError);
  CHECK_THROWS_AS(PyramidImage(0, 4, 8), ValidationError);
}

TEST_CASE("augment is the identity at zero magnitudes without flip") {
  std::mt19937_64 rng(5);
  const ImageBatch x = random_images(3, {3, 16, 16}, rng);
  AugmentParams p;
  p.brightness_mag = p.saturation_mag = p.contrast_mag = p.translate_mag = p.cutout_mag = 0.0;
  p.flip = false;
  for (std::uint64_t seed : {0ULL, 1ULL, 99ULL}) {
    p.seed = seed;
    const ImageBatch y = augment(x, p);
    for (std::size_t k = 0; k < x.data().size(); ++k) CHECK(std::abs(y.data()[k] - x.data()[k]) < 1e-7);
  }
  const ImageBatch z = augment(x, AugmentParams::none());
  CHECK(z.data() == x.data());
}

TEST_CASE("augment is deterministic for a fixed seed") {
  std::mt19937_64 rng(6);
  const ImageBatch x = random_images(2, {3, 16, 16}, rng);
  AugmentParams p;
  p.seed = 42;
  CHECK(augment(x, p).data() == augment(x, p).data());
  p.seed = 43;
  AugmentParams q = p;
  q.seed = 44;
  CHECK(augment(x, p).data() != augment(x, q).data());
}

TEST_CASE("augment rejects magnitudes out of bounds") {
  ImageBatch x(1, {3, 8, 8}, 0.5);
  AugmentParams p;
  p.contrast_mag = 1.5;
  CHECK_THROWS_AS(augment(x, p), ValidationError);
  p = AugmentParams();
  p.translate_mag = -0.1;
  CHECK_THROWS_AS(augment(x, p), ValidationError);
}

TEST_CASE("brightness-only gradient matches finite differences") {
  std::mt19937_64 rng(7);
  const ImageBatch x = random_images(1, {3, 8, 8}, rng, 0.3, 0.7);
  AugmentParams p = AugmentParams::none();
  p.brightness = true;
  p.brightness_mag = 0.4;
  p.seed = 3;
  AugmentTape tape;
  const ImageBatch y = augment(x, p, &tape);
  ImageBatch g(1, x.shape());
  std::normal_distribution<double> n;
  for (double& v : g.data()) v = n(rng);
  const ImageBatch back = transform_backward(tape, g);
  const double h = 1e-6;
  for (std::size_t k : {std::size_t{0}, std::size_t{77}, std::size_t{191}}) {
    ImageBatch xp = x, xm = x;
    xp.data()[k] += h;
    xm.data()[k] -= h;
    const double fd = (dot(augment(xp, p).data(), g.data()) - dot(augment(xm, p).data(), g.data())) / (2 * h);
    CHECK(rel_err(back.data()[k], fd, 1e-10) < 1e-3);
  }
  CHECK(y.data() != x.data());
}

TEST_CASE("full augmentation backward is the adjoint of the forward map") {
  std::mt19937_64 rng(8);
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const ImageBatch x = random_images(2, {3, 16, 16}, rng, 0.2, 0.8);
    AugmentParams p;
    p.seed = seed;
    AugmentTape tape;
    augment(x, p, &tape);
    ImageBatch g(2, x.shape()), dir(2, x.shape());
    std::normal_distribution<double> n;
    for (double& v : g.data()) v = n(rng);
    for (double& v : dir.data()) v = n(rng);
    const ImageBatch back = transform_backward(tape, g);
    const double h = 1e-7;
    ImageBatch xp = x, xm = x;
    for (std::size_t k = 0; k < x.data().size(); ++k) {
      xp.data()[k] += h * dir.data()[k];
      xm.data()[k] -= h * dir.data()[k];
    }
    const AugmentTransform t = tape.transform;
    const double fd = (dot(apply_transform(xp, t).data(), g.data()) - dot(apply_transform(xm, t).data(), g.data())) / (2 * h);
    CHECK(rel_err(dot(back.data(), dir.data()), fd) < 1e-4);
  }
}

TEST_CASE("augmented outputs are clamped to [0,1]") {
  std::mt19937_64 rng(9);
  const ImageBatch x = random_images(4, {3, 16, 16}, rng);
  AugmentParams p;
  p.brightness_mag = 1.0;
  p.contrast_mag = 1.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    p.seed = s;
    const ImageBatch y = augment(x, p);
    CHECK(std::all_of(y.data().begin(), y.data().end(), [](double v) { return v >= 0.0 && v <= 1.0; }));
  }
}

TEST_CASE("bilinear resize keeps constants and is the identity at the same size") {
  ImageBatch c(2, {3, 16, 16}, 0.37);
  const ImageBatch up = resize_bilinear(c, 32);
  CHECK(up.shape() == ImageShape{3, 32, 32});
  for (double v : up.data()) CHECK(v == doctest::Approx(0.37).epsilon(1e-14));
  std::mt19937_64 rng(10);
  const ImageBatch x = random_images(1, {3, 8, 8}, rng);
  CHECK(resize_bilinear(x, 8).data() == x.data());
}
