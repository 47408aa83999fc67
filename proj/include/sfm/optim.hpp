#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace sfm {

// Adam with independent moment buffers and step counters per parameter slot,
// so slots registered mid-run (new pyramid levels) start with fresh moments.
class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

  void step(std::size_t slot, std::span<double> params, std::span<const double> grad);
  double learning_rate() const { return lr_; }

 private:
  struct Slot {
    std::vector<double> m, v;
    std::uint64_t t = 0;
  };
  double lr_, beta1_, beta2_, eps_;
  std::vector<Slot> slots_;
};

}  // namespace sfm
