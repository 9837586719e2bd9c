// Regenerates the binary CLI fixtures under tests/fixtures.
//   make_fixtures <dir>

#include <iostream>
#include <string>

#include "lois/lois.hpp"

using namespace lois;

namespace {

BinaryMask rect(std::size_t H, std::size_t W, std::size_t r0, std::size_t c0, std::size_t r1, std::size_t c1) {
  BinaryMask m({H, W}, 0);
  for (auto r = r0; r < r1; ++r)
    for (auto c = c0; c < c1; ++c) m(r, c) = 1;
  return m;
}

MaskSet random_rects(Rng& rng, std::size_t n, std::size_t H, std::size_t W) {
  MaskSet set;
  for (std::size_t i = 0; i < n; ++i) {
    const auto r0 = rng.below(H - 1), c0 = rng.below(W - 1);
    const auto r1 = r0 + 1 + rng.below(H - r0), c1 = c0 + 1 + rng.below(W - c0);
    set.push_back(make_scored_mask(rect(H, W, r0, c0, std::min(r1, H), std::min(c1, W)), 0.05 + 0.9 * rng.uniform()));
  }
  return set;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_fixtures <dir>\n";
    return 2;
  }
  const std::string dir = argv[1];
  Rng rng(20240501);

  Tensor<double> features({8, 8, 4});
  for (auto& v : features.values()) v = rng.uniform(-1.0, 1.0);
  write_tensor(dir + "/features.lten", features);

  Tensor<double> kernels({2, 2, 4});
  for (auto& v : kernels.values()) v = rng.uniform(-2.0, 2.0);
  write_tensor(dir + "/kernels.lten", kernels);

  // Cells (0,0) and (1,1) pass the default 0.1 score threshold.
  Tensor<double> categories({2, 2, 3}, 0.02);
  categories(0, 0, 2) = 0.85;
  categories(0, 1, 0) = 0.08;
  categories(1, 1, 1) = 0.4;
  write_tensor(dir + "/categories.lten", categories);

  MaskSet identical = {make_scored_mask(rect(8, 8, 2, 2, 6, 6), 0.9), make_scored_mask(rect(8, 8, 2, 2, 6, 6), 0.6)};
  write_bundle(dir + "/identical_masks.lbdl", mask_set_bundle(identical, 8, 8));

  MaskSet overlapping = {make_scored_mask(rect(8, 8, 0, 0, 4, 4), 0.95), make_scored_mask(rect(8, 8, 1, 1, 4, 5), 0.7),
                         make_scored_mask(rect(8, 8, 4, 4, 8, 8), 0.6), make_scored_mask(rect(8, 8, 6, 0, 8, 3), 0.3),
                         make_scored_mask(rect(8, 8, 0, 0, 4, 4), 0.04)};
  write_bundle(dir + "/masks.lbdl", mask_set_bundle(overlapping, 8, 8));

  Tensor<double> image({8, 8, 3});
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 8; ++c) {
      image(r, c, 0) = static_cast<double>(r) / 7.0;
      image(r, c, 1) = static_cast<double>(c) / 7.0;
      image(r, c, 2) = 0.5;
    }
  write_tensor(dir + "/image.lten", image);

  Bundle sets;
  for (std::size_t i = 0; i < 12; ++i) add_mask_set(sets, random_rects(rng, 2 + 2 * i, 6, 6), 6, 6, std::to_string(i) + ".");
  write_bundle(dir + "/mask_sets.lbdl", sets);
  return 0;
}
