#pragma once

#include <cstddef>
#include <vector>

#include "lois/tensor.hpp"

namespace lois {

/// One candidate instance: soft mask, its binarization, confidence and label.
struct ScoredMask {
  Tensor<double> soft;  // H×W in [0,1]
  BinaryMask mask;      // H×W in {0,1}
  double score = 0.0;
  int category = 0;
  int cell = -1;  // grid channel that produced it, -1 when unknown

  std::size_t height() const { return mask.dim(0); }
  std::size_t width() const { return mask.dim(1); }

  std::size_t area() const {
    std::size_t a = 0;
    for (auto v : mask.values()) a += v;
    return a;
  }
};

using MaskSet = std::vector<ScoredMask>;

/// Builds a ScoredMask whose soft mask equals its binary mask.
inline ScoredMask make_scored_mask(BinaryMask mask, double score, int category = 0) {
  ScoredMask m;
  m.soft = Tensor<double>(mask.dims());
  for (std::size_t i = 0; i < mask.size(); ++i) m.soft.data()[i] = mask.data()[i];
  m.mask = std::move(mask);
  m.score = score;
  m.category = category;
  return m;
}

}  // namespace lois
