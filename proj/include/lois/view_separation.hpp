#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <string>
#include <vector>

#include "lois/mask_decoder.hpp"
#include "lois/mask_set.hpp"
#include "lois/matrix_nms.hpp"
#include "lois/tensor.hpp"

namespace lois {

/// Union of all retained binary instance masks.
struct FusedInstanceMask {
  BinaryMask mask;  // H×W

  std::size_t height() const { return mask.dim(0); }
  std::size_t width() const { return mask.dim(1); }
  bool covered(std::size_t r, std::size_t c) const { return mask(r, c) != 0; }
};

/// Instance view D (L×ρ) and background view B (L×φ).
struct ViewFeatures {
  Eigen::MatrixXd instance;
  Eigen::MatrixXd background;

  Eigen::Index feature_dim() const { return background.rows(); }
  Eigen::Index instances() const { return instance.cols(); }
  Eigen::Index cells() const { return background.cols(); }
};

enum class FillStrategy { Mean, Constant };

struct Fill {
  FillStrategy strategy = FillStrategy::Mean;
  double value = 0.0;  // used by Constant, and by Mean when nothing is visible
};

/// Pixelwise OR of the binarized masks; `height`/`width` size the empty case.
inline FusedInstanceMask fuse_instances(const MaskSet& masks, std::size_t height, std::size_t width) {
  FusedInstanceMask out{BinaryMask({height, width}, 0)};
  for (const auto& m : masks) {
    if (m.mask.dims() != out.mask.dims())
      throw ShapeError("instance mask " + format_dims(m.mask.dims()) + " does not match " +
                       format_dims(out.mask.dims()));
    for (std::size_t p = 0; p < m.mask.size(); ++p) out.mask.data()[p] |= m.mask.data()[p];
  }
  return out;
}

/// Fuses the survivors of a suppression pass over `set`.
inline FusedInstanceMask fuse_instances(const MaskSet& set, const SuppressionResult& result,
                                        std::size_t height, std::size_t width) {
  return fuse_instances(retained_masks(set, result), height, width);
}

/// Nearest-neighbour resampling of a binary mask onto an h×w grid.
inline BinaryMask resample_nearest(const BinaryMask& m, std::size_t h, std::size_t w) {
  const std::size_t sh = m.dim(0), sw = m.dim(1);
  if (sh == h && sw == w) return m;
  BinaryMask out({h, w});
  for (std::size_t r = 0; r < h; ++r) {
    const std::size_t rs = std::min(sh - 1, (2 * r + 1) * sh / (2 * h));
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t cs = std::min(sw - 1, (2 * c + 1) * sw / (2 * w));
      out(r, c) = m(rs, cs);
    }
  }
  return out;
}

/// Background image: uncovered pixels copied from `image` (H×W×K), covered
/// pixels replaced by the fill. Mean fill averages the uncovered pixels per
/// channel and falls back to the constant when every pixel is covered.
inline Tensor<double> background_image(const FusedInstanceMask& fused, const Tensor<double>& image,
                                       Fill fill = {}) {
  if (image.rank() != 3 || image.dim(0) != fused.height() || image.dim(1) != fused.width())
    throw ShapeError("image " + format_dims(image.dims()) + " does not match mask " +
                     format_dims(fused.mask.dims()));
  const std::size_t H = image.dim(0), W = image.dim(1), K = image.dim(2);

  std::vector<double> value(K, fill.value);
  if (fill.strategy == FillStrategy::Mean) {
    std::vector<double> sum(K, 0.0);
    std::size_t n = 0;
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c) {
        if (fused.covered(r, c)) continue;
        ++n;
        for (std::size_t k = 0; k < K; ++k) sum[k] += image(r, c, k);
      }
    if (n > 0)
      for (std::size_t k = 0; k < K; ++k) value[k] = sum[k] / static_cast<double>(n);
  }

  Tensor<double> out = image;
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c)
      if (fused.covered(r, c))
        for (std::size_t k = 0; k < K; ++k) out(r, c, k) = value[k];
  return out;
}

/// Column i = mean feature over the pixels of instance mask i (masks are
/// resampled to the feature grid); an empty mask gives a zero column.
inline Eigen::MatrixXd instance_features(const FeatureMap& F, const MaskSet& instances) {
  const std::size_t H = F.height(), W = F.width(), E = F.channels();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(E),
                                              static_cast<Eigen::Index>(instances.size()));
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const BinaryMask m = resample_nearest(instances[i].mask, H, W);
    std::size_t n = 0;
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c) {
        if (!m(r, c)) continue;
        ++n;
        auto f = F.pixel(r, c);
        for (std::size_t e = 0; e < E; ++e) out(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(i)) += f[e];
      }
    if (n > 0) out.col(static_cast<Eigen::Index>(i)) /= static_cast<double>(n);
  }
  return out;
}

inline Eigen::MatrixXd instance_features(const FeatureMap& F, const MaskSet& set,
                                         const SuppressionResult& result) {
  return instance_features(F, retained_masks(set, result));
}

/// Uniform G×G grid pooling over the pixels NOT covered by `fused`
/// (resampled to the input grid). Cell (a, b) lands in column a·G + b; a
/// cell with no uncovered pixels yields a zero column.
inline Eigen::MatrixXd grid_pool(const Tensor<double>& input, const FusedInstanceMask& fused, std::size_t G) {
  if (G < 1) throw DomainError("grid_pool needs G >= 1");
  if (input.rank() != 3) throw ShapeError("grid_pool input must be H×W×K");
  const std::size_t H = input.dim(0), W = input.dim(1), K = input.dim(2);
  const BinaryMask cover = resample_nearest(fused.mask, H, W);

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(G * G));
  for (std::size_t a = 0; a < G; ++a) {
    const std::size_t r0 = a * H / G, r1 = (a + 1) * H / G;
    for (std::size_t b = 0; b < G; ++b) {
      const std::size_t c0 = b * W / G, c1 = (b + 1) * W / G;
      const auto col = static_cast<Eigen::Index>(a * G + b);
      std::size_t n = 0;
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) {
          if (cover(r, c)) continue;
          ++n;
          for (std::size_t k = 0; k < K; ++k) out(static_cast<Eigen::Index>(k), col) += input(r, c, k);
        }
      if (n > 0) out.col(col) /= static_cast<double>(n);
    }
  }
  return out;
}

inline Eigen::MatrixXd grid_pool(const FeatureMap& F, const FusedInstanceMask& fused, std::size_t G) {
  return grid_pool(F.tensor(), fused, G);
}

/// Full separation of one image: suppression survivors become D, the
/// uncovered remainder of the feature map is grid-pooled into B.
inline ViewFeatures separate_views(const FeatureMap& F, const MaskSet& set, const SuppressionResult& result,
                                   std::size_t G) {
  const MaskSet kept = retained_masks(set, result);
  std::size_t h = F.height(), w = F.width();
  if (!set.empty()) {
    h = set.front().height();
    w = set.front().width();
  }
  const FusedInstanceMask fused = fuse_instances(kept, h, w);
  return {instance_features(F, kept), grid_pool(F, fused, G)};
}

}  // namespace lois
