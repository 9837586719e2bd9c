#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "lois/mask_set.hpp"
#include "lois/tensor.hpp"

namespace lois {

/// S×S location grid with C semantic categories.
struct GridSpec {
  std::size_t S = 12;
  std::size_t C = 80;

  void validate() const {
    if (S < 1) throw DomainError("grid side S must be >= 1");
    if (C < 1) throw DomainError("category count C must be >= 1");
  }
  std::size_t channels() const { return S * S; }
};

/// Dense H×W×E backbone feature map.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(std::size_t h, std::size_t w, std::size_t e, double fill = 0.0)
      : data_({h, w, e}, fill) {
    check();
  }
  explicit FeatureMap(Tensor<double> data) : data_(std::move(data)) {
    if (data_.rank() != 3) throw ShapeError("feature map must be rank 3, got " + format_dims(data_.dims()));
    check();
    if (!all_finite(data_.values())) throw DomainError("feature map has non-finite entries");
  }

  std::size_t height() const { return data_.dim(0); }
  std::size_t width() const { return data_.dim(1); }
  std::size_t channels() const { return data_.dim(2); }

  double& operator()(std::size_t r, std::size_t c, std::size_t e) { return data_(r, c, e); }
  double operator()(std::size_t r, std::size_t c, std::size_t e) const { return data_(r, c, e); }

  std::span<const double> pixel(std::size_t r, std::size_t c) const {
    return data_.values().subspan((r * width() + c) * channels(), channels());
  }

  const Tensor<double>& tensor() const { return data_; }

 private:
  void check() const {
    for (auto d : data_.dims())
      if (d < 1) throw ShapeError("feature map dims must be >= 1, got " + format_dims(data_.dims()));
  }

  Tensor<double> data_;
};

/// One 1×1 dynamic kernel per grid cell: S×S×E.
struct KernelBank {
  Tensor<double> kernels;

  std::size_t side() const { return kernels.dim(0); }
  std::size_t channels() const { return kernels.dim(2); }
};

/// Per-cell category scores: S×S×C, entries in [0,1].
struct CategoryMap {
  Tensor<double> scores;

  std::size_t side() const { return scores.dim(0); }
  std::size_t categories() const { return scores.dim(2); }
};

/// Output channel responsible for grid cell (i, j).
inline std::size_t grid_index(std::size_t i, std::size_t j, std::size_t S) {
  if (i >= S || j >= S) {
    throw DomainError("grid cell (" + std::to_string(i) + "," + std::to_string(j) +
                      ") outside " + std::to_string(S) + "x" + std::to_string(S) + " grid");
  }
  return i * S + j;
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Mask logits of the 1×1 dynamic convolution: S²×H×W, channel k = i·S + j.
inline Tensor<double> decode_mask_logits(const FeatureMap& F, const KernelBank& G) {
  if (G.kernels.rank() != 3 || G.kernels.dim(0) != G.kernels.dim(1))
    throw ShapeError("kernel bank must be S×S×E, got " + format_dims(G.kernels.dims()));
  if (G.channels() != F.channels())
    throw ShapeError("kernel channels " + std::to_string(G.channels()) + " != feature channels " +
                     std::to_string(F.channels()));
  const std::size_t S = G.side(), H = F.height(), W = F.width(), E = F.channels();
  Tensor<double> out({S * S, H, W});
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t j = 0; j < S; ++j) {
      const std::size_t k = grid_index(i, j, S);
      const double* w = &G.kernels(i, j, 0);
      for (std::size_t r = 0; r < H; ++r) {
        for (std::size_t c = 0; c < W; ++c) {
          auto f = F.pixel(r, c);
          double acc = 0.0;
          for (std::size_t e = 0; e < E; ++e) acc += w[e] * f[e];
          out(k, r, c) = acc;
        }
      }
    }
  }
  return out;
}

/// Soft masks in (0,1): sigmoid of the dynamic-convolution logits.
inline Tensor<double> decode_masks(const FeatureMap& F, const KernelBank& G) {
  auto t = decode_mask_logits(F, G);
  for (auto& v : t.values()) v = sigmoid(v);
  return t;
}

/// Keeps every cell whose best category score reaches `score_threshold`
/// (ties retained) and binarizes its mask at `mask_threshold` (>=).
inline MaskSet select_candidates(const Tensor<double>& masks, const CategoryMap& cat,
                                 double score_threshold, double mask_threshold) {
  if (!(score_threshold >= 0.0 && score_threshold <= 1.0))
    throw DomainError("score_threshold must lie in [0,1]");
  if (!(mask_threshold >= 0.0 && mask_threshold <= 1.0))
    throw DomainError("mask_threshold must lie in [0,1]");
  if (masks.rank() != 3) throw ShapeError("mask stack must be rank 3");
  const std::size_t S = cat.side(), C = cat.categories();
  if (cat.scores.rank() != 3 || cat.scores.dim(1) != S)
    throw ShapeError("category map must be S×S×C, got " + format_dims(cat.scores.dims()));
  if (masks.dim(0) != S * S)
    throw ShapeError("mask stack has " + std::to_string(masks.dim(0)) + " channels, grid needs " +
                     std::to_string(S * S));
  const std::size_t H = masks.dim(1), W = masks.dim(2);

  MaskSet out;
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t j = 0; j < S; ++j) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < C; ++c)
        if (cat.scores(i, j, c) > cat.scores(i, j, best)) best = c;
      const double conf = cat.scores(i, j, best);
      if (conf < score_threshold) continue;

      const std::size_t k = grid_index(i, j, S);
      ScoredMask m;
      m.soft = Tensor<double>({H, W});
      m.mask = BinaryMask({H, W});
      auto src = masks.slice(k);
      std::copy(src.begin(), src.end(), m.soft.data());
      for (std::size_t p = 0; p < H * W; ++p) m.mask.data()[p] = src[p] >= mask_threshold ? 1 : 0;
      m.score = conf;
      m.category = static_cast<int>(best);
      m.cell = static_cast<int>(k);
      out.push_back(std::move(m));
    }
  }
  return out;
}

}  // namespace lois
