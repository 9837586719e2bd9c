#pragma once

#include <cmath>
#include <string>

#include "lois/io.hpp"
#include "lois/mask_set.hpp"
#include "lois/matrix_nms.hpp"
#include "lois/relation_attention.hpp"
#include "lois/view_separation.hpp"

namespace lois {

inline Tensor<double> to_tensor(const Mat& m) {
  Tensor<double> t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t(r, c) = m(r, c);
  return t;
}

inline Mat to_matrix(const Tensor<double>& t) {
  if (t.rank() != 2) throw ShapeError("expected a rank-2 tensor, got " + format_dims(t.dims()));
  Mat m(static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
  for (std::size_t r = 0; r < t.dim(0); ++r)
    for (std::size_t c = 0; c < t.dim(1); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = t(r, c);
  return m;
}

inline Tensor<double> to_tensor(const std::vector<double>& v) { return Tensor<double>({v.size()}, v); }

// ---------------------------------------------------------------------------
// Mask sets: "<prefix>binary" K×H×W f32, "<prefix>soft" K×H×W f32,
// "<prefix>scores" K f64, "<prefix>categories" K f64.

inline void add_mask_set(Bundle& b, const MaskSet& set, std::size_t height, std::size_t width,
                         const std::string& prefix = "") {
  const std::size_t K = set.size();
  Tensor<double> binary({K, height, width}), soft({K, height, width}), scores({K}), cats({K});
  for (std::size_t k = 0; k < K; ++k) {
    if (set[k].mask.dims() != std::vector<std::size_t>{height, width})
      throw ShapeError("mask " + std::to_string(k) + " is " + format_dims(set[k].mask.dims()));
    auto bs = binary.slice(k);
    auto ss = soft.slice(k);
    for (std::size_t p = 0; p < height * width; ++p) {
      bs[p] = set[k].mask.data()[p];
      ss[p] = set[k].soft.size() == set[k].mask.size() ? set[k].soft.data()[p] : bs[p];
    }
    scores(k) = set[k].score;
    cats(k) = set[k].category;
  }
  b.add(prefix + "binary", std::move(binary), DType::F32);
  b.add(prefix + "soft", std::move(soft), DType::F32);
  b.add(prefix + "scores", std::move(scores));
  b.add(prefix + "categories", std::move(cats));
}

inline Bundle mask_set_bundle(const MaskSet& set, std::size_t height, std::size_t width) {
  Bundle b;
  add_mask_set(b, set, height, width);
  return b;
}

inline MaskSet read_mask_set(const Bundle& b, const std::string& prefix = "") {
  const auto& binary = b.at(prefix + "binary");
  const auto& scores = b.at(prefix + "scores");
  if (binary.rank() != 3 || scores.rank() != 1 || scores.dim(0) != binary.dim(0))
    throw DataError("mask set tensors have inconsistent shapes");
  const auto* soft = b.find(prefix + "soft");
  const auto* cats = b.find(prefix + "categories");
  const std::size_t K = binary.dim(0), H = binary.dim(1), W = binary.dim(2);
  MaskSet set;
  for (std::size_t k = 0; k < K; ++k) {
    ScoredMask m;
    m.mask = BinaryMask({H, W});
    m.soft = Tensor<double>({H, W});
    auto bs = binary.slice(k);
    for (std::size_t p = 0; p < H * W; ++p) {
      if (bs[p] != 0.0 && bs[p] != 1.0) throw DataError("binary mask " + std::to_string(k) + " has non-0/1 entries");
      m.mask.data()[p] = bs[p] != 0.0;
      m.soft.data()[p] = soft ? soft->slice(k)[p] : bs[p];
    }
    m.score = scores(k);
    if (!std::isfinite(m.score) || m.score < 0.0 || m.score > 1.0)
      throw DataError("mask " + std::to_string(k) + " score outside [0,1]");
    m.category = cats ? static_cast<int>(cats->operator()(k)) : 0;
    set.push_back(std::move(m));
  }
  return set;
}

// ---------------------------------------------------------------------------
// Suppression results

inline Bundle suppression_bundle(const SuppressionResult& r) {
  Bundle b;
  b.add("updated_scores", to_tensor(r.updated_scores));
  std::vector<double> kept(r.kept_indices.begin(), r.kept_indices.end());
  b.add("kept_indices", to_tensor(kept));
  b.add("penalties", to_tensor(r.penalties));
  return b;
}

inline SuppressionResult read_suppression(const Bundle& b) {
  SuppressionResult r;
  auto vals = [](const Tensor<double>& t) { return std::vector<double>(t.values().begin(), t.values().end()); };
  r.updated_scores = vals(b.at("updated_scores"));
  r.penalties = vals(b.at("penalties"));
  for (double k : b.at("kept_indices").values()) r.kept_indices.push_back(static_cast<std::size_t>(k));
  return r;
}

// ---------------------------------------------------------------------------
// View features

inline Bundle view_bundle(const ViewFeatures& v) {
  Bundle b;
  b.add("instance", to_tensor(v.instance));
  b.add("background", to_tensor(v.background));
  return b;
}

inline ViewFeatures read_views(const Bundle& b) {
  return {to_matrix(b.at("instance")), to_matrix(b.at("background"))};
}

// ---------------------------------------------------------------------------
// Checkpoints: "meta.model" holds [L, n, h, gamma, gamma_att, heads, m, T,
// mask_question_padding, order index], then every parameter tensor by name.

inline Bundle checkpoint_bundle(const ModelParams& p) {
  Bundle b;
  const auto& d = p.dims;
  std::size_t order_index = 0;
  while (kAllOrders[order_index] != p.order) ++order_index;
  b.add("meta.model", to_tensor(std::vector<double>{
                          static_cast<double>(d.L), static_cast<double>(d.n), static_cast<double>(d.h),
                          static_cast<double>(d.gamma), static_cast<double>(d.gamma_att),
                          static_cast<double>(d.heads), static_cast<double>(d.m), static_cast<double>(d.T),
                          d.mask_question_padding ? 1.0 : 0.0, static_cast<double>(order_index)}));
  for (const auto& [name, t] : p.tensors()) b.add(name, to_tensor(*t));
  return b;
}

inline ModelParams read_checkpoint(const Bundle& b) {
  const auto& meta = b.at("meta.model");
  if (meta.rank() != 1 || meta.dim(0) != 10) throw DataError("checkpoint meta.model has the wrong shape");
  ModelDims d;
  auto u = [&](std::size_t i) { return static_cast<std::size_t>(meta(i)); };
  d.L = u(0);
  d.n = u(1);
  d.h = u(2);
  d.gamma = u(3);
  d.gamma_att = u(4);
  d.heads = u(5);
  d.m = u(6);
  d.T = u(7);
  d.mask_question_padding = meta(8) != 0.0;
  if (u(9) >= kAllOrders.size()) throw DataError("checkpoint has an unknown composition order");
  ModelParams p = init_params(d, kAllOrders[u(9)], 0);
  for (auto& [name, t] : p.tensors()) {
    Mat loaded = to_matrix(b.at(name));
    if (loaded.rows() != t->rows() || loaded.cols() != t->cols())
      throw DataError("checkpoint tensor '" + name + "' has the wrong shape");
    *t = std::move(loaded);
  }
  return p;
}

}  // namespace lois
