#pragma once

// Two-stage bilinear relation attention: an attended block over two views,
// glimpse outputs concatenated and projected to m, a second block between
// that fused vector and the remaining view, and an affine answer head.
//
// A block takes X (a×nx) and Y (b×ny):
//   X~ = tanh(Wxᵀ X + bx),  Y~ = tanh(Wyᵀ Y + by)          (d = min(a, b))
//   S_g(i,j) = Σ_r P(r,g) (Uᵀ X~_i)_r (Zᵀ Y~_j)_r
//   A_g = softmax over all nx·ny entries of S_g
//   O_g(r) = Σ_ij A_g(i,j) (U'ᵀ X~_i)_r (Z'ᵀ Y~_j)_r
// A plain block (no attention) uses a uniform A and a single glimpse.

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lois/rng.hpp"
#include "lois/tensor.hpp"

namespace lois {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Composition orders

enum class ComposeOrder { IBQ, IQB, BQI, IB, IQ, BQ, None };

inline constexpr std::array<ComposeOrder, 7> kAllOrders = {
    ComposeOrder::IBQ, ComposeOrder::IQB, ComposeOrder::BQI, ComposeOrder::IB,
    ComposeOrder::IQ,  ComposeOrder::BQ,  ComposeOrder::None};

inline std::string_view order_name(ComposeOrder o) {
  switch (o) {
    case ComposeOrder::IBQ: return "I-B-Q";
    case ComposeOrder::IQB: return "I-Q-B";
    case ComposeOrder::BQI: return "B-Q-I";
    case ComposeOrder::IB: return "I-B";
    case ComposeOrder::IQ: return "I-Q";
    case ComposeOrder::BQ: return "B-Q";
    case ComposeOrder::None: return "none";
  }
  return "?";
}

inline ComposeOrder parse_order(std::string_view s) {
  for (auto o : kAllOrders)
    if (order_name(o) == s) return o;
  throw DomainError("unknown composition order '" + std::string(s) +
                    "' (expected I-B-Q, I-Q-B, B-Q-I, I-B, I-Q, B-Q or none)");
}

enum class View { Instance, Background, Question };

/// Which views feed each stage, and whether the second stage attends.
struct OrderPlan {
  View first_x, first_y, second_y;
  bool second_attended;
};

inline OrderPlan order_plan(ComposeOrder o) {
  using V = View;
  switch (o) {
    case ComposeOrder::IBQ: return {V::Instance, V::Background, V::Question, true};
    case ComposeOrder::IQB: return {V::Instance, V::Question, V::Background, true};
    case ComposeOrder::BQI: return {V::Background, V::Question, V::Instance, true};
    case ComposeOrder::IB: return {V::Instance, V::Background, V::Question, false};
    case ComposeOrder::IQ: return {V::Instance, V::Question, V::Background, false};
    case ComposeOrder::BQ: return {V::Background, V::Question, V::Instance, false};
    case ComposeOrder::None: break;
  }
  return {V::Instance, V::Background, V::Question, false};
}

// ---------------------------------------------------------------------------
// Dimensions and parameters

struct ModelDims {
  std::size_t L = 16;          // visual feature dim
  std::size_t n = 32;          // question embedding dim
  std::size_t h = 14;          // question length
  std::size_t gamma = 8;       // pooling rank
  std::size_t gamma_att = 8;   // attention-logit rank
  std::size_t heads = 2;       // glimpses
  std::size_t m = 16;          // fused dim after the first stage
  std::size_t T = 8;           // answer vocabulary
  bool mask_question_padding = false;

  void validate() const {
    auto need = [](std::size_t v, const char* name) {
      if (v < 1) throw DomainError(std::string("model dimension ") + name + " must be >= 1");
    };
    need(L, "L");
    need(n, "n");
    need(h, "h");
    need(gamma, "gamma");
    need(gamma_att, "gamma_att");
    need(heads, "heads");
    need(m, "m");
    need(T, "T");
  }

  std::size_t view_dim(View v) const { return v == View::Question ? n : L; }
};

struct BlockParams {
  bool attended = true;
  Mat Wx, bx, Wy, by;  // tanh projections to the shared dim d
  Mat U, Z, P;         // logit factors (d×γ') and glimpse vectors (γ'×G)
  Mat Up, Zp;          // pooling factors (d×γ)

  Eigen::Index shared_dim() const { return Wx.cols(); }
  Eigen::Index glimpses() const { return attended ? P.cols() : 1; }
};

/// First stage: attended block whose concatenated glimpses project to m.
struct AttentionParams {
  BlockParams block;
  Mat Wo, bo;
};

/// Second stage plus the answer classifier.
struct InterParams {
  BlockParams block;
  Mat Wc, bc;
};

struct ModelParams {
  ComposeOrder order = ComposeOrder::IBQ;
  ModelDims dims;
  AttentionParams intra;
  InterParams inter;

  /// Every tensor in use, in a fixed order, with stable names.
  std::vector<std::pair<std::string, Mat*>> tensors() { return collect<Mat*>(*this); }
  std::vector<std::pair<std::string, const Mat*>> tensors() const { return collect<const Mat*>(*this); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto& [name, t] : tensors()) n += static_cast<std::size_t>(t->size());
    return n;
  }

  /// Same structure with every tensor zeroed.
  ModelParams zeros_like() const {
    ModelParams z = *this;
    for (auto& [name, t] : z.tensors()) t->setZero();
    return z;
  }

 private:
  template <typename Ptr, typename Self>
  static std::vector<std::pair<std::string, Ptr>> collect(Self& self) {
    std::vector<std::pair<std::string, Ptr>> out;
    auto add = [&](const char* name, auto& t) {
      if (t.size() > 0) out.emplace_back(name, &t);
    };
    auto& a = self.intra.block;
    add("intra.Wx", a.Wx);
    add("intra.bx", a.bx);
    add("intra.Wy", a.Wy);
    add("intra.by", a.by);
    add("intra.U", a.U);
    add("intra.Z", a.Z);
    add("intra.P", a.P);
    add("intra.Up", a.Up);
    add("intra.Zp", a.Zp);
    add("intra.Wo", self.intra.Wo);
    add("intra.bo", self.intra.bo);
    auto& b = self.inter.block;
    add("inter.Wx", b.Wx);
    add("inter.bx", b.bx);
    add("inter.Wy", b.Wy);
    add("inter.by", b.by);
    add("inter.U", b.U);
    add("inter.Z", b.Z);
    add("inter.P", b.P);
    add("inter.Up", b.Up);
    add("inter.Zp", b.Zp);
    add("inter.Wc", self.inter.Wc);
    add("inter.bc", self.inter.bc);
    return out;
  }
};

namespace detail {

inline Mat uniform_fan_in(Rng& rng, Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Mat out(rows, cols);
  // Column-major fill order is part of the reproducibility contract.
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) out(r, c) = rng.uniform(-bound, bound);
  return out;
}

inline BlockParams init_block(Rng& rng, std::size_t a, std::size_t b, const ModelDims& d, bool attended) {
  const auto A = static_cast<Eigen::Index>(a), B = static_cast<Eigen::Index>(b);
  const Eigen::Index s = std::min(A, B);
  const auto ga = static_cast<Eigen::Index>(d.gamma_att), g = static_cast<Eigen::Index>(d.gamma);
  BlockParams p;
  p.attended = attended;
  p.Wx = uniform_fan_in(rng, A, s, A);
  p.bx = uniform_fan_in(rng, s, 1, A);
  p.Wy = uniform_fan_in(rng, B, s, B);
  p.by = uniform_fan_in(rng, s, 1, B);
  if (attended) {
    p.U = uniform_fan_in(rng, s, ga, s);
    p.Z = uniform_fan_in(rng, s, ga, s);
    p.P = uniform_fan_in(rng, ga, static_cast<Eigen::Index>(d.heads), ga);
  }
  p.Up = uniform_fan_in(rng, s, g, s);
  p.Zp = uniform_fan_in(rng, s, g, s);
  return p;
}

}  // namespace detail

/// Seeded initialization, uniform in ±1/sqrt(fan_in) for every tensor.
inline ModelParams init_params(const ModelDims& dims, ComposeOrder order, std::uint64_t seed) {
  dims.validate();
  Rng rng(mix_keys({seed, 0x1417ULL}));
  ModelParams p;
  p.order = order;
  p.dims = dims;
  const auto L = static_cast<Eigen::Index>(dims.L), n = static_cast<Eigen::Index>(dims.n),
             T = static_cast<Eigen::Index>(dims.T);
  if (order == ComposeOrder::None) {
    auto& a = p.intra.block;
    a.attended = false;
    a.Wx = detail::uniform_fan_in(rng, L, L, L);
    a.bx = detail::uniform_fan_in(rng, L, 1, L);
    a.Wy = detail::uniform_fan_in(rng, L, L, L);
    a.by = detail::uniform_fan_in(rng, L, 1, L);
    auto& b = p.inter.block;
    b.attended = false;
    b.Wy = detail::uniform_fan_in(rng, n, n, n);
    b.by = detail::uniform_fan_in(rng, n, 1, n);
    p.inter.Wc = detail::uniform_fan_in(rng, 2 * L + n, T, 2 * L + n);
    p.inter.bc = detail::uniform_fan_in(rng, T, 1, 2 * L + n);
    return p;
  }
  const OrderPlan plan = order_plan(order);
  const auto m = static_cast<Eigen::Index>(dims.m);
  const auto pooled = static_cast<Eigen::Index>(dims.gamma * dims.heads);
  p.intra.block = detail::init_block(rng, dims.view_dim(plan.first_x), dims.view_dim(plan.first_y), dims, true);
  p.intra.Wo = detail::uniform_fan_in(rng, pooled, m, pooled);
  p.intra.bo = detail::uniform_fan_in(rng, m, 1, pooled);
  p.inter.block = detail::init_block(rng, dims.m, dims.view_dim(plan.second_y), dims, plan.second_attended);
  const auto g = static_cast<Eigen::Index>(dims.gamma);
  p.inter.Wc = detail::uniform_fan_in(rng, g, T, g);
  p.inter.bc = detail::uniform_fan_in(rng, T, 1, g);
  return p;
}

// ---------------------------------------------------------------------------
// Dropout

/// Forward-pass mode. Train mode applies seeded inverted dropout after
/// every projection; eval mode is the identity.
struct ForwardMode {
  bool train = false;
  double dropout = 0.5;
  std::uint64_t seed = 0;

  static ForwardMode eval() { return {}; }
  static ForwardMode training(double rate, std::uint64_t seed) { return {true, rate, seed}; }
};

class DropoutSampler {
 public:
  explicit DropoutSampler(const ForwardMode& mode)
      : active_(mode.train && mode.dropout > 0.0), rate_(mode.dropout), rng_(mix_keys({mode.seed, 0xd0ULL})) {
    if (mode.train && !(mode.dropout >= 0.0 && mode.dropout < 1.0))
      throw DomainError("dropout rate must lie in [0,1)");
  }

  /// Keep-scale matrix (0 or 1/(1-rate)); empty when inactive.
  Mat mask(Eigen::Index rows, Eigen::Index cols) {
    if (!active_) return Mat(0, cols);
    Mat k(rows, cols);
    const double scale = 1.0 / (1.0 - rate_);
    for (Eigen::Index c = 0; c < cols; ++c)
      for (Eigen::Index r = 0; r < rows; ++r) k(r, c) = rng_.uniform() < rate_ ? 0.0 : scale;
    return k;
  }

 private:
  bool active_;
  double rate_;
  Rng rng_;
};

inline Mat apply_keep(const Mat& x, const Mat& keep) {
  return keep.size() == 0 ? x : Mat(x.cwiseProduct(keep));
}

// ---------------------------------------------------------------------------
// Building blocks

/// tanh(Wᵀ X + b·1ᵀ): projects every column of X (k×cols) to W's width.
inline Mat project_tanh(const Mat& X, const Mat& W, const Mat& b) {
  if (W.rows() != X.rows() || b.rows() != W.cols() || b.cols() != 1)
    throw ShapeError("project_tanh: X is " + std::to_string(X.rows()) + "x" + std::to_string(X.cols()) +
                     ", W is " + std::to_string(W.rows()) + "x" + std::to_string(W.cols()) + ", b has " +
                     std::to_string(b.rows()) + " rows");
  Mat pre = W.transpose() * X;
  pre.colwise() += b.col(0);
  return pre.array().tanh().matrix();
}

inline Mat logits_from_factors(const Mat& ux, const Mat& zy, const Eigen::Ref<const Vec>& p) {
  return ux.transpose() * p.asDiagonal() * zy;
}

/// logits(i,j) = Σ_r p_r (Uᵀ X~_i)_r (Zᵀ Y~_j)_r.
inline Mat attention_logits(const Mat& Xt, const Mat& Yt, const Mat& U, const Mat& Z, const Vec& p) {
  if (U.rows() != Xt.rows() || Z.rows() != Yt.rows() || U.cols() != Z.cols() || p.size() != U.cols())
    throw ShapeError("attention_logits: factor dimensions disagree");
  return logits_from_factors(U.transpose() * Xt, Z.transpose() * Yt, p);
}

/// Softmax jointly over every entry of `logits`. When `column_valid` is
/// given, entries in invalid columns get zero weight; if no column is valid
/// the mask is ignored.
inline Mat attention_softmax(const Mat& logits, const std::vector<bool>* column_valid = nullptr) {
  Mat out = Mat::Zero(logits.rows(), logits.cols());
  if (logits.size() == 0) return out;
  bool use_mask = false;
  if (column_valid) {
    if (column_valid->size() != static_cast<std::size_t>(logits.cols()))
      throw ShapeError("attention_softmax: column mask length mismatch");
    for (bool v : *column_valid) use_mask |= v;
  }
  auto valid = [&](Eigen::Index j) { return !use_mask || (*column_valid)[static_cast<std::size_t>(j)]; };

  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < logits.cols(); ++j)
    if (valid(j)) mx = std::max(mx, logits.col(j).maxCoeff());
  double total = 0.0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    if (!valid(j)) continue;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      out(i, j) = std::exp(logits(i, j) - mx);
      total += out(i, j);
    }
  }
  return out / total;
}

inline Vec pool_from_factors(const Mat& px, const Mat& qy, const Mat& alpha) {
  return (px * alpha).cwiseProduct(qy).rowwise().sum();
}

/// O(r) = Σ_ij α(i,j) (X~_iᵀ U'_r)(Z'_rᵀ Y~_j).
inline Vec bilinear_pool(const Mat& Xt, const Mat& Yt, const Mat& alpha, const Mat& Up, const Mat& Zp) {
  if (Up.rows() != Xt.rows() || Zp.rows() != Yt.rows() || Up.cols() != Zp.cols() ||
      alpha.rows() != Xt.cols() || alpha.cols() != Yt.cols())
    throw ShapeError("bilinear_pool: dimensions disagree");
  return pool_from_factors(Up.transpose() * Xt, Zp.transpose() * Yt, alpha);
}

/// Intermediate values of one block, kept for the backward pass.
struct BlockCache {
  Mat x, y;
  Mat xt, yt;        // tanh projections
  Mat xkeep, ykeep;  // dropout keep-scales, empty when inactive
  Mat xd, yd;        // projections after dropout
  Mat ux, zy;        // Uᵀ xd, Zᵀ yd
  Mat px, qy;        // U'ᵀ xd, Z'ᵀ yd
  std::vector<Mat> maps;
  Mat pooled;  // γ × G
};

inline BlockCache block_forward(const BlockParams& p, const Mat& x, const Mat& y,
                                const std::vector<bool>* y_valid, DropoutSampler& drop) {
  BlockCache c;
  c.x = x;
  c.y = y;
  c.xt = project_tanh(x, p.Wx, p.bx);
  c.yt = project_tanh(y, p.Wy, p.by);
  c.xkeep = drop.mask(c.xt.rows(), c.xt.cols());
  c.ykeep = drop.mask(c.yt.rows(), c.yt.cols());
  c.xd = apply_keep(c.xt, c.xkeep);
  c.yd = apply_keep(c.yt, c.ykeep);
  c.px = p.Up.transpose() * c.xd;
  c.qy = p.Zp.transpose() * c.yd;
  const Eigen::Index G = p.glimpses();
  c.pooled.resize(p.Up.cols(), G);
  if (p.attended) {
    c.ux = p.U.transpose() * c.xd;
    c.zy = p.Z.transpose() * c.yd;
  }
  for (Eigen::Index g = 0; g < G; ++g) {
    const Mat logits = p.attended ? logits_from_factors(c.ux, c.zy, p.P.col(g))
                                  : Mat(Mat::Zero(c.xd.cols(), c.yd.cols()));
    c.maps.push_back(attention_softmax(logits, y_valid));
    c.pooled.col(g) = pool_from_factors(c.px, c.qy, c.maps.back());
  }
  return c;
}

/// Accumulates parameter gradients into `grad` and returns (dx, dy).
inline std::pair<Mat, Mat> block_backward(const BlockParams& p, const BlockCache& c, const Mat& dpooled,
                                          BlockParams& grad) {
  Mat dpx = Mat::Zero(c.px.rows(), c.px.cols());
  Mat dqy = Mat::Zero(c.qy.rows(), c.qy.cols());
  Mat dux, dzy;
  if (p.attended) {
    dux = Mat::Zero(c.ux.rows(), c.ux.cols());
    dzy = Mat::Zero(c.zy.rows(), c.zy.cols());
  }
  for (std::size_t g = 0; g < c.maps.size(); ++g) {
    const Mat& A = c.maps[g];
    const Vec dO = dpooled.col(static_cast<Eigen::Index>(g));
    dpx += dO.asDiagonal() * c.qy * A.transpose();
    dqy += dO.asDiagonal() * c.px * A;
    if (!p.attended) continue;
    const Mat dA = c.px.transpose() * dO.asDiagonal() * c.qy;
    const double inner = A.cwiseProduct(dA).sum();
    const Mat dS = A.cwiseProduct((dA.array() - inner).matrix());
    const Vec pg = p.P.col(static_cast<Eigen::Index>(g));
    dux += pg.asDiagonal() * c.zy * dS.transpose();
    dzy += pg.asDiagonal() * c.ux * dS;
    grad.P.col(static_cast<Eigen::Index>(g)) += (c.ux * dS).cwiseProduct(c.zy).rowwise().sum();
  }
  Mat dxd = p.Up * dpx;
  Mat dyd = p.Zp * dqy;
  grad.Up += c.xd * dpx.transpose();
  grad.Zp += c.yd * dqy.transpose();
  if (p.attended) {
    grad.U += c.xd * dux.transpose();
    grad.Z += c.yd * dzy.transpose();
    dxd += p.U * dux;
    dyd += p.Z * dzy;
  }
  const Mat dxpre = apply_keep(dxd, c.xkeep).cwiseProduct((1.0 - c.xt.array().square()).matrix());
  const Mat dypre = apply_keep(dyd, c.ykeep).cwiseProduct((1.0 - c.yt.array().square()).matrix());
  grad.Wx += c.x * dxpre.transpose();
  grad.bx += dxpre.rowwise().sum();
  grad.Wy += c.y * dypre.transpose();
  grad.by += dypre.rowwise().sum();
  return {p.Wx * dxpre, p.Wy * dypre};
}

// ---------------------------------------------------------------------------
// Stages

struct StageOutput {
  Vec output;
  std::vector<Mat> maps;
};

/// Intra-modality stage over (D, B): glimpses concatenated then projected to m.
inline StageOutput att_intra(const Mat& D, const Mat& B, const AttentionParams& params,
                             const ForwardMode& mode = ForwardMode::eval()) {
  DropoutSampler drop(mode);
  BlockCache c = block_forward(params.block, D, B, nullptr, drop);
  const Eigen::Map<const Vec> concat(c.pooled.data(), c.pooled.size());
  if (params.Wo.rows() != concat.size()) throw ShapeError("att_intra: output projection width mismatch");
  Vec v = params.Wo.transpose() * concat + params.bo.col(0);
  v = apply_keep(v, drop.mask(v.rows(), 1));
  return {v, std::move(c.maps)};
}

/// Inter-modality stage over (v, q): one image vector against h word slots;
/// glimpse outputs are summed into a γ-vector.
inline StageOutput att_inter(const Vec& v, const Mat& q, const InterParams& params,
                             const ForwardMode& mode = ForwardMode::eval(),
                             const std::vector<bool>* q_valid = nullptr) {
  DropoutSampler drop(mode);
  BlockCache c = block_forward(params.block, Mat(v), q, q_valid, drop);
  return {c.pooled.rowwise().sum(), std::move(c.maps)};
}

struct AnswerDistribution {
  Vec logits;

  /// Argmax with lowest-index tie-break.
  std::size_t predicted() const {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < logits.size(); ++i)
      if (logits(i) > logits(best)) best = i;
    return static_cast<std::size_t>(best);
  }

  Vec probabilities() const {
    const Vec e = (logits.array() - logits.maxCoeff()).exp().matrix();
    return e / e.sum();
  }
};

inline AnswerDistribution answer_head(const Vec& o, const InterParams& params) {
  if (params.Wc.rows() != o.size()) throw ShapeError("answer_head: classifier expects " +
                                                     std::to_string(params.Wc.rows()) + " inputs");
  return {params.Wc.transpose() * o + params.bc.col(0)};
}

// ---------------------------------------------------------------------------
// Full model

struct ModelInput {
  Mat D;  // L×ρ instance columns
  Mat B;  // L×φ background cells
  Mat q;  // n×h question columns
  std::vector<bool> q_valid;  // optional, length h

  const Mat& view(View v) const {
    switch (v) {
      case View::Instance: return D;
      case View::Background: return B;
      case View::Question: return q;
    }
    return D;
  }
};

struct ForwardCache {
  ComposeOrder order = ComposeOrder::IBQ;
  BlockCache first, second;
  Vec concat, v_pre, v_keep, v;
  Vec o;  // stage-two output (or pooled features for the no-attention model)
  Mat qt, qkeep, qd;  // no-attention question projection
  AnswerDistribution answer;
};

namespace detail {

inline const std::vector<bool>* question_mask(const ModelParams& p, const ModelInput& in, View y) {
  if (!p.dims.mask_question_padding || y != View::Question || in.q_valid.empty()) return nullptr;
  return &in.q_valid;
}

inline void check_input(const ModelParams& p, const ModelInput& in) {
  const auto L = static_cast<Eigen::Index>(p.dims.L), n = static_cast<Eigen::Index>(p.dims.n);
  if (in.D.rows() != L || in.B.rows() != L)
    throw ShapeError("visual views must have " + std::to_string(L) + " rows (D has " + std::to_string(in.D.rows()) +
                     ", B has " + std::to_string(in.B.rows()) + ")");
  if (in.q.rows() != n) throw ShapeError("question must have " + std::to_string(n) + " rows");
  if (!in.q_valid.empty() && in.q_valid.size() != static_cast<std::size_t>(in.q.cols()))
    throw ShapeError("question validity mask length mismatch");
}

inline Vec column_mean(const Mat& x) {
  return x.cols() == 0 ? Vec(Vec::Zero(x.rows())) : Vec(x.rowwise().sum() / static_cast<double>(x.cols()));
}

}  // namespace detail

/// Runs the composition described by `params.order`.
inline ForwardCache forward(const ModelParams& params, const ModelInput& in,
                            const ForwardMode& mode = ForwardMode::eval()) {
  detail::check_input(params, in);
  DropoutSampler drop(mode);
  ForwardCache c;
  c.order = params.order;

  if (params.order == ComposeOrder::None) {
    const auto& a = params.intra.block;
    c.first.x = in.D;
    c.first.y = in.B;
    c.first.xt = project_tanh(in.D, a.Wx, a.bx);
    c.first.yt = project_tanh(in.B, a.Wy, a.by);
    c.second.y = in.q;
    c.qt = project_tanh(in.q, params.inter.block.Wy, params.inter.block.by);
    c.first.xkeep = drop.mask(c.first.xt.rows(), c.first.xt.cols());
    c.first.ykeep = drop.mask(c.first.yt.rows(), c.first.yt.cols());
    c.qkeep = drop.mask(c.qt.rows(), c.qt.cols());
    c.first.xd = apply_keep(c.first.xt, c.first.xkeep);
    c.first.yd = apply_keep(c.first.yt, c.first.ykeep);
    c.qd = apply_keep(c.qt, c.qkeep);
    c.o.resize(c.first.xd.rows() + c.first.yd.rows() + c.qd.rows());
    c.o << detail::column_mean(c.first.xd), detail::column_mean(c.first.yd), detail::column_mean(c.qd);
    c.answer = answer_head(c.o, params.inter);
    return c;
  }

  const OrderPlan plan = order_plan(params.order);
  c.first = block_forward(params.intra.block, in.view(plan.first_x), in.view(plan.first_y),
                          detail::question_mask(params, in, plan.first_y), drop);
  c.concat = Eigen::Map<const Vec>(c.first.pooled.data(), c.first.pooled.size());
  c.v_pre = params.intra.Wo.transpose() * c.concat + params.intra.bo.col(0);
  c.v_keep = drop.mask(c.v_pre.rows(), 1);
  c.v = apply_keep(c.v_pre, c.v_keep);
  c.second = block_forward(params.inter.block, Mat(c.v), in.view(plan.second_y),
                           detail::question_mask(params, in, plan.second_y), drop);
  c.o = c.second.pooled.rowwise().sum();
  c.answer = answer_head(c.o, params.inter);
  return c;
}

/// Runs a specific composition; `params` must have been built for it.
inline AnswerDistribution compose_order(ComposeOrder order, const ModelInput& in, const ModelParams& params,
                                        const ForwardMode& mode = ForwardMode::eval()) {
  if (params.order != order)
    throw DomainError("parameters were built for order " + std::string(order_name(params.order)) + ", not " +
                      std::string(order_name(order)));
  return forward(params, in, mode).answer;
}

struct Gradients {
  ModelParams params;  // same structure as the model parameters
  Mat dD, dB, dq;
};

/// Exact gradients of a scalar loss given dloss/dlogits.
inline Gradients backward(const ModelParams& params, const ForwardCache& c, const Vec& dlogits) {
  if (dlogits.size() != c.answer.logits.size()) throw ShapeError("backward: upstream gradient length mismatch");
  if (c.order != params.order) throw DomainError("backward: cache was produced by a different composition");
  Gradients g{params.zeros_like(), {}, {}, {}};
  auto& gp = g.params;

  gp.inter.Wc = c.o * dlogits.transpose();
  gp.inter.bc = dlogits;
  const Vec dout = params.inter.Wc * dlogits;

  if (params.order == ComposeOrder::None) {
    const auto& a = params.intra.block;
    const Eigen::Index L = c.first.xd.rows(), nq = c.qd.rows();
    auto pool_back = [](const Vec& dmean, const Mat& xt, const Mat& keep, Eigen::Index cols) {
      Mat d = cols == 0 ? Mat(xt.rows(), 0) : Mat(dmean.replicate(1, cols) / static_cast<double>(cols));
      return Mat(apply_keep(d, keep).cwiseProduct((1.0 - xt.array().square()).matrix()));
    };
    const Mat dxpre = pool_back(dout.segment(0, L), c.first.xt, c.first.xkeep, c.first.xt.cols());
    const Mat dypre = pool_back(dout.segment(L, L), c.first.yt, c.first.ykeep, c.first.yt.cols());
    const Mat dqpre = pool_back(dout.segment(2 * L, nq), c.qt, c.qkeep, c.qt.cols());
    gp.intra.block.Wx = c.first.x * dxpre.transpose();
    gp.intra.block.bx = dxpre.rowwise().sum();
    gp.intra.block.Wy = c.first.y * dypre.transpose();
    gp.intra.block.by = dypre.rowwise().sum();
    gp.inter.block.Wy = c.second.y * dqpre.transpose();
    gp.inter.block.by = dqpre.rowwise().sum();
    g.dD = a.Wx * dxpre;
    g.dB = a.Wy * dypre;
    g.dq = params.inter.block.Wy * dqpre;
    return g;
  }

  const OrderPlan plan = order_plan(params.order);
  const Mat dpooled2 = dout.replicate(1, c.second.pooled.cols());
  auto [dv_mat, dy2] = block_backward(params.inter.block, c.second, dpooled2, gp.inter.block);
  const Vec dv_pre = apply_keep(Vec(dv_mat.col(0)), c.v_keep);
  gp.intra.Wo = c.concat * dv_pre.transpose();
  gp.intra.bo = dv_pre;
  const Vec dconcat = params.intra.Wo * dv_pre;
  const Mat dpooled1 = Eigen::Map<const Mat>(dconcat.data(), c.first.pooled.rows(), c.first.pooled.cols());
  auto [dx1, dy1] = block_backward(params.intra.block, c.first, dpooled1, gp.intra.block);

  const auto L = static_cast<Eigen::Index>(params.dims.L), n = static_cast<Eigen::Index>(params.dims.n);
  g.dD = Mat::Zero(L, c.first.x.cols());
  g.dB = Mat::Zero(L, 0);
  g.dq = Mat::Zero(n, 0);
  auto route = [&](View v, const Mat& d) {
    switch (v) {
      case View::Instance: g.dD = d; break;
      case View::Background: g.dB = d; break;
      case View::Question: g.dq = d; break;
    }
  };
  route(plan.first_x, dx1);
  route(plan.first_y, dy1);
  route(plan.second_y, dy2);
  return g;
}

// ---------------------------------------------------------------------------
// Loss

struct LossResult {
  double loss = 0.0;
  Vec dlogits;
};

/// Softmax cross-entropy against a single label.
inline LossResult softmax_cross_entropy(const Vec& logits, std::size_t label) {
  if (label >= static_cast<std::size_t>(logits.size()))
    throw DataError("label " + std::to_string(label) + " outside answer vocabulary of " +
                    std::to_string(logits.size()));
  const double mx = logits.maxCoeff();
  const Vec e = (logits.array() - mx).exp().matrix();
  const double z = e.sum();
  LossResult r;
  r.loss = std::log(z) + mx - logits(static_cast<Eigen::Index>(label));
  r.dlogits = e / z;
  r.dlogits(static_cast<Eigen::Index>(label)) -= 1.0;
  return r;
}

}  // namespace lois
