#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "lois/relation_attention.hpp"
#include "lois/rng.hpp"

namespace lois {

enum class ClipMode { GlobalNorm, Elementwise };

/// Rescales all gradients by clip/‖g‖ when the global L2 norm exceeds
/// `clip_norm` (or clamps each entry to ±clip_norm). Returns the norm
/// before clipping.
inline double clip_gradients(std::vector<std::pair<std::string, Mat*>> grads, double clip_norm,
                             ClipMode mode = ClipMode::GlobalNorm) {
  if (!(clip_norm > 0.0)) throw DomainError("clip_norm must be > 0");
  double sq = 0.0;
  for (auto& [name, g] : grads)
    for (Eigen::Index i = 0; i < g->size(); ++i) sq += g->data()[i] * g->data()[i];
  const double norm = std::sqrt(sq);
  if (mode == ClipMode::Elementwise) {
    for (auto& [name, g] : grads) *g = g->cwiseMax(-clip_norm).cwiseMin(clip_norm);
  } else if (norm > clip_norm) {
    const double scale = clip_norm / norm;
    for (auto& [name, g] : grads) *g *= scale;
  }
  return norm;
}

inline double clip_gradients(ModelParams& grads, double clip_norm, ClipMode mode = ClipMode::GlobalNorm) {
  return clip_gradients(grads.tensors(), clip_norm, mode);
}

/// Linear warm-up from ratio·base_lr at step 0 to base_lr at
/// `warmup_steps`, constant afterwards.
inline double warmup(std::size_t step, std::size_t warmup_steps, double base_lr, double ratio) {
  if (step >= warmup_steps) return base_lr;
  const double t = static_cast<double>(step) / static_cast<double>(warmup_steps);
  return base_lr * (ratio + (1.0 - ratio) * t);
}

struct OptimizerState {
  double lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double clip_norm = 0.25;
  double warmup_ratio = 1.0 / 3.0;
  std::size_t warmup_steps = 0;
  std::size_t step = 0;
  ModelParams velocity;

  void validate() const {
    if (!(lr >= 0.0)) throw DomainError("lr must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw DomainError("momentum must lie in [0,1)");
    if (!(weight_decay >= 0.0)) throw DomainError("weight_decay must be >= 0");
    if (!(clip_norm > 0.0)) throw DomainError("clip_norm must be > 0");
    if (!(warmup_ratio > 0.0 && warmup_ratio <= 1.0)) throw DomainError("warmup_ratio must lie in (0,1]");
  }

  double current_lr() const { return warmup(step, warmup_steps, lr, warmup_ratio); }
};

inline OptimizerState make_optimizer(const ModelParams& params) {
  OptimizerState s;
  s.velocity = params.zeros_like();
  return s;
}

/// g' = g + wd·θ;  v ← μ·v + g';  θ ← θ − lr_t·v.
inline void sgd_step(ModelParams& params, const ModelParams& grads, OptimizerState& state) {
  auto theta = params.tensors();
  auto g = grads.tensors();
  auto vel = state.velocity.tensors();
  if (g.size() != theta.size() || vel.size() != theta.size())
    throw ShapeError("sgd_step: parameter, gradient and velocity structures differ");
  const double lr = state.current_lr();
  for (std::size_t i = 0; i < theta.size(); ++i) {
    Mat& p = *theta[i].second;
    const Mat& d = *g[i].second;
    Mat& v = *vel[i].second;
    if (d.rows() != p.rows() || d.cols() != p.cols() || v.rows() != p.rows() || v.cols() != p.cols())
      throw ShapeError("sgd_step: shape mismatch on " + theta[i].first);
    v = state.momentum * v + (d + state.weight_decay * p);
    p -= lr * v;
  }
  ++state.step;
}

inline void accumulate(ModelParams& into, const ModelParams& g, double scale = 1.0) {
  auto a = into.tensors();
  auto b = g.tensors();
  for (std::size_t i = 0; i < a.size(); ++i) *a[i].second += scale * *b[i].second;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct TensorCheck {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  Eigen::Index worst_index = -1;  // flat index of the largest relative error
  double worst_analytic = 0.0, worst_numeric = 0.0;
  bool passed = true;
};

struct GradcheckReport {
  std::vector<TensorCheck> tensors;
  bool passed = true;
  std::string diagnostic;

  double worst() const {
    double w = 0.0;
    for (const auto& t : tensors) w = std::max(w, t.max_rel_error);
    return w;
  }
};

/// |a − n| / max(|a|, |n|, floor); the floor keeps entries whose true
/// gradient is ~0 from reporting pure rounding noise as relative error.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central differences (f(θ+h) − f(θ−h)) / 2h for every entry of every
/// tensor in `wrt`, compared against `analytic` (same order and shapes).
inline GradcheckReport check_gradients(const std::function<double()>& loss,
                                       const std::vector<std::pair<std::string, Mat*>>& wrt,
                                       const std::vector<const Mat*>& analytic, double step, double tolerance) {
  GradcheckReport report;
  if (wrt.size() != analytic.size()) throw ShapeError("check_gradients: tensor and gradient lists differ");
  const double base = loss();
  if (!std::isfinite(base)) {
    report.passed = false;
    report.diagnostic = "loss is not finite at the base point";
    return report;
  }
  for (std::size_t t = 0; t < wrt.size(); ++t) {
    Mat& x = *wrt[t].second;
    const Mat& g = *analytic[t];
    if (g.rows() != x.rows() || g.cols() != x.cols())
      throw ShapeError("check_gradients: gradient shape mismatch on " + wrt[t].first);
    TensorCheck tc{wrt[t].first};
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double keep = x.data()[i];
      x.data()[i] = keep + step;
      const double up = loss();
      x.data()[i] = keep - step;
      const double down = loss();
      x.data()[i] = keep;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        report.passed = tc.passed = false;
        report.diagnostic = "non-finite loss while perturbing " + tc.name;
        tc.max_rel_error = std::numeric_limits<double>::infinity();
        break;
      }
      const double numeric = (up - down) / (2.0 * step);
      tc.max_abs_error = std::max(tc.max_abs_error, std::abs(numeric - g.data()[i]));
      const double rel = relative_error(g.data()[i], numeric);
      if (rel > tc.max_rel_error || tc.worst_index < 0) {
        tc.max_rel_error = rel;
        tc.worst_index = i;
        tc.worst_analytic = g.data()[i];
        tc.worst_numeric = numeric;
      }
    }
    tc.passed = tc.passed && tc.max_rel_error <= tolerance;
    report.passed = report.passed && tc.passed;
    report.tensors.push_back(std::move(tc));
  }
  return report;
}

/// Checks backward() for every parameter tensor and every input view of one
/// sample under softmax cross-entropy.
inline GradcheckReport gradcheck(ModelParams params, ModelInput input, std::size_t label, double step,
                                 double tolerance, const ForwardMode& mode = ForwardMode::eval()) {
  const ForwardCache cache = forward(params, input, mode);
  const LossResult lr = softmax_cross_entropy(cache.answer.logits, label);
  const Gradients grads = backward(params, cache, lr.dlogits);

  auto wrt = params.tensors();
  std::vector<const Mat*> analytic;
  for (auto& [name, t] : grads.params.tensors()) analytic.push_back(t);
  wrt.emplace_back("input.D", &input.D);
  wrt.emplace_back("input.B", &input.B);
  wrt.emplace_back("input.q", &input.q);
  analytic.push_back(&grads.dD);
  analytic.push_back(&grads.dB);
  analytic.push_back(&grads.dq);

  auto loss = [&] { return softmax_cross_entropy(forward(params, input, mode).answer.logits, label).loss; };
  return check_gradients(loss, wrt, analytic, step, tolerance);
}

/// Random input with ρ instance columns and φ background cells.
inline ModelInput random_input(const ModelDims& dims, std::size_t rho, std::size_t phi, Rng& rng) {
  auto fill = [&](std::size_t r, std::size_t c) {
    Mat m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-1.0, 1.0);
    return m;
  };
  return {fill(dims.L, rho), fill(dims.L, phi), fill(dims.n, dims.h), {}};
}

/// Gradient check of a freshly initialized model on a random sample.
inline GradcheckReport gradcheck_model(const ModelDims& dims, ComposeOrder order, std::size_t rho,
                                       std::size_t phi, std::uint64_t seed, double step = 1e-5,
                                       double tolerance = 1e-4, const ForwardMode& mode = ForwardMode::eval()) {
  ModelParams params = init_params(dims, order, seed);
  Rng rng(mix_keys({seed, 0x9cULL}));
  ModelInput input = random_input(dims, rho, phi, rng);
  const std::size_t label = rng.below(dims.T);
  return gradcheck(std::move(params), std::move(input), label, step, tolerance, mode);
}

// ---------------------------------------------------------------------------
// Training loop

struct Sample {
  ModelInput input;
  std::size_t label = 0;
};

using Dataset = std::vector<Sample>;

struct TrainConfig {
  ModelDims dims;
  ComposeOrder order = ComposeOrder::IBQ;
  double lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double clip_norm = 0.25;
  ClipMode clip_mode = ClipMode::GlobalNorm;
  double warmup_ratio = 1.0 / 3.0;
  double warmup_fraction = 0.1;  // of total optimizer steps
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  double dropout = 0.5;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const {
    dims.validate();
    if (!(lr >= 0.0)) throw DomainError("lr must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw DomainError("momentum must lie in [0,1)");
    if (!(weight_decay >= 0.0)) throw DomainError("weight_decay must be >= 0");
    if (!(clip_norm > 0.0)) throw DomainError("clip_norm must be > 0");
    if (!(warmup_ratio > 0.0 && warmup_ratio <= 1.0)) throw DomainError("warmup_ratio must lie in (0,1]");
    if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) throw DomainError("warmup_fraction must lie in [0,1]");
    if (batch_size < 1) throw DomainError("batch_size must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw DomainError("dropout must lie in [0,1)");
    if (threads < 1) throw DomainError("threads must be >= 1");
  }
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;      // mean minibatch loss with dropout active
  double eval_loss = 0.0;       // mean loss over the training set, eval mode
  double train_accuracy = 0.0;  // eval-mode accuracy over the training set
  double lr = 0.0;              // learning rate of the last step
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochMetrics> log;
};

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<std::size_t> predictions;
};

inline Evaluation evaluate(const ModelParams& params, const Dataset& data) {
  Evaluation e;
  for (const auto& s : data) {
    const auto logits = forward(params, s.input).answer.logits;
    e.loss += softmax_cross_entropy(logits, s.label).loss;
    const auto pred = AnswerDistribution{logits}.predicted();
    e.predictions.push_back(pred);
    e.accuracy += pred == s.label ? 1.0 : 0.0;
  }
  if (!data.empty()) {
    e.loss /= static_cast<double>(data.size());
    e.accuracy /= static_cast<double>(data.size());
  }
  return e;
}

namespace detail {

struct SampleGrad {
  ModelParams grad;
  double loss = 0.0;
};

inline SampleGrad sample_gradient(const ModelParams& params, const Sample& s, const ForwardMode& mode) {
  const ForwardCache cache = forward(params, s.input, mode);
  const LossResult lr = softmax_cross_entropy(cache.answer.logits, s.label);
  return {backward(params, cache, lr.dlogits).params, lr.loss};
}

}  // namespace detail

/// Mini-batch SGD. Shuffling, dropout and initialization are all keyed to
/// `config.seed`; per-sample gradients may be computed on several threads
/// but are always reduced in batch order.
inline TrainResult train(const Dataset& data, const TrainConfig& config,
                         const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  config.validate();
  if (data.empty()) throw DataError("training set is empty");
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data[i].label >= config.dims.T)
      throw DataError("sample " + std::to_string(i) + " has label " + std::to_string(data[i].label) +
                      " outside the answer vocabulary of " + std::to_string(config.dims.T));

  TrainResult result;
  result.params = init_params(config.dims, config.order, config.seed);
  OptimizerState opt = make_optimizer(result.params);
  opt.lr = config.lr;
  opt.momentum = config.momentum;
  opt.weight_decay = config.weight_decay;
  opt.clip_norm = config.clip_norm;
  opt.warmup_ratio = config.warmup_ratio;
  const std::size_t batches = (data.size() + config.batch_size - 1) / config.batch_size;
  opt.warmup_steps = static_cast<std::size_t>(
      std::llround(config.warmup_fraction * static_cast<double>(batches * config.epochs)));
  opt.validate();

  std::vector<std::size_t> order(data.size());
  Rng shuffler(mix_keys({config.seed, 0x5f5fULL}));
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffler.shuffle(order);
    double loss_sum = 0.0;
    double lr_used = 0.0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += config.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + config.batch_size);
      std::vector<detail::SampleGrad> slots(b1 - b0);
      auto work = [&](std::size_t k) {
        const std::size_t idx = order[b0 + k];
        const ForwardMode mode = ForwardMode::training(config.dropout, mix_keys({config.seed, epoch, idx}));
        slots[k] = detail::sample_gradient(result.params, data[idx], mode);
      };
      const std::size_t nt = std::min(config.threads, slots.size());
      if (nt <= 1) {
        for (std::size_t k = 0; k < slots.size(); ++k) work(k);
      } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < nt; ++t)
          pool.emplace_back([&, t] {
            for (std::size_t k = t; k < slots.size(); k += nt) work(k);
          });
        for (auto& th : pool) th.join();
      }
      ModelParams grad = result.params.zeros_like();
      const double inv = 1.0 / static_cast<double>(slots.size());
      for (const auto& s : slots) {
        accumulate(grad, s.grad, inv);
        loss_sum += s.loss;
      }
      clip_gradients(grad, config.clip_norm, config.clip_mode);
      lr_used = opt.current_lr();
      sgd_step(result.params, grad, opt);
    }
    const Evaluation ev = evaluate(result.params, data);
    EpochMetrics m{epoch + 1, loss_sum / static_cast<double>(data.size()), ev.loss, ev.accuracy, lr_used};
    result.log.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

}  // namespace lois
