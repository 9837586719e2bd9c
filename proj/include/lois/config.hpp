#pragma once

#include <cerrno>
#include <charconv>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "lois/io.hpp"
#include "lois/relation_attention.hpp"
#include "lois/training.hpp"

namespace lois {

/// A configuration value failed validation; `field` names the key.
struct ConfigError : std::invalid_argument {
  ConfigError(std::string field, const std::string& what)
      : std::invalid_argument("config field '" + field + "': " + what), field(std::move(field)) {}
  std::string field;
};

/// Every tunable of the pipeline. Defaults follow the reference setup
/// (S=12, C=80, score 0.1, mask 0.5, 8 heads, m=1024, L=2048, BERT-sized
/// n=768, h=14, SGD lr 1e-2 / momentum 0.9 / wd 1e-4, clip 0.25, warm-up
/// ratio 1/3, dropout 0.5, batch 256, 100 epochs).
struct RunConfig {
  // mask decoding and suppression
  std::size_t S = 12;
  std::size_t C = 80;
  double score_threshold = 0.1;
  double mask_threshold = 0.5;
  double post_threshold = 0.05;
  // view separation
  std::size_t grid = 4;
  std::size_t max_instances = 84;  // keeps rho + phi <= 100
  std::string fill = "mean";
  double fill_value = 0.0;
  // model
  std::size_t L = 2048;
  std::size_t n = 768;
  std::size_t h = 14;
  std::size_t gamma = 32;
  std::size_t gamma_att = 32;
  std::size_t heads = 8;
  std::size_t m = 1024;
  std::size_t T = 16;
  std::string order = "I-B-Q";
  bool mask_question_padding = false;
  // optimizer
  double lr = 1e-2;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double clip_norm = 0.25;
  std::string clip_mode = "global";
  double warmup_ratio = 1.0 / 3.0;
  double warmup_fraction = 0.1;
  double dropout = 0.5;
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  std::uint64_t seed = 0;
  std::uint64_t embed_seed = 0;
  std::size_t threads = 1;

  ModelDims model_dims() const {
    ModelDims d;
    d.L = L;
    d.n = n;
    d.h = h;
    d.gamma = gamma;
    d.gamma_att = gamma_att;
    d.heads = heads;
    d.m = m;
    d.T = T;
    d.mask_question_padding = mask_question_padding;
    return d;
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.dims = model_dims();
    t.order = parse_order(order);
    t.lr = lr;
    t.momentum = momentum;
    t.weight_decay = weight_decay;
    t.clip_norm = clip_norm;
    t.clip_mode = clip_mode == "elementwise" ? ClipMode::Elementwise : ClipMode::GlobalNorm;
    t.warmup_ratio = warmup_ratio;
    t.warmup_fraction = warmup_fraction;
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.dropout = dropout;
    t.seed = seed;
    t.threads = threads;
    return t;
  }

  /// Checks every field against its module's preconditions.
  void validate() const {
    auto positive = [](std::size_t v, const char* f) {
      if (v < 1) throw ConfigError(f, "must be >= 1");
    };
    auto unit = [](double v, const char* f) {
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(f, "must lie in [0,1]");
    };
    positive(S, "S");
    positive(C, "C");
    unit(score_threshold, "score_threshold");
    unit(mask_threshold, "mask_threshold");
    unit(post_threshold, "post_threshold");
    positive(grid, "grid");
    if (fill != "mean" && fill != "constant") throw ConfigError("fill", "must be 'mean' or 'constant'");
    positive(L, "L");
    positive(n, "n");
    positive(h, "h");
    positive(gamma, "gamma");
    positive(gamma_att, "gamma_att");
    positive(heads, "heads");
    positive(m, "m");
    positive(T, "T");
    try {
      (void)parse_order(order);
    } catch (const DomainError& e) {
      throw ConfigError("order", e.what());
    }
    if (!(lr >= 0.0)) throw ConfigError("lr", "must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum", "must lie in [0,1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be >= 0");
    if (!(clip_norm > 0.0)) throw ConfigError("clip_norm", "must be > 0");
    if (clip_mode != "global" && clip_mode != "elementwise")
      throw ConfigError("clip_mode", "must be 'global' or 'elementwise'");
    if (!(warmup_ratio > 0.0 && warmup_ratio <= 1.0)) throw ConfigError("warmup_ratio", "must lie in (0,1]");
    unit(warmup_fraction, "warmup_fraction");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout", "must lie in [0,1)");
    positive(batch_size, "batch_size");
    positive(threads, "threads");
  }
};

namespace detail {

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end)
    throw ConfigError(std::string(key), "cannot parse '" + std::string(text) + "'");
  return v;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(std::string(key), "expected true/false, got '" + std::string(text) + "'");
}

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace detail

/// Applies one `key = value` assignment.
inline void set_config_value(RunConfig& c, std::string_view key, std::string_view value) {
  using detail::parse_bool;
  using detail::parse_number;
  using Setter = std::function<void(std::string_view)>;
  auto sz = [&](std::size_t& f) -> Setter { return [&f, key](std::string_view v) { f = parse_number<std::size_t>(key, v); }; };
  auto u64 = [&](std::uint64_t& f) -> Setter { return [&f, key](std::string_view v) { f = parse_number<std::uint64_t>(key, v); }; };
  auto dbl = [&](double& f) -> Setter { return [&f, key](std::string_view v) { f = parse_number<double>(key, v); }; };
  auto str = [&](std::string& f) -> Setter { return [&f](std::string_view v) { f = std::string(v); }; };
  auto bln = [&](bool& f) -> Setter { return [&f, key](std::string_view v) { f = parse_bool(key, v); }; };

  const std::map<std::string_view, Setter> setters = {
      {"S", sz(c.S)},
      {"C", sz(c.C)},
      {"score_threshold", dbl(c.score_threshold)},
      {"mask_threshold", dbl(c.mask_threshold)},
      {"post_threshold", dbl(c.post_threshold)},
      {"grid", sz(c.grid)},
      {"max_instances", sz(c.max_instances)},
      {"fill", str(c.fill)},
      {"fill_value", dbl(c.fill_value)},
      {"L", sz(c.L)},
      {"n", sz(c.n)},
      {"h", sz(c.h)},
      {"gamma", sz(c.gamma)},
      {"gamma_att", sz(c.gamma_att)},
      {"heads", sz(c.heads)},
      {"m", sz(c.m)},
      {"T", sz(c.T)},
      {"order", str(c.order)},
      {"mask_question_padding", bln(c.mask_question_padding)},
      {"lr", dbl(c.lr)},
      {"momentum", dbl(c.momentum)},
      {"weight_decay", dbl(c.weight_decay)},
      {"clip_norm", dbl(c.clip_norm)},
      {"clip_mode", str(c.clip_mode)},
      {"warmup_ratio", dbl(c.warmup_ratio)},
      {"warmup_fraction", dbl(c.warmup_fraction)},
      {"dropout", dbl(c.dropout)},
      {"epochs", sz(c.epochs)},
      {"batch_size", sz(c.batch_size)},
      {"seed", u64(c.seed)},
      {"embed_seed", u64(c.embed_seed)},
      {"threads", sz(c.threads)},
  };
  auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError(std::string(key), "unknown key");
  it->second(value);
}

/// Parses `key = value` lines; `#` starts a comment. The result is validated
/// before it is returned.
inline RunConfig parse_config(std::string_view text, RunConfig base = {}) {
  std::size_t line_no = 0, start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string_view line = text.substr(start, end - start);
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (!line.empty()) {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos)
        throw ConfigError(std::string(line), "line " + std::to_string(line_no) + " is not 'key = value'");
      set_config_value(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    if (end == text.size()) break;
    start = end + 1;
  }
  base.validate();
  return base;
}

inline RunConfig load_config(const std::string& path) { return parse_config(read_file(path)); }

}  // namespace lois
