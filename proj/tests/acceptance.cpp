// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails.
//
//   lois_acceptance --cli PATH --fixtures DIR --golden DIR --work DIR [--regenerate]

#include <CLI11.hpp>
#include <sys/wait.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "lois/lois.hpp"
#include "support/oracles.hpp"

using namespace lois;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int failures = 0;

void report(int id, const std::string& title, bool ok, const std::string& detail) {
  std::printf("[%s] %d. %s: %s\n", ok ? "PASS" : "FAIL", id, title.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

/// Runs a check, turning an escaped exception into a failure line.
void criterion(int id, const std::string& title, const std::function<std::pair<bool, std::string>()>& body) {
  try {
    auto [ok, detail] = body();
    report(id, title, ok, detail);
  } catch (const std::exception& e) {
    report(id, title, false, std::string("exception: ") + e.what());
  }
}

Mat random_mat(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = scale * rng.uniform(-1.0, 1.0);
  return m;
}

BinaryMask random_rect(Rng& rng, std::size_t H, std::size_t W, std::size_t max_side) {
  BinaryMask m({H, W}, 0);
  const auto r0 = rng.below(H), c0 = rng.below(W);
  const auto r1 = std::min(H, r0 + 1 + rng.below(max_side)), c1 = std::min(W, c0 + 1 + rng.below(max_side));
  for (auto r = r0; r < r1; ++r)
    for (auto c = c0; c < c1; ++c) m(r, c) = 1;
  return m;
}

// ---------------------------------------------------------------------------
// 1. Suppression against loop oracles

/// Pixel-loop Matrix NMS with its own IoU.
std::vector<double> loop_nms_scores(const MaskSet& set) {
  const std::size_t n = set.size();
  std::vector<std::vector<double>> iou(n, std::vector<double>(n, 0.0));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      std::size_t inter = 0, uni = 0;
      for (std::size_t p = 0; p < set[a].mask.size(); ++p) {
        const bool x = set[a].mask.data()[p] != 0, y = set[b].mask.data()[p] != 0;
        inter += x && y;
        uni += x || y;
      }
      iou[a][b] = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
    }
  std::vector<double> out(n);
  for (std::size_t b = 0; b < n; ++b) {
    double pen = 1.0;
    for (std::size_t a = 0; a < n; ++a) {
      if (!(set[a].score > set[b].score)) continue;
      double floor = 1.0;
      for (std::size_t k = 0; k < n; ++k)
        if (set[k].score > set[a].score) floor = std::min(floor, 1.0 - iou[k][a]);
      const double term = floor == 0.0 ? 1.0 : (1.0 - iou[a][b]) / floor;
      pen = std::min(pen, term);
    }
    out[b] = set[b].score * pen;
  }
  return out;
}

std::pair<bool, std::string> check_nms() {
  Rng rng(101);
  double worst = 0.0;
  bool ranks_agree = true;
  const auto t0 = Clock::now();
  for (int trial = 0; trial < 200; ++trial) {
    MaskSet set;
    const std::size_t n = 1 + rng.below(64);
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse score levels so ties and exact duplicates show up.
      const double score = rng.below(4) == 0 ? static_cast<double>(rng.below(5)) / 4.0 : rng.uniform();
      if (i > 0 && rng.below(8) == 0)
        set.push_back(make_scored_mask(set[rng.below(i)].mask, score));
      else
        set.push_back(make_scored_mask(random_rect(rng, 32, 32, 20), score));
    }
    const auto fast = suppress(set, 0.05);
    const auto slow = oracle_suppress(set, 0.05);
    const auto loop = loop_nms_scores(set);
    for (std::size_t i = 0; i < n; ++i)
      worst = std::max({worst, std::abs(fast.updated_scores[i] - slow.updated_scores[i]),
                        std::abs(fast.updated_scores[i] - loop[i])});
    ranks_agree = ranks_agree && fast.kept_indices == slow.kept_indices;
  }
  const double secs = seconds_since(t0);
  const bool ok = worst <= 1e-12 && ranks_agree && secs < 10.0;
  return {ok, "max |score diff| " + fmt("%.2e", worst) + " over 200 sets, ranks " +
                  (ranks_agree ? "equal" : "differ") + ", " + fmt("%.2f", secs) + " s"};
}

// ---------------------------------------------------------------------------
// 2. Gradient check

ModelDims gradcheck_dims() {
  ModelDims d;
  d.L = 8;
  d.n = 8;
  d.h = 6;
  d.gamma = 4;
  d.gamma_att = 3;
  d.heads = 2;
  d.m = 10;
  d.T = 7;
  return d;
}

std::pair<bool, std::string> check_gradients_ibq() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t tensors = 0;
  bool all = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto r = gradcheck_model(gradcheck_dims(), ComposeOrder::IBQ, 5, 4, seed, 1e-5, 1e-4);
    worst = std::max(worst, r.worst());
    tensors = r.tensors.size();
    all = all && r.passed && r.diagnostic.empty();
  }
  const double secs = seconds_since(t0);
  return {all && worst <= 1e-4 && secs < 60.0, "worst relative error " + fmt("%.2e", worst) + " across " +
                                                   std::to_string(tensors) + " tensors x 5 seeds, " +
                                                   fmt("%.2f", secs) + " s"};
}

// ---------------------------------------------------------------------------
// 3. Attention normalization and invariances

Mat permute_cols(const Mat& x, Rng& rng) {
  std::vector<std::size_t> p(static_cast<std::size_t>(x.cols()));
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = i;
  rng.shuffle(p);
  Mat out(x.rows(), x.cols());
  for (std::size_t j = 0; j < p.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = x.col(static_cast<Eigen::Index>(p[j]));
  return out;
}

std::pair<bool, std::string> check_attention() {
  Rng rng(303);
  double sum_err = 0.0, shift_err = 0.0, perm_err = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = init_params(gradcheck_dims(), ComposeOrder::IBQ, static_cast<std::uint64_t>(trial));
    const auto in = random_input(p.dims, 1 + rng.below(8), 1 + rng.below(16), rng);
    const auto cache = forward(p, in);
    for (const auto* maps : {&cache.first.maps, &cache.second.maps})
      for (const auto& A : *maps) sum_err = std::max(sum_err, std::abs(A.sum() - 1.0));

    const Mat S = random_mat(rng, 1 + rng.below(8), 1 + rng.below(8), 10.0);
    const double c = rng.uniform(-50.0, 50.0);
    shift_err = std::max(shift_err, (attention_softmax(S) - attention_softmax((S.array() + c).matrix())).cwiseAbs().maxCoeff());

    const Vec base = att_intra(in.D, in.B, p.intra).output;
    const Vec perm = att_intra(permute_cols(in.D, rng), permute_cols(in.B, rng), p.intra).output;
    perm_err = std::max(perm_err, (base - perm).cwiseAbs().maxCoeff());
  }
  const bool ok = sum_err <= 1e-10 && shift_err <= 1e-10 && perm_err <= 1e-10;
  return {ok, "50 trials: |sum-1| " + fmt("%.1e", sum_err) + ", shift " + fmt("%.1e", shift_err) +
                  ", column permutation " + fmt("%.1e", perm_err)};
}

// ---------------------------------------------------------------------------
// 4. Rank-1 model against the scalar derivation

std::pair<bool, std::string> check_rank_one() {
  ModelDims d = gradcheck_dims();
  d.gamma = d.gamma_att = d.heads = 1;
  Rng rng(404);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = init_params(d, ComposeOrder::IBQ, static_cast<std::uint64_t>(100 + trial));
    const auto in = random_input(d, 1 + rng.below(6), 1 + rng.below(6), rng);
    const Vec got = forward(p, in).answer.logits;
    const auto want = oracle::rank1_scalar_logits(p, in);
    for (std::size_t i = 0; i < want.size(); ++i)
      worst = std::max(worst, std::abs(got(static_cast<Eigen::Index>(i)) - want[i]));
  }
  return {worst <= 1e-12, "max |logit diff| " + fmt("%.2e", worst) + " on 20 inputs"};
}

// ---------------------------------------------------------------------------
// 5. Consensus accuracy

std::pair<bool, std::string> check_metric() {
  const double want[11] = {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  std::string got;
  bool ok = true;
  for (unsigned k = 0; k <= 10; ++k) {
    std::map<std::size_t, unsigned> counts;
    if (k > 0) counts[4] = k;
    if (k < 10) counts[9] = 10 - k;
    const double a = vqa_accuracy(4, counts);
    ok = ok && a == want[k];
    got += (k ? " " : "") + fmt("%.4f", a);
  }
  return {ok, "counts 0..10 -> " + got};
}

// ---------------------------------------------------------------------------
// 6. Toy overfit and the no-attention baseline

RunConfig toy_config(const std::string& order) {
  RunConfig c;
  c.L = 16;
  c.n = 16;
  c.h = 8;
  c.gamma = c.gamma_att = 8;
  c.heads = 2;
  c.m = 16;
  c.T = 4;
  c.grid = 4;
  c.order = order;
  c.lr = 0.1;
  c.dropout = 0.1;
  c.batch_size = 8;
  c.epochs = 200;
  c.seed = 0;
  c.validate();
  return c;
}

std::pair<bool, std::string> check_overfit() {
  const SynthDataset ds = synth_dataset(SynthSpec{});
  const auto run = [&](const std::string& order, std::size_t& reached, double& best) {
    const RunConfig cfg = toy_config(order);
    const Dataset data = training_set(ds, cfg);
    reached = 0;
    best = 0.0;
    train(data, cfg.train_config(), [&](const EpochMetrics& m) {
      best = std::max(best, m.train_accuracy);
      if (reached == 0 && m.train_accuracy >= 0.95) reached = m.epoch;
    });
  };
  std::size_t reached_att = 0, reached_none = 0;
  double best_att = 0.0, best_none = 0.0;
  const auto t0 = Clock::now();
  run("I-B-Q", reached_att, best_att);
  const double secs = seconds_since(t0);
  run("none", reached_none, best_none);
  const bool ok = reached_att > 0 && secs < 60.0 && best_none < best_att;
  return {ok, "I-B-Q reaches >= 95% at epoch " + std::to_string(reached_att) + " (best " + fmt("%.3f", best_att) +
                  ", " + fmt("%.2f", secs) + " s); none best " + fmt("%.3f", best_none)};
}

// ---------------------------------------------------------------------------
// 7. Determinism across runs and thread counts

std::pair<bool, std::string> check_determinism() {
  SynthSpec spec;
  spec.count = 24;
  spec.seed = 9;
  const SynthDataset ds = synth_dataset(spec);
  RunConfig cfg = toy_config("I-B-Q");
  cfg.epochs = 15;
  cfg.seed = 42;
  const Dataset data = training_set(ds, cfg);
  const auto run = [&](std::size_t threads) {
    TrainConfig tc = cfg.train_config();
    tc.threads = threads;
    std::string log;
    const auto r = train(data, tc, [&](const EpochMetrics& m) {
      for (double v : {m.train_loss, m.eval_loss, m.train_accuracy, m.lr})
        log += std::to_string(std::bit_cast<std::uint64_t>(v)) + " ";
      log += "\n";
    });
    return std::make_pair(encode_bundle(checkpoint_bundle(r.params)), log);
  };
  const auto a = run(1), b = run(1), c = run(4);
  const bool same_runs = a == b, same_threads = a == c;
  return {same_runs && same_threads, std::string("repeat run ") + (same_runs ? "identical" : "differs") +
                                         ", 1 vs 4 threads " + (same_threads ? "identical" : "differs") + " (" +
                                         std::to_string(a.first.size()) + "-byte checkpoint)"};
}

// ---------------------------------------------------------------------------
// 8. View partition

std::pair<bool, std::string> check_partition() {
  Rng rng(808);
  std::size_t bad_pixels = 0, covered_cells = 0, nonzero_covered = 0;
  double pool_err = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t H = 6 + rng.below(20), W = 6 + rng.below(20), G = 1 + rng.below(5), E = 3;
    MaskSet set;
    const std::size_t n = rng.below(8);
    for (std::size_t i = 0; i < n; ++i) set.push_back(make_scored_mask(random_rect(rng, H, W, std::max(H, W)), rng.uniform()));
    FeatureMap F(H, W, E);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        for (std::size_t e = 0; e < E; ++e) F(y, x, e) = rng.uniform(-1.0, 1.0);

    const auto r = suppress(set, 0.05);
    const MaskSet kept = retained_masks(set, r);
    const auto fused = fuse_instances(kept, H, W);
    const Mat B = separate_views(F, set, r, G).background;

    std::size_t instance = 0, background = 0;
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        bool any = false;
        for (const auto& m : kept) any = any || m.mask(y, x) != 0;
        bad_pixels += any != fused.covered(y, x);
        (fused.covered(y, x) ? instance : background) += 1;
      }
    bad_pixels += instance + background != H * W;

    for (std::size_t a = 0; a < G; ++a)
      for (std::size_t b = 0; b < G; ++b) {
        std::vector<double> sum(E, 0.0);
        std::size_t free = 0;
        for (std::size_t y = a * H / G; y < (a + 1) * H / G; ++y)
          for (std::size_t x = b * W / G; x < (b + 1) * W / G; ++x) {
            bool any = false;
            for (const auto& m : kept) any = any || m.mask(y, x) != 0;
            if (any) continue;
            ++free;
            for (std::size_t e = 0; e < E; ++e) sum[e] += F(y, x, e);
          }
        const auto col = static_cast<Eigen::Index>(a * G + b);
        if (free == 0) {
          ++covered_cells;
          nonzero_covered += !B.col(col).isZero(0.0);
        } else {
          for (std::size_t e = 0; e < E; ++e)
            pool_err = std::max(pool_err, std::abs(B(static_cast<Eigen::Index>(e), col) - sum[e] / static_cast<double>(free)));
        }
      }
  }
  const bool ok = bad_pixels == 0 && nonzero_covered == 0 && pool_err <= 1e-12 && covered_cells > 0;
  return {ok, std::to_string(bad_pixels) + " misassigned pixels, " + std::to_string(nonzero_covered) + " of " +
                  std::to_string(covered_cells) + " fully covered cells non-zero, pooled mean error " +
                  fmt("%.1e", pool_err)};
}

// ---------------------------------------------------------------------------
// 9. Tensor round trip and CLI goldens

struct CliCase {
  std::string name;
  std::string args;
  std::vector<std::string> outputs;  // files under the work directory
  int expect_exit = 0;
};

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

int run_command(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

bool tensor_round_trip(std::string& detail) {
  Rng rng(909);
  Tensor<double> t({3, 4, 5});
  for (auto& v : t.values()) v = rng.uniform(-1e6, 1e6);
  t.values()[0] = -0.0;
  t.values()[1] = std::numeric_limits<double>::denorm_min();
  t.values()[2] = std::numeric_limits<double>::max();
  t.values()[3] = std::numeric_limits<double>::infinity();
  t.values()[4] = std::numeric_limits<double>::quiet_NaN();
  const Tensor<double> back = decode_tensor(encode_tensor(t));
  bool ok = back.dims() == t.dims();
  for (std::size_t i = 0; ok && i < t.size(); ++i)
    ok = std::bit_cast<std::uint64_t>(back.values()[i]) == std::bit_cast<std::uint64_t>(t.values()[i]);

  Tensor<double> f({7});
  for (auto& v : f.values()) v = static_cast<double>(static_cast<float>(rng.uniform(-3.0, 3.0)));
  const Tensor<double> fback = decode_tensor(encode_tensor(f, DType::F32));
  for (std::size_t i = 0; ok && i < f.size(); ++i) ok = fback.values()[i] == f.values()[i];
  detail = ok ? "tensor round trip bit-exact" : "tensor round trip differs";
  return ok;
}

std::pair<bool, std::string> check_cli(const fs::path& cli, const fs::path& fixtures, const fs::path& golden,
                                       const fs::path& work, bool regenerate) {
  std::string detail;
  bool ok = tensor_round_trip(detail);

  fs::remove_all(work);
  fs::create_directories(work);
  if (regenerate) fs::create_directories(golden);
  const auto F = [&](const char* f) { return quote(fixtures / f); };
  const auto W = [&](const char* f) { return quote(work / f); };

  const std::vector<CliCase> cases = {
      {"synth-data", "synth-data --out " + W("data") + " --count 16 --seed 5",
       {"data/features.lten", "data/masks.lbdl", "data/questions.txt", "data/labels.txt", "data/answers.txt",
        "data/annotations.jsonl"}},
      {"decode-masks",
       "decode-masks --features " + F("features.lten") + " --kernels " + F("kernels.lten") + " --categories " +
           F("categories.lten") + " --out " + W("decoded.lbdl"),
       {"decoded.lbdl"}},
      {"nms", "nms --masks " + F("masks.lbdl") + " --out " + W("nms.lbdl"), {"nms.lbdl"}},
      {"nms-identical", "nms --masks " + F("identical_masks.lbdl") + " --out " + W("nms_identical.lbdl"),
       {"nms_identical.lbdl"}},
      {"separate",
       "separate --features " + F("features.lten") + " --masks " + F("masks.lbdl") + " --grid 4 --out " +
           W("views.lbdl") + " --image " + F("image.lten") + " --background " + W("background.ppm"),
       {"views.lbdl", "background.ppm"}},
      {"train",
       "train --config " + F("toy.cfg") + " --data " + W("data") + " --checkpoint " + W("model.lbdl") + " --log " +
           W("train.jsonl"),
       {"model.lbdl", "train.jsonl"}},
      {"train-threads",
       "train --config " + F("toy.cfg") + " --data " + W("data") + " --checkpoint " + W("model_t3.lbdl") +
           " --log " + W("train_t3.jsonl") + " --threads 3",
       {"model_t3.lbdl", "train_t3.jsonl"}},
      {"eval-model",
       "eval --annotations " + W("data/annotations.jsonl") + " --checkpoint " + W("model.lbdl") + " --data " +
           W("data") + " --config " + F("toy.cfg") + " --predictions-out " + W("predictions.txt") + " --out " +
           W("report_model.json"),
       {"predictions.txt", "report_model.json"}},
      {"eval", "eval --predictions " + F("predictions.txt") + " --annotations " + F("annotations.jsonl") + " --out " +
                   W("report.json"),
       {"report.json"}},
      {"gradcheck", "gradcheck --seed 0", {}},
      {"iou-stats", "iou-stats --masks " + F("mask_sets.lbdl") + " " + F("masks.lbdl") + " --out " + W("iou.json"),
       {"iou.json"}},
      {"unknown-subcommand", "frobnicate", {}, 2},
  };

  std::size_t compared = 0;
  std::vector<std::string> problems;
  for (const auto& c : cases) {
    const fs::path out = work / (c.name + ".stdout");
    const int code = run_command(quote(cli) + " " + c.args + " > " + quote(out) + " 2> " + quote(work / (c.name + ".stderr")));
    if (code != c.expect_exit) {
      problems.push_back(c.name + " exited " + std::to_string(code));
      continue;
    }
    if (c.expect_exit != 0) continue;
    std::vector<std::pair<fs::path, fs::path>> pairs = {{out, golden / (c.name + ".stdout")}};
    for (const auto& f : c.outputs) {
      std::string flat = f;
      std::replace(flat.begin(), flat.end(), '/', '_');
      pairs.emplace_back(work / f, golden / (c.name + "." + flat));
    }
    for (const auto& [got, want] : pairs) {
      if (!fs::exists(got)) {
        problems.push_back(c.name + " did not write " + got.filename().string());
        continue;
      }
      if (regenerate) fs::copy_file(got, want, fs::copy_options::overwrite_existing);
      if (!fs::exists(want)) {
        problems.push_back("no golden " + want.filename().string());
      } else if (read_file(got.string()) != read_file(want.string())) {
        problems.push_back(want.filename().string() + " differs from golden");
      }
      ++compared;
    }
  }

  // Identical masks: the lower copy must be decayed to exactly zero.
  try {
    const auto r = read_suppression(read_bundle((work / "nms_identical.lbdl").string()));
    if (r.updated_scores.size() != 2 || r.updated_scores[1] != 0.0 || r.kept_indices != std::vector<std::size_t>{0})
      problems.push_back("identical-mask duplicate not suppressed to 0");
  } catch (const std::exception& e) {
    problems.push_back(std::string("nms_identical.lbdl: ") + e.what());
  }
  // Thread count must not change training output.
  if (read_file((work / "model.lbdl").string()) != read_file((work / "model_t3.lbdl").string()) ||
      read_file((work / "train.jsonl").string()) != read_file((work / "train_t3.jsonl").string()))
    problems.push_back("train output depends on --threads");

  ok = ok && problems.empty();
  detail += ", " + std::to_string(cases.size()) + " CLI runs, " + std::to_string(compared) + " outputs vs golden";
  if (regenerate) detail += " (goldens regenerated)";
  for (const auto& p : problems) detail += "; " + p;
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string cli, fixtures, golden, work;
  bool regenerate = false;
  app.add_option("--cli", cli, "lois executable")->required();
  app.add_option("--fixtures", fixtures)->required();
  app.add_option("--golden", golden)->required();
  app.add_option("--work", work)->required();
  app.add_flag("--regenerate", regenerate, "overwrite the goldens with this run's outputs");
  CLI11_PARSE(app, argc, argv);

  criterion(1, "NMS oracle equivalence", check_nms);
  criterion(2, "Gradient fidelity (I-B-Q)", check_gradients_ibq);
  criterion(3, "Attention normalization and invariances", check_attention);
  criterion(4, "Rank-1 scalar consistency", check_rank_one);
  criterion(5, "Metric exactness", check_metric);
  criterion(6, "Toy overfit vs no attention", check_overfit);
  criterion(7, "Determinism", check_determinism);
  criterion(8, "View partition", check_partition);
  criterion(9, "CLI round trips", [&] { return check_cli(cli, fixtures, golden, work, regenerate); });

  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
