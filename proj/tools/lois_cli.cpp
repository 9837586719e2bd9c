// lois: command-line driver for the mask, view, attention and training
// pipeline. Every subcommand reads and writes the formats in lois/io.hpp.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lois/lois.hpp"

namespace fs = std::filesystem;
using namespace lois;
using json = nlohmann::ordered_json;

namespace {

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

// Config file if given; explicit flags override it and are validated after.
RunConfig base_config(const std::string& path) { return path.empty() ? RunConfig{} : load_config(path); }

void write_json(const std::string& path, const json& j) {
  const std::string text = j.dump(2) + "\n";
  if (path.empty() || path == "-")
    std::cout << text;
  else
    write_file(path, text);
}

/// Mask sets in a bundle: either one unprefixed set or "<i>."-prefixed sets.
std::vector<MaskSet> mask_sets_in(const Bundle& b) {
  if (b.find("binary")) return {read_mask_set(b)};
  std::vector<MaskSet> out;
  for (std::size_t i = 0; b.find(std::to_string(i) + ".binary"); ++i)
    out.push_back(read_mask_set(b, std::to_string(i) + "."));
  if (out.empty()) throw DataError("bundle holds no mask set");
  return out;
}

// ---------------------------------------------------------------------------

struct DecodeArgs {
  std::string features, kernels, categories, config, out;
  std::optional<double> score_threshold, mask_threshold;
};

int run_decode(const DecodeArgs& a) {
  RunConfig cfg = base_config(a.config);
  if (a.score_threshold) cfg.score_threshold = *a.score_threshold;
  if (a.mask_threshold) cfg.mask_threshold = *a.mask_threshold;
  cfg.validate();
  const FeatureMap F(read_tensor(a.features));
  const KernelBank G{read_tensor(a.kernels)};
  const CategoryMap C{read_tensor(a.categories)};
  if (C.scores.rank() != 3 || G.kernels.rank() != 3 || C.side() != G.side())
    throw ShapeError("kernels and categories must share the S×S grid");
  const MaskSet set = select_candidates(decode_masks(F, G), C, cfg.score_threshold, cfg.mask_threshold);
  write_bundle(a.out, mask_set_bundle(set, F.height(), F.width()));
  std::cout << "cell  category  score     area\n";
  for (const auto& m : set)
    std::printf("%4d  %8d  %s  %4zu\n", m.cell, m.category, fixed(m.score).c_str(), m.area());
  std::cout << set.size() << " candidate(s) written to " << fs::path(a.out).filename().string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct NmsArgs {
  std::string masks, out, config;
  std::optional<double> post_threshold;
};

int run_nms(const NmsArgs& a) {
  RunConfig cfg = base_config(a.config);
  if (a.post_threshold) cfg.post_threshold = *a.post_threshold;
  cfg.validate();
  const MaskSet set = read_mask_set(read_bundle(a.masks));
  const SuppressionResult r = suppress(set, cfg.post_threshold);
  if (!a.out.empty()) write_bundle(a.out, suppression_bundle(r));
  std::vector<int> rank(set.size(), -1);
  for (std::size_t k = 0; k < r.kept_indices.size(); ++k) rank[r.kept_indices[k]] = static_cast<int>(k);
  std::cout << "index  score     penalty   updated   rank\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    std::printf("%5zu  %s  %s  %s  %s\n", i, fixed(set[i].score).c_str(), fixed(r.penalties[i]).c_str(),
                fixed(r.updated_scores[i]).c_str(), rank[i] < 0 ? "-" : std::to_string(rank[i]).c_str());
  }
  std::cout << r.kept_indices.size() << " of " << set.size() << " kept (post_threshold " << fixed(cfg.post_threshold, 3)
            << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct SeparateArgs {
  std::string features, masks, config, out, image, background;
  std::optional<std::size_t> grid;
};

int run_separate(const SeparateArgs& a) {
  RunConfig cfg = base_config(a.config);
  if (a.grid) cfg.grid = *a.grid;
  cfg.validate();
  const FeatureMap F(read_tensor(a.features));
  const MaskSet set = read_mask_set(read_bundle(a.masks));
  SuppressionResult r = suppress(set, cfg.post_threshold);
  if (r.kept_indices.size() > cfg.max_instances) r.kept_indices.resize(cfg.max_instances);
  const ViewFeatures v = separate_views(F, set, r, cfg.grid);
  write_bundle(a.out, view_bundle(v));
  std::cout << "instance view D: " << v.instance.rows() << "x" << v.instance.cols() << "\n";
  std::cout << "background view B: " << v.background.rows() << "x" << v.background.cols() << "\n";
  std::size_t empty_cells = 0;
  for (Eigen::Index j = 0; j < v.background.cols(); ++j) empty_cells += v.background.col(j).isZero(0.0);
  std::cout << "fully covered cells: " << empty_cells << "\n";
  if (!a.image.empty()) {
    if (a.background.empty()) throw ConfigError("background", "--image needs --background OUT.ppm");
    const Tensor<double> img = read_tensor(a.image);
    const std::size_t H = set.empty() ? img.dim(0) : set.front().height();
    const std::size_t W = set.empty() ? img.dim(1) : set.front().width();
    const FusedInstanceMask fused = fuse_instances(retained_masks(set, r), H, W);
    const Fill fill{cfg.fill == "constant" ? FillStrategy::Constant : FillStrategy::Mean, cfg.fill_value};
    write_file(a.background, encode_ppm(background_image(fused, img, fill)));
    std::cout << "background image written to " << fs::path(a.background).filename().string() << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, data, checkpoint, log;
  std::optional<std::size_t> threads, epochs;
};

int run_train(const TrainArgs& a) {
  RunConfig cfg = base_config(a.config);
  if (a.threads) cfg.threads = *a.threads;
  if (a.epochs) cfg.epochs = *a.epochs;
  cfg.validate();
  const Dataset data = load_training_set(a.data, cfg);
  std::string log;
  const TrainResult r = train(data, cfg.train_config(), [&](const EpochMetrics& m) {
    json j;
    j["epoch"] = m.epoch;
    j["train_loss"] = m.train_loss;
    j["eval_loss"] = m.eval_loss;
    j["train_accuracy"] = m.train_accuracy;
    j["lr"] = m.lr;
    log += j.dump() + "\n";
  });
  write_bundle(a.checkpoint, checkpoint_bundle(r.params));
  if (!a.log.empty()) write_file(a.log, log);
  const auto& last = r.log.back();
  std::cout << "samples " << data.size() << ", epochs " << r.log.size() << ", order " << cfg.order << "\n";
  std::cout << "final train_loss " << fixed(last.train_loss) << " eval_loss " << fixed(last.eval_loss)
            << " train_accuracy " << fixed(last.train_accuracy, 4) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string predictions, annotations, checkpoint, data, config, out, predictions_out;
};

int run_eval(const EvalArgs& a) {
  std::vector<std::size_t> predicted;
  if (!a.checkpoint.empty()) {
    if (a.data.empty()) throw ConfigError("data", "--checkpoint needs --data DIR");
    const ModelParams p = read_checkpoint(read_bundle(a.checkpoint));
    RunConfig cfg = base_config(a.config);
    const ModelDims& d = p.dims;
    cfg.L = d.L;
    cfg.n = d.n;
    cfg.h = d.h;
    cfg.T = d.T;
    cfg.validate();
    for (const auto& s : load_training_set(a.data, cfg)) predicted.push_back(forward(p, s.input).answer.predicted());
    if (!a.predictions_out.empty()) {
      std::string text;
      for (auto v : predicted) text += std::to_string(v) + "\n";
      write_file(a.predictions_out, text);
    }
  } else if (!a.predictions.empty()) {
    predicted = read_indices(a.predictions);
  } else {
    throw ConfigError("predictions", "give --predictions FILE or --checkpoint with --data");
  }
  std::vector<AnnotatedAnswer> ann = read_annotations(a.annotations);
  if (ann.size() != predicted.size())
    throw DataError(std::to_string(predicted.size()) + " predictions for " + std::to_string(ann.size()) +
                    " annotated questions");
  for (std::size_t i = 0; i < ann.size(); ++i) ann[i].predicted = predicted[i];
  const AccuracyBreakdown b = breakdown(ann);
  json report;
  report["questions"] = b.total;
  report["overall"] = b.overall ? json(*b.overall) : json(nullptr);
  json per = json::object(), counts = json::object();
  for (auto t : {QuestionType::YesNo, QuestionType::Number, QuestionType::Other}) {
    if (!b.of(t)) continue;
    per[std::string(qtype_name(t))] = *b.of(t);
    counts[std::string(qtype_name(t))] = b.counts[static_cast<std::size_t>(t)];
  }
  report["per_type"] = per;
  report["counts"] = counts;
  write_json(a.out, report);
  return 0;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::string order = "I-B-Q";
  std::size_t rho = 5, phi = 4;
  double step = 1e-5, tolerance = 1e-4;
};

int run_gradcheck(const GradcheckArgs& a) {
  ModelDims d;
  d.L = 8;
  d.n = 8;
  d.h = 6;
  d.gamma = 4;
  d.gamma_att = 3;
  d.heads = 2;
  d.m = 10;
  d.T = 7;
  const ComposeOrder order = parse_order(a.order);
  const GradcheckReport r = gradcheck_model(d, order, a.rho, a.phi, a.seed, a.step, a.tolerance);
  std::cout << "gradcheck order " << a.order << " seed " << a.seed << " step " << sci(a.step) << " tolerance "
            << sci(a.tolerance) << "\n";
  for (const auto& t : r.tensors)
    std::printf("  %-10s max_rel %s  max_abs %s  %s\n", t.name.c_str(), sci(t.max_rel_error).c_str(),
                sci(t.max_abs_error).c_str(), t.passed ? "ok" : "FAIL");
  if (!r.diagnostic.empty()) std::cout << "diagnostic: " << r.diagnostic << "\n";
  std::cout << (r.passed ? "PASS" : "FAIL") << " (worst " << sci(r.worst()) << ")\n";
  return r.passed ? 0 : 1;
}

// ---------------------------------------------------------------------------

int run_synth(const SynthSpec& spec, const std::string& out) {
  const SynthDataset ds = synth_dataset(spec);
  write_dataset(ds, out);
  std::cout << ds.samples.size() << " samples, " << spec.height << "x" << spec.width << "x" << spec.L << " features, "
            << spec.kinds << " answers written to " << fs::path(out).filename().string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

int run_iou_stats(const std::vector<std::string>& files, const std::string& out) {
  std::vector<MaskSet> sets;
  for (const auto& f : files)
    for (auto& s : mask_sets_in(read_bundle(f))) sets.push_back(std::move(s));
  const auto edges = default_iou_edges();
  const auto hist = iou_overlap_stats(sets, edges);
  json j;
  j["mask_sets"] = sets.size();
  j["iou_edges"] = edges;
  json bands = json::array();
  for (const auto& h : hist) {
    json b;
    b["band"] = h.band.label();
    b["samples"] = h.samples;
    b["pairs"] = h.pairs();
    b["counts"] = h.counts;
    std::vector<double> fr;
    for (std::size_t k = 0; k < h.counts.size(); ++k) fr.push_back(h.fraction(k));
    b["fractions"] = fr;
    bands.push_back(b);
  }
  j["bands"] = bands;
  write_json(out, j);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lois: instance/background relation attention pipeline"};
  app.name("lois");
  app.require_subcommand(1);
  app.fallthrough(false);

  int status = 0;
  auto guarded = [&status](auto fn) {
    return [fn, &status] { status = fn(); };
  };

  DecodeArgs dec;
  auto* s_dec = app.add_subcommand("decode-masks", "Decode and threshold candidate instance masks");
  s_dec->add_option("--features", dec.features, "H×W×E feature map (TensorFile)")->required();
  s_dec->add_option("--kernels", dec.kernels, "S×S×E dynamic kernels (TensorFile)")->required();
  s_dec->add_option("--categories", dec.categories, "S×S×C category scores (TensorFile)")->required();
  s_dec->add_option("--config", dec.config, "run config file");
  s_dec->add_option("--score-threshold", dec.score_threshold);
  s_dec->add_option("--mask-threshold", dec.mask_threshold);
  s_dec->add_option("--out", dec.out, "mask set bundle to write")->required();
  s_dec->callback(guarded([&] { return run_decode(dec); }));

  NmsArgs nms;
  auto* s_nms = app.add_subcommand("nms", "Matrix-NMS over a mask set; prints the score table");
  s_nms->add_option("--masks", nms.masks, "mask set bundle")->required();
  s_nms->add_option("--post-threshold", nms.post_threshold);
  s_nms->add_option("--config", nms.config, "run config file");
  s_nms->add_option("--out", nms.out, "suppression result bundle");
  s_nms->callback(guarded([&] { return run_nms(nms); }));

  SeparateArgs sep;
  auto* s_sep = app.add_subcommand("separate", "Build instance and background views");
  s_sep->add_option("--features", sep.features, "H×W×L feature map (TensorFile)")->required();
  s_sep->add_option("--masks", sep.masks, "mask set bundle")->required();
  s_sep->add_option("--grid", sep.grid, "background grid size G");
  s_sep->add_option("--config", sep.config, "run config file");
  s_sep->add_option("--out", sep.out, "view bundle to write")->required();
  s_sep->add_option("--image", sep.image, "H×W×3 image in [0,1] (TensorFile) for the background export");
  s_sep->add_option("--background", sep.background, "background image to write (PPM)");
  s_sep->callback(guarded([&] { return run_separate(sep); }));

  TrainArgs tr;
  auto* s_tr = app.add_subcommand("train", "Train on a dataset directory");
  s_tr->add_option("--config", tr.config, "run config file");
  s_tr->add_option("--data", tr.data, "dataset directory")->required();
  s_tr->add_option("--checkpoint", tr.checkpoint, "checkpoint bundle to write")->required();
  s_tr->add_option("--log", tr.log, "per-epoch metrics (JSON lines)");
  s_tr->add_option("--threads", tr.threads, "worker threads (results do not depend on it)");
  s_tr->add_option("--epochs", tr.epochs);
  s_tr->callback(guarded([&] { return run_train(tr); }));

  EvalArgs ev;
  auto* s_ev = app.add_subcommand("eval", "Score predictions against annotations");
  s_ev->add_option("--annotations", ev.annotations, "annotations (JSON lines)")->required();
  s_ev->add_option("--predictions", ev.predictions, "one answer index per line");
  s_ev->add_option("--checkpoint", ev.checkpoint, "predict with this checkpoint instead");
  s_ev->add_option("--data", ev.data, "dataset directory for --checkpoint");
  s_ev->add_option("--config", ev.config, "run config file for --checkpoint");
  s_ev->add_option("--predictions-out", ev.predictions_out, "write the model predictions here");
  s_ev->add_option("--out", ev.out, "report file (default stdout)");
  s_ev->callback(guarded([&] { return run_eval(ev); }));

  GradcheckArgs gc;
  auto* s_gc = app.add_subcommand("gradcheck", "Finite-difference check of the analytic gradients");
  s_gc->add_option("--seed", gc.seed);
  s_gc->add_option("--order", gc.order);
  s_gc->add_option("--rho", gc.rho, "instance columns");
  s_gc->add_option("--phi", gc.phi, "background columns");
  s_gc->add_option("--step", gc.step);
  s_gc->add_option("--tolerance", gc.tolerance);
  s_gc->callback(guarded([&] { return run_gradcheck(gc); }));

  SynthSpec sp;
  std::string synth_out;
  auto* s_sy = app.add_subcommand("synth-data", "Write a planted synthetic dataset");
  s_sy->add_option("--out", synth_out, "dataset directory")->required();
  s_sy->add_option("--count", sp.count);
  s_sy->add_option("--seed", sp.seed);
  s_sy->add_option("--kinds", sp.kinds, "instance/background kinds (= answers)");
  s_sy->add_option("--L", sp.L, "feature channels");
  s_sy->add_option("--height", sp.height);
  s_sy->add_option("--width", sp.width);
  s_sy->add_option("--distractors", sp.distractors);
  s_sy->add_option("--noise", sp.noise);
  s_sy->callback(guarded([&] { return run_synth(sp, synth_out); }));

  std::vector<std::string> iou_files;
  std::string iou_out;
  auto* s_io = app.add_subcommand("iou-stats", "Pairwise IoU histogram per instance-count band");
  s_io->add_option("--masks", iou_files, "mask bundles (single or <i>.-prefixed sets)")->required();
  s_io->add_option("--out", iou_out, "report file (default stdout)");
  s_io->callback(guarded([&] { return run_iou_stats(iou_files, iou_out); }));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const lois::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return status;
}
