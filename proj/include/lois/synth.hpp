#pragma once

// Planted synthetic VQA data. Each image has one "signal" instance drawn
// from K instance kinds, a background drawn from K background kinds, and a
// few distractor instances. The answer is (instance kind + background kind)
// mod K, so no function that scores the two views independently and adds the
// results can get every sample right.

#include <json.hpp>

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "lois/config.hpp"
#include "lois/evaluation.hpp"
#include "lois/formats.hpp"
#include "lois/mask_decoder.hpp"
#include "lois/matrix_nms.hpp"
#include "lois/question_encoder.hpp"
#include "lois/rng.hpp"
#include "lois/training.hpp"
#include "lois/view_separation.hpp"

namespace lois {

struct SynthSpec {
  std::size_t count = 64;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t L = 16;
  std::size_t kinds = 4;        // instance kinds = background kinds = answers
  std::size_t distractors = 2;  // extra instances per image
  double noise = 0.05;
  bool duplicates = true;       // add a lower-scored partial copy of the signal mask
  std::uint64_t seed = 0;

  void validate() const {
    if (height < 8 || width < 8) throw DomainError("synthetic images need at least 8×8 pixels");
    if (L < 1 || kinds < 2) throw DomainError("synthetic data needs L >= 1 and at least 2 kinds");
    if (distractors > 6) throw DomainError("at most 6 distractors fit the layout");
  }
};

struct SynthSample {
  FeatureMap features;
  MaskSet masks;
  std::string question;
  std::size_t label = 0;
  std::size_t instance_kind = 0;
  std::size_t background_kind = 0;
  std::size_t signal_mask = 0;  // index of the planted signal instance in `masks`
};

struct SynthDataset {
  SynthSpec spec;
  Mat instance_prototypes;    // L×K
  Mat background_prototypes;  // L×K
  Mat distractor_prototypes;  // L×2
  std::vector<SynthSample> samples;

  std::vector<std::string> answers() const {
    std::vector<std::string> a;
    for (std::size_t k = 0; k < spec.kinds; ++k) a.push_back("answer_" + std::to_string(k));
    return a;
  }
};

inline const std::array<const char*, 3>& synth_questions() {
  static const std::array<const char*, 3> q = {
      "What is the relation between the object and the scene?",
      "How does the object relate to its background?",
      "Which answer fits the object in this scene?",
  };
  return q;
}

namespace detail {

inline Mat random_prototypes(Rng& rng, std::size_t L, std::size_t k) {
  Mat p(static_cast<Eigen::Index>(L), static_cast<Eigen::Index>(k));
  for (Eigen::Index c = 0; c < p.cols(); ++c)
    for (Eigen::Index r = 0; r < p.rows(); ++r) p(r, c) = rng.uniform(-1.0, 1.0);
  return p;
}

struct Rect {
  std::size_t r0, c0, r1, c1;  // half-open
  bool overlaps(const Rect& o) const { return r0 < o.r1 && o.r0 < r1 && c0 < o.c1 && o.c0 < c1; }
};

inline BinaryMask rect_mask(const Rect& rc, std::size_t H, std::size_t W) {
  BinaryMask m({H, W}, 0);
  for (std::size_t r = rc.r0; r < rc.r1; ++r)
    for (std::size_t c = rc.c0; c < rc.c1; ++c) m(r, c) = 1;
  return m;
}

}  // namespace detail

inline SynthDataset synth_dataset(const SynthSpec& spec) {
  spec.validate();
  Rng rng(mix_keys({spec.seed, 0x5e7ULL}));
  SynthDataset ds;
  ds.spec = spec;
  ds.instance_prototypes = detail::random_prototypes(rng, spec.L, spec.kinds);
  ds.background_prototypes = detail::random_prototypes(rng, spec.L, spec.kinds);
  ds.distractor_prototypes = detail::random_prototypes(rng, spec.L, 2);

  const std::size_t H = spec.height, W = spec.width;
  const std::size_t side = std::max<std::size_t>(3, std::min(H, W) / 4);
  for (std::size_t s = 0; s < spec.count; ++s) {
    SynthSample smp;
    // Balanced kinds: every (instance, background) pair appears equally often.
    smp.instance_kind = s % spec.kinds;
    smp.background_kind = (s / spec.kinds) % spec.kinds;
    smp.label = (smp.instance_kind + smp.background_kind) % spec.kinds;
    smp.question = synth_questions()[rng.below(synth_questions().size())];

    FeatureMap F(H, W, spec.L);
    auto paint = [&](std::size_t r, std::size_t c, const Mat& protos, Eigen::Index k) {
      for (std::size_t e = 0; e < spec.L; ++e)
        F(r, c, e) = protos(static_cast<Eigen::Index>(e), k) + spec.noise * rng.uniform(-1.0, 1.0);
    };
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c)
        paint(r, c, ds.background_prototypes, static_cast<Eigen::Index>(smp.background_kind));

    std::vector<detail::Rect> rects;
    const std::size_t placed = 1 + spec.distractors;
    while (rects.size() < placed) {
      const std::size_t r0 = rng.below(H - side + 1), c0 = rng.below(W - side + 1);
      const detail::Rect rc{r0, c0, r0 + side, c0 + side};
      bool clash = false;
      for (const auto& o : rects) clash |= rc.overlaps(o);
      if (!clash) rects.push_back(rc);
    }
    const std::size_t signal_slot = rng.below(placed);
    std::size_t d = 0;
    for (std::size_t k = 0; k < placed; ++k) {
      const auto& rc = rects[k];
      const bool signal = k == signal_slot;
      const Mat& protos = signal ? ds.instance_prototypes : ds.distractor_prototypes;
      const Eigen::Index kind = signal ? static_cast<Eigen::Index>(smp.instance_kind)
                                       : static_cast<Eigen::Index>(rng.below(2));
      for (std::size_t r = rc.r0; r < rc.r1; ++r)
        for (std::size_t c = rc.c0; c < rc.c1; ++c) paint(r, c, protos, kind);
      if (signal) smp.signal_mask = smp.masks.size();
      smp.masks.push_back(make_scored_mask(detail::rect_mask(rc, H, W), 0.6 + 0.4 * rng.uniform(),
                                           signal ? 1 : 2 + static_cast<int>(d++)));
    }
    if (spec.duplicates) {
      // Lower-scored copy of the signal mask missing its last row; it stays
      // inside the instance so no background pixel leaks into D.
      const auto& rc = rects[signal_slot];
      const detail::Rect dup{rc.r0, rc.c0, rc.r1 - 1, rc.c1};
      const double score = smp.masks[smp.signal_mask].score * (0.5 + 0.4 * rng.uniform());
      smp.masks.push_back(make_scored_mask(detail::rect_mask(dup, H, W), score, 1));
    }
    smp.features = std::move(F);
    ds.samples.push_back(std::move(smp));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Dataset directory
//
//   features.lten      N×H×W×L f64 feature maps
//   masks.lbdl         per sample "<i>.binary", "<i>.soft", "<i>.scores", "<i>.categories"
//   questions.txt      one question per line
//   labels.txt         one answer index per line
//   answers.txt        answer vocabulary, one per line
//   annotations.jsonl  {"qtype": ..., "counts": {"<answer>": annotators}} per line

inline void write_dataset(const SynthDataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto& sp = ds.spec;
  Tensor<double> feats({ds.samples.size(), sp.height, sp.width, sp.L});
  Bundle masks;
  std::string questions, labels, annotations, answers;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    auto src = s.features.tensor().values();
    std::copy(src.begin(), src.end(), feats.slice(i).begin());
    add_mask_set(masks, s.masks, sp.height, sp.width, std::to_string(i) + ".");
    questions += s.question + "\n";
    labels += std::to_string(s.label) + "\n";
    nlohmann::ordered_json a;
    a["qtype"] = "other";
    a["counts"] = {{std::to_string(s.label), 10}};
    annotations += a.dump() + "\n";
  }
  for (const auto& a : ds.answers()) answers += a + "\n";
  write_tensor((fs::path(dir) / "features.lten").string(), feats);
  write_bundle((fs::path(dir) / "masks.lbdl").string(), masks);
  write_file((fs::path(dir) / "questions.txt").string(), questions);
  write_file((fs::path(dir) / "labels.txt").string(), labels);
  write_file((fs::path(dir) / "answers.txt").string(), answers);
  write_file((fs::path(dir) / "annotations.jsonl").string(), annotations);
}

/// One annotation record per line of `annotations.jsonl`.
inline std::vector<AnnotatedAnswer> read_annotations(const std::string& path) {
  std::vector<AnnotatedAnswer> out;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    if (line.empty()) continue;
    AnnotatedAnswer a;
    try {
      const auto j = nlohmann::json::parse(line);
      a.qtype = parse_qtype(j.at("qtype").get<std::string>());
      for (auto& [k, v] : j.at("counts").items()) {
        std::size_t idx = 0;
        auto [p, ec] = std::from_chars(k.data(), k.data() + k.size(), idx);
        if (ec != std::errc() || p != k.data() + k.size()) throw DataError("answer key '" + k + "' is not an index");
        a.human_counts[idx] = v.get<unsigned>();
      }
      a.validate();
    } catch (const std::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    out.push_back(std::move(a));
  }
  return out;
}

inline std::vector<std::size_t> read_indices(const std::string& path) {
  std::vector<std::size_t> out;
  std::size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    const auto t = detail::trim(line);
    if (t.empty()) continue;
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size())
      throw DataError(path + ":" + std::to_string(line_no) + ": '" + std::string(t) + "' is not an index");
    out.push_back(v);
  }
  return out;
}

/// Views of one image: suppression, the max_instances cap, then separation.
inline ViewFeatures image_views(const FeatureMap& F, const MaskSet& masks, const RunConfig& cfg) {
  SuppressionResult r = suppress(masks, cfg.post_threshold);
  if (r.kept_indices.size() > cfg.max_instances) r.kept_indices.resize(cfg.max_instances);
  return separate_views(F, masks, r, cfg.grid);
}

inline Sample make_sample(const FeatureMap& F, const MaskSet& masks, std::string_view question, std::size_t label,
                          const RunConfig& cfg) {
  const ViewFeatures v = image_views(F, masks, cfg);
  const QuestionEmbedding q = embed_question(question, cfg.n, cfg.h, cfg.embed_seed);
  return {ModelInput{v.instance, v.background, q.q, q.valid_columns()}, label};
}

/// Training samples straight from generated data.
inline Dataset training_set(const SynthDataset& ds, const RunConfig& cfg) {
  Dataset out;
  for (const auto& s : ds.samples) out.push_back(make_sample(s.features, s.masks, s.question, s.label, cfg));
  return out;
}

/// Loads a dataset directory into training samples under `cfg`.
inline Dataset load_training_set(const std::string& dir, const RunConfig& cfg) {
  namespace fs = std::filesystem;
  const Tensor<double> feats = read_tensor((fs::path(dir) / "features.lten").string());
  const Bundle masks = read_bundle((fs::path(dir) / "masks.lbdl").string());
  const auto questions = read_lines((fs::path(dir) / "questions.txt").string());
  const auto labels = read_indices((fs::path(dir) / "labels.txt").string());
  if (feats.rank() != 4) throw DataError("features.lten must be N×H×W×L");
  const std::size_t N = feats.dim(0);
  if (questions.size() != N || labels.size() != N)
    throw DataError("dataset has " + std::to_string(N) + " feature maps, " + std::to_string(questions.size()) +
                    " questions and " + std::to_string(labels.size()) + " labels");
  if (feats.dim(3) != cfg.L)
    throw ConfigError("L", "dataset features have " + std::to_string(feats.dim(3)) + " channels");

  Dataset out;
  for (std::size_t i = 0; i < N; ++i) {
    if (labels[i] >= cfg.T)
      throw DataError("sample " + std::to_string(i) + " label " + std::to_string(labels[i]) + " >= T");
    auto src = feats.slice(i);
    FeatureMap F(Tensor<double>({feats.dim(1), feats.dim(2), feats.dim(3)}, std::vector<double>(src.begin(), src.end())));
    const MaskSet set = read_mask_set(masks, std::to_string(i) + ".");
    out.push_back(make_sample(F, set, questions[i], labels[i], cfg));
  }
  return out;
}

}  // namespace lois
