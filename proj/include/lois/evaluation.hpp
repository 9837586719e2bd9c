#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lois/tensor.hpp"

namespace lois {

enum class QuestionType { YesNo, Number, Other };

inline std::string_view qtype_name(QuestionType t) {
  switch (t) {
    case QuestionType::YesNo: return "yesno";
    case QuestionType::Number: return "number";
    case QuestionType::Other: return "other";
  }
  return "other";
}

inline QuestionType parse_qtype(std::string_view s) {
  if (s == "yesno" || s == "yes/no") return QuestionType::YesNo;
  if (s == "number") return QuestionType::Number;
  if (s == "other") return QuestionType::Other;
  throw DomainError("unknown question type '" + std::string(s) + "'");
}

struct AnnotatedAnswer {
  std::size_t predicted = 0;
  std::map<std::size_t, unsigned> human_counts;  // answer index -> annotators
  QuestionType qtype = QuestionType::Other;

  void validate() const {
    unsigned total = 0;
    for (auto& [a, c] : human_counts) total += c;
    if (total > 10) throw DomainError("more than 10 annotator answers (" + std::to_string(total) + ")");
  }
};

/// Consensus accuracy min(#humans that gave the answer / 3, 1).
inline double vqa_accuracy(std::size_t predicted, const std::map<std::size_t, unsigned>& human_counts) {
  auto it = human_counts.find(predicted);
  const unsigned n = it == human_counts.end() ? 0u : it->second;
  return std::min(static_cast<double>(n) / 3.0, 1.0);
}

inline double vqa_accuracy(const AnnotatedAnswer& a) { return vqa_accuracy(a.predicted, a.human_counts); }

struct AccuracyBreakdown {
  std::optional<double> overall;
  std::array<std::optional<double>, 3> by_type;  // indexed by QuestionType
  std::array<std::size_t, 3> counts{};
  std::size_t total = 0;

  std::optional<double> of(QuestionType t) const { return by_type[static_cast<std::size_t>(t)]; }
};

/// Per-type and overall mean accuracy. A type with no questions is absent.
inline AccuracyBreakdown breakdown(const std::vector<AnnotatedAnswer>& results) {
  std::array<double, 3> sums{};
  double all = 0.0;
  AccuracyBreakdown b;
  for (const auto& r : results) {
    r.validate();
    const double acc = vqa_accuracy(r);
    const auto t = static_cast<std::size_t>(r.qtype);
    sums[t] += acc;
    ++b.counts[t];
    all += acc;
  }
  b.total = results.size();
  for (std::size_t t = 0; t < 3; ++t)
    if (b.counts[t] > 0) b.by_type[t] = sums[t] / static_cast<double>(b.counts[t]);
  if (!results.empty()) b.overall = all / static_cast<double>(results.size());
  return b;
}

}  // namespace lois
