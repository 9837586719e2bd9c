#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "lois/rng.hpp"
#include "lois/tensor.hpp"

namespace lois {

/// n×h question matrix; column t is token t, padded columns are zero.
struct QuestionEmbedding {
  Eigen::MatrixXd q;
  std::size_t tokens = 0;  // non-pad columns

  Eigen::Index dim() const { return q.rows(); }
  Eigen::Index length() const { return q.cols(); }
  std::vector<bool> valid_columns() const {
    std::vector<bool> v(static_cast<std::size_t>(q.cols()), false);
    for (std::size_t t = 0; t < tokens && t < v.size(); ++t) v[t] = true;
    return v;
  }
};

/// Lowercases ASCII and splits on anything that is not [a-z0-9]. Bytes
/// outside ASCII act as separators, so no locale is consulted.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
    if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) {
      cur.push_back(static_cast<char>(c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

/// Deterministic unit vector of dimension n for one token.
inline Eigen::VectorXd token_vector(std::string_view token, std::size_t n, std::uint64_t seed) {
  std::uint64_t state = mix_keys({fnv1a64(token), seed});
  Eigen::VectorXd v(static_cast<Eigen::Index>(n));
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      state = splitmix64(state);
      v(i) = static_cast<double>(state >> 11) * 0x1.0p-52 - 1.0;  // [-1, 1)
      norm2 += v(i) * v(i);  // sequential sum keeps the result platform independent
    }
  } while (norm2 == 0.0);
  return v / std::sqrt(norm2);
}

/// Hashed embedding: first h tokens kept, right-padded with zero columns.
inline QuestionEmbedding embed(const std::vector<std::string>& tokens, std::size_t n, std::size_t h,
                               std::uint64_t seed) {
  if (n < 1 || h < 1) throw DomainError("embedding needs n >= 1 and h >= 1");
  QuestionEmbedding out{Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(h)),
                        std::min(tokens.size(), h)};
  for (std::size_t t = 0; t < out.tokens; ++t)
    out.q.col(static_cast<Eigen::Index>(t)) = token_vector(tokens[t], n, seed);
  return out;
}

inline QuestionEmbedding embed_question(std::string_view text, std::size_t n, std::size_t h,
                                        std::uint64_t seed) {
  return embed(tokenize(text), n, h, seed);
}

}  // namespace lois
