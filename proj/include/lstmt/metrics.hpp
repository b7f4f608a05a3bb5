#pragma once

// Corpus-level caption metrics: BLEU@1-4, ROUGE-L, CIDEr-D and METEOR-lite.
//
// All text goes through tokenize(): lowercase, punctuation characters
// removed, split on whitespace. Scores are in [0, 1]; MetricReport scales
// them by 100 for display.
//
// METEOR-lite is not METEOR. It aligns unigrams by exact match, then by a
// suffix-stripping stem, with no synonym or paraphrase stage:
//   alignment  each candidate word (left to right) takes the leftmost unused
//              reference word that matches it; exact pass first, stem pass
//              over what is left
//   P = m/|c|, R = m/|r|,  F = P·R / (α·P + (1-α)·R),  α = 0.9
//   penalty = γ·(chunks/m)^β,  γ = 0.5, β = 3
//   score = F·(1 - penalty), best over references, mean over the corpus
// where a chunk is a maximal run of matches adjacent in both sentences.
//
// CIDEr-D follows the usual definition (n = 1..4, document frequencies over
// the references of each pair, clipped tf-idf products, Gaussian length
// penalty with σ = 6 on token counts) without the customary ×10, so it stays
// in [0, 1]. With a single pair every idf would be log(1) - log(1) = 0; the
// scorer then uses idf = 1 and reports a warning.

#include <array>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lstmt::metrics {

using Words = std::vector<std::string>;

Words tokenize(std::string_view text);

struct EvalPair {
  std::string id;
  std::string candidate;
  std::vector<std::string> references;
};

/// Corpus BLEU with clipped counts, geometric mean over orders 1..n and the
/// brevity penalty exp(1 - r/c) when c < r (r sums each candidate's closest
/// reference length, shorter on ties). Any zero precision gives 0.
double bleu(std::span<const EvalPair> pairs, int n);
double rouge_l(std::span<const EvalPair> pairs);
double cider_d(std::span<const EvalPair> pairs);
double meteor_lite(std::span<const EvalPair> pairs);

// Sentence-level pieces, also used as rewards.
std::size_t lcs_length(const Words& a, const Words& b);
double rouge_l_sentence(const Words& candidate, const std::vector<Words>& references);
double meteor_lite_sentence(const Words& candidate, const std::vector<Words>& references);
double bleu_sentence(const Words& candidate, const std::vector<Words>& references, int n);
std::string stem(std::string_view word);

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};
MeteorAlignment meteor_align(const Words& candidate, const Words& reference);

/// CIDEr-D with document frequencies fixed from a reference corpus, so that
/// single candidates can be scored against it.
class CiderScorer {
 public:
  explicit CiderScorer(const std::vector<std::vector<Words>>& reference_corpus);

  double score(const Words& candidate, const std::vector<Words>& references) const;
  /// True when the corpus had a single document and uniform idf is in use.
  bool uniform_idf() const { return uniform_idf_; }

 private:
  using NgramVec = std::array<std::map<std::string, double>, 4>;
  void vectorize(const Words& words, NgramVec& vec, std::array<double, 4>& norm) const;

  std::map<std::string, double> doc_freq_;
  double log_docs_ = 0.0;
  bool uniform_idf_ = false;
};

struct MetricReport {
  std::array<double, 4> bleu{};
  double meteor_lite = 0.0;
  double rouge_l = 0.0;
  double cider_d = 0.0;
  std::vector<std::string> warnings;

  /// JSON object with every score ×100.
  std::string to_json() const;
  /// Fixed-width table with the columns B@1..B@4, M-lite, R, C.
  std::string table(const std::string& label) const;
};

/// Throws ContractError on an empty corpus or a pair without references.
MetricReport evaluate(std::span<const EvalPair> pairs);

}  // namespace lstmt::metrics
