#pragma once

// Caption generation from one captioner or a late-fused set of them.
//
// Each model attends over its own stream. At every step the models'
// generation log-probabilities (log_softmax over the emittable ids) are
// combined into one fused vector: by default their arithmetic mean, or the
// log of the mean probability when FusionRule::prob_mean is chosen.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lstmt/model.hpp"

namespace lstmt {

enum class LengthNorm { none, by_length };
enum class FusionRule { log_mean, prob_mean };

struct DecodeConfig {
  std::size_t beam_width = 3;
  std::size_t max_len = 30;
  LengthNorm length_norm = LengthNorm::by_length;
  FusionRule fusion = FusionRule::log_mean;

  void validate() const;
};

/// A model taking part in decoding. When `stream` is set, the features
/// handed to it must be of that stream.
struct Captioner {
  const CaptionerParams* params = nullptr;
  std::optional<Stream> stream;
};

struct GreedyResult {
  /// Generated ids (BOS excluded, EOS included when emitted).
  std::vector<TokenId> tokens;
  /// Fused generation log-probs per step, indexed like emittable_tokens().
  std::vector<std::vector<double>> log_probs;
  /// attention[step][model] = λ over that model's K rows.
  std::vector<std::vector<Tensor>> attention;
};

/// `features[i]` feeds `models[i]`. Throws ConfigError on a count, vocabulary
/// or stream mismatch.
GreedyResult greedy_decode(std::span<const Captioner> models, std::span<const FeatureSequence> features,
                           const DecodeConfig& config);

struct Hypothesis {
  /// Starts with BOS.
  std::vector<TokenId> tokens;
  double cum_log_prob = 0.0;
  /// One state per model after the last token.
  std::vector<DecoderState> states;
  bool finished = false;

  /// Tokens after BOS.
  std::size_t length() const { return tokens.empty() ? 0 : tokens.size() - 1; }
  double score(LengthNorm norm) const;
};

/// Finished hypotheses, best first under config.length_norm; ties go to the
/// lexicographically smaller token sequence. A hypothesis that reaches
/// max_len without EOS counts as finished.
std::vector<Hypothesis> beam_decode(std::span<const Captioner> models, std::span<const FeatureSequence> features,
                                    const DecodeConfig& config);

/// Rows of `seq` covering [t_start, t_end), with time measured in rows.
/// Returns a sequence with no rows when the range misses the video.
FeatureSequence slice_features(const FeatureSequence& seq, double t_start, double t_end);

struct Proposal {
  double t_start = 0.0;
  double t_end = 0.0;
  /// One slice per model, same order as the models.
  std::vector<FeatureSequence> slices;
};

struct EventCaption {
  double t_start = 0.0;
  double t_end = 0.0;
  std::vector<TokenId> tokens;  // EOS stripped
  std::string error;            // non-empty when this proposal failed

  bool ok() const { return error.empty(); }
};

/// Decodes each proposal independently with beam search and keeps input
/// order. A failing proposal yields an error entry; the rest still decode.
std::vector<EventCaption> caption_events(std::span<const Captioner> models, std::span<const Proposal> proposals,
                                         const DecodeConfig& config);

}  // namespace lstmt
