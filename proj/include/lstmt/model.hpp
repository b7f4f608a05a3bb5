#pragma once

// Two-layer attention LSTM captioner.
//
// Per decoding step t, with video features v_1..v_K and their mean v̄:
//   layer 1:   h1_t = LSTM1([h2_{t-1}, E·onehot(w_t), v̄])
//   attention: a_i = w_score · tanh(W_feat v_i + W_hid h1_t),  λ = softmax(a)
//              v̂_t = Σ λ_i v_i
//   layer 2:   h2_t = LSTM2([v̂_t, h1_t])
//   head:      log p(w_{t+1}) = log_softmax(W_out h2_t + b_out)
//
// Two API levels: graph-level functions that record onto a Tape (used by
// training and decoding), and value-level wrappers over Tensors.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lstmt/tape.hpp"
#include "lstmt/tensor.hpp"

namespace lstmt {

using TokenId = std::uint32_t;

namespace tokens {
inline constexpr TokenId pad = 0;
inline constexpr TokenId bos = 1;
inline constexpr TokenId eos = 2;
inline constexpr TokenId unk = 3;
inline constexpr std::size_t reserved = 4;
}  // namespace tokens

struct ModelConfig {
  std::size_t d_v = 2048;  // feature width
  std::size_t d_h = 1000;  // LSTM hidden width
  std::size_t d_a = 512;   // attention hidden width
  std::size_t d_e = 300;   // word embedding width
  std::size_t vocab_size = tokens::reserved;
  std::size_t max_caption_len = 30;

  /// Throws ConfigError on a zero dimension or vocab_size < 4.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Gates are stacked input, forget, cell-candidate, output.
struct LstmCellParams {
  Tensor input_weights;      // 4h × in
  Tensor recurrent_weights;  // 4h × h
  Tensor bias;               // 4h
};

struct CaptionerParams {
  ModelConfig config;
  Tensor embedding;     // d_e × vocab
  Tensor attn_score;    // 1 × d_a
  Tensor attn_feature;  // d_a × d_v
  Tensor attn_hidden;   // d_a × d_h
  LstmCellParams lstm1;  // input d_h + d_e + d_v
  LstmCellParams lstm2;  // input d_v + d_h
  Tensor out_weights;   // vocab × d_h
  Tensor out_bias;      // vocab

  static CaptionerParams zeros(const ModelConfig& config);
  /// Uniform in [-0.08, 0.08], forget-gate biases 1.0.
  static CaptionerParams initialized(const ModelConfig& config, std::uint64_t seed);

  /// Visits (name, tensor) for every parameter in a fixed order.
  template <class F>
  void for_each(F&& f) {
    f("embedding", embedding);
    f("attn_score", attn_score);
    f("attn_feature", attn_feature);
    f("attn_hidden", attn_hidden);
    f("lstm1.input_weights", lstm1.input_weights);
    f("lstm1.recurrent_weights", lstm1.recurrent_weights);
    f("lstm1.bias", lstm1.bias);
    f("lstm2.input_weights", lstm2.input_weights);
    f("lstm2.recurrent_weights", lstm2.recurrent_weights);
    f("lstm2.bias", lstm2.bias);
    f("out_weights", out_weights);
    f("out_bias", out_bias);
  }
  template <class F>
  void for_each(F&& f) const {
    const_cast<CaptionerParams*>(this)->for_each(
        [&](const char* name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
  }

  std::size_t parameter_count() const;
  /// Throws DimensionError if any tensor disagrees with `config`.
  void validate() const;

  friend bool operator==(const CaptionerParams&, const CaptionerParams&);
};

enum class Stream { rgb, flow };
std::string to_string(Stream s);
/// Throws ConfigError on anything other than "rgb" / "flow".
Stream parse_stream(const std::string& s);

/// K per-timestep feature vectors of one stream of one video.
struct FeatureSequence {
  std::string video_id;
  Stream stream = Stream::rgb;
  Tensor features;  // K × d_v

  std::size_t frames() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
};

struct DecoderState {
  Tensor h1, c1, h2, c2;
  Tensor v_bar;
};

// ---- graph level ---------------------------------------------------------

struct BoundCell {
  Var input_weights, recurrent_weights, bias;
};

/// Parameters placed on a tape.
struct BoundParams {
  ModelConfig config;
  Var embedding, attn_score, attn_feature, attn_hidden;
  BoundCell lstm1, lstm2;
  Var out_weights, out_bias;

  /// Same order as CaptionerParams::for_each.
  std::vector<Var> all() const;
};

/// `trainable` makes the parameters tape variables so backward() reaches them.
BoundParams bind(Tape& tape, const CaptionerParams& params, bool trainable);

/// Gradients of the last backward() pass, shaped like the parameters.
/// Parameters the loss did not reach get zeros.
CaptionerParams collect_gradients(const BoundParams& bound);

/// Per-video quantities that do not change across decoding steps.
struct EncodedVideo {
  Var frames_t;   // d_v × K
  Var projected;  // d_a × K, feature half of the attention pre-activation
  Var mean;       // v̄
  std::size_t frames = 0;
};

EncodedVideo encode(const BoundParams& p, const Tensor& features);

struct StateVars {
  Var h1, c1, h2, c2;
};

StateVars zero_state(Tape& tape, std::size_t d_h);
StateVars to_vars(Tape& tape, const DecoderState& s);
DecoderState to_state(const StateVars& s, const EncodedVideo& video);

/// Standard LSTM update; returns (h, c).
std::pair<Var, Var> lstm_cell(const BoundCell& cell, Var input, Var h, Var c);

struct AttentionVars {
  Var weights;   // λ, length K
  Var attended;  // v̂
};

AttentionVars attend(const BoundParams& p, const EncodedVideo& video, Var h1);

struct StepVars {
  StateVars state;
  Var logits;
  Var log_probs;
  Var attention;
};

/// One full decoding step. Throws VocabularyError if token >= vocab_size.
StepVars step(const BoundParams& p, const EncodedVideo& video, const StateVars& state, TokenId token);

/// Ids a decoder may emit: everything but PAD, BOS and UNK, ascending.
std::vector<TokenId> emittable_tokens(std::size_t vocab_size);

/// log_softmax over the emittable subset of the logits; entry j belongs to
/// emittable_tokens(vocab)[j].
Var generation_log_probs(Var logits, std::size_t vocab_size);

// ---- value level ---------------------------------------------------------

/// Throws ContractError when the sequence has no rows.
Tensor mean_pool(const FeatureSequence& features);

DecoderState initial_state(const CaptionerParams& params, const FeatureSequence& features);

std::pair<Tensor, Tensor> lstm1_step(const DecoderState& state, TokenId token, const CaptionerParams& params);

struct AttentionResult {
  Tensor weights;
  Tensor attended;
};
AttentionResult attention(const FeatureSequence& features, const Tensor& h1, const CaptionerParams& params);

/// Uses state.h1 as the current first-layer output and state.h2/c2 as the
/// previous second-layer state.
std::pair<Tensor, Tensor> lstm2_step(const DecoderState& state, const Tensor& attended, const CaptionerParams& params);

Tensor word_logits(const Tensor& h2, const CaptionerParams& params);

struct StepResult {
  DecoderState state;
  Tensor log_probs;
  Tensor attention;
};
StepResult decode_step(const DecoderState& state, TokenId token, const FeatureSequence& features,
                       const CaptionerParams& params);

}  // namespace lstmt
