#include "lstmt/model.hpp"

#include <random>

#include "lstmt/errors.hpp"

namespace lstmt {
namespace {

constexpr double kInitRange = 0.08;

LstmCellParams cell_zeros(std::size_t hidden, std::size_t input) {
  return {Tensor({4 * hidden, input}), Tensor({4 * hidden, hidden}), Tensor({4 * hidden})};
}

void expect_shape(const char* name, const Tensor& t, const Shape& want) {
  if (t.shape() != want) {
    throw DimensionError(std::string("parameter ") + name + " has shape " + shape_string(t.shape()) + ", expected " +
                         shape_string(want));
  }
}

void check_token(TokenId token, std::size_t vocab_size) {
  if (token >= vocab_size) {
    throw VocabularyError("token id " + std::to_string(token) + " outside vocabulary of size " +
                          std::to_string(vocab_size));
  }
}

BoundCell bind_cell(Tape& tape, const LstmCellParams& c, bool trainable) {
  auto put = [&](const Tensor& t) { return trainable ? tape.variable(t) : tape.constant(t); };
  return {put(c.input_weights), put(c.recurrent_weights), put(c.bias)};
}

Tensor grad_or_zeros(Var v) {
  const Tensor& g = v.grad();
  return g.empty() ? Tensor(v.shape()) : g;
}

}  // namespace

void ModelConfig::validate() const {
  if (d_v == 0 || d_h == 0 || d_a == 0 || d_e == 0 || max_caption_len == 0) {
    throw ConfigError("model dimensions must all be positive");
  }
  if (vocab_size < tokens::reserved) {
    throw ConfigError("vocab_size must be at least 4 (PAD, BOS, EOS, UNK), got " + std::to_string(vocab_size));
  }
}

CaptionerParams CaptionerParams::zeros(const ModelConfig& c) {
  c.validate();
  CaptionerParams p;
  p.config = c;
  p.embedding = Tensor({c.d_e, c.vocab_size});
  p.attn_score = Tensor({1, c.d_a});
  p.attn_feature = Tensor({c.d_a, c.d_v});
  p.attn_hidden = Tensor({c.d_a, c.d_h});
  p.lstm1 = cell_zeros(c.d_h, c.d_h + c.d_e + c.d_v);
  p.lstm2 = cell_zeros(c.d_h, c.d_v + c.d_h);
  p.out_weights = Tensor({c.vocab_size, c.d_h});
  p.out_bias = Tensor({c.vocab_size});
  return p;
}

CaptionerParams CaptionerParams::initialized(const ModelConfig& c, std::uint64_t seed) {
  CaptionerParams p = zeros(c);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-kInitRange, kInitRange);
  p.for_each([&](const char*, Tensor& t) {
    for (auto& v : t.data()) v = dist(rng);
  });
  for (auto* cell : {&p.lstm1, &p.lstm2}) {
    for (std::size_t i = c.d_h; i < 2 * c.d_h; ++i) cell->bias[i] = 1.0;
  }
  return p;
}

std::size_t CaptionerParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const char*, const Tensor& t) { n += t.size(); });
  return n;
}

void CaptionerParams::validate() const {
  config.validate();
  const ModelConfig& c = config;
  expect_shape("embedding", embedding, {c.d_e, c.vocab_size});
  expect_shape("attn_score", attn_score, {1, c.d_a});
  expect_shape("attn_feature", attn_feature, {c.d_a, c.d_v});
  expect_shape("attn_hidden", attn_hidden, {c.d_a, c.d_h});
  expect_shape("lstm1.input_weights", lstm1.input_weights, {4 * c.d_h, c.d_h + c.d_e + c.d_v});
  expect_shape("lstm1.recurrent_weights", lstm1.recurrent_weights, {4 * c.d_h, c.d_h});
  expect_shape("lstm1.bias", lstm1.bias, {4 * c.d_h});
  expect_shape("lstm2.input_weights", lstm2.input_weights, {4 * c.d_h, c.d_v + c.d_h});
  expect_shape("lstm2.recurrent_weights", lstm2.recurrent_weights, {4 * c.d_h, c.d_h});
  expect_shape("lstm2.bias", lstm2.bias, {4 * c.d_h});
  expect_shape("out_weights", out_weights, {c.vocab_size, c.d_h});
  expect_shape("out_bias", out_bias, {c.vocab_size});
}

bool operator==(const CaptionerParams& a, const CaptionerParams& b) {
  if (!(a.config == b.config)) return false;
  std::vector<const Tensor*> left;
  a.for_each([&](const char*, const Tensor& t) { left.push_back(&t); });
  std::size_t i = 0;
  bool same = true;
  b.for_each([&](const char*, const Tensor& t) { same = same && *left[i++] == t; });
  return same;
}

std::string to_string(Stream s) { return s == Stream::rgb ? "rgb" : "flow"; }

Stream parse_stream(const std::string& s) {
  if (s == "rgb") return Stream::rgb;
  if (s == "flow") return Stream::flow;
  throw ConfigError("unknown stream \"" + s + "\" (expected rgb or flow)");
}

// ---- graph level ---------------------------------------------------------

std::vector<Var> BoundParams::all() const {
  return {embedding,
          attn_score,
          attn_feature,
          attn_hidden,
          lstm1.input_weights,
          lstm1.recurrent_weights,
          lstm1.bias,
          lstm2.input_weights,
          lstm2.recurrent_weights,
          lstm2.bias,
          out_weights,
          out_bias};
}

BoundParams bind(Tape& tape, const CaptionerParams& params, bool trainable) {
  params.validate();
  auto put = [&](const Tensor& t) { return trainable ? tape.variable(t) : tape.constant(t); };
  BoundParams b;
  b.config = params.config;
  b.embedding = put(params.embedding);
  b.attn_score = put(params.attn_score);
  b.attn_feature = put(params.attn_feature);
  b.attn_hidden = put(params.attn_hidden);
  b.lstm1 = bind_cell(tape, params.lstm1, trainable);
  b.lstm2 = bind_cell(tape, params.lstm2, trainable);
  b.out_weights = put(params.out_weights);
  b.out_bias = put(params.out_bias);
  return b;
}

CaptionerParams collect_gradients(const BoundParams& bound) {
  CaptionerParams g = CaptionerParams::zeros(bound.config);
  const auto vars = bound.all();
  std::size_t i = 0;
  g.for_each([&](const char*, Tensor& t) { t = grad_or_zeros(vars[i++]); });
  return g;
}

EncodedVideo encode(const BoundParams& p, const Tensor& features) {
  if (features.rank() != 2 || features.rows() == 0) throw ContractError("feature sequence must have at least one row");
  if (features.cols() != p.config.d_v) {
    throw DimensionError("feature width " + std::to_string(features.cols()) + " does not match d_v " +
                         std::to_string(p.config.d_v));
  }
  Tape& tape = p.embedding.tape();
  EncodedVideo v;
  v.frames = features.rows();
  v.frames_t = tape.constant(features.transposed());
  v.projected = matmul(p.attn_feature, v.frames_t);
  v.mean = mean_rows(tape.constant(features));
  return v;
}

StateVars zero_state(Tape& tape, std::size_t d_h) {
  return {tape.constant(Tensor({d_h})), tape.constant(Tensor({d_h})), tape.constant(Tensor({d_h})),
          tape.constant(Tensor({d_h}))};
}

StateVars to_vars(Tape& tape, const DecoderState& s) {
  return {tape.constant(s.h1), tape.constant(s.c1), tape.constant(s.h2), tape.constant(s.c2)};
}

DecoderState to_state(const StateVars& s, const EncodedVideo& video) {
  return {s.h1.value(), s.c1.value(), s.h2.value(), s.c2.value(), video.mean.value()};
}

std::pair<Var, Var> lstm_cell(const BoundCell& cell, Var input, Var h, Var c) {
  const std::size_t hidden = cell.recurrent_weights.shape()[1];
  Var gates = add(add(matmul(cell.input_weights, input), matmul(cell.recurrent_weights, h)), cell.bias);
  Var i = sigmoid(slice(gates, 0, hidden));
  Var f = sigmoid(slice(gates, hidden, hidden));
  Var g = tanh(slice(gates, 2 * hidden, hidden));
  Var o = sigmoid(slice(gates, 3 * hidden, hidden));
  Var c_new = add(mul(f, c), mul(i, g));
  Var h_new = mul(o, tanh(c_new));
  return {h_new, c_new};
}

AttentionVars attend(const BoundParams& p, const EncodedVideo& video, Var h1) {
  Var pre = add_cols(video.projected, matmul(p.attn_hidden, h1));
  Var scores = reshape(matmul(p.attn_score, tanh(pre)), {video.frames});
  Var weights = softmax(scores);
  return {weights, matmul(video.frames_t, weights)};
}

StepVars step(const BoundParams& p, const EncodedVideo& video, const StateVars& state, TokenId token) {
  check_token(token, p.config.vocab_size);
  Var word = column(p.embedding, token);
  auto [h1, c1] = lstm_cell(p.lstm1, concat({state.h2, word, video.mean}), state.h1, state.c1);
  AttentionVars att = attend(p, video, h1);
  auto [h2, c2] = lstm_cell(p.lstm2, concat({att.attended, h1}), state.h2, state.c2);
  Var logits = add(matmul(p.out_weights, h2), p.out_bias);
  return {{h1, c1, h2, c2}, logits, log_softmax(logits), att.weights};
}

std::vector<TokenId> emittable_tokens(std::size_t vocab_size) {
  std::vector<TokenId> out;
  for (TokenId t = 0; t < vocab_size; ++t) {
    if (t != tokens::pad && t != tokens::bos && t != tokens::unk) out.push_back(t);
  }
  return out;
}

Var generation_log_probs(Var logits, std::size_t vocab_size) {
  const auto ids = emittable_tokens(vocab_size);
  return log_softmax(gather(logits, {ids.begin(), ids.end()}));
}

// ---- value level ---------------------------------------------------------

Tensor mean_pool(const FeatureSequence& features) {
  if (features.features.empty() || features.frames() == 0) {
    throw ContractError("mean_pool: feature sequence \"" + features.video_id + "\" is empty");
  }
  Tape tape;
  return mean_rows(tape.constant(features.features)).value();
}

DecoderState initial_state(const CaptionerParams& params, const FeatureSequence& features) {
  const std::size_t h = params.config.d_h;
  return {Tensor({h}), Tensor({h}), Tensor({h}), Tensor({h}), mean_pool(features)};
}

std::pair<Tensor, Tensor> lstm1_step(const DecoderState& state, TokenId token, const CaptionerParams& params) {
  check_token(token, params.config.vocab_size);
  Tape tape;
  BoundParams p = bind(tape, params, false);
  Var input = concat({tape.constant(state.h2), column(p.embedding, token), tape.constant(state.v_bar)});
  auto [h, c] = lstm_cell(p.lstm1, input, tape.constant(state.h1), tape.constant(state.c1));
  return {h.value(), c.value()};
}

AttentionResult attention(const FeatureSequence& features, const Tensor& h1, const CaptionerParams& params) {
  Tape tape;
  BoundParams p = bind(tape, params, false);
  EncodedVideo video = encode(p, features.features);
  AttentionVars att = attend(p, video, tape.constant(h1));
  return {att.weights.value(), att.attended.value()};
}

std::pair<Tensor, Tensor> lstm2_step(const DecoderState& state, const Tensor& attended, const CaptionerParams& params) {
  Tape tape;
  BoundParams p = bind(tape, params, false);
  Var input = concat({tape.constant(attended), tape.constant(state.h1)});
  auto [h, c] = lstm_cell(p.lstm2, input, tape.constant(state.h2), tape.constant(state.c2));
  return {h.value(), c.value()};
}

Tensor word_logits(const Tensor& h2, const CaptionerParams& params) {
  Tape tape;
  BoundParams p = bind(tape, params, false);
  return add(matmul(p.out_weights, tape.constant(h2)), p.out_bias).value();
}

StepResult decode_step(const DecoderState& state, TokenId token, const FeatureSequence& features,
                       const CaptionerParams& params) {
  Tape tape;
  BoundParams p = bind(tape, params, false);
  EncodedVideo video = encode(p, features.features);
  StepVars out = step(p, video, to_vars(tape, state), token);
  return {to_state(out.state, video), out.log_probs.value(), out.attention.value()};
}

}  // namespace lstmt
