#include "lstmt/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>

#include "lstmt/decoding.hpp"
#include "lstmt/errors.hpp"
#include "lstmt/kernels.hpp"
#include "lstmt/metrics.hpp"

namespace lstmt {
namespace {

void check_caption(std::span<const TokenId> caption, std::size_t vocab_size) {
  if (caption.size() < 2) throw ContractError("caption needs at least BOS and EOS");
  for (TokenId t : caption) {
    if (t >= vocab_size) {
      throw VocabularyError("caption token " + std::to_string(t) + " outside vocabulary of size " +
                            std::to_string(vocab_size));
    }
  }
}

std::size_t counted_targets(std::span<const TokenId> caption) {
  return static_cast<std::size_t>(std::count_if(caption.begin() + 1, caption.end(), [](TokenId t) { return t != tokens::pad; }));
}

// a += b, tensor by tensor.
void accumulate(CaptionerParams& a, const CaptionerParams& b) {
  std::vector<const Tensor*> src;
  b.for_each([&](const char*, const Tensor& t) { src.push_back(&t); });
  std::size_t i = 0;
  a.for_each([&](const char*, Tensor& t) { kernels::axpy(1.0, src[i++]->data(), t.data()); });
}

void scale_all(CaptionerParams& a, double factor) {
  a.for_each([&](const char*, Tensor& t) {
    for (auto& v : t.data()) v *= factor;
  });
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

std::string to_string(RewardMetric m) {
  switch (m) {
    case RewardMetric::cider_d: return "cider_d";
    case RewardMetric::bleu4: return "bleu4";
    case RewardMetric::meteor_lite: return "meteor_lite";
  }
  return "?";
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer \"" + s + "\" (expected sgd or adam)");
}

RewardMetric parse_reward(const std::string& s) {
  if (s == "cider_d") return RewardMetric::cider_d;
  if (s == "bleu4") return RewardMetric::bleu4;
  if (s == "meteor_lite") return RewardMetric::meteor_lite;
  throw ConfigError("unknown reward \"" + s + "\" (expected cider_d, bleu4 or meteor_lite)");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(grad_clip_norm > 0.0)) throw ConfigError("grad_clip_norm must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must be in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (!(scst_learning_rate >= 0.0)) throw ConfigError("scst_learning_rate must be non-negative");
}

const FeatureSequence& TrainingExample::features(Stream s) const {
  for (const auto& f : streams) {
    if (f.stream == s) return f;
  }
  throw DataError("video \"" + video_id + "\" has no " + to_string(s) + " features");
}

std::vector<TrainingExample> make_examples(std::span<const FeatureSequence> features,
                                           std::span<const CaptionRecord> captions, const Vocabulary& vocab) {
  std::map<std::string, std::vector<FeatureSequence>> by_video;
  for (const auto& f : features) by_video[f.video_id].push_back(f);
  std::map<std::string, std::vector<std::string>> refs;
  for (const auto& c : captions) refs[c.video_id].push_back(c.caption);

  std::vector<TrainingExample> out;
  for (const auto& c : captions) {
    auto it = by_video.find(c.video_id);
    if (it == by_video.end()) throw DataError("caption for video \"" + c.video_id + "\" has no features");
    out.push_back({c.video_id, it->second, vocab.encode_caption(c.caption), refs[c.video_id]});
  }
  return out;
}

// ---- losses ----------------------------------------------------------------

Var xe_loss(const BoundParams& p, const Tensor& features, std::span<const TokenId> caption) {
  check_caption(caption, p.config.vocab_size);
  if (counted_targets(caption) == 0) throw ContractError("caption has no non-PAD targets");
  Tape& tape = p.embedding.tape();
  EncodedVideo video = encode(p, features);
  StateVars state = zero_state(tape, p.config.d_h);
  std::vector<Var> nll;
  for (std::size_t t = 0; t + 1 < caption.size(); ++t) {
    const TokenId target = caption[t + 1];
    StepVars s = step(p, video, state, caption[t]);
    state = s.state;
    if (target == tokens::pad) continue;
    nll.push_back(scale(pick(s.log_probs, target), -1.0));
  }
  return mean(concat(nll));
}

double xe_loss(const CaptionerParams& params, const TrainingExample& example, Stream stream) {
  Tape tape;
  BoundParams p = bind(tape, params, false);
  return xe_loss(p, example.features(stream).features, example.caption).value()[0];
}

double batch_xe_loss(const CaptionerParams& params, std::span<const TrainingExample> batch, Stream stream) {
  if (batch.empty()) throw ContractError("empty batch");
  Tape tape;
  BoundParams p = bind(tape, params, false);
  std::vector<Var> losses;
  for (const auto& ex : batch) losses.push_back(xe_loss(p, ex.features(stream).features, ex.caption));
  return mean(concat(losses)).value()[0];
}

LossAndGrad xe_loss_and_grad(const CaptionerParams& params, const TrainingExample& example, Stream stream) {
  Tape tape;
  BoundParams p = bind(tape, params, true);
  Var loss = xe_loss(p, example.features(stream).features, example.caption);
  tape.backward(loss);
  return {loss.value()[0], collect_gradients(p)};
}

double corpus_token_loss(const CaptionerParams& params, std::span<const TrainingExample> corpus, Stream stream) {
  if (corpus.empty()) throw ContractError("empty corpus");
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& ex : corpus) {
    const std::size_t n = counted_targets(ex.caption);
    total += xe_loss(params, ex, stream) * static_cast<double>(n);
    count += n;
  }
  return total / static_cast<double>(count);
}

// ---- optimisation ----------------------------------------------------------

double global_norm(const CaptionerParams& grads) {
  double sq = 0.0;
  grads.for_each([&](const char*, const Tensor& t) { sq += kernels::dot(t.data(), t.data()); });
  return std::sqrt(sq);
}

CaptionerParams clip_gradients(CaptionerParams grads, double max_norm) {
  if (!(max_norm > 0.0)) throw ContractError("max_norm must be positive");
  const double norm = global_norm(grads);
  if (norm > max_norm) scale_all(grads, max_norm / norm);
  return grads;
}

Optimizer::Optimizer(const TrainConfig& config, const CaptionerParams& like)
    : config_(config), m_(CaptionerParams::zeros(like.config)), v_(CaptionerParams::zeros(like.config)) {}

void Optimizer::step(CaptionerParams& params, const CaptionerParams& grads, double lr) {
  std::vector<const Tensor*> g;
  grads.for_each([&](const char*, const Tensor& t) { g.push_back(&t); });
  std::vector<Tensor*> m, v;
  m_.for_each([&](const char*, Tensor& t) { m.push_back(&t); });
  v_.for_each([&](const char*, Tensor& t) { v.push_back(&t); });

  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  std::size_t k = 0;
  params.for_each([&](const char*, Tensor& p) {
    const Tensor& gk = *g[k];
    if (config_.optimizer == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * gk[i];
    } else {
      Tensor& mk = *m[k];
      Tensor& vk = *v[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        mk[i] = b1 * mk[i] + (1.0 - b1) * gk[i];
        vk[i] = b2 * vk[i] + (1.0 - b2) * gk[i] * gk[i];
        p[i] -= lr * (mk[i] / c1) / (std::sqrt(vk[i] / c2) + config_.epsilon);
      }
    }
    ++k;
  });
}

// ---- self-critical fine-tuning -----------------------------------------------

RewardFn make_reward(RewardMetric metric, const Vocabulary& vocab, std::span<const TrainingExample> corpus) {
  using metrics::Words;
  auto refs_of = [](const TrainingExample& ex) {
    std::vector<Words> out;
    for (const auto& r : ex.references) out.push_back(metrics::tokenize(r));
    return out;
  };
  auto words_of = [vocab](std::span<const TokenId> ids) { return metrics::tokenize(vocab.decode(ids)); };

  switch (metric) {
    case RewardMetric::cider_d: {
      std::vector<std::vector<Words>> docs;
      for (const auto& ex : corpus) docs.push_back(refs_of(ex));
      auto scorer = std::make_shared<metrics::CiderScorer>(docs);
      return [scorer, words_of, refs_of](std::span<const TokenId> ids, const TrainingExample& ex) {
        return scorer->score(words_of(ids), refs_of(ex));
      };
    }
    case RewardMetric::bleu4:
      return [words_of, refs_of](std::span<const TokenId> ids, const TrainingExample& ex) {
        return metrics::bleu_sentence(words_of(ids), refs_of(ex), 4);
      };
    case RewardMetric::meteor_lite:
      return [words_of, refs_of](std::span<const TokenId> ids, const TrainingExample& ex) {
        return metrics::meteor_lite_sentence(words_of(ids), refs_of(ex));
      };
  }
  throw ConfigError("unknown reward metric");
}

Var sequence_log_prob(const BoundParams& p, const Tensor& features, std::span<const TokenId> generated) {
  if (generated.empty()) throw ContractError("sequence_log_prob: empty sequence");
  Tape& tape = p.embedding.tape();
  const auto ids = emittable_tokens(p.config.vocab_size);
  EncodedVideo video = encode(p, features);
  StateVars state = zero_state(tape, p.config.d_h);
  TokenId prev = tokens::bos;
  std::vector<Var> terms;
  for (TokenId tok : generated) {
    auto pos = std::lower_bound(ids.begin(), ids.end(), tok);
    if (pos == ids.end() || *pos != tok) throw VocabularyError("token " + std::to_string(tok) + " cannot be generated");
    StepVars s = step(p, video, state, prev);
    terms.push_back(pick(generation_log_probs(s.logits, p.config.vocab_size), static_cast<std::size_t>(pos - ids.begin())));
    state = s.state;
    prev = tok;
  }
  return sum(concat(terms));
}

ScstResult scst_step(const CaptionerParams& params, const TrainingExample& example, Stream stream,
                     const RewardFn& reward, std::mt19937_64& rng) {
  const FeatureSequence& feats = example.features(stream);
  const std::size_t max_len = params.config.max_caption_len;

  ScstResult out;
  {
    DecodeConfig greedy_cfg;
    greedy_cfg.max_len = max_len;
    Captioner model{&params, stream};
    out.baseline = greedy_decode({&model, 1}, {&feats, 1}, greedy_cfg).tokens;
  }

  Tape tape;
  BoundParams p = bind(tape, params, true);
  EncodedVideo video = encode(p, feats.features);
  StateVars state = zero_state(tape, params.config.d_h);
  const auto ids = emittable_tokens(params.config.vocab_size);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<Var> terms;
  TokenId prev = tokens::bos;
  for (std::size_t t = 0; t < max_len; ++t) {
    StepVars s = step(p, video, state, prev);
    Var lp = generation_log_probs(s.logits, params.config.vocab_size);
    const double u = unit(rng);
    std::size_t choice = ids.size() - 1;
    double acc = 0.0;
    for (std::size_t j = 0; j < ids.size(); ++j) {
      acc += std::exp(lp.value()[j]);
      if (u < acc) {
        choice = j;
        break;
      }
    }
    terms.push_back(pick(lp, choice));
    out.sample.push_back(ids[choice]);
    state = s.state;
    prev = ids[choice];
    if (prev == tokens::eos) break;
  }

  out.sample_reward = reward(out.sample, example);
  out.baseline_reward = reward(out.baseline, example);
  const double advantage = out.sample_reward - out.baseline_reward;
  Var pseudo = scale(sum(concat(terms)), -advantage);
  tape.backward(pseudo);
  out.pseudo_loss = pseudo.value()[0];
  out.grads = collect_gradients(p);
  return out;
}

// ---- driver --------------------------------------------------------------------

TrainResult train(CaptionerParams params, std::span<const TrainingExample> corpus, const TrainConfig& config,
                  Stream stream, const Vocabulary* vocab, const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  params.validate();
  if (corpus.empty()) throw ContractError("cannot train on an empty corpus");

  TrainResult result;
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  const auto start = std::chrono::steady_clock::now();

  Optimizer xe_opt(config, params);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::size_t end = std::min(order.size(), b + config.batch_size);
      CaptionerParams grads = CaptionerParams::zeros(params.config);
      for (std::size_t i = b; i < end; ++i) {
        LossAndGrad lg = xe_loss_and_grad(params, corpus[order[i]], stream);
        loss_sum += lg.loss;
        accumulate(grads, lg.grads);
      }
      scale_all(grads, 1.0 / static_cast<double>(end - b));
      xe_opt.step(params, clip_gradients(std::move(grads), config.grad_clip_norm), config.learning_rate);
    }
    const double epoch_loss = loss_sum / static_cast<double>(corpus.size());
    if (!std::isfinite(epoch_loss)) throw NumericError("epoch " + std::to_string(epoch) + ": loss is not finite");
    result.loss_history.push_back(epoch_loss);
    if (on_epoch) on_epoch({epoch, "train", epoch_loss, seconds_since(start)});
  }

  if (config.scst_enabled && config.scst_epochs > 0) {
    if (vocab == nullptr) throw ContractError("self-critical training needs the vocabulary");
    const RewardFn reward = make_reward(config.scst_reward, *vocab, corpus);
    Optimizer rl_opt(config, params);
    for (std::size_t epoch = 1; epoch <= config.scst_epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      double reward_sum = 0.0;
      for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
        const std::size_t end = std::min(order.size(), b + config.batch_size);
        CaptionerParams grads = CaptionerParams::zeros(params.config);
        for (std::size_t i = b; i < end; ++i) {
          ScstResult r = scst_step(params, corpus[order[i]], stream, reward, rng);
          reward_sum += r.baseline_reward;
          accumulate(grads, r.grads);
        }
        scale_all(grads, 1.0 / static_cast<double>(end - b));
        rl_opt.step(params, clip_gradients(std::move(grads), config.grad_clip_norm), config.scst_learning_rate);
      }
      const double mean_reward = reward_sum / static_cast<double>(corpus.size());
      result.scst_history.push_back(mean_reward);
      if (on_epoch) on_epoch({config.epochs + epoch, "scst", mean_reward, seconds_since(start)});
    }
  }

  result.final_loss = corpus_token_loss(params, corpus, stream);
  result.params = std::move(params);
  return result;
}

}  // namespace lstmt
