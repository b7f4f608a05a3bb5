#include "lstmt/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <tuple>

#include "lstmt/errors.hpp"

namespace lstmt {
namespace {

// Runs every model one step and fuses their generation log-probs. Each model
// keeps its own tape holding its parameters and encoded video for the whole
// decode.
class FusedStepper {
 public:
  FusedStepper(std::span<const Captioner> models, std::span<const FeatureSequence> features, FusionRule rule)
      : rule_(rule) {
    if (models.empty()) throw ConfigError("decoding needs at least one model");
    if (features.size() != models.size()) {
      throw ConfigError("got " + std::to_string(features.size()) + " feature sequences for " +
                        std::to_string(models.size()) + " models");
    }
    const std::size_t vocab = models.front().params->config.vocab_size;
    for (std::size_t i = 0; i < models.size(); ++i) {
      const Captioner& m = models[i];
      if (m.params == nullptr) throw ConfigError("null model");
      if (m.params->config.vocab_size != vocab) throw ConfigError("fused models disagree on vocabulary size");
      if (m.stream && *m.stream != features[i].stream) {
        throw ConfigError("model " + std::to_string(i) + " expects the " + to_string(*m.stream) +
                          " stream, got " + to_string(features[i].stream) + " features");
      }
      auto& tape = tapes_.emplace_back(std::make_unique<Tape>());
      bound_.push_back(bind(*tape, *m.params, false));
      videos_.push_back(encode(bound_.back(), features[i].features));
    }
    emittable_ = emittable_tokens(vocab);
  }

  std::size_t size() const { return bound_.size(); }
  const std::vector<TokenId>& emittable() const { return emittable_; }

  std::vector<StateVars> initial() {
    std::vector<StateVars> out;
    for (std::size_t m = 0; m < size(); ++m) out.push_back(zero_state(*tapes_[m], bound_[m].config.d_h));
    return out;
  }

  struct Advance {
    std::vector<StateVars> states;
    std::vector<double> fused;
    std::vector<Tensor> attention;
  };

  Advance advance(const std::vector<StateVars>& states, TokenId token) {
    Advance out;
    std::vector<const Tensor*> per_model;
    std::vector<Tensor> kept;
    kept.reserve(size());
    for (std::size_t m = 0; m < size(); ++m) {
      StepVars s = step(bound_[m], videos_[m], states[m], token);
      out.states.push_back(s.state);
      out.attention.push_back(s.attention.value());
      kept.push_back(generation_log_probs(s.logits, bound_[m].config.vocab_size).value());
    }
    out.fused = fuse(kept);
    return out;
  }

  DecoderState snapshot(std::size_t m, const StateVars& s) const { return to_state(s, videos_[m]); }

 private:
  std::vector<double> fuse(const std::vector<Tensor>& lp) const {
    const std::size_t n = lp.front().size();
    const double count = static_cast<double>(lp.size());
    std::vector<double> out(n);
    for (std::size_t j = 0; j < n; ++j) {
      if (rule_ == FusionRule::log_mean) {
        double s = 0.0;
        for (const Tensor& t : lp) s += t[j];
        out[j] = s / count;
      } else {
        double mx = lp.front()[j];
        for (const Tensor& t : lp) mx = std::max(mx, t[j]);
        double s = 0.0;
        for (const Tensor& t : lp) s += std::exp(t[j] - mx);
        out[j] = mx + std::log(s / count);
      }
    }
    return out;
  }

  FusionRule rule_;
  std::vector<std::unique_ptr<Tape>> tapes_;
  std::vector<BoundParams> bound_;
  std::vector<EncodedVideo> videos_;
  std::vector<TokenId> emittable_;
};

std::size_t argmax_lowest(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < v.size(); ++j) {
    if (v[j] > v[best]) best = j;
  }
  return best;
}

}  // namespace

void DecodeConfig::validate() const {
  if (beam_width < 1) throw ConfigError("beam_width must be at least 1");
  if (max_len < 1) throw ConfigError("max_len must be at least 1");
}

double Hypothesis::score(LengthNorm norm) const {
  if (norm == LengthNorm::none || length() == 0) return cum_log_prob;
  return cum_log_prob / static_cast<double>(length());
}

GreedyResult greedy_decode(std::span<const Captioner> models, std::span<const FeatureSequence> features,
                           const DecodeConfig& config) {
  config.validate();
  FusedStepper stepper(models, features, config.fusion);
  GreedyResult result;
  auto states = stepper.initial();
  TokenId token = tokens::bos;
  for (std::size_t t = 0; t < config.max_len; ++t) {
    auto out = stepper.advance(states, token);
    token = stepper.emittable()[argmax_lowest(out.fused)];
    result.tokens.push_back(token);
    result.log_probs.push_back(std::move(out.fused));
    result.attention.push_back(std::move(out.attention));
    states = std::move(out.states);
    if (token == tokens::eos) break;
  }
  return result;
}

std::vector<Hypothesis> beam_decode(std::span<const Captioner> models, std::span<const FeatureSequence> features,
                                    const DecodeConfig& config) {
  config.validate();
  FusedStepper stepper(models, features, config.fusion);
  const auto& ids = stepper.emittable();

  struct Live {
    std::vector<TokenId> tokens;
    double cum = 0.0;
    std::vector<StateVars> states;
  };
  struct Candidate {
    std::size_t parent;
    std::size_t choice;
    double step_lp;
    double cum;
  };

  std::vector<Live> live{{{tokens::bos}, 0.0, stepper.initial()}};
  std::vector<Hypothesis> finished;

  auto finish = [&](std::vector<TokenId> toks, double cum, const std::vector<StateVars>& states) {
    Hypothesis h;
    h.tokens = std::move(toks);
    h.cum_log_prob = cum;
    h.finished = true;
    for (std::size_t m = 0; m < states.size(); ++m) h.states.push_back(stepper.snapshot(m, states[m]));
    finished.push_back(std::move(h));
  };

  for (std::size_t t = 1; t <= config.max_len && !live.empty(); ++t) {
    std::vector<FusedStepper::Advance> expanded;
    std::vector<Candidate> cands;
    for (std::size_t p = 0; p < live.size(); ++p) {
      expanded.push_back(stepper.advance(live[p].states, live[p].tokens.back()));
      const auto& lp = expanded.back().fused;
      for (std::size_t j = 0; j < lp.size(); ++j) cands.push_back({p, j, lp[j], live[p].cum + lp[j]});
    }
    // Score, then parent order, then the step's own log-prob (so rounding in
    // cum never reorders one parent's children), then lower token id.
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.cum != b.cum) return a.cum > b.cum;
      if (a.parent != b.parent) return a.parent < b.parent;
      if (a.step_lp != b.step_lp) return a.step_lp > b.step_lp;
      return a.choice < b.choice;
    });
    if (cands.size() > config.beam_width) cands.resize(config.beam_width);

    std::vector<Live> next;
    for (const Candidate& c : cands) {
      const TokenId tok = ids[c.choice];
      auto toks = live[c.parent].tokens;
      toks.push_back(tok);
      const auto& states = expanded[c.parent].states;
      if (tok == tokens::eos || t == config.max_len) {
        finish(std::move(toks), c.cum, states);
      } else {
        next.push_back({std::move(toks), c.cum, states});
      }
    }
    live = std::move(next);
  }

  std::stable_sort(finished.begin(), finished.end(), [&](const Hypothesis& a, const Hypothesis& b) {
    const double sa = a.score(config.length_norm), sb = b.score(config.length_norm);
    if (sa != sb) return sa > sb;
    return a.tokens < b.tokens;
  });
  return finished;
}

FeatureSequence slice_features(const FeatureSequence& seq, double t_start, double t_end) {
  FeatureSequence out;
  out.video_id = seq.video_id;
  out.stream = seq.stream;
  const double k = static_cast<double>(seq.frames());
  const double lo = std::clamp(std::floor(t_start), 0.0, k);
  const double hi = std::clamp(std::ceil(t_end), 0.0, k);
  if (!(hi > lo)) return out;
  const auto first = static_cast<std::size_t>(lo);
  const auto last = static_cast<std::size_t>(hi);
  std::vector<double> data;
  for (std::size_t r = first; r < last; ++r) data.insert(data.end(), seq.features.row(r).begin(), seq.features.row(r).end());
  out.features = Tensor::matrix(last - first, seq.dim(), std::move(data));
  return out;
}

std::vector<EventCaption> caption_events(std::span<const Captioner> models, std::span<const Proposal> proposals,
                                         const DecodeConfig& config) {
  config.validate();
  std::vector<EventCaption> out;
  out.reserve(proposals.size());
  for (const Proposal& p : proposals) {
    EventCaption ev;
    ev.t_start = p.t_start;
    ev.t_end = p.t_end;
    try {
      for (const auto& s : p.slices) {
        if (s.features.empty() || s.frames() == 0) throw ContractError("proposal covers no feature rows");
      }
      auto hyps = beam_decode(models, p.slices, config);
      const auto& best = hyps.front().tokens;
      for (std::size_t i = 1; i < best.size(); ++i) {
        if (best[i] != tokens::eos) ev.tokens.push_back(best[i]);
      }
    } catch (const Error& e) {
      ev.error = e.what();
    }
    out.push_back(std::move(ev));
  }
  return out;
}

}  // namespace lstmt
