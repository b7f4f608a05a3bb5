#include <doctest.h>

#include <cmath>
#include <random>

#include "lstmt/decoding.hpp"
#include "lstmt/errors.hpp"
#include "lstmt/tape.hpp"
#include "lstmt/training.hpp"
#include "support.hpp"

using namespace lstmt;
using namespace lstmt::test;

namespace {

// Four short captions over four words, with d_v = 3 features.
struct Small {
  Vocabulary vocab;
  std::vector<TrainingExample> examples;
};

Small small_corpus(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<FeatureSequence> feats;
  std::vector<CaptionRecord> caps;
  const char* texts[] = {"red ball", "blue ball", "red cube", "blue cube red"};
  for (int v = 0; v < 4; ++v) {
    const std::string id = "v" + std::to_string(v);
    feats.push_back({id, Stream::rgb, random_tensor({3, 3}, rng)});
    feats.push_back({id, Stream::flow, random_tensor({3, 3}, rng)});
    caps.push_back({id, texts[v]});
  }
  std::vector<std::string> all;
  for (const auto& c : caps) all.push_back(c.caption);
  Small s{build_vocab(all, 1), {}};
  s.examples = make_examples(feats, caps, s.vocab);
  return s;
}

ModelConfig small_config(const Small& s) { return tiny_config(3, 6, 4, 3, s.vocab.size()); }

}  // namespace

TEST_CASE("training config validation and enum names") {
  TrainConfig c;
  c.validate();
  CHECK(to_string(OptimizerKind::adam) == "adam");
  CHECK(parse_optimizer("sgd") == OptimizerKind::sgd);
  CHECK(parse_reward("meteor_lite") == RewardMetric::meteor_lite);
  CHECK(to_string(RewardMetric::bleu4) == "bleu4");
  CHECK_THROWS_AS(parse_optimizer("rmsprop"), ConfigError);
  CHECK_THROWS_AS(parse_reward("spice"), ConfigError);
  TrainConfig bad = c;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.learning_rate = -1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.grad_clip_norm = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("make_examples joins by video id and keeps every reference") {
  std::mt19937_64 rng(1);
  std::vector<FeatureSequence> feats{{"a", Stream::rgb, random_tensor({2, 3}, rng)},
                                     {"b", Stream::rgb, random_tensor({2, 3}, rng)}};
  std::vector<CaptionRecord> caps{{"a", "x y"}, {"a", "y z"}, {"b", "z"}};
  const auto vocab = build_vocab(std::vector<std::string>{"x y", "y z", "z"}, 1);
  const auto ex = make_examples(feats, caps, vocab);
  REQUIRE(ex.size() == 3);
  CHECK(ex[0].references.size() == 2);
  CHECK(ex[2].references.size() == 1);
  CHECK(ex[0].caption.front() == tokens::bos);
  CHECK(ex[0].caption.back() == tokens::eos);
  CHECK(ex[0].features(Stream::rgb).video_id == "a");
  CHECK_THROWS_AS(ex[0].features(Stream::flow), DataError);

  caps.push_back({"c", "x"});
  CHECK_THROWS_AS(make_examples(feats, caps, vocab), DataError);
}

TEST_CASE("zero parameters give a loss of exactly log(vocab)") {
  const Small s = small_corpus(2);
  const auto p = CaptionerParams::zeros(small_config(s));
  for (const auto& ex : s.examples) CHECK(xe_loss(p, ex, Stream::rgb) == std::log(double(s.vocab.size())));
  CHECK(corpus_token_loss(p, s.examples, Stream::rgb) == doctest::Approx(std::log(double(s.vocab.size()))));
}

TEST_CASE("PAD targets are skipped by the loss") {
  const Small s = small_corpus(3);
  std::mt19937_64 rng(3);
  const auto p = random_params(small_config(s), rng, 0.5);
  TrainingExample ex = s.examples[0];
  const double base = xe_loss(p, ex, Stream::rgb);
  ex.caption.push_back(tokens::pad);
  ex.caption.push_back(tokens::pad);
  CHECK(xe_loss(p, ex, Stream::rgb) == doctest::Approx(base).epsilon(1e-14));
}

TEST_CASE("batch loss is the mean of example losses") {
  const Small s = small_corpus(4);
  std::mt19937_64 rng(4);
  const auto p = random_params(small_config(s), rng, 0.5);
  double want = 0.0;
  for (const auto& ex : s.examples) want += xe_loss(p, ex, Stream::flow);
  want /= static_cast<double>(s.examples.size());
  CHECK(batch_xe_loss(p, s.examples, Stream::flow) == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("gradient clipping rescales to the global norm") {
  const ModelConfig c = tiny_config();
  CaptionerParams g = CaptionerParams::zeros(c);
  g.out_bias[0] = 3.0;
  g.embedding[1] = 4.0;
  CHECK(global_norm(g) == 5.0);
  const auto clipped = clip_gradients(g, 1.0);
  CHECK(global_norm(clipped) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(clipped.out_bias[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(clip_gradients(g, 10.0) == g);
}

TEST_CASE("optimizer steps by hand") {
  const ModelConfig c = tiny_config();
  CaptionerParams g = CaptionerParams::zeros(c);
  g.out_bias[0] = 0.5;
  g.out_bias[1] = -2.0;

  TrainConfig sgd;
  sgd.optimizer = OptimizerKind::sgd;
  CaptionerParams p = CaptionerParams::zeros(c);
  Optimizer(sgd, p).step(p, g, 0.1);
  CHECK(p.out_bias[0] == -0.05);
  CHECK(p.out_bias[1] == 0.2);
  CHECK(p.out_bias[2] == 0.0);

  // First Adam step: m̂ = g, v̂ = g², so the move is lr·g/(|g|+ε).
  TrainConfig adam;
  CaptionerParams q = CaptionerParams::zeros(c);
  Optimizer opt(adam, q);
  opt.step(q, g, 0.01);
  CHECK(q.out_bias[0] == doctest::Approx(-0.01 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
  CHECK(q.out_bias[1] == doctest::Approx(0.01 * 2.0 / (2.0 + 1e-8)).epsilon(1e-12));
  // Second step with the same gradient moves by the same amount again.
  opt.step(q, g, 0.01);
  CHECK(q.out_bias[0] == doctest::Approx(-0.02 * 0.5 / (0.5 + 1e-8)).epsilon(1e-9));
}

TEST_CASE("training is deterministic and lowers the loss") {
  const Small s = small_corpus(5);
  TrainConfig cfg;
  cfg.learning_rate = 0.02;
  cfg.batch_size = 2;
  cfg.epochs = 40;
  cfg.seed = 11;
  const auto init = CaptionerParams::initialized(small_config(s), 11);
  const double before = corpus_token_loss(init, s.examples, Stream::rgb);

  std::vector<EpochRecord> log;
  const auto a = train(init, s.examples, cfg, Stream::rgb, &s.vocab, [&](const EpochRecord& r) { log.push_back(r); });
  const auto b = train(init, s.examples, cfg, Stream::rgb, &s.vocab);
  CHECK(a.params == b.params);
  CHECK(a.loss_history == b.loss_history);
  CHECK(a.final_loss < 0.5 * before);
  REQUIRE(log.size() == 40);
  CHECK(log.back().epoch == 40);
  CHECK(log.back().split == "train");

  cfg.seed = 12;
  CHECK_FALSE(train(init, s.examples, cfg, Stream::rgb, &s.vocab).params == a.params);

  cfg.epochs = 0;
  CHECK(train(init, s.examples, cfg, Stream::rgb, &s.vocab).params == init);
}

TEST_CASE("sequence log-prob matches the greedy decoder's step log-probs") {
  const Small s = small_corpus(6);
  std::mt19937_64 rng(6);
  const auto p = random_params(small_config(s), rng);
  const auto& f = s.examples[0].features(Stream::rgb);
  const Captioner m{&p, Stream::rgb};
  DecodeConfig cfg;
  cfg.max_len = 5;
  const auto g = greedy_decode({&m, 1}, {&f, 1}, cfg);
  const auto ids = emittable_tokens(s.vocab.size());
  double want = 0.0;
  for (std::size_t t = 0; t < g.tokens.size(); ++t) {
    want += g.log_probs[t][std::find(ids.begin(), ids.end(), g.tokens[t]) - ids.begin()];
  }
  Tape tape;
  const double got = sequence_log_prob(bind(tape, p, false), f.features, g.tokens).value()[0];
  CHECK(got == doctest::Approx(want).epsilon(1e-13));
  Tape t2;
  CHECK_THROWS_AS(sequence_log_prob(bind(t2, p, false), f.features, std::vector<TokenId>{tokens::bos}),
                  VocabularyError);
}

TEST_CASE("SCST step: pseudo-loss and gradient") {
  const Small s = small_corpus(7);
  std::mt19937_64 rng(7);
  const auto p = random_params(small_config(s), rng);
  const auto& ex = s.examples[1];

  // Reward = number of generated ids, so the advantage is known.
  const RewardFn length = [](std::span<const TokenId> ids, const TrainingExample&) { return double(ids.size()); };
  std::mt19937_64 draw(99);
  for (int i = 0; i < 10; ++i) {
    const ScstResult r = scst_step(p, ex, Stream::rgb, length, draw);
    CHECK(r.sample_reward == double(r.sample.size()));
    CHECK(r.baseline_reward == double(r.baseline.size()));
    Tape tape;
    BoundParams bound = bind(tape, p, true);
    Var lp = sequence_log_prob(bound, ex.features(Stream::rgb).features, r.sample);
    const double adv = r.sample_reward - r.baseline_reward;
    CHECK(r.pseudo_loss == doctest::Approx(-adv * lp.value()[0]).epsilon(1e-12));
    tape.backward(lp);
    const auto g = collect_gradients(bound);
    CHECK(r.grads.out_bias[2] == doctest::Approx(-adv * g.out_bias[2]).epsilon(1e-10));
    if (adv == 0.0) CHECK(global_norm(r.grads) == 0.0);
  }

  for (RewardMetric m : {RewardMetric::cider_d, RewardMetric::bleu4, RewardMetric::meteor_lite}) {
    const RewardFn f = make_reward(m, s.vocab, s.examples);
    const auto ref = s.vocab.encode(ex.references[0]);
    // Two-word captions have no 4-grams, so BLEU-4 is 0 even for an exact match.
    if (m != RewardMetric::bleu4) CHECK(f(ref, ex) > 0.0);
    CHECK(f(ref, ex) >= f(std::vector<TokenId>{tokens::eos}, ex));
  }
}

TEST_CASE("SCST epochs run after cross-entropy and report rewards") {
  const Small s = small_corpus(8);
  TrainConfig cfg;
  cfg.learning_rate = 0.02;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  cfg.scst_enabled = true;
  cfg.scst_epochs = 2;
  std::vector<EpochRecord> log;
  const auto init = CaptionerParams::initialized(small_config(s), 1);
  const auto r = train(init, s.examples, cfg, Stream::rgb, &s.vocab, [&](const EpochRecord& e) { log.push_back(e); });
  REQUIRE(log.size() == 5);
  CHECK(log[3].split == "scst");
  CHECK(log[4].epoch == 5);
  CHECK(r.scst_history.size() == 2);
  CHECK_THROWS_AS(train(init, s.examples, cfg, Stream::rgb, nullptr), ContractError);
}
