#include <doctest.h>

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "lstmt/errors.hpp"
#include "lstmt/metrics.hpp"

using namespace lstmt;
using namespace lstmt::metrics;

namespace {

std::vector<EvalPair> load_golden() {
  std::ifstream in(std::string(LSTMT_TEST_DATA_DIR) + "/golden_pairs.jsonl");
  REQUIRE(in);
  std::vector<EvalPair> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    out.push_back({j["id"], j["candidate"], j["references"].get<std::vector<std::string>>()});
  }
  return out;
}

// Values printed by tests/oracles/metric_oracle.py for the same inputs.
struct Frozen {
  double bleu[4];
  double rouge_l, cider_d, meteor_lite;
};

void check_frozen(std::span<const EvalPair> pairs, const Frozen& want) {
  for (int n = 1; n <= 4; ++n) CHECK(std::abs(bleu(pairs, n) - want.bleu[n - 1]) <= 1e-9);
  CHECK(std::abs(rouge_l(pairs) - want.rouge_l) <= 1e-9);
  CHECK(std::abs(cider_d(pairs) - want.cider_d) <= 1e-9);
  CHECK(std::abs(meteor_lite(pairs) - want.meteor_lite) <= 1e-9);
}

}  // namespace

TEST_CASE("tokenizer lowercases and drops punctuation") {
  CHECK(tokenize("A man, walking-the DOG!  ok") == Words{"a", "man", "walkingthe", "dog", "ok"});
  CHECK(tokenize("   ").empty());
  CHECK(tokenize("...") .empty());
}

TEST_CASE("golden corpus matches the oracle script") {
  const auto pairs = load_golden();
  REQUIRE(pairs.size() == 10);
  check_frozen(pairs, {{0.5906890488316902, 0.39012770539936403, 0.23481743867078095, 0.18146056845254446},
                       0.4607264333305189,
                       0.14203957622460905,
                       0.4387627676236255});
  check_frozen(std::span(pairs).first(3), {{0.7368421052631579, 0.47985743496869654, 0.0, 0.0},
                                           0.496565934065934,
                                           0.12440327283154658,
                                           0.41702402287079704});
  check_frozen(std::span(pairs).first(1),
               {{0.875, 0.6123724356957945, 0.0, 0.0}, 0.625, 0.19298025951896616, 0.6388888888888888});
}

TEST_CASE("hand-worked BLEU values") {
  const std::vector<EvalPair> rep{{"x", "the the the the", {"the cat sat"}}};
  // Clipped unigram precision 1/4; c = 4 > r = 3 so there is no brevity penalty.
  CHECK(bleu(rep, 1) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(bleu(rep, 2) == 0.0);

  const std::vector<EvalPair> short_c{{"x", "the cat", {"the cat sat on the mat"}}};
  CHECK(bleu(short_c, 1) == doctest::Approx(std::exp(1.0 - 6.0 / 2.0)).epsilon(1e-15));

  const std::vector<EvalPair> none{{"x", "dog runs", {"the cat sat"}}};
  CHECK(bleu(none, 1) == 0.0);
  CHECK_THROWS_AS(bleu(none, 5), ContractError);
}

TEST_CASE("closest reference length prefers the shorter one on ties") {
  // c = 3, references of length 2 and 4: r = 2, no brevity penalty either way,
  // but switching the order of the references must not matter.
  const std::vector<EvalPair> a{{"x", "a b c", {"a b", "a b c d"}}};
  const std::vector<EvalPair> b{{"x", "a b c", {"a b c d", "a b"}}};
  CHECK(bleu(a, 2) == bleu(b, 2));
  const std::vector<EvalPair> c{{"x", "a b", {"a b c", "x"}}};  // distances 1 and 1: r = 1, no penalty
  CHECK(bleu(c, 1) == 1.0);
}

TEST_CASE("identical sentences score 1 for BLEU and ROUGE-L") {
  std::vector<EvalPair> pairs{{"1", "a man plays the guitar", {"a man plays the guitar", "someone plays"}},
                              {"2", "the dog runs in the park", {"x y", "the dog runs in the park"}}};
  for (int n = 1; n <= 4; ++n) CHECK(bleu(pairs, n) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(rouge_l(pairs) == 1.0);
  CHECK(evaluate(pairs).bleu[3] * 100.0 == doctest::Approx(100.0).epsilon(1e-13));
}

TEST_CASE("METEOR-lite on an identical sentence pays the one-chunk penalty") {
  const std::vector<EvalPair> pairs{{"1", "a b c d", {"a b c d"}}};
  CHECK(meteor_lite(pairs) == doctest::Approx(1.0 - 0.5 / 64.0).epsilon(1e-15));
}

TEST_CASE("METEOR-lite alignment and stems") {
  CHECK(stem("running") == "runn");
  CHECK(stem("jumped") == "jump");
  CHECK(stem("quickly") == "quick");
  CHECK(stem("dogs") == "dog");
  CHECK(stem("is") == "is");
  CHECK(stem("bed") == "bed");

  const auto a = meteor_align(tokenize("dogs jumped over"), tokenize("the dog jumps over"));
  CHECK(a.matches == 3);
  CHECK(a.chunks == 1);  // dog jump over, adjacent in both

  const auto b = meteor_align(tokenize("b a"), tokenize("a b"));
  CHECK(b.matches == 2);
  CHECK(b.chunks == 2);

  const auto c = meteor_align(tokenize("a a"), tokenize("a x a"));
  CHECK(c.matches == 2);
  CHECK(c.chunks == 2);
}

TEST_CASE("ROUGE-L by hand") {
  CHECK(lcs_length(tokenize("a b c d"), tokenize("a c e")) == 2);
  const std::vector<EvalPair> pairs{{"1", "a b c d", {"a c e", "zz"}}};
  CHECK(rouge_l(pairs) == doctest::Approx(0.5865384615384615).epsilon(1e-15));
}

TEST_CASE("duplicating the corpus leaves corpus-level scores unchanged") {
  auto pairs = load_golden();
  const auto once = evaluate(pairs);
  auto twice = pairs;
  twice.insert(twice.end(), pairs.begin(), pairs.end());
  const auto rep = evaluate(twice);
  for (int n = 0; n < 4; ++n) CHECK(rep.bleu[n] == doctest::Approx(once.bleu[n]).epsilon(1e-13));
  CHECK(rep.rouge_l == doctest::Approx(once.rouge_l).epsilon(1e-13));
  CHECK(rep.meteor_lite == doctest::Approx(once.meteor_lite).epsilon(1e-13));
}

TEST_CASE("CIDEr-D range, clipping and the single-pair warning") {
  const std::vector<EvalPair> pairs{{"1", "a cat sits", {"a cat sits"}}, {"2", "a dog runs", {"a dog runs"}}};
  const double perfect = cider_d(pairs);
  CHECK(perfect > 0.0);
  CHECK(perfect <= 1.0 + 1e-12);

  // Repeating a matching word is clipped: it cannot beat the exact caption.
  const std::vector<EvalPair> rep{{"1", "cat cat cat", {"a cat sits"}}, {"2", "a dog runs", {"a dog runs"}}};
  CHECK(cider_d(rep) < perfect);

  const std::vector<EvalPair> single{{"1", "a cat", {"a cat"}}};
  const auto r = evaluate(single);
  CHECK(r.cider_d > 0.0);
  CHECK(r.warnings.size() == 1);
  CHECK(evaluate(pairs).warnings.empty());
}

TEST_CASE("empty corpora and pairs without references are contract errors") {
  CHECK_THROWS_AS(evaluate(std::vector<EvalPair>{}), ContractError);
  CHECK_THROWS_AS(rouge_l(std::vector<EvalPair>{{"1", "a", {}}}), ContractError);
}

TEST_CASE("report scales by 100 and renders the table") {
  const auto pairs = load_golden();
  const auto r = evaluate(pairs);
  const auto j = nlohmann::json::parse(r.to_json());
  CHECK(j["bleu_4"].get<double>() == doctest::Approx(r.bleu[3] * 100).epsilon(1e-15));
  CHECK(j["cider_d"].get<double>() == doctest::Approx(r.cider_d * 100).epsilon(1e-15));
  const auto table = r.table("LSTM-T");
  CHECK(table.find("B@4") != std::string::npos);
  CHECK(table.find("M-lite") != std::string::npos);
  CHECK(table.find("LSTM-T") != std::string::npos);
}
