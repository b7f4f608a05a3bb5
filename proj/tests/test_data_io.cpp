#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <unistd.h>

#include "lstmt/data_io.hpp"
#include "lstmt/errors.hpp"
#include "support.hpp"

using namespace lstmt;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("lstmt_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  fs::path operator/(const std::string& name) const { return path / name; }
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

CheckpointError::Kind load_kind(const fs::path& p) {
  try {
    (void)load_checkpoint(p);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  FAIL("checkpoint loaded");
  return CheckpointError::Kind::io;
}

Checkpoint sample_checkpoint() {
  ModelConfig c = test::tiny_config(3, 4, 3, 2, 6);
  return {CaptionerParams::initialized(c, 5),
          Vocabulary::from_tokens({"<pad>", "<bos>", "<eos>", "<unk>", "cat", "dog"}),
          {3, 0.125, 5, Stream::flow}};
}

}  // namespace

TEST_CASE("vocabulary reserves the first four ids") {
  Vocabulary v;
  CHECK(v.size() == 4);
  CHECK(v.id("<pad>") == tokens::pad);
  CHECK(v.id("<eos>") == tokens::eos);
  CHECK(v.id("zebra") == tokens::unk);
  CHECK_THROWS_AS(v.token(4), VocabularyError);
  CHECK_THROWS_AS(Vocabulary::from_tokens({"<pad>", "<bos>", "<eos>"}), DataError);
  CHECK_THROWS_AS(Vocabulary::from_tokens({"<pad>", "<bos>", "<eos>", "<unk>", "a", "a"}), DataError);
}

TEST_CASE("build_vocab orders by count then alphabetically and honours min_count") {
  const std::vector<std::string> caps{"b a c", "a b", "a d", "B!"};
  const auto v = build_vocab(caps, 1);
  CHECK(v.tokens() == std::vector<std::string>{"<pad>", "<bos>", "<eos>", "<unk>", "a", "b", "c", "d"});
  const auto v2 = build_vocab(caps, 3);
  CHECK(v2.tokens() == std::vector<std::string>{"<pad>", "<bos>", "<eos>", "<unk>", "a", "b"});
  CHECK(v2.encode_caption("A d b") == std::vector<TokenId>{tokens::bos, 4, tokens::unk, 5, tokens::eos});
  CHECK(v2.decode(std::vector<TokenId>{tokens::bos, 4, tokens::unk, 5, tokens::eos, tokens::pad}) == "a <unk> b");
  CHECK_THROWS_AS(build_vocab(caps, 0), ConfigError);
}

TEST_CASE("features round-trip through JSON Lines") {
  TempDir dir;
  std::mt19937_64 rng(1);
  std::vector<FeatureSequence> seqs{test::random_features(3, 4, rng), test::random_features(5, 4, rng, Stream::flow)};
  seqs[0].video_id = "a";
  seqs[1].video_id = "b";
  save_features(dir / "f.jsonl", seqs);
  const auto back = load_features(dir / "f.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0].video_id == "a");
  CHECK(back[1].stream == Stream::flow);
  CHECK(back[0].features == seqs[0].features);
  CHECK(back[1].features == seqs[1].features);
}

TEST_CASE("feature file errors carry the line number") {
  TempDir dir;
  auto line_of = [&](const std::string& text) -> std::size_t {
    write_text(dir / "f.jsonl", text);
    try {
      (void)load_features(dir / "f.jsonl");
    } catch (const DataError& e) {
      return e.line();
    }
    return 0;
  };
  const std::string ok = R"({"video_id":"a","stream":"rgb","features":[[1,2],[3,4]]})";
  CHECK(line_of(ok + "\n{not json\n") == 2);
  CHECK(line_of(ok + "\n\n" + R"({"video_id":"b","stream":"rgb","features":[[1,2,3]]})" + "\n") == 3);
  CHECK(line_of(R"({"video_id":"a","stream":"depth","features":[[1]]})") == 1);
  CHECK(line_of(R"({"video_id":"a","stream":"rgb","features":[[1,2],[3]]})") == 1);
  CHECK(line_of(R"({"video_id":"a","stream":"rgb","features":[[1,"x"]]})") == 1);
  CHECK(line_of(R"({"video_id":"a","stream":"rgb","features":[[1,1e999]]})") == 1);
  CHECK(line_of(R"({"stream":"rgb","features":[[1]]})") == 1);
  CHECK_THROWS_AS(load_features(dir / "missing.jsonl"), DataError);
}

TEST_CASE("captions and proposals load") {
  TempDir dir;
  const std::vector<CaptionRecord> caps{{"v1", "a dog runs"}, {"v1", "dog running"}, {"v2", "cat"}};
  save_captions(dir / "c.jsonl", caps);
  const auto back = load_captions(dir / "c.jsonl");
  REQUIRE(back.size() == 3);
  CHECK(back[1].caption == "dog running");

  write_text(dir / "p.jsonl", R"({"video_id":"v1","t_start":0.5,"t_end":3})" "\n");
  const auto props = load_proposals(dir / "p.jsonl");
  REQUIRE(props.size() == 1);
  CHECK(props[0].t_end == 3.0);
  write_text(dir / "p.jsonl", R"({"video_id":"v1","t_start":4,"t_end":3})" "\n");
  CHECK_THROWS_AS(load_proposals(dir / "p.jsonl"), DataError);
}

TEST_CASE("toy corpus structure") {
  ToyCorpusOptions o;
  o.seed = 3;
  const ToyCorpus c = gen_toy_corpus(o);
  REQUIRE(c.features.size() == 2 * o.n_videos);
  REQUIRE(c.captions.size() == o.n_videos);
  const std::size_t words = o.vocab_size - 4;
  for (std::size_t v = 0; v < o.n_videos; ++v) {
    const auto& rgb = c.features[v];
    const auto& flow = c.features[o.n_videos + v];
    CHECK(rgb.stream == Stream::rgb);
    CHECK(flow.stream == Stream::flow);
    CHECK(rgb.video_id == c.captions[v].video_id);
    CHECK(flow.video_id == rgb.video_id);
    CHECK(rgb.frames() >= o.k_min);
    CHECK(rgb.frames() <= o.k_max);
    CHECK(rgb.dim() == o.d_v);
    CHECK_FALSE(rgb.features == flow.features);

    // Coordinate 0 spells out the caption.
    std::string caption;
    for (std::size_t r = 0; r < rgb.frames(); ++r) {
      CHECK(rgb.features.at(r, 0) == flow.features.at(r, 0));
      const double x = rgb.features.at(r, 0);
      if (x == 0.0) continue;
      const auto w = static_cast<std::size_t>(std::lround(x * static_cast<double>(words))) - 1;
      if (!caption.empty()) caption += ' ';
      caption += toy_word(w);
    }
    CHECK(caption == c.captions[v].caption);
    const auto n = std::count(caption.begin(), caption.end(), ' ') + 1;
    CHECK(n >= 2);
    CHECK(n <= 5);
  }
  // Deterministic per seed.
  const ToyCorpus again = gen_toy_corpus(o);
  CHECK(again.features[7].features == c.features[7].features);
  o.seed = 4;
  CHECK_FALSE(gen_toy_corpus(o).features[0].features == c.features[0].features);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  TempDir dir;
  const Checkpoint ck = sample_checkpoint();
  save_checkpoint(dir / "m.ckpt", ck);
  const Checkpoint back = load_checkpoint(dir / "m.ckpt");
  CHECK(back.params == ck.params);
  CHECK(back.vocab == ck.vocab);
  CHECK(back.meta == ck.meta);
  CHECK(load_checkpoint(dir / "m.ckpt", ck.params.config).params == ck.params);

  // Saving the loaded copy reproduces the file byte for byte.
  save_checkpoint(dir / "m2.ckpt", back);
  CHECK(read_bytes(dir / "m.ckpt") == read_bytes(dir / "m2.ckpt"));

  ModelConfig other = ck.params.config;
  other.d_h = 5;
  CHECK_THROWS_AS(load_checkpoint(dir / "m.ckpt", other), CheckpointError);
}

TEST_CASE("damaged checkpoints report what is wrong") {
  using Kind = CheckpointError::Kind;
  TempDir dir;
  save_checkpoint(dir / "m.ckpt", sample_checkpoint());
  const std::string good = read_bytes(dir / "m.ckpt");

  CHECK(load_kind(dir / "nope.ckpt") == Kind::io);

  std::string bad = good;
  bad[0] = 'X';
  write_text(dir / "b.ckpt", bad);
  CHECK(load_kind(dir / "b.ckpt") == Kind::bad_magic);

  write_text(dir / "b.ckpt", good.substr(0, good.size() - 9));
  CHECK(load_kind(dir / "b.ckpt") == Kind::truncated);
  write_text(dir / "b.ckpt", good.substr(0, 10));
  CHECK(load_kind(dir / "b.ckpt") == Kind::truncated);

  bad = good;
  const auto at = bad.find("\"format_version\":1");
  REQUIRE(at != std::string::npos);
  bad[at + 17] = '2';
  write_text(dir / "b.ckpt", bad);
  CHECK(load_kind(dir / "b.ckpt") == Kind::version);

  bad = good;
  const auto sh = bad.find("\"shape\":[2,6]");
  REQUIRE(sh != std::string::npos);
  bad[sh + 9] = '3';
  write_text(dir / "b.ckpt", bad);
  CHECK(load_kind(dir / "b.ckpt") == Kind::shape);

  bad = good;
  bad[14] = '[';  // first manifest byte
  write_text(dir / "b.ckpt", bad);
  CHECK(load_kind(dir / "b.ckpt") == Kind::malformed);
}
