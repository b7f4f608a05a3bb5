#include "lstmt/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lstmt/errors.hpp"
#include "lstmt/metrics.hpp"

namespace lstmt {
namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

constexpr char kMagic[6] = {'L', 'S', 'T', 'M', 'T', '\x01'};

// Calls fn(parsed, line_number) for every non-blank line.
template <class F>
void for_each_json_line(const std::filesystem::path& path, F&& fn) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(path.string() + ": malformed JSON: " + e.what(), lineno);
    }
    if (!j.is_object()) throw DataError(path.string() + ": expected a JSON object", lineno);
    try {
      fn(j, lineno);
    } catch (const DataError&) {
      throw;
    } catch (const json::exception& e) {
      throw DataError(path.string() + ": " + e.what(), lineno);
    } catch (const Error& e) {
      throw DataError(path.string() + ": " + e.what(), lineno);
    }
  }
}

std::string required_string(const json& j, const char* key, std::size_t line) {
  if (!j.contains(key) || !j[key].is_string()) throw DataError(std::string("missing string field \"") + key + "\"", line);
  return j[key].get<std::string>();
}

double required_number(const json& j, const char* key, std::size_t line) {
  if (!j.contains(key) || !j[key].is_number()) throw DataError(std::string("missing numeric field \"") + key + "\"", line);
  const double v = j[key].get<double>();
  if (!std::isfinite(v)) throw DataError(std::string("non-finite value in \"") + key + "\"", line);
  return v;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

void put_f64(std::string& out, double d) { put_u64(out, std::bit_cast<std::uint64_t>(d)); }

json config_json(const ModelConfig& c) {
  return {{"d_v", c.d_v}, {"d_h", c.d_h}, {"d_a", c.d_a}, {"d_e", c.d_e}, {"vocab_size", c.vocab_size},
          {"max_caption_len", c.max_caption_len}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.d_v = j.at("d_v").get<std::size_t>();
  c.d_h = j.at("d_h").get<std::size_t>();
  c.d_a = j.at("d_a").get<std::size_t>();
  c.d_e = j.at("d_e").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_caption_len = j.at("max_caption_len").get<std::size_t>();
  return c;
}

[[noreturn]] void ckpt_fail(CheckpointError::Kind kind, const std::filesystem::path& path, const std::string& what) {
  throw CheckpointError(kind, path.string() + ": " + what);
}

}  // namespace

// ---- vocabulary ------------------------------------------------------------

Vocabulary::Vocabulary() : Vocabulary(from_tokens({kPad, kBos, kEos, kUnk})) {}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  const std::vector<std::string> reserved{kPad, kBos, kEos, kUnk};
  if (tokens.size() < reserved.size() || !std::equal(reserved.begin(), reserved.end(), tokens.begin())) {
    throw DataError("vocabulary must start with <pad> <bos> <eos> <unk>");
  }
  Vocabulary v{Raw{}};
  v.tokens_ = std::move(tokens);
  for (TokenId i = 0; i < v.tokens_.size(); ++i) {
    if (!v.index_.emplace(v.tokens_[i], i).second) throw DataError("duplicate vocabulary entry \"" + v.tokens_[i] + "\"");
  }
  return v;
}

TokenId Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? tokens::unk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) {
    throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of size " +
                          std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

std::vector<TokenId> Vocabulary::encode(const std::string& sentence) const {
  std::vector<TokenId> out;
  for (const auto& w : metrics::tokenize(sentence)) out.push_back(id(w));
  return out;
}

std::vector<TokenId> Vocabulary::encode_caption(const std::string& sentence) const {
  std::vector<TokenId> out{tokens::bos};
  auto body = encode(sentence);
  out.insert(out.end(), body.begin(), body.end());
  out.push_back(tokens::eos);
  return out;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId t : ids) {
    if (t == tokens::pad || t == tokens::bos || t == tokens::eos) continue;
    if (!out.empty()) out += ' ';
    out += token(t);
  }
  return out;
}

Vocabulary build_vocab(std::span<const std::string> captions, std::size_t min_count) {
  if (min_count < 1) throw ConfigError("min_count must be at least 1");
  if (captions.empty()) throw ContractError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& c : captions) {
    for (const auto& w : metrics::tokenize(c)) ++counts[w];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [w, n] : counts) {
    if (n >= min_count) kept.emplace_back(w, n);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> tokens{Vocabulary::kPad, Vocabulary::kBos, Vocabulary::kEos, Vocabulary::kUnk};
  for (auto& [w, n] : kept) tokens.push_back(w);
  return Vocabulary::from_tokens(std::move(tokens));
}

// ---- feature / caption / proposal files -------------------------------------

std::vector<FeatureSequence> load_features(const std::filesystem::path& path) {
  std::vector<FeatureSequence> out;
  std::size_t width = 0;
  for_each_json_line(path, [&](const json& j, std::size_t line) {
    FeatureSequence seq;
    seq.video_id = required_string(j, "video_id", line);
    try {
      seq.stream = parse_stream(required_string(j, "stream", line));
    } catch (const ConfigError& e) {
      throw DataError(e.what(), line);
    }
    if (!j.contains("features") || !j["features"].is_array() || j["features"].empty()) {
      throw DataError("\"features\" must be a non-empty array of rows", line);
    }
    const auto& rows = j["features"];
    const std::size_t cols = rows[0].is_array() ? rows[0].size() : 0;
    if (cols == 0) throw DataError("feature rows must be non-empty arrays", line);
    if (width != 0 && cols != width) {
      throw DataError("schema: feature width " + std::to_string(cols) + " differs from " + std::to_string(width) +
                          " earlier in the file",
                      line);
    }
    width = cols;
    std::vector<double> data;
    data.reserve(rows.size() * cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (!rows[r].is_array() || rows[r].size() != cols) {
        throw DataError("feature row " + std::to_string(r) + " has the wrong length", line);
      }
      for (std::size_t c = 0; c < cols; ++c) {
        const auto& v = rows[r][c];
        if (!v.is_number()) throw DataError("non-numeric feature at row " + std::to_string(r), line);
        const double d = v.get<double>();
        if (!std::isfinite(d)) {
          throw DataError("non-finite feature at row " + std::to_string(r) + ", column " + std::to_string(c), line);
        }
        data.push_back(d);
      }
    }
    seq.features = Tensor::matrix(rows.size(), cols, std::move(data));
    out.push_back(std::move(seq));
  });
  return out;
}

void save_features(const std::filesystem::path& path, std::span<const FeatureSequence> sequences) {
  std::vector<std::string> lines;
  for (const auto& s : sequences) {
    ordered_json j;
    j["video_id"] = s.video_id;
    j["stream"] = to_string(s.stream);
    json rows = json::array();
    for (std::size_t r = 0; r < s.frames(); ++r) {
      auto row = s.features.row(r);
      rows.push_back(std::vector<double>(row.begin(), row.end()));
    }
    j["features"] = std::move(rows);
    lines.push_back(j.dump());
  }
  write_lines(path, lines);
}

std::vector<CaptionRecord> load_captions(const std::filesystem::path& path) {
  std::vector<CaptionRecord> out;
  for_each_json_line(path, [&](const json& j, std::size_t line) {
    out.push_back({required_string(j, "video_id", line), required_string(j, "caption", line)});
  });
  return out;
}

void save_captions(const std::filesystem::path& path, std::span<const CaptionRecord> captions) {
  std::vector<std::string> lines;
  for (const auto& c : captions) {
    ordered_json j;
    j["video_id"] = c.video_id;
    j["caption"] = c.caption;
    lines.push_back(j.dump());
  }
  write_lines(path, lines);
}

std::vector<ProposalRecord> load_proposals(const std::filesystem::path& path) {
  std::vector<ProposalRecord> out;
  for_each_json_line(path, [&](const json& j, std::size_t line) {
    ProposalRecord p{required_string(j, "video_id", line), required_number(j, "t_start", line),
                     required_number(j, "t_end", line)};
    if (p.t_end < p.t_start) throw DataError("t_end precedes t_start", line);
    out.push_back(std::move(p));
  });
  return out;
}

// ---- toy corpus --------------------------------------------------------------

std::string toy_word(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "w%02zu", index);
  return buf;
}

ToyCorpus gen_toy_corpus(const ToyCorpusOptions& o) {
  if (o.vocab_size <= tokens::reserved) throw ConfigError("toy vocab_size must exceed 4");
  if (o.k_min == 0 || o.k_max < o.k_min) throw ConfigError("toy K range must satisfy 1 <= k_min <= k_max");
  if (o.d_v == 0) throw ConfigError("toy d_v must be positive");
  constexpr double kNoise = 0.1;
  const std::size_t n_words = o.vocab_size - tokens::reserved;

  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> noise(0.0, kNoise);

  std::vector<std::vector<double>> embedding(n_words, std::vector<double>(o.d_v - 1));
  for (auto& e : embedding) {
    for (auto& v : e) v = unit(rng);
  }

  ToyCorpus corpus;
  std::vector<FeatureSequence> flows;
  for (std::size_t v = 0; v < o.n_videos; ++v) {
    char id[32];
    std::snprintf(id, sizeof id, "toy%04zu", v);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(o.k_min, o.k_max)(rng);
    const std::size_t max_events = std::min<std::size_t>(k, 5);
    const std::size_t n_events = max_events < 2 ? max_events : std::uniform_int_distribution<std::size_t>(2, max_events)(rng);

    std::vector<std::size_t> rows(k);
    std::iota(rows.begin(), rows.end(), 0);
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(n_events);
    std::sort(rows.begin(), rows.end());

    std::vector<long> word_at(k, -1);
    std::string caption;
    for (std::size_t r : rows) {
      const auto w = std::uniform_int_distribution<std::size_t>(0, n_words - 1)(rng);
      word_at[r] = static_cast<long>(w);
      if (!caption.empty()) caption += ' ';
      caption += toy_word(w);
    }

    auto make = [&](Stream s) {
      std::vector<double> data;
      for (std::size_t r = 0; r < k; ++r) {
        const long w = word_at[r];
        data.push_back(w < 0 ? 0.0 : static_cast<double>(w + 1) / static_cast<double>(n_words));
        for (std::size_t c = 0; c + 1 < o.d_v; ++c) {
          data.push_back((w < 0 ? 0.0 : embedding[w][c]) + noise(rng));
        }
      }
      return FeatureSequence{id, s, Tensor::matrix(k, o.d_v, std::move(data))};
    };
    corpus.features.push_back(make(Stream::rgb));
    flows.push_back(make(Stream::flow));
    corpus.captions.push_back({id, caption});
  }
  for (auto& f : flows) corpus.features.push_back(std::move(f));
  return corpus;
}

// ---- checkpoints ---------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  ckpt.params.validate();
  if (ckpt.vocab.size() != ckpt.params.config.vocab_size) {
    throw ContractError("checkpoint vocabulary has " + std::to_string(ckpt.vocab.size()) + " entries, model expects " +
                        std::to_string(ckpt.params.config.vocab_size));
  }
  ordered_json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["config"] = config_json(ckpt.params.config);
  ordered_json dir = ordered_json::array();
  std::string payload;
  ckpt.params.for_each([&](const char* name, const Tensor& t) {
    dir.push_back({{"name", name}, {"shape", t.shape()}, {"offset", payload.size()}});
    for (double d : t.values()) put_f64(payload, d);
  });
  manifest["tensors"] = std::move(dir);
  manifest["vocabulary"] = ckpt.vocab.tokens();
  ordered_json meta;
  meta["epoch"] = ckpt.meta.epoch;
  meta["loss"] = ckpt.meta.loss;
  meta["seed"] = ckpt.meta.seed;
  meta["stream"] = ckpt.meta.stream ? json(to_string(*ckpt.meta.stream)) : json(nullptr);
  manifest["training"] = std::move(meta);

  const std::string text = manifest.dump();
  std::string bytes(kMagic, sizeof kMagic);
  put_u64(bytes, text.size());
  bytes += text;
  bytes += payload;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
    ckpt_fail(CheckpointError::Kind::io, path, "cannot write");
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  using Kind = CheckpointError::Kind;
  std::ifstream in(path, std::ios::binary);
  if (!in) ckpt_fail(Kind::io, path, "cannot open");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < sizeof kMagic) ckpt_fail(Kind::truncated, path, "file shorter than the header");
  if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) ckpt_fail(Kind::bad_magic, path, "not a checkpoint");
  if (bytes.size() < sizeof kMagic + 8) ckpt_fail(Kind::truncated, path, "file shorter than the header");
  const std::uint64_t manifest_len = get_u64(bytes.data() + sizeof kMagic);
  const std::size_t payload_start = sizeof kMagic + 8 + manifest_len;
  if (manifest_len > bytes.size() || payload_start > bytes.size()) {
    ckpt_fail(Kind::truncated, path, "manifest runs past end of file");
  }

  ordered_json manifest;
  try {
    manifest = ordered_json::parse(bytes.substr(sizeof kMagic + 8, manifest_len));
  } catch (const json::exception& e) {
    ckpt_fail(Kind::malformed, path, std::string("bad manifest: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      ckpt_fail(Kind::version, path,
                "format version " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));
    }
    const ModelConfig config = config_from_json(manifest.at("config"));
    try {
      ckpt.params = CaptionerParams::zeros(config);
    } catch (const Error& e) {
      ckpt_fail(Kind::shape, path, e.what());
    }
    ckpt.vocab = Vocabulary::from_tokens(manifest.at("vocabulary").get<std::vector<std::string>>());
    if (ckpt.vocab.size() != config.vocab_size) ckpt_fail(Kind::shape, path, "vocabulary size disagrees with config");

    const auto& dir = manifest.at("tensors");
    std::size_t i = 0;
    const std::size_t payload_len = bytes.size() - payload_start;
    ckpt.params.for_each([&](const char* name, Tensor& t) {
      if (i >= dir.size()) ckpt_fail(Kind::shape, path, std::string("missing tensor ") + name);
      const auto& entry = dir[i++];
      if (entry.at("name").get<std::string>() != name) {
        ckpt_fail(Kind::shape, path, "tensor " + std::to_string(i - 1) + " is " + entry.at("name").get<std::string>() +
                                         ", expected " + name);
      }
      const auto shape = entry.at("shape").get<Shape>();
      if (shape != t.shape()) {
        ckpt_fail(Kind::shape, path,
                  std::string(name) + " has shape " + shape_string(shape) + ", config implies " +
                      shape_string(t.shape()));
      }
      const auto offset = entry.at("offset").get<std::size_t>();
      if (offset > payload_len || t.size() * 8 > payload_len - offset) {
        ckpt_fail(Kind::truncated, path, std::string("payload for ") + name + " runs past end of file");
      }
      const char* p = bytes.data() + payload_start + offset;
      for (std::size_t k = 0; k < t.size(); ++k) t[k] = std::bit_cast<double>(get_u64(p + 8 * k));
      if (!t.all_finite()) ckpt_fail(Kind::malformed, path, std::string(name) + " holds non-finite values");
    });
    if (i != dir.size()) ckpt_fail(Kind::shape, path, "unexpected extra tensors");

    const auto& meta = manifest.at("training");
    ckpt.meta.epoch = meta.at("epoch").get<std::size_t>();
    ckpt.meta.loss = meta.at("loss").get<double>();
    ckpt.meta.seed = meta.at("seed").get<std::uint64_t>();
    if (!meta.at("stream").is_null()) ckpt.meta.stream = parse_stream(meta.at("stream").get<std::string>());
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    ckpt_fail(Kind::malformed, path, e.what());
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  Checkpoint ckpt = load_checkpoint(path);
  if (!(ckpt.params.config == expected)) {
    ckpt_fail(CheckpointError::Kind::shape, path, "checkpoint model config does not match the expected config");
  }
  return ckpt;
}

}  // namespace lstmt
