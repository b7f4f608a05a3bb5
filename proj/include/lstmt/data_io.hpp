#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "lstmt/model.hpp"

namespace lstmt {

/// Ids 0..3 are PAD, BOS, EOS, UNK; the rest follow in construction order.
class Vocabulary {
 public:
  static constexpr const char* kPad = "<pad>";
  static constexpr const char* kBos = "<bos>";
  static constexpr const char* kEos = "<eos>";
  static constexpr const char* kUnk = "<unk>";

  Vocabulary();
  /// Full token list including the four reserved entries at the front.
  /// Throws DataError on duplicates or a wrong reserved prefix.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  /// UNK for unknown words.
  TokenId id(const std::string& token) const;
  /// Throws VocabularyError when out of range.
  const std::string& token(TokenId id) const;

  /// Words of `sentence` (metrics tokenizer) mapped to ids.
  std::vector<TokenId> encode(const std::string& sentence) const;
  /// BOS + encode(sentence) + EOS.
  std::vector<TokenId> encode_caption(const std::string& sentence) const;
  /// Space-joined words; PAD/BOS/EOS dropped, UNK rendered as "<unk>".
  std::string decode(std::span<const TokenId> ids) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  struct Raw {};
  explicit Vocabulary(Raw) {}

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Words with count >= min_count, by (count desc, word asc).
Vocabulary build_vocab(std::span<const std::string> captions, std::size_t min_count);

// Feature files: JSON Lines {"video_id", "stream": "rgb"|"flow", "features": [[...], ...]}.
std::vector<FeatureSequence> load_features(const std::filesystem::path& path);
void save_features(const std::filesystem::path& path, std::span<const FeatureSequence> sequences);

// Caption files: JSON Lines {"video_id", "caption"}; repeated ids are extra references.
struct CaptionRecord {
  std::string video_id;
  std::string caption;
};
std::vector<CaptionRecord> load_captions(const std::filesystem::path& path);
void save_captions(const std::filesystem::path& path, std::span<const CaptionRecord> captions);

// Proposal files: JSON Lines {"video_id", "t_start", "t_end"}, times in feature rows.
struct ProposalRecord {
  std::string video_id;
  double t_start = 0.0;
  double t_end = 0.0;
};
std::vector<ProposalRecord> load_proposals(const std::filesystem::path& path);

// ---- synthetic corpus ----------------------------------------------------

struct ToyCorpusOptions {
  std::uint64_t seed = 0;
  std::size_t n_videos = 20;
  std::size_t vocab_size = 30;  // including the 4 reserved ids
  std::size_t k_min = 4;
  std::size_t k_max = 8;
  std::size_t d_v = 16;
};

/// Each video has K rows; some rows carry an event word. Coordinate 0 of a
/// row holds (w+1)/W for content word w out of W = vocab_size-4 words, and 0
/// for rows without an event; the caption lists the event words in row
/// order. The remaining coordinates hold a per-word embedding plus noise,
/// drawn independently for the rgb and flow streams.
struct ToyCorpus {
  std::vector<FeatureSequence> features;  // rgb then flow, per video
  std::vector<CaptionRecord> captions;
};

ToyCorpus gen_toy_corpus(const ToyCorpusOptions& options);
std::string toy_word(std::size_t index);

// ---- checkpoints ---------------------------------------------------------

struct TrainingMetadata {
  std::size_t epoch = 0;
  double loss = 0.0;
  std::uint64_t seed = 0;
  std::optional<Stream> stream;

  friend bool operator==(const TrainingMetadata&, const TrainingMetadata&) = default;
};

struct Checkpoint {
  CaptionerParams params;
  Vocabulary vocab;
  TrainingMetadata meta;
};

inline constexpr int kCheckpointVersion = 1;

/// "LSTMT\x01", u64 LE manifest length, JSON manifest, then each tensor as
/// little-endian f64 in manifest order.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Also rejects a checkpoint whose config differs from `expected`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace lstmt
