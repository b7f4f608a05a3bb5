#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "lstmt/decoding.hpp"
#include "lstmt/model.hpp"
#include "lstmt/training.hpp"

namespace lstmt {

/// Everything a command needs besides file paths, as one flat key space:
///   d_v d_h d_a d_e max_caption_len min_count
///   learning_rate optimizer beta1 beta2 epsilon batch_size epochs grad_clip_norm seed
///   scst_enabled scst_reward scst_epochs scst_learning_rate
///   beam_width max_len length_norm fusion
/// d_v = 0 means "take it from the feature file". vocab_size always comes
/// from the data.
struct RunConfig {
  ModelConfig model;
  std::size_t min_count = 1;
  TrainConfig train;
  DecodeConfig decode;

  RunConfig();

  /// Applies the keys present in `j`; unknown keys or wrong types throw ConfigError.
  void merge(const nlohmann::json& j);
  /// `value` is read as JSON when it parses, otherwise as a bare string.
  void set(const std::string& key, const std::string& value);
  /// Parses "key=value".
  void set_assignment(const std::string& assignment);

  void load_file(const std::filesystem::path& path);

  /// Every key, in a form merge() accepts back.
  nlohmann::ordered_json to_json() const;
};

}  // namespace lstmt
