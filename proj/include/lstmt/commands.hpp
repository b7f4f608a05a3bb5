#pragma once

// The four command-line verbs as library functions. Each writes its
// human-readable output to `out` and throws an lstmt::Error on failure;
// the executable maps error types to exit codes.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lstmt/data_io.hpp"
#include "lstmt/run_config.hpp"

namespace lstmt {

struct GenToyOptions {
  ToyCorpusOptions toy;
  std::filesystem::path out_dir;
};

/// Writes features.jsonl, captions.jsonl and proposals.jsonl (two halves per video).
void cmd_gen_toy(const GenToyOptions& options, std::ostream& out);

struct TrainOptions {
  RunConfig config;
  std::filesystem::path features;
  std::filesystem::path captions;
  Stream stream = Stream::rgb;
  std::filesystem::path out;
  std::optional<std::filesystem::path> log;
};

/// Echoes the resolved config as one JSON line, then one line per epoch.
void cmd_train(TrainOptions options, std::ostream& out);

struct CaptionOptions {
  RunConfig config;
  std::vector<std::filesystem::path> models;
  std::filesystem::path features;
  std::optional<std::filesystem::path> proposals;
  std::filesystem::path out;
};

/// One output line per video: {"video_id", "events": [{"t_start", "t_end", "caption"}]}.
/// Without proposals each video is a single event over all its rows.
void cmd_caption(const CaptionOptions& options, std::ostream& out);

struct EvalOptions {
  std::optional<std::filesystem::path> pairs;
  std::optional<std::filesystem::path> candidates;
  std::optional<std::filesystem::path> references;
  std::optional<std::filesystem::path> out;
  std::string label = "LSTM-T";
};

/// Reads pairs JSONL {"id", "candidate", "references"}, or a candidate file
/// ({"video_id", "caption"} or caption output) plus a caption file of references.
void cmd_eval(const EvalOptions& options, std::ostream& out);

}  // namespace lstmt
