#include "lstmt/commands.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lstmt/decoding.hpp"
#include "lstmt/errors.hpp"
#include "lstmt/metrics.hpp"
#include "lstmt/training.hpp"

namespace lstmt {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  return f;
}

// Calls fn(json, line_number) for each non-blank line.
template <class F>
void read_jsonl(const fs::path& path, F&& fn) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw DataError(path.string() + ": not a JSON object", line);
    }
    try {
      fn(j, line);
    } catch (const json::exception& e) {
      throw DataError(path.string() + ": " + e.what(), line);
    }
  }
}

std::string join(const std::vector<std::string>& items, std::size_t limit = 10) {
  std::string s;
  for (std::size_t i = 0; i < items.size() && i < limit; ++i) s += (i ? ", " : "") + items[i];
  if (items.size() > limit) s += ", ... (" + std::to_string(items.size()) + " total)";
  return s;
}

// video id -> stream -> sequence, plus first-appearance order of the ids.
struct FeatureIndex {
  std::vector<std::string> order;
  std::map<std::string, std::map<Stream, FeatureSequence>> by_video;
};

FeatureIndex index_features(std::vector<FeatureSequence> seqs) {
  FeatureIndex idx;
  for (auto& s : seqs) {
    auto [it, fresh] = idx.by_video.try_emplace(s.video_id);
    if (fresh) idx.order.push_back(s.video_id);
    const Stream stream = s.stream;
    if (!it->second.emplace(stream, std::move(s)).second) {
      throw DataError("duplicate " + to_string(stream) + " features for video " + it->first);
    }
  }
  return idx;
}

}  // namespace

// ---------------------------------------------------------------------------

void cmd_gen_toy(const GenToyOptions& options, std::ostream& out) {
  const ToyCorpus corpus = gen_toy_corpus(options.toy);
  std::error_code ec;
  fs::create_directories(options.out_dir, ec);
  if (ec) throw DataError("cannot create " + options.out_dir.string() + ": " + ec.message());

  save_features(options.out_dir / "features.jsonl", corpus.features);
  save_captions(options.out_dir / "captions.jsonl", corpus.captions);

  auto prop = open_out(options.out_dir / "proposals.jsonl");
  std::size_t n_props = 0;
  for (const auto& seq : corpus.features) {
    if (seq.stream != Stream::rgb) continue;
    const double k = static_cast<double>(seq.frames());
    const double mid = std::floor(k / 2.0);
    prop << json{{"video_id", seq.video_id}, {"t_start", 0.0}, {"t_end", mid}}.dump() << '\n';
    prop << json{{"video_id", seq.video_id}, {"t_start", mid}, {"t_end", k}}.dump() << '\n';
    n_props += 2;
  }
  out << "wrote " << corpus.features.size() << " feature sequences, " << corpus.captions.size() << " captions, "
      << n_props << " proposals to " << options.out_dir.string() << '\n';
}

// ---------------------------------------------------------------------------

void cmd_train(TrainOptions options, std::ostream& out) {
  RunConfig& cfg = options.config;
  const auto features = load_features(options.features);
  const auto captions = load_captions(options.captions);
  if (captions.empty()) throw DataError(options.captions.string() + " has no captions");

  std::size_t d_v = 0;
  for (const auto& s : features) {
    if (s.stream != options.stream) continue;
    if (d_v == 0) d_v = s.dim();
    if (s.dim() != d_v) {
      throw DataError("feature width " + std::to_string(s.dim()) + " of video " + s.video_id + " differs from " +
                      std::to_string(d_v));
    }
  }
  if (d_v == 0) throw DataError("no " + to_string(options.stream) + " features in " + options.features.string());
  if (cfg.model.d_v == 0) cfg.model.d_v = d_v;
  if (cfg.model.d_v != d_v) {
    throw ConfigError("d_v is " + std::to_string(cfg.model.d_v) + " but the features are " + std::to_string(d_v) +
                      " wide");
  }

  std::vector<std::string> texts;
  texts.reserve(captions.size());
  for (const auto& c : captions) texts.push_back(c.caption);
  const Vocabulary vocab = build_vocab(texts, cfg.min_count);

  ModelConfig model = cfg.model;
  model.vocab_size = vocab.size();
  model.validate();
  cfg.train.validate();

  out << cfg.to_json().dump() << '\n';

  const auto examples = make_examples(features, captions, vocab);
  if (examples.empty()) throw DataError("no caption matches a video in " + options.features.string());
  for (const auto& ex : examples) (void)ex.features(options.stream);

  std::optional<std::ofstream> log;
  if (options.log) log = open_out(*options.log);
  auto on_epoch = [&](const EpochRecord& r) {
    std::ostringstream line;
    line << "epoch=" << r.epoch << " split=" << r.split << " loss=" << std::setprecision(6) << std::fixed << r.loss
         << " wall=" << std::setprecision(3) << r.wall_seconds << "s";
    out << line.str() << '\n' << std::flush;
    if (log) {
      *log << json{{"epoch", r.epoch}, {"split", r.split}, {"loss", r.loss}, {"wall_seconds", r.wall_seconds}}.dump()
           << '\n'
           << std::flush;
    }
  };

  TrainResult result = train(CaptionerParams::initialized(model, cfg.train.seed), examples, cfg.train,
                             options.stream, &vocab, on_epoch);

  Checkpoint ckpt{std::move(result.params), vocab,
                  TrainingMetadata{cfg.train.epochs, result.final_loss, cfg.train.seed, options.stream}};
  save_checkpoint(options.out, ckpt);
  out << "final_loss=" << std::setprecision(6) << std::fixed << result.final_loss << " checkpoint="
      << options.out.string() << '\n';
}

// ---------------------------------------------------------------------------

void cmd_caption(const CaptionOptions& options, std::ostream& out) {
  if (options.models.empty()) throw ConfigError("caption needs at least one --model");
  DecodeConfig decode = options.config.decode;
  decode.validate();

  std::vector<Checkpoint> ckpts;
  for (const auto& path : options.models) ckpts.push_back(load_checkpoint(path));
  for (std::size_t i = 1; i < ckpts.size(); ++i) {
    if (!(ckpts[i].vocab == ckpts[0].vocab)) {
      throw ConfigError("vocabulary of " + options.models[i].string() + " differs from " +
                        options.models[0].string());
    }
  }
  std::vector<Captioner> models;
  std::vector<Stream> streams;
  for (const auto& c : ckpts) {
    const Stream s = c.meta.stream.value_or(Stream::rgb);
    models.push_back(Captioner{&c.params, s});
    streams.push_back(s);
  }

  // Model keys come from the first checkpoint, not the command line.
  RunConfig resolved = options.config;
  resolved.model = ckpts[0].params.config;
  nlohmann::ordered_json echo = resolved.to_json();
  out << echo.dump() << '\n';

  const FeatureIndex idx = index_features(load_features(options.features));

  std::map<std::string, std::vector<ProposalRecord>> proposals;
  if (options.proposals) {
    for (auto& p : load_proposals(*options.proposals)) {
      if (!idx.by_video.count(p.video_id)) throw DataError("proposal for unknown video " + p.video_id);
      proposals[p.video_id].push_back(p);
    }
  }

  auto file = open_out(options.out);
  std::size_t n_events = 0, n_failed = 0;
  for (const auto& vid : idx.order) {
    const auto& have = idx.by_video.at(vid);
    std::vector<const FeatureSequence*> seqs;
    for (std::size_t m = 0; m < models.size(); ++m) {
      auto it = have.find(streams[m]);
      if (it == have.end()) throw DataError("video " + vid + " has no " + to_string(streams[m]) + " features");
      if (it->second.dim() != ckpts[m].params.config.d_v) {
        throw DataError("video " + vid + " features are " + std::to_string(it->second.dim()) + " wide, model " +
                        options.models[m].string() + " expects " + std::to_string(ckpts[m].params.config.d_v));
      }
      seqs.push_back(&it->second);
    }

    std::vector<std::pair<double, double>> spans;
    if (options.proposals) {
      auto it = proposals.find(vid);
      if (it != proposals.end()) {
        for (const auto& p : it->second) spans.emplace_back(p.t_start, p.t_end);
      }
    } else {
      spans.emplace_back(0.0, static_cast<double>(seqs.front()->frames()));
    }

    std::vector<Proposal> props;
    for (const auto& [a, b] : spans) {
      Proposal p{a, b, {}};
      for (const auto* s : seqs) p.slices.push_back(slice_features(*s, a, b));
      props.push_back(std::move(p));
    }

    nlohmann::ordered_json events = nlohmann::ordered_json::array();
    for (const auto& ev : caption_events(models, props, decode)) {
      nlohmann::ordered_json e;
      e["t_start"] = ev.t_start;
      e["t_end"] = ev.t_end;
      if (ev.ok()) {
        e["caption"] = ckpts[0].vocab.decode(ev.tokens);
      } else {
        e["error"] = ev.error;
        ++n_failed;
      }
      events.push_back(std::move(e));
      ++n_events;
    }
    nlohmann::ordered_json line;
    line["video_id"] = vid;
    line["events"] = std::move(events);
    file << line.dump() << '\n';
  }
  out << "captioned " << idx.order.size() << " videos, " << n_events << " events";
  if (n_failed) out << ", " << n_failed << " failed";
  out << " -> " << options.out.string() << '\n';
}

// ---------------------------------------------------------------------------

void cmd_eval(const EvalOptions& options, std::ostream& out) {
  std::vector<metrics::EvalPair> pairs;

  if (options.pairs) {
    if (options.candidates || options.references) {
      throw ConfigError("use either --pairs or --candidates with --references");
    }
    read_jsonl(*options.pairs, [&](const json& j, std::size_t line) {
      metrics::EvalPair p;
      p.id = j.contains("id") ? j.at("id").get<std::string>() : std::to_string(line);
      p.candidate = j.at("candidate").get<std::string>();
      p.references = j.at("references").get<std::vector<std::string>>();
      if (p.references.empty()) {
        throw DataError(options.pairs->string() + ": no references", line);
      }
      pairs.push_back(std::move(p));
    });
    if (pairs.empty()) throw DataError(options.pairs->string() + " has no pairs");
  } else {
    if (!options.candidates || !options.references) {
      throw ConfigError("eval needs --pairs, or both --candidates and --references");
    }
    std::vector<std::pair<std::string, std::string>> cands;
    std::set<std::string> seen;
    read_jsonl(*options.candidates, [&](const json& j, std::size_t line) {
      const auto id = j.at("video_id").get<std::string>();
      std::string text;
      if (j.contains("caption")) {
        text = j.at("caption").get<std::string>();
      } else {
        const auto& events = j.at("events");
        if (!events.empty() && events.at(0).contains("caption")) text = events.at(0).at("caption").get<std::string>();
      }
      if (!seen.insert(id).second) {
        throw DataError(options.candidates->string() + ": duplicate id " + id, line);
      }
      cands.emplace_back(id, std::move(text));
    });
    if (cands.empty()) throw DataError(options.candidates->string() + " has no candidates");

    std::map<std::string, std::vector<std::string>> refs;
    for (auto& c : load_captions(*options.references)) refs[c.video_id].push_back(std::move(c.caption));

    std::vector<std::string> no_refs, no_cand;
    for (const auto& [id, text] : cands) {
      if (!refs.count(id)) no_refs.push_back(id);
    }
    for (const auto& [id, r] : refs) {
      if (!seen.count(id)) no_cand.push_back(id);
    }
    if (!no_refs.empty()) throw DataError("candidates without references: " + join(no_refs));
    if (!no_cand.empty()) throw DataError("references without candidates: " + join(no_cand));

    for (auto& [id, text] : cands) pairs.push_back(metrics::EvalPair{id, std::move(text), refs.at(id)});
  }

  const metrics::MetricReport report = metrics::evaluate(pairs);
  const std::string body = report.to_json();
  if (options.out) {
    auto f = open_out(*options.out);
    f << body << '\n';
  }
  out << body << '\n' << report.table(options.label);
}

}  // namespace lstmt
