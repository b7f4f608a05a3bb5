// lstmt: gen-toy | train | caption | eval
//
// Exit codes: 0 ok, 1 usage or config, 2 data, 3 numeric failure.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lstmt/commands.hpp"
#include "lstmt/errors.hpp"

namespace {

enum Exit { ok = 0, usage = 1, data = 2, numeric = 3 };

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", sets, "Override a config key, key=value (repeatable)");
    cmd->add_option("--seed", seed, "Shorthand for --set seed=N");
  }

  lstmt::RunConfig resolve() const {
    lstmt::RunConfig cfg;
    if (!config_file.empty()) cfg.load_file(config_file);
    for (const auto& s : sets) cfg.set_assignment(s);
    if (seed) cfg.train.seed = *seed;
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention LSTM video captioner"};
  app.require_subcommand(1);

  lstmt::GenToyOptions toy;
  std::string toy_out;
  auto* gen = app.add_subcommand("gen-toy", "Write a synthetic corpus");
  gen->add_option("--seed", toy.toy.seed);
  gen->add_option("--videos", toy.toy.n_videos)->check(CLI::PositiveNumber);
  gen->add_option("--vocab", toy.toy.vocab_size, "Vocabulary size including the 4 reserved tokens");
  gen->add_option("--k-min", toy.toy.k_min);
  gen->add_option("--k-max", toy.toy.k_max);
  gen->add_option("--d-v", toy.toy.d_v);
  gen->add_option("--out", toy_out, "Output directory")->required();

  Common train_common;
  lstmt::TrainOptions tr;
  std::string tr_features, tr_captions, tr_out, tr_log, tr_stream = "rgb";
  auto* train = app.add_subcommand("train", "Train one stream's captioner");
  train_common.attach(train);
  train->add_option("--features", tr_features)->required();
  train->add_option("--captions", tr_captions)->required();
  train->add_option("--stream", tr_stream)->check(CLI::IsMember({"rgb", "flow"}));
  train->add_option("--out", tr_out, "Checkpoint path")->required();
  train->add_option("--log", tr_log, "JSONL training log");

  Common cap_common;
  lstmt::CaptionOptions cap;
  std::vector<std::string> cap_models;
  std::string cap_features, cap_proposals, cap_out;
  auto* caption = app.add_subcommand("caption", "Caption videos or proposals");
  cap_common.attach(caption);
  caption->add_option("--model", cap_models, "Checkpoint (repeat to fuse models)")->required();
  caption->add_option("--features", cap_features)->required();
  caption->add_option("--proposals", cap_proposals);
  caption->add_option("--out", cap_out)->required();

  lstmt::EvalOptions ev;
  std::string ev_pairs, ev_cands, ev_refs, ev_out;
  auto* eval = app.add_subcommand("eval", "Score candidate captions");
  eval->add_option("--pairs", ev_pairs);
  eval->add_option("--candidates", ev_cands);
  eval->add_option("--references", ev_refs);
  eval->add_option("--out", ev_out, "Write the JSON report here");
  eval->add_option("--label", ev.label);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? ok : usage;
  }

  try {
    if (*gen) {
      toy.out_dir = toy_out;
      lstmt::cmd_gen_toy(toy, std::cout);
    } else if (*train) {
      tr.config = train_common.resolve();
      tr.features = tr_features;
      tr.captions = tr_captions;
      tr.stream = lstmt::parse_stream(tr_stream);
      tr.out = tr_out;
      if (!tr_log.empty()) tr.log = tr_log;
      lstmt::cmd_train(tr, std::cout);
    } else if (*caption) {
      cap.config = cap_common.resolve();
      for (const auto& m : cap_models) cap.models.emplace_back(m);
      cap.features = cap_features;
      if (!cap_proposals.empty()) cap.proposals = cap_proposals;
      cap.out = cap_out;
      lstmt::cmd_caption(cap, std::cout);
    } else if (*eval) {
      if (!ev_pairs.empty()) ev.pairs = ev_pairs;
      if (!ev_cands.empty()) ev.candidates = ev_cands;
      if (!ev_refs.empty()) ev.references = ev_refs;
      if (!ev_out.empty()) ev.out = ev_out;
      lstmt::cmd_eval(ev, std::cout);
    }
  } catch (const lstmt::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return numeric;
  } catch (const lstmt::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return usage;
  } catch (const lstmt::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return data;
  } catch (const lstmt::CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return data;
  } catch (const lstmt::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return data;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return data;
  }
  return ok;
}
