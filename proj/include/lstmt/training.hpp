#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lstmt/data_io.hpp"
#include "lstmt/model.hpp"

namespace lstmt {

enum class OptimizerKind { sgd, adam };
enum class RewardMetric { cider_d, bleu4, meteor_lite };

std::string to_string(OptimizerKind k);
std::string to_string(RewardMetric m);
OptimizerKind parse_optimizer(const std::string& s);
RewardMetric parse_reward(const std::string& s);

struct TrainConfig {
  double learning_rate = 4e-4;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 16;
  std::size_t epochs = 10;
  double grad_clip_norm = 5.0;
  std::uint64_t seed = 0;
  bool scst_enabled = false;
  RewardMetric scst_reward = RewardMetric::cider_d;
  /// Self-critical epochs run after the cross-entropy epochs.
  std::size_t scst_epochs = 0;
  double scst_learning_rate = 5e-5;

  void validate() const;
};

struct TrainingExample {
  std::string video_id;
  /// One entry per available stream.
  std::vector<FeatureSequence> streams;
  /// BOS ... EOS. PAD targets are ignored by the loss.
  std::vector<TokenId> caption;
  /// All reference captions of the video, for sentence rewards.
  std::vector<std::string> references;

  /// Throws DataError when the stream is missing.
  const FeatureSequence& features(Stream s) const;
};

/// Joins features and captions by video id: one example per caption line.
/// Videos without features are a DataError; features without captions are skipped.
std::vector<TrainingExample> make_examples(std::span<const FeatureSequence> features,
                                           std::span<const CaptionRecord> captions, const Vocabulary& vocab);

// ---- losses ----------------------------------------------------------------

/// Teacher-forced mean negative log-likelihood over the non-PAD targets of
/// `caption`, recorded on the tape of `p`.
Var xe_loss(const BoundParams& p, const Tensor& features, std::span<const TokenId> caption);

double xe_loss(const CaptionerParams& params, const TrainingExample& example, Stream stream);

/// Mean of the examples' losses, as one tape expression.
double batch_xe_loss(const CaptionerParams& params, std::span<const TrainingExample> batch, Stream stream);

struct LossAndGrad {
  double loss = 0.0;
  CaptionerParams grads;
};

LossAndGrad xe_loss_and_grad(const CaptionerParams& params, const TrainingExample& example, Stream stream);

/// Total NLL over total counted targets across the corpus.
double corpus_token_loss(const CaptionerParams& params, std::span<const TrainingExample> corpus, Stream stream);

// ---- optimisation ----------------------------------------------------------

double global_norm(const CaptionerParams& grads);
/// Scales every gradient by max_norm / norm when the global L2 norm exceeds max_norm.
CaptionerParams clip_gradients(CaptionerParams grads, double max_norm);

class Optimizer {
 public:
  Optimizer(const TrainConfig& config, const CaptionerParams& like);
  void step(CaptionerParams& params, const CaptionerParams& grads, double learning_rate);

 private:
  TrainConfig config_;
  CaptionerParams m_, v_;
  std::size_t t_ = 0;
};

// ---- self-critical fine-tuning -----------------------------------------------

/// Reward of generated ids (BOS excluded, EOS possibly included) for an example.
using RewardFn = std::function<double(std::span<const TokenId>, const TrainingExample&)>;

/// Sentence-level metric against the example's references. CIDEr-D takes its
/// document frequencies from the references of `corpus`.
RewardFn make_reward(RewardMetric metric, const Vocabulary& vocab, std::span<const TrainingExample> corpus);

struct ScstResult {
  double pseudo_loss = 0.0;
  CaptionerParams grads;
  std::vector<TokenId> sample;
  std::vector<TokenId> baseline;
  double sample_reward = 0.0;
  double baseline_reward = 0.0;
};

/// Draws one caption from the model's generation distribution, decodes the
/// greedy baseline, and returns
///   pseudo_loss = -(r(sample) - r(greedy)) · Σ_t log p(sample_t)
/// with its gradient.
ScstResult scst_step(const CaptionerParams& params, const TrainingExample& example, Stream stream,
                     const RewardFn& reward, std::mt19937_64& rng);

/// Sum of generation log-probs of `generated` (BOS excluded) on the tape of `p`.
Var sequence_log_prob(const BoundParams& p, const Tensor& features, std::span<const TokenId> generated);

// ---- driver --------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  std::string split;  // "train" or "scst"
  double loss = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  CaptionerParams params;
  std::vector<double> loss_history;  // mean example loss per XE epoch
  std::vector<double> scst_history;  // mean baseline reward per SCST epoch
  double final_loss = 0.0;           // corpus_token_loss after training
};

/// Deterministic for a fixed config.seed. `on_epoch` may be empty.
/// `vocab` is only needed when SCST is enabled.
TrainResult train(CaptionerParams params, std::span<const TrainingExample> corpus, const TrainConfig& config,
                  Stream stream, const Vocabulary* vocab = nullptr,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace lstmt
