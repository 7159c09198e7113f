#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtn/dataset.hpp"
#include "mtn/model.hpp"

namespace mtn {

struct TrainConfig {
    int64_t epochs = 17;
    int64_t max_steps = 0;        // 0 = bounded by epochs only
    int64_t warmup_steps = 9660;
    double label_smoothing = 0.1;
    double sim_probability = 0.5;
    int64_t batch_size = 32;
    uint64_t seed = 1;
    std::string checkpoint_dir;   // empty = keep checkpoints in memory only
    int64_t validate_every = 500; // steps between validation/checkpoint points
    double clip_norm = 5.0;
    double early_stop_ppl = 0.0;  // 0 = off; stop once validation ppl drops this low
};

// Keeps the first i tokens at a uniformly random crop point i in {2..L-1},
// with probability p; sequences of length <= 3 pass through unchanged.
std::vector<int32_t> crop_target(const std::vector<int32_t>& target_ids, double p,
                                 std::mt19937& rng);

// Deterministic core of crop_target.
std::vector<int32_t> crop_at(const std::vector<int32_t>& target_ids, int64_t i);

// Applies crop_target to every target row of a batch in place.
void crop_batch_targets(Batch& batch, double p, std::mt19937& rng);

struct LossBreakdown {
    Tensor total;              // scalar, recorded on the tape
    double response_loss = 0;  // label-smoothed CE over offset targets
    double query_loss = 0;     // regeneration CE, when the variant has a QAE head
    bool has_query = false;
};

// Joint objective: response cross-entropy plus, for variants with a query
// head, the regeneration cross-entropy. Targets are expected already cropped;
// the offset by one happens here. Pad positions contribute nothing.
LossBreakdown compute_loss(const Batch& batch, MtnModel& model, double label_smoothing);

// exp(mean token NLL) over uncropped targets, label smoothing off.
double perplexity(MtnModel& model, const std::vector<DialogueExample>& examples,
                  const FeatureStore& features, int64_t batch_size);

struct ValidationRecord {
    int64_t step = 0;
    double ppl = 0;
    std::string checkpoint_path;  // empty when checkpointing is off
};

struct TrainResult {
    std::vector<ValidationRecord> history;
    std::string best_path;
    double best_ppl = 0;
    int64_t steps = 0;
    bool early_stopped = false;
    std::vector<double> step_losses;
    std::vector<double> applied_lrs;  // applied_lrs[s-1] is the rate used at step s
};

// Per step: batch assembly, target cropping, forward, joint loss, backward,
// gradient clipping, Adam with the warmup schedule. Validation perplexity and
// a checkpoint are produced every validate_every steps and at the end; the
// lowest-perplexity checkpoint (latest among ties) is tracked as best.
TrainResult train(const std::vector<DialogueExample>& train_set, const FeatureStore& features,
                  const TrainConfig& cfg, MtnModel& model, const Vocabulary& vocab,
                  const std::vector<DialogueExample>* val_set = nullptr,
                  std::ostream* log = nullptr,
                  const nlohmann::json& config_echo = nlohmann::json::object());

// ---- inference ----

struct BeamConfig {
    int64_t beam_size = 5;
    double length_penalty = 1.0;  // score = sum log-prob / length^alpha
    int64_t max_len = 30;
};

// Next-token log-probabilities given the running prefix (starting <sos>).
using StepScorer = std::function<std::vector<double>(const std::vector<int32_t>& prefix)>;

struct BeamResult {
    std::vector<int32_t> ids;  // <sos>/<eos> stripped
    double score = 0;
};

BeamResult beam_search_core(const StepScorer& next_log_probs, int64_t vocab_size,
                            const BeamConfig& cfg);

std::vector<int32_t> beam_search(MtnModel& model, const DialogueExample& ex,
                                 const FeatureStore& features, const BeamConfig& cfg);

std::vector<int32_t> greedy_decode(MtnModel& model, const DialogueExample& ex,
                                   const FeatureStore& features, int64_t max_len);

// Candidates scored by length-normalized teacher-forced log-likelihood;
// descending order, ties keep the original index order.
std::vector<int64_t> rank_candidates(MtnModel& model, const DialogueExample& ex,
                                     const FeatureStore& features,
                                     const std::vector<std::vector<int32_t>>& candidates);

// Teacher-forced mean token log-probability of a wrapped target sequence.
double sequence_log_likelihood(MtnModel& model, const DialogueExample& ex,
                               const FeatureStore& features,
                               const std::vector<int32_t>& answer_ids);

}  // namespace mtn
