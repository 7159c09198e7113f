#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtn/engine.hpp"
#include "mtn/model.hpp"

namespace mtn {

// Flat dotted-key run configuration: model + training + inference + paths.
// Every field has a default; parse -> serialize -> parse is a fixpoint.
struct RunConfig {
    // model.*
    int64_t layers = 6;
    int64_t heads = 8;
    int64_t d_model = 512;
    int64_t d_ff = 2048;
    double dropout = 0.1;
    std::string variant = "full";
    std::vector<std::string> modalities = {"audio:128", "visual:2048"};  // name:dim
    bool positional_features = true;
    int64_t max_history = 10;
    bool qae_causal = false;

    // train.*
    int64_t epochs = 17;
    int64_t max_steps = 0;
    int64_t warmup_steps = 9660;
    double label_smoothing = 0.1;
    double sim_probability = 0.5;
    int64_t batch_size = 32;
    int64_t seed = 1;
    int64_t validate_every = 500;
    int64_t min_freq = 2;
    double clip_norm = 5.0;
    double early_stop_ppl = 0.0;

    // infer.*
    int64_t beam_size = 5;
    double length_penalty = 1.0;
    int64_t max_len = 30;

    // data.*
    std::string dataset;
    std::string val_dataset;
    std::string features_dir;
    std::string checkpoint_dir = "checkpoints";
    std::string output = "out.jsonl";

    static RunConfig from_json(const nlohmann::json& flat);
    static RunConfig load(const std::string& path);
    nlohmann::json to_json() const;

    // Applies "key=value" overrides on top of the current values.
    void apply_overrides(const std::vector<std::string>& overrides);

    ModelConfig model_config(int64_t vocab_size) const;
    TrainConfig train_config() const;
    BeamConfig beam_config() const;
};

}  // namespace mtn
