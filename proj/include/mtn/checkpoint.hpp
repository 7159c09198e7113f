#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtn/model.hpp"
#include "mtn/optim.hpp"
#include "mtn/vocab.hpp"

namespace mtn {

// Checkpoint archive: <dir>/manifest.json holding the config echo, the
// vocabulary, step counters, and a tensor index {name, shape, byte_offset};
// <dir>/params.bin holding the concatenated little-endian f32 payloads.
struct CheckpointData {
    nlohmann::json config;        // run-config echo, stored verbatim
    nlohmann::json model;         // architecture block written at save time
    std::vector<std::string> vocab;
    int64_t global_step = 0;
    int64_t adam_step_count = 0;

    struct TensorEntry {
        std::string name;
        Shape shape;
        std::vector<float> data;
    };
    std::vector<TensorEntry> tensors;

    const TensorEntry* find(const std::string& name) const;
};

void save_checkpoint(const std::string& dir, MtnModel& model, const AdamStateT<float>* adam,
                     const Vocabulary& vocab, const nlohmann::json& config, int64_t global_step);

CheckpointData load_checkpoint(const std::string& dir);

// Copies parameter payloads into the model by name; every model parameter
// must be present with a matching shape.
void restore_model(MtnModel& model, const CheckpointData& data);

void restore_adam(AdamStateT<float>& state, ParamRegistry<float>& params,
                  const CheckpointData& data);

// Rebuilds the architecture description stored in a checkpoint's model block.
ModelConfig model_config_from_checkpoint(const CheckpointData& data);
uint64_t model_seed_from_checkpoint(const CheckpointData& data);

}  // namespace mtn
