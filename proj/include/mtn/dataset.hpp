#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mtn/features.hpp"
#include "mtn/vocab.hpp"

namespace mtn {

// One (question, answer) history turn, as token ids.
struct HistoryTurn {
    std::vector<int32_t> question;
    std::vector<int32_t> answer;
};

// One training/eval unit: turn t of one dialogue.
struct DialogueExample {
    std::string video_id;
    int64_t turn = 1;                        // 1-based turn index
    std::vector<int32_t> caption;            // caption and summary concatenated
    std::vector<HistoryTurn> history;        // most recent turns, oldest first
    std::vector<int32_t> query;
    std::vector<int32_t> target;             // <sos> ... <eos>
    std::vector<std::vector<int32_t>> candidates;  // ranking mode, unwrapped
};

// History turns flattened to a single stream: q <eos> a <eos> ...
std::vector<int32_t> history_stream(const DialogueExample& ex);

// Tokenized but not yet id-mapped dialogue file contents.
struct RawTurn {
    std::vector<std::string> question;
    std::vector<std::string> answer;
    std::vector<std::vector<std::string>> candidates;
};
struct RawDialogue {
    std::string video_id;
    std::vector<std::string> caption;  // caption + summary tokens
    std::vector<RawTurn> turns;
};

// Parses the dialogue JSON schema:
// {"dialogs": [{"video_id", "caption", "summary",
//               "dialog": [{"question", "answer", "candidates"?}]}]}
std::vector<RawDialogue> load_dialogs(const std::string& path);

// Every token stream of the corpus, for vocabulary building.
std::vector<std::vector<std::string>> corpus_streams(const std::vector<RawDialogue>& dialogs);

// Expands dialogues into per-turn examples: turn t carries the most recent
// min(t-1, max_history) turns as history and an <sos>/<eos>-wrapped target.
std::vector<DialogueExample> make_examples(const std::vector<RawDialogue>& dialogs,
                                           const Vocabulary& vocab, int64_t max_history);

std::vector<DialogueExample> load_dataset(const std::string& path, const Vocabulary& vocab,
                                          int64_t max_history);

// Padded id matrix for one stream of a batch.
struct PaddedIds {
    int64_t rows = 0;
    int64_t cols = 0;                 // chunk maximum length (>= 1)
    std::vector<int32_t> ids;         // row-major, <pad> beyond each row's length
    std::vector<int64_t> lengths;

    std::vector<int32_t> row(int64_t r) const {
        const auto* base = ids.data() + r * cols;
        return std::vector<int32_t>(base, base + lengths[static_cast<size_t>(r)]);
    }
};

// Stacked per-modality features with row-count padding masks.
struct FeatureBlock {
    std::string modality;
    int64_t max_rows = 0;
    int64_t dim = 0;
    std::vector<float> data;          // [batch x max_rows x dim], zero padded
    std::vector<int64_t> rows;        // true row count per example

    std::vector<float> example(int64_t i) const {
        const auto* base = data.data() + i * max_rows * dim;
        return std::vector<float>(base, base + rows[static_cast<size_t>(i)] * dim);
    }
};

struct Batch {
    std::vector<int64_t> example_idx;  // into the source example list
    std::vector<std::string> video_ids;
    std::vector<int64_t> turns;
    PaddedIds history;                 // flattened history streams
    PaddedIds caption;
    PaddedIds query;
    PaddedIds target;
    std::vector<FeatureBlock> features;

    int64_t size() const { return static_cast<int64_t>(example_idx.size()); }
};

// Sorts examples by (history length, caption length, query length, target
// length), chunks them, and shuffles the chunk order. Padding is applied per
// stream to the chunk maximum. When a feature store is given, per-modality
// blocks are stacked into each batch.
std::vector<Batch> make_batches(const std::vector<DialogueExample>& examples, int64_t batch_size,
                                std::mt19937& rng, const FeatureStore* store = nullptr);

}  // namespace mtn
