#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "mtn/features.hpp"

namespace mtn {

// Deterministic desk-scale corpus: dialogues whose answers are functions of
// fixed query templates and of feature patterns planted in the video
// features. The sign of each modality's first feature row decides a keyword
// in the matching answer, so those turns are unanswerable from text alone.
struct SynthCorpus {
    nlohmann::json dataset;  // dialogue JSON schema
    FeatureStore features;
};

SynthCorpus synth_corpus(uint64_t seed, int64_t n_dialogues, int64_t grammar_size);

// Writes <dir>/dialogues.json and <dir>/features/<modality>/<video_id>.mtnf.
void write_synth(const SynthCorpus& corpus, const std::string& dir);

// Keywords planted per modality, exposed for the grounding checks.
const char* synth_visual_keyword(bool positive);  // "bright" / "dark"
const char* synth_audio_keyword(bool positive);   // "loud" / "quiet"

// Modality geometry of the generated features.
inline constexpr int64_t kSynthAudioDim = 8;
inline constexpr int64_t kSynthVisualDim = 16;
inline constexpr int64_t kSynthTurns = 5;

}  // namespace mtn
