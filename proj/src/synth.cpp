#include "mtn/synth.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <vector>

#include "mtn/error.hpp"

namespace mtn {

namespace {

const std::vector<std::string> kVerbs = {"walking", "cooking", "reading",  "sitting", "standing",
                                         "cleaning", "sleeping", "talking", "eating",  "dancing"};

std::string video_name(int64_t d) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "vid%04d", static_cast<int>(d));
    return buf;
}

ModalityFeatures planted_features(const std::string& modality, int64_t rows, int64_t cols,
                                  bool positive, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> noise(-1.0, 1.0);
    std::uniform_real_distribution<double> planted(0.25, 1.0);
    ModalityFeatures f;
    f.modality = modality;
    f.rows = rows;
    f.cols = cols;
    f.data.resize(static_cast<size_t>(rows * cols));
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t c = 0; c < cols; ++c) {
            double v;
            if (r == 0) {
                v = planted(rng);
                if (!positive) v = -v;
            } else {
                v = noise(rng);
            }
            f.data[static_cast<size_t>(r * cols + c)] = static_cast<float>(v);
        }
    return f;
}

}  // namespace

const char* synth_visual_keyword(bool positive) { return positive ? "bright" : "dark"; }
const char* synth_audio_keyword(bool positive) { return positive ? "loud" : "quiet"; }

SynthCorpus synth_corpus(uint64_t seed, int64_t n_dialogues, int64_t grammar_size) {
    if (n_dialogues < 1) throw ContractError("n_dialogues must be >= 1");
    const int64_t verbs = std::clamp<int64_t>(grammar_size, 1,
                                              static_cast<int64_t>(kVerbs.size()));
    std::mt19937_64 rng(seed);

    SynthCorpus out;
    nlohmann::json dialogs = nlohmann::json::array();
    std::vector<std::string> answer_pool;
    answer_pool.push_back("the scene looks bright");
    answer_pool.push_back("the scene looks dark");
    answer_pool.push_back("it sounds loud");
    answer_pool.push_back("it sounds quiet");
    for (int64_t v = 0; v < verbs; ++v)
        answer_pool.push_back("the person is " + kVerbs[static_cast<size_t>(v)]);
    answer_pool.push_back("no that is everything");

    for (int64_t d = 0; d < n_dialogues; ++d) {
        const bool bright = d % 2 == 1;
        const bool loud = (d / 2) % 2 == 1;
        const std::string& verb = kVerbs[static_cast<size_t>((d / 4) % verbs)];

        const std::string video = video_name(d);
        out.features.put(video, planted_features("audio", 4 + d % 3, kSynthAudioDim, loud, rng));
        out.features.put(video,
                         planted_features("visual", 4 + (d + 1) % 3, kSynthVisualDim, bright, rng));

        const std::string kw_v = synth_visual_keyword(bright);
        const std::string kw_a = synth_audio_keyword(loud);
        const std::vector<std::pair<std::string, std::string>> turns = {
            {"does the scene look bright or dark ?", "the scene looks " + kw_v},
            {"does the video sound loud or quiet ?", "it sounds " + kw_a},
            {"what is the person doing ?", "the person is " + verb},
            {"is there anything else happening ?", "no that is everything"},
            {"can you repeat what the scene looks like ?", "the scene looks " + kw_v},
        };

        nlohmann::json dialog = nlohmann::json::array();
        for (const auto& [question, answer] : turns) {
            // gold plus nine distractors from the answer pool, gold position random
            std::vector<std::string> distractors;
            std::vector<std::string> available;
            for (const auto& a : answer_pool)
                if (a != answer) available.push_back(a);
            while (distractors.size() < 9) {
                if (available.empty()) {
                    for (const auto& a : answer_pool)
                        if (a != answer) available.push_back(a);
                }
                std::uniform_int_distribution<size_t> pick(0, available.size() - 1);
                const size_t i = pick(rng);
                distractors.push_back(available[i]);
                available.erase(available.begin() + static_cast<int64_t>(i));
            }
            std::uniform_int_distribution<size_t> slot(0, distractors.size());
            std::vector<std::string> candidates = distractors;
            candidates.insert(candidates.begin() + static_cast<int64_t>(slot(rng)), answer);
            dialog.push_back({{"question", question},
                              {"answer", answer},
                              {"candidates", candidates}});
        }
        dialogs.push_back({{"video_id", video},
                           {"caption", "a person is " + verb + " in the room"},
                           {"summary", "the video shows a person " + verb},
                           {"dialog", dialog}});
    }
    out.dataset = nlohmann::json{{"dialogs", dialogs}};
    return out;
}

void write_synth(const SynthCorpus& corpus, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream out(fs::path(dir) / "dialogues.json");
    if (!out) throw DataError("cannot write " + dir + "/dialogues.json");
    out << corpus.dataset.dump(2) << "\n";
    corpus.features.write_dir((fs::path(dir) / "features").string());
}

}  // namespace mtn
