#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "mtn/dataset.hpp"
#include "mtn/error.hpp"
#include "mtn/synth.hpp"
#include "mtn/tokenize.hpp"
#include "mtn/vocab.hpp"

namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    static int counter = 0;
    auto dir = fs::temp_directory_path() / ("mtn_data_test_" + std::to_string(counter++));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
    return path.string();
}

std::vector<char> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("tokenize detaches punctuation and lowercases") {
    CHECK(mtn::tokenize("A man stands.") ==
          std::vector<std::string>{"a", "man", "stands", "."});
    CHECK(mtn::tokenize("").empty());
    CHECK(mtn::tokenize("  \t\n ").empty());
    CHECK(mtn::tokenize("Hello, (world)!?") ==
          std::vector<std::string>{"hello", ",", "(", "world", ")", "!", "?"});
    CHECK(mtn::tokenize("it's a \"test\": yes; no") ==
          std::vector<std::string>{"it's", "a", "\"", "test", "\"", ":", "yes", ";", "no"});
}

TEST_CASE("tokenize is idempotent on its own output") {
    for (const char* text : {"A man stands.", "Hello, (world)!?", "one  two   three"}) {
        const auto once = mtn::tokenize(text);
        CHECK(mtn::tokenize(mtn::detokenize(once)) == once);
    }
}

TEST_CASE("vocabulary build respects frequency threshold and ordering") {
    const std::vector<std::vector<std::string>> corpus = {{"a", "b", "a"}, {"b", "c"}};
    auto v = mtn::Vocabulary::build(corpus, 2);
    CHECK(v.size() == 6);  // 4 reserved + {a, b}
    CHECK(v.id_of("a") == 4);
    CHECK(v.id_of("b") == 5);
    CHECK(v.id_of("c") == mtn::Vocabulary::kUnk);

    auto v1 = mtn::Vocabulary::build(corpus, 1);
    CHECK(v1.size() == 7);
    CHECK(v1.contains("c"));

    CHECK(v.token_of(0) == "<pad>");
    CHECK(v.token_of(1) == "<sos>");
    CHECK(v.token_of(2) == "<eos>");
    CHECK(v.token_of(3) == "<unk>");
}

TEST_CASE("vocabulary ids round-trip") {
    std::vector<std::vector<std::string>> corpus = {
        {"cat", "dog", "cat", "bird", "dog", "cat"}};
    auto v = mtn::Vocabulary::build(corpus, 1);
    for (int32_t id = 0; id < v.size(); ++id) CHECK(v.id_of(v.token_of(id)) == id);
    auto rebuilt = mtn::Vocabulary::from_tokens(v.tokens());
    CHECK(rebuilt.size() == v.size());
    for (int32_t id = 0; id < v.size(); ++id) CHECK(rebuilt.token_of(id) == v.token_of(id));
}

TEST_CASE("dialogue loading expands turns with truncated history") {
    nlohmann::json turns = nlohmann::json::array();
    for (int t = 1; t <= 10; ++t)
        turns.push_back({{"question", "question number " + std::to_string(t)},
                         {"answer", "answer number " + std::to_string(t)}});
    nlohmann::json doc = {
        {"dialogs",
         {{{"video_id", "vidA"}, {"caption", "a person cooks"}, {"summary", "cooking video"},
           {"dialog", turns}}}}};
    const auto dir = temp_dir();
    const auto path = write_file(dir / "data.json", doc.dump());

    auto dialogs = mtn::load_dialogs(path);
    REQUIRE(dialogs.size() == 1);
    auto vocab = mtn::Vocabulary::build(mtn::corpus_streams(dialogs), 1);

    auto examples = mtn::make_examples(dialogs, vocab, 3);
    REQUIRE(examples.size() == 10);
    CHECK(examples[0].history.empty());
    CHECK(examples[0].turn == 1);
    CHECK(examples[1].history.size() == 1);
    CHECK(examples[9].history.size() == 3);  // capped
    // caption holds caption + summary tokens
    CHECK(examples[0].caption.size() == 5);
    // targets wrapped in <sos>/<eos>
    for (const auto& ex : examples) {
        CHECK(ex.target.front() == mtn::Vocabulary::kSos);
        CHECK(ex.target.back() == mtn::Vocabulary::kEos);
    }

    auto one_turn = mtn::make_examples(dialogs, vocab, 1);
    for (const auto& ex : one_turn) CHECK(ex.history.size() <= 1);

    // most recent turns are kept, oldest first
    const auto& h9 = examples[9].history;
    CHECK(h9.front().question == vocab.encode(mtn::tokenize("question number 7")));
    CHECK(h9.back().question == vocab.encode(mtn::tokenize("question number 9")));
}

TEST_CASE("history stream joins turns with <eos> delimiters") {
    mtn::DialogueExample ex;
    ex.history.push_back({{10, 11}, {12}});
    ex.history.push_back({{13}, {14, 15}});
    CHECK(mtn::history_stream(ex) ==
          std::vector<int32_t>{10, 11, mtn::Vocabulary::kEos, 12, mtn::Vocabulary::kEos, 13,
                               mtn::Vocabulary::kEos, 14, 15, mtn::Vocabulary::kEos});
}

TEST_CASE("malformed dialogue files report the failing dialogue") {
    const auto dir = temp_dir();
    const auto bad_json = write_file(dir / "bad.json", "{ not json");
    CHECK_THROWS_AS(mtn::load_dialogs(bad_json), mtn::DataError);

    nlohmann::json doc = {{"dialogs",
                           {{{"video_id", "v0"}, {"caption", "c"}, {"summary", "s"},
                             {"dialog", nlohmann::json::array({{{"question", "q"}}})}}}}};
    const auto missing = write_file(dir / "missing.json", doc.dump());
    CHECK_THROWS_WITH_AS(mtn::load_dialogs(missing), doctest::Contains("dialogue 0"),
                         mtn::DataError);
}

TEST_CASE("feature files round-trip bit-exactly") {
    const auto dir = temp_dir();
    mtn::ModalityFeatures f;
    f.modality = "audio";
    f.rows = 3;
    f.cols = 4;
    std::mt19937 rng(7);
    std::uniform_real_distribution<float> dist(-2, 2);
    f.data.resize(12);
    for (auto& v : f.data) v = dist(rng);

    const auto path = (dir / "a.mtnf").string();
    mtn::save_features(path, f);
    auto loaded = mtn::load_features(path);
    CHECK(loaded.rows == 3);
    CHECK(loaded.cols == 4);
    for (size_t i = 0; i < f.data.size(); ++i) CHECK(loaded.data[i] == f.data[i]);

    const auto path2 = (dir / "b.mtnf").string();
    loaded.modality = "audio";
    mtn::save_features(path2, loaded);
    CHECK(read_bytes(path) == read_bytes(path2));
}

TEST_CASE("a 1x1 zero feature file parses to the zero matrix") {
    const auto dir = temp_dir();
    mtn::ModalityFeatures f{"visual", 1, 1, {0.0f}};
    const auto path = (dir / "zero.mtnf").string();
    mtn::save_features(path, f);
    auto loaded = mtn::load_features(path);
    CHECK(loaded.rows == 1);
    CHECK(loaded.cols == 1);
    CHECK(loaded.data[0] == 0.0f);
}

TEST_CASE("corrupt feature files are rejected with a byte offset") {
    const auto dir = temp_dir();
    mtn::ModalityFeatures f{"audio", 2, 3, {1, 2, 3, 4, 5, 6}};
    const auto good = (dir / "good.mtnf").string();
    mtn::save_features(good, f);

    auto bytes = read_bytes(good);
    // truncate mid payload: declared rows*cols exceeds what is stored
    {
        std::ofstream out(dir / "short.mtnf", std::ios::binary);
        out.write(bytes.data(), static_cast<int64_t>(bytes.size()) - 6);
    }
    CHECK_THROWS_WITH_AS(mtn::load_features((dir / "short.mtnf").string()),
                         doctest::Contains("byte offset"), mtn::DataError);

    auto magic = bytes;
    magic[0] = 'X';
    {
        std::ofstream out(dir / "magic.mtnf", std::ios::binary);
        out.write(magic.data(), static_cast<int64_t>(magic.size()));
    }
    CHECK_THROWS_WITH_AS(mtn::load_features((dir / "magic.mtnf").string()),
                         doctest::Contains("bad magic"), mtn::DataError);

    auto extra = bytes;
    extra.push_back('\0');
    {
        std::ofstream out(dir / "extra.mtnf", std::ios::binary);
        out.write(extra.data(), static_cast<int64_t>(extra.size()));
    }
    CHECK_THROWS_AS(mtn::load_features((dir / "extra.mtnf").string()), mtn::DataError);
}

TEST_CASE("batching partitions the corpus with chunk-local padding") {
    std::vector<mtn::DialogueExample> examples(100);
    std::mt19937 gen(3);
    std::uniform_int_distribution<int> len(1, 9);
    for (size_t i = 0; i < examples.size(); ++i) {
        auto& ex = examples[i];
        ex.video_id = "v" + std::to_string(i);
        ex.caption.assign(static_cast<size_t>(len(gen)), 5);
        ex.query.assign(static_cast<size_t>(len(gen)), 6);
        ex.target.push_back(mtn::Vocabulary::kSos);
        for (int t = 0; t < len(gen); ++t) ex.target.push_back(7);
        ex.target.push_back(mtn::Vocabulary::kEos);
    }
    std::mt19937 rng(11);
    auto batches = mtn::make_batches(examples, 32, rng);
    REQUIRE(batches.size() == 4);
    std::multiset<int64_t> sizes;
    std::multiset<int64_t> seen;
    for (const auto& b : batches) {
        sizes.insert(b.size());
        for (int64_t idx : b.example_idx) seen.insert(idx);
        for (int64_t i = 0; i < b.size(); ++i) {
            const auto& ex = examples[static_cast<size_t>(b.example_idx[static_cast<size_t>(i)])];
            CHECK(b.caption.row(i) == ex.caption);
            CHECK(b.query.row(i) == ex.query);
            CHECK(b.target.row(i) == ex.target);
            // pad never appears before the true end
            for (int64_t c = 0; c < b.target.lengths[static_cast<size_t>(i)]; ++c)
                CHECK(b.target.ids[static_cast<size_t>(i * b.target.cols + c)] !=
                      mtn::Vocabulary::kPad);
        }
        int64_t max_target = 0;
        for (auto l : b.target.lengths) max_target = std::max(max_target, l);
        CHECK(b.target.cols == std::max<int64_t>(max_target, 1));
    }
    CHECK(sizes == std::multiset<int64_t>{4, 32, 32, 32});
    CHECK(seen.size() == 100);  // exact partition

    std::mt19937 rng2(11);
    auto batches2 = mtn::make_batches(examples, 32, rng2);
    for (size_t i = 0; i < batches.size(); ++i)
        CHECK(batches[i].example_idx == batches2[i].example_idx);  // deterministic given the rng
}

TEST_CASE("synthetic corpus is deterministic and feature-grounded") {
    auto a = mtn::synth_corpus(7, 32, 6);
    auto b = mtn::synth_corpus(7, 32, 6);
    CHECK(a.dataset.dump() == b.dataset.dump());
    for (const auto& [video, mods] : a.features.all())
        for (const auto& [name, f] : mods) {
            const auto& g = b.features.get(video, name);
            CHECK(f.data == g.data);
        }

    CHECK(a.dataset["dialogs"].size() == 32);
    for (const auto& d : a.dataset["dialogs"]) {
        REQUIRE(d["dialog"].size() == mtn::kSynthTurns);
        const std::string video = d["video_id"].get<std::string>();
        const auto& visual = a.features.get(video, "visual");
        const auto& audio = a.features.get(video, "audio");
        CHECK(visual.cols == mtn::kSynthVisualDim);
        CHECK(audio.cols == mtn::kSynthAudioDim);
        // the planted first row's sign decides the answer keyword
        const std::string kw_v = mtn::synth_visual_keyword(visual.at(0, 0) > 0);
        const std::string kw_a = mtn::synth_audio_keyword(audio.at(0, 0) > 0);
        const std::string a0 = d["dialog"][0]["answer"].get<std::string>();
        const std::string a1 = d["dialog"][1]["answer"].get<std::string>();
        CHECK(a0.find(kw_v) != std::string::npos);
        CHECK(a1.find(kw_a) != std::string::npos);
        for (const auto& turn : d["dialog"]) {
            REQUIRE(turn["candidates"].size() == 10);
            int gold_hits = 0;
            for (const auto& c : turn["candidates"])
                gold_hits += c.get<std::string>() == turn["answer"].get<std::string>();
            CHECK(gold_hits == 1);
        }
    }

    // 32 dialogues x 5 turns load as 160 examples
    const auto dir = temp_dir();
    mtn::write_synth(a, dir.string());
    auto dialogs = mtn::load_dialogs((dir / "dialogues.json").string());
    auto vocab = mtn::Vocabulary::build(mtn::corpus_streams(dialogs), 2);
    auto examples = mtn::make_examples(dialogs, vocab, 3);
    CHECK(examples.size() == 160);

    // written tree matches the in-memory features bit for bit
    auto store = mtn::FeatureStore::load_dir((dir / "features").string());
    for (const auto& [video, mods] : a.features.all())
        for (const auto& [name, f] : mods) CHECK(store.get(video, name).data == f.data);

    // same seed writes byte-identical trees
    const auto dir2 = temp_dir();
    mtn::write_synth(b, dir2.string());
    CHECK(read_bytes((dir / "dialogues.json").string()) ==
          read_bytes((dir2 / "dialogues.json").string()));
    CHECK(read_bytes((dir / "features/visual/vid0003.mtnf").string()) ==
          read_bytes((dir2 / "features/visual/vid0003.mtnf").string()));
}

TEST_CASE("batches carry stacked features with row masks") {
    auto corpus = mtn::synth_corpus(3, 8, 4);
    const auto dir = temp_dir();
    write_file(dir / "d.json", corpus.dataset.dump());
    auto dialogs = mtn::load_dialogs((dir / "d.json").string());
    auto vocab = mtn::Vocabulary::build(mtn::corpus_streams(dialogs), 1);
    auto examples = mtn::make_examples(dialogs, vocab, 3);
    std::mt19937 rng(5);
    auto batches = mtn::make_batches(examples, 16, rng, &corpus.features);
    for (const auto& b : batches) {
        REQUIRE(b.features.size() == 2);  // audio, visual
        CHECK(b.features[0].modality == "audio");
        CHECK(b.features[1].modality == "visual");
        for (const auto& block : b.features) {
            CHECK(static_cast<int64_t>(block.rows.size()) == b.size());
            for (int64_t i = 0; i < b.size(); ++i) {
                const auto& f =
                    corpus.features.get(b.video_ids[static_cast<size_t>(i)], block.modality);
                CHECK(block.rows[static_cast<size_t>(i)] == f.rows);
                CHECK(block.example(i) == f.data);
            }
        }
    }
}
