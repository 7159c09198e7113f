#include "mtn/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "mtn/error.hpp"
#include "mtn/tokenize.hpp"

namespace mtn {

std::vector<int32_t> history_stream(const DialogueExample& ex) {
    std::vector<int32_t> out;
    for (const auto& turn : ex.history) {
        out.insert(out.end(), turn.question.begin(), turn.question.end());
        out.push_back(Vocabulary::kEos);
        out.insert(out.end(), turn.answer.begin(), turn.answer.end());
        out.push_back(Vocabulary::kEos);
    }
    return out;
}

std::vector<RawDialogue> load_dialogs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed JSON in " + path + ": " + e.what());
    }
    if (!doc.is_object() || !doc.contains("dialogs") || !doc["dialogs"].is_array())
        throw DataError(path + ": top-level object must contain a \"dialogs\" array");

    std::vector<RawDialogue> out;
    size_t index = 0;
    for (const auto& d : doc["dialogs"]) {
        auto fail = [&](const std::string& what) -> DataError {
            return DataError(path + ": dialogue " + std::to_string(index) + ": " + what);
        };
        if (!d.is_object()) throw fail("entry is not an object");
        for (const char* field : {"video_id", "caption", "summary", "dialog"})
            if (!d.contains(field)) throw fail(std::string("missing field \"") + field + "\"");
        if (!d["dialog"].is_array()) throw fail("\"dialog\" must be an array");

        RawDialogue dialogue;
        dialogue.video_id = d["video_id"].get<std::string>();
        dialogue.caption = tokenize(d["caption"].get<std::string>());
        const auto summary = tokenize(d["summary"].get<std::string>());
        dialogue.caption.insert(dialogue.caption.end(), summary.begin(), summary.end());
        for (const auto& t : d["dialog"]) {
            if (!t.is_object() || !t.contains("question") || !t.contains("answer"))
                throw fail("turn entries need \"question\" and \"answer\"");
            RawTurn turn;
            turn.question = tokenize(t["question"].get<std::string>());
            turn.answer = tokenize(t["answer"].get<std::string>());
            if (t.contains("candidates")) {
                if (!t["candidates"].is_array()) throw fail("\"candidates\" must be an array");
                for (const auto& c : t["candidates"])
                    turn.candidates.push_back(tokenize(c.get<std::string>()));
            }
            dialogue.turns.push_back(std::move(turn));
        }
        out.push_back(std::move(dialogue));
        ++index;
    }
    return out;
}

std::vector<std::vector<std::string>> corpus_streams(const std::vector<RawDialogue>& dialogs) {
    std::vector<std::vector<std::string>> out;
    for (const auto& d : dialogs) {
        out.push_back(d.caption);
        for (const auto& t : d.turns) {
            out.push_back(t.question);
            out.push_back(t.answer);
        }
    }
    return out;
}

std::vector<DialogueExample> make_examples(const std::vector<RawDialogue>& dialogs,
                                           const Vocabulary& vocab, int64_t max_history) {
    if (max_history < 1) throw ContractError("max_history must be >= 1");
    std::vector<DialogueExample> out;
    for (const auto& d : dialogs) {
        const auto caption_ids = vocab.encode(d.caption);
        for (size_t t = 0; t < d.turns.size(); ++t) {
            DialogueExample ex;
            ex.video_id = d.video_id;
            ex.turn = static_cast<int64_t>(t) + 1;
            ex.caption = caption_ids;
            const size_t keep = std::min<size_t>(t, static_cast<size_t>(max_history));
            for (size_t h = t - keep; h < t; ++h)
                ex.history.push_back(
                    {vocab.encode(d.turns[h].question), vocab.encode(d.turns[h].answer)});
            ex.query = vocab.encode(d.turns[t].question);
            ex.target.push_back(Vocabulary::kSos);
            const auto answer_ids = vocab.encode(d.turns[t].answer);
            ex.target.insert(ex.target.end(), answer_ids.begin(), answer_ids.end());
            ex.target.push_back(Vocabulary::kEos);
            for (const auto& c : d.turns[t].candidates) ex.candidates.push_back(vocab.encode(c));
            out.push_back(std::move(ex));
        }
    }
    return out;
}

std::vector<DialogueExample> load_dataset(const std::string& path, const Vocabulary& vocab,
                                          int64_t max_history) {
    return make_examples(load_dialogs(path), vocab, max_history);
}

namespace {

PaddedIds pad_stream(const std::vector<const std::vector<int32_t>*>& rows) {
    PaddedIds p;
    p.rows = static_cast<int64_t>(rows.size());
    int64_t maxlen = 1;
    for (const auto* r : rows) maxlen = std::max<int64_t>(maxlen, static_cast<int64_t>(r->size()));
    p.cols = maxlen;
    p.ids.assign(p.rows * p.cols, Vocabulary::kPad);
    for (int64_t i = 0; i < p.rows; ++i) {
        const auto& r = *rows[static_cast<size_t>(i)];
        p.lengths.push_back(static_cast<int64_t>(r.size()));
        std::copy(r.begin(), r.end(), p.ids.begin() + i * p.cols);
    }
    return p;
}

}  // namespace

std::vector<Batch> make_batches(const std::vector<DialogueExample>& examples, int64_t batch_size,
                                std::mt19937& rng, const FeatureStore* store) {
    if (batch_size < 1) throw ContractError("batch_size must be >= 1");
    std::vector<int64_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<int64_t> his_len(examples.size());
    for (size_t i = 0; i < examples.size(); ++i)
        his_len[i] = static_cast<int64_t>(history_stream(examples[i]).size());
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        const auto& ea = examples[static_cast<size_t>(a)];
        const auto& eb = examples[static_cast<size_t>(b)];
        const auto key = [&](const DialogueExample& e, int64_t idx) {
            return std::make_tuple(his_len[static_cast<size_t>(idx)],
                                   static_cast<int64_t>(e.caption.size()),
                                   static_cast<int64_t>(e.query.size()),
                                   static_cast<int64_t>(e.target.size()), idx);
        };
        return key(ea, a) < key(eb, b);
    });

    std::vector<std::vector<int64_t>> chunks;
    for (size_t i = 0; i < order.size(); i += static_cast<size_t>(batch_size))
        chunks.emplace_back(order.begin() + static_cast<int64_t>(i),
                            order.begin() +
                                std::min(order.size(), i + static_cast<size_t>(batch_size)));
    std::shuffle(chunks.begin(), chunks.end(), rng);

    std::vector<Batch> out;
    for (const auto& chunk : chunks) {
        Batch b;
        b.example_idx = chunk;
        std::vector<std::vector<int32_t>> his_rows;
        std::vector<const std::vector<int32_t>*> his_ptrs, cap, que, tgt;
        for (int64_t idx : chunk) {
            const auto& ex = examples[static_cast<size_t>(idx)];
            b.video_ids.push_back(ex.video_id);
            b.turns.push_back(ex.turn);
            his_rows.push_back(history_stream(ex));
            cap.push_back(&ex.caption);
            que.push_back(&ex.query);
            tgt.push_back(&ex.target);
        }
        for (const auto& h : his_rows) his_ptrs.push_back(&h);
        b.history = pad_stream(his_ptrs);
        b.caption = pad_stream(cap);
        b.query = pad_stream(que);
        b.target = pad_stream(tgt);

        if (store && !store->empty()) {
            // modality list from the first example's store entries
            std::vector<std::string> modality_names;
            {
                const auto& ex0 = examples[static_cast<size_t>(chunk[0])];
                auto it = store->all().find(ex0.video_id);
                if (it == store->all().end())
                    throw DataError("missing features for video " + ex0.video_id);
                for (const auto& [m, f] : it->second) modality_names.push_back(m);
            }
            for (const auto& m : modality_names) {
                FeatureBlock block;
                block.modality = m;
                for (int64_t idx : chunk) {
                    const auto& f =
                        store->get(examples[static_cast<size_t>(idx)].video_id, m);
                    if (block.dim == 0) block.dim = f.cols;
                    if (f.cols != block.dim)
                        throw DataError("inconsistent " + m + " feature width for video " +
                                        examples[static_cast<size_t>(idx)].video_id);
                    block.max_rows = std::max(block.max_rows, f.rows);
                    block.rows.push_back(f.rows);
                }
                block.data.assign(static_cast<size_t>(b.size()) * block.max_rows * block.dim, 0.0f);
                for (int64_t i = 0; i < b.size(); ++i) {
                    const auto& f = store->get(
                        examples[static_cast<size_t>(chunk[static_cast<size_t>(i)])].video_id, m);
                    std::copy(f.data.begin(), f.data.end(),
                              block.data.begin() + i * block.max_rows * block.dim);
                }
                b.features.push_back(std::move(block));
            }
        }
        out.push_back(std::move(b));
    }
    return out;
}

}  // namespace mtn
