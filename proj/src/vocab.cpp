#include "mtn/vocab.hpp"

#include <algorithm>
#include <map>

#include "mtn/error.hpp"

namespace mtn {

namespace {
const char* kReserved[] = {"<pad>", "<sos>", "<eos>", "<unk>"};
}

Vocabulary::Vocabulary() {
    for (const char* t : kReserved) push(t);
}

void Vocabulary::push(const std::string& token) {
    token_to_id_.emplace(token, static_cast<int32_t>(id_to_token_.size()));
    id_to_token_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& corpus, int64_t min_freq) {
    if (min_freq < 1) throw ContractError("min_freq must be >= 1");
    std::map<std::string, int64_t> counts;
    for (const auto& seq : corpus)
        for (const auto& tok : seq) ++counts[tok];
    std::vector<std::pair<std::string, int64_t>> kept;
    for (const auto& [tok, n] : counts) {
        bool reserved = false;
        for (const char* r : kReserved) reserved = reserved || tok == r;
        if (!reserved && n >= min_freq) kept.emplace_back(tok, n);
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary v;
    for (const auto& [tok, n] : kept) v.push(tok);
    return v;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& id_to_token) {
    if (id_to_token.size() < 4) throw DataError("vocabulary list is missing reserved tokens");
    for (int i = 0; i < 4; ++i)
        if (id_to_token[static_cast<size_t>(i)] != kReserved[i])
            throw DataError("vocabulary id " + std::to_string(i) + " must be " +
                            std::string(kReserved[i]) + ", got " +
                            id_to_token[static_cast<size_t>(i)]);
    Vocabulary v;
    v.id_to_token_.clear();
    v.token_to_id_.clear();
    for (const auto& tok : id_to_token) {
        if (v.token_to_id_.count(tok))
            throw DataError("duplicate token in vocabulary list: " + tok);
        v.push(tok);
    }
    return v;
}

int32_t Vocabulary::id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(int32_t id) const {
    if (id < 0 || id >= size())
        throw ContractError("token id " + std::to_string(id) + " out of range");
    return id_to_token_[static_cast<size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

std::vector<int32_t> Vocabulary::encode(const std::vector<std::string>& tokens) const {
    std::vector<int32_t> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id_of(t));
    return out;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int32_t>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int32_t id : ids) out.push_back(token_of(id));
    return out;
}

}  // namespace mtn
