#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace mtn {

// Bidirectional token/id map with reserved ids 0..3 for <pad>, <sos>, <eos>,
// <unk>. Lookups of unknown tokens resolve to <unk>.
class Vocabulary {
  public:
    static constexpr int32_t kPad = 0;
    static constexpr int32_t kSos = 1;
    static constexpr int32_t kEos = 2;
    static constexpr int32_t kUnk = 3;

    Vocabulary();  // reserved tokens only

    // Tokens with corpus count >= min_freq, ordered by descending count then
    // lexicographically, after the four reserved ids.
    static Vocabulary build(const std::vector<std::vector<std::string>>& corpus, int64_t min_freq);

    // Rebuilds from a full id-ordered token list (checkpoint restore).
    static Vocabulary from_tokens(const std::vector<std::string>& id_to_token);

    int32_t id_of(const std::string& token) const;
    const std::string& token_of(int32_t id) const;
    bool contains(const std::string& token) const;
    int64_t size() const { return static_cast<int64_t>(id_to_token_.size()); }

    std::vector<int32_t> encode(const std::vector<std::string>& tokens) const;
    std::vector<std::string> decode(const std::vector<int32_t>& ids) const;

    const std::vector<std::string>& tokens() const { return id_to_token_; }

  private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int32_t> token_to_id_;

    void push(const std::string& token);
};

}  // namespace mtn
