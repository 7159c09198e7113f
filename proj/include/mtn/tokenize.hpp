#pragma once

#include <string>
#include <vector>

namespace mtn {

// Lowercases, splits on whitespace, and detaches the punctuation marks
// . , ! ? ; : " ( ) as separate tokens. Deterministic; empty text yields an
// empty list.
std::vector<std::string> tokenize(const std::string& text);

// Joins tokens with single spaces.
std::string detokenize(const std::vector<std::string>& tokens);

}  // namespace mtn
