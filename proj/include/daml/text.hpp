#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace daml {

// Lowercases and splits on whitespace; . , ? ! ; : become separate tokens.
// Apostrophes, hyphens and <placeholder> tokens stay intact.
std::vector<std::string> tokenize(std::string_view text);

// Inverse of tokenize() on normalized text: tokens joined by single spaces.
std::string detokenize(const std::vector<std::string>& tokens);

}  // namespace daml
