#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace posmed::text {

std::string casefold(std::string_view s);

// Trims and replaces every whitespace run with a single space.
std::string collapse_whitespace(std::string_view s);

// Drops trailing punctuation and whitespace (".", "!", "?", ",", ";", ":").
std::string strip_terminal_punctuation(std::string_view s);

// Lowercased ASCII alphanumeric words; every other ASCII byte separates
// words. Non-ASCII bytes are kept inside words.
std::vector<std::string> word_tokens(std::string_view s);

}  // namespace posmed::text
