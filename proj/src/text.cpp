#include "daml/text.hpp"

#include <cctype>

namespace daml {

namespace {

bool is_split_punct(char c) { return c == '.' || c == ',' || c == '?' || c == '!' || c == ';' || c == ':'; }

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  const auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (c == '<') {
      // keep <placeholder> tokens whole
      const auto close = text.find('>', i);
      if (close != std::string_view::npos && text.substr(i, close - i).find(' ') == std::string_view::npos) {
        flush();
        out.emplace_back(text.substr(i, close - i + 1));
        i = close;
      } else {
        cur.push_back(c);
      }
    } else if (is_split_punct(c)) {
      // decimal points inside numbers stay attached
      const bool numeric = c == '.' && !cur.empty() && std::isdigit(static_cast<unsigned char>(cur.back())) &&
                           i + 1 < text.size() && std::isdigit(static_cast<unsigned char>(text[i + 1]));
      if (numeric) {
        cur.push_back(c);
      } else {
        flush();
        out.emplace_back(1, c);
      }
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

}  // namespace daml
