#include "nmt/text.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "nmt/errors.hpp"

namespace nmt {

bool is_language_flag(std::string_view token) {
  if (token.size() != 6) return false;
  if (token[0] != '<' || token[1] != '2' || token[5] != '>') return false;
  for (int i = 2; i < 5; ++i) {
    const auto c = static_cast<unsigned char>(token[i]);
    if (!std::isupper(c) || !std::isalpha(c)) return false;
  }
  return true;
}

bool is_reserved_token(std::string_view token) {
  return token == kPadToken || token == kUnkToken || token == kBosToken ||
         token == kEosToken;
}

std::string flag_token(std::string_view lang_code) {
  if (lang_code.size() != 3) {
    throw ConfigInvalid("language code must have 3 letters: '" +
                        std::string(lang_code) + "'");
  }
  std::string flag = "<2";
  for (char c : lang_code) {
    if (!std::isalpha(static_cast<unsigned char>(c))) {
      throw ConfigInvalid("language code must be alphabetic: '" +
                          std::string(lang_code) + "'");
    }
    flag += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  flag += '>';
  return flag;
}

TokenLine split_tokens(std::string_view line) {
  TokenLine tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    if (i > start) tokens.emplace_back(line.substr(start, i - start));
  }
  return tokens;
}

std::string join_tokens(const TokenLine& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::vector<std::string> utf8_split(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const unsigned char c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if ((c & 0x80) == 0x00) len = 1;
    else if ((c & 0xE0) == 0xC0) len = 2;
    else if ((c & 0xF0) == 0xE0) len = 3;
    else if ((c & 0xF8) == 0xF0) len = 4;
    if (i + len > s.size()) len = 1;
    // continuation bytes must match, otherwise fall back to a single byte
    for (std::size_t k = 1; k < len; ++k) {
      if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) {
        len = 1;
        break;
      }
    }
    out.emplace_back(s.substr(i, len));
    i += len;
  }
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (in.bad()) throw IoError("read failed: " + path);
  return lines;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open file for writing: " + path);
  for (const auto& line : lines) out << line << '\n';
  if (!out) throw IoError("write failed: " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path);
  return ss.str();
}

void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open file for writing: " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace nmt
