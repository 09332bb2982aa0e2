#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace nmt {

using TokenLine = std::vector<std::string>;
using TokenLines = std::vector<TokenLine>;

// Reserved control tokens, pinned to the four lowest vocabulary indices.
inline constexpr const char* kPadToken = "<pad>";
inline constexpr const char* kUnkToken = "<unk>";
inline constexpr const char* kBosToken = "<s>";
inline constexpr const char* kEosToken = "</s>";

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kBosId = 2;
inline constexpr int kEosId = 3;

// True for `<2XXX>` with XXX three uppercase ASCII letters.
bool is_language_flag(std::string_view token);

// True for the four reserved control tokens.
bool is_reserved_token(std::string_view token);

// `<2XXX>` from a 3-letter language code; throws ConfigInvalid on bad codes.
std::string flag_token(std::string_view lang_code);

// Whitespace tokenization (spaces and tabs); never yields empty tokens.
TokenLine split_tokens(std::string_view line);

std::string join_tokens(const TokenLine& tokens);

// Split a UTF-8 string into codepoint-sized chunks. Bytes that do not form a
// valid sequence are passed through as single-byte chunks.
std::vector<std::string> utf8_split(std::string_view s);

// Reads a text file into lines. Accepts \n and \r\n, strips both.
std::vector<std::string> read_lines(const std::string& path);

// Writes lines joined with \n, with a trailing newline.
void write_lines(const std::string& path, const std::vector<std::string>& lines);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

}  // namespace nmt
