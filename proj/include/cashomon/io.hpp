#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cashomon::io {

// Shortest round-trip decimal form, locale independent. Integral doubles keep
// a trailing ".0" wouldn't round-trip shorter, so 3 prints as "3".
std::string format_double(double v);

// RFC 4180: quote a field iff it contains comma, quote, CR or LF; double
// embedded quotes.
std::string csv_field(const std::string& raw);

std::string csv_row(const std::vector<std::string>& fields);

// Parses one CSV record honoring quoted fields. Returns false on a malformed
// record (unterminated quote).
bool parse_csv_row(const std::string& line, std::vector<std::string>& out);

// Splits text into lines accepting both \n and \r\n endings; drops a trailing
// empty line.
std::vector<std::string> split_lines(const std::string& text);

std::string read_file(const std::string& path);     // throws std::runtime_error on I/O failure
void write_file(const std::string& path, const std::string& content);

// FNV-1a over bytes; stable across builds and platforms (unlike std::hash).
std::uint64_t fnv1a(const std::string& bytes);
std::string hash_hex(const std::string& bytes);

}  // namespace cashomon::io
