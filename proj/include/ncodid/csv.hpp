#pragma once

// Minimal RFC-4180-ish CSV reader/writer: quoted fields, embedded commas,
// quotes and newlines. UTF-8 passes through untouched.

#include <cstddef>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ncodid::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column index by name, -1 if absent.
  int column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
  }
};

namespace detail {

inline bool parse_record(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  std::string field;
  bool in_quotes = false;
  bool saw_any = false;
  int c;
  while ((c = in.get()) != EOF) {
    saw_any = true;
    char ch = static_cast<char>(c);
    if (in_quotes) {
      if (ch == '"') {
        if (in.peek() == '"') {
          in.get();
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(ch);
      }
    } else if (ch == '"') {
      in_quotes = true;
    } else if (ch == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (ch == '\r') {
      // swallow; \r\n handled by the \n branch
    } else if (ch == '\n') {
      fields.push_back(std::move(field));
      return true;
    } else {
      field.push_back(ch);
    }
  }
  if (in_quotes) throw std::runtime_error("CSV: unterminated quoted field");
  if (saw_any) {
    fields.push_back(std::move(field));
    return true;
  }
  return false;
}

}  // namespace detail

inline Table read(std::istream& in) {
  Table t;
  std::vector<std::string> fields;
  if (!detail::parse_record(in, t.header)) {
    throw std::runtime_error("CSV: empty input (no header row)");
  }
  while (detail::parse_record(in, fields)) {
    if (fields.size() == 1 && fields[0].empty()) continue;  // blank line
    if (fields.size() != t.header.size()) {
      throw std::runtime_error(
          "CSV: row " + std::to_string(t.rows.size() + 2) + " has " +
          std::to_string(fields.size()) + " fields, header has " +
          std::to_string(t.header.size()));
    }
    t.rows.push_back(fields);
  }
  return t;
}

inline Table read_string(const std::string& text) {
  std::istringstream in(text);
  return read(in);
}

inline std::string escape(std::string_view field) {
  bool needs_quotes = field.find_first_of(",\"\n\r") != std::string_view::npos;
  if (!needs_quotes) return std::string(field);
  std::string out;
  out.reserve(field.size() + 2);
  out.push_back('"');
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

inline void write_row(std::ostream& out,
                      const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << escape(fields[i]);
  }
  out << '\n';
}

}  // namespace ncodid::csv
