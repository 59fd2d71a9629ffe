#include "bvx/csv.hpp"

#include "bvx/error.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>

namespace bvx::csv {

std::string format_real(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

std::vector<std::string> split_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.emplace_back(line.substr(start));
      break;
    }
    fields.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

double parse_real(const std::string& field, std::size_t line_number) {
  if (field.empty()) throw ParseError("empty numeric field", line_number);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(field.c_str(), &end);
  if (end != field.c_str() + field.size() || errno == ERANGE) {
    throw ParseError("not a number: '" + field + "'", line_number);
  }
  return v;
}

long long parse_integer(const std::string& field, std::size_t line_number) {
  if (field.empty()) throw ParseError("empty integer field", line_number);
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(field.c_str(), &end, 10);
  if (end != field.c_str() + field.size() || errno == ERANGE) {
    throw ParseError("not an integer: '" + field + "'", line_number);
  }
  return v;
}

}  // namespace bvx::csv
