#ifndef BVX_CSV_HPP
#define BVX_CSV_HPP

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace bvx::csv {

/// 17 significant digits, so every double survives a text round trip.
std::string format_real(double value);

std::vector<std::string> split_line(std::string_view line);

/// Throws ParseError carrying `line_number` when the field is not a number.
double parse_real(const std::string& field, std::size_t line_number);
long long parse_integer(const std::string& field, std::size_t line_number);

}  // namespace bvx::csv

#endif  // BVX_CSV_HPP
