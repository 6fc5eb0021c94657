#include "cvae/textio.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace cvae {

std::string format_double(double value) {
  if (std::isnan(value)) {
    return "nan";
  }
  if (std::isinf(value)) {
    return value > 0 ? "inf" : "-inf";
  }
  char buf[32];
  const int len = std::snprintf(buf, sizeof(buf), "%.17g", value);
  return std::string(buf, static_cast<std::size_t>(len));
}

double parse_double(std::string_view token) {
  if (token == "nan") {
    return std::numeric_limits<double>::quiet_NaN();
  }
  if (token == "inf") {
    return std::numeric_limits<double>::infinity();
  }
  if (token == "-inf") {
    return -std::numeric_limits<double>::infinity();
  }
  double value = 0.0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  if (!token.empty() && *first == '+') {
    ++first;
  }
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last || token.empty()) {
    throw std::runtime_error("not a number: '" + std::string(token) + "'");
  }
  return value;
}

void write_doubles(std::ostream& os, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) {
      os << ' ';
    }
    os << format_double(values[i]);
  }
  os << '\n';
}

std::string TokenReader::next() {
  std::string token;
  if (!(is_ >> token)) {
    throw std::runtime_error("unexpected end of input");
  }
  return token;
}

void TokenReader::expect(std::string_view keyword) {
  const std::string token = next();
  if (token != keyword) {
    throw std::runtime_error("expected '" + std::string(keyword) + "', found '" + token + "'");
  }
}

std::size_t TokenReader::read_size() {
  const std::string token = next();
  std::size_t value = 0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc{} || ptr != token.data() + token.size()) {
    throw std::runtime_error("expected a count, found '" + token + "'");
  }
  return value;
}

double TokenReader::read_double() { return parse_double(next()); }

std::vector<double> TokenReader::read_doubles(std::size_t count) {
  std::vector<double> values;
  values.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    values.push_back(read_double());
  }
  return values;
}

}  // namespace cvae
