#ifndef CVAE_TEXTIO_HPP
#define CVAE_TEXTIO_HPP

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cvae {

/// Decimal float64 with 17 significant digits; parses back to the same bits.
std::string format_double(double value);

/// Parses a full token as float64; accepts "nan", "inf", "-inf".
double parse_double(std::string_view token);

/// One line of space-separated values.
void write_doubles(std::ostream& os, std::span<const double> values);

/// Whitespace-token reader for the text checkpoint format.
class TokenReader {
 public:
  explicit TokenReader(std::istream& is) : is_(is) {}

  std::string next();
  void expect(std::string_view keyword);
  std::size_t read_size();
  double read_double();
  std::vector<double> read_doubles(std::size_t count);

 private:
  std::istream& is_;
};

}  // namespace cvae

#endif  // CVAE_TEXTIO_HPP
