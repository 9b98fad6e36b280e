#ifndef QAN_TEXTIO_HPP_
#define QAN_TEXTIO_HPP_

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace qan {

// Shortest decimal representation that parses back to the same double.
std::string format_double(double v);

std::optional<double> parse_double(std::string_view s);
std::optional<long long> parse_int(std::string_view s);

// Splits on runs of spaces/tabs; drops empty tokens.
std::vector<std::string_view> split_ws(std::string_view line);

// Writes to a temporary sibling then renames, so readers never see a
// partially written file.
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace qan

#endif  // QAN_TEXTIO_HPP_
