#pragma once

#include <string_view>

#include <nlohmann/json.hpp>

namespace riskpia {

/// Reads the TOML subset used by run configurations into a JSON object:
/// [table] and [dotted.table] headers, bare or quoted keys, basic and
/// literal strings, integers, floats, booleans, (multi-line) arrays and
/// inline tables, # comments. Dates and arrays of tables are rejected.
/// Errors are ConfigError with the line number.
nlohmann::json parse_toml(std::string_view text);

}  // namespace riskpia
