#pragma once

// Minimal CSV reading/writing used by the station loader and report writers.
// Handles RFC-4180 style quoting on input; output never needs quotes because
// every emitted field is a number, an identifier, or an ISO timestamp.

#include <filesystem>
#include <string>
#include <vector>

namespace aircorrect {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;  // excludes header
};

/// Splits one CSV record into fields. Quoted fields may contain commas and
/// doubled quotes. No embedded newlines (the station format has none).
std::vector<std::string> split_csv_line(const std::string& line);

/// Reads a whole CSV file; first line is the header. Throws IoError when the
/// file cannot be opened and ParseError on an empty file.
CsvTable read_csv_file(const std::filesystem::path& path);

/// Formats a double with enough digits to round-trip (%.17g), trimming to the
/// shortest representation that parses back exactly.
std::string format_double(double v);

/// Strict double parse of a whole field. Throws ParseError on trailing junk,
/// empty input, or non-finite results.
double parse_double_strict(const std::string& field, const std::string& context);

/// Epoch seconds -> "YYYY-MM-DDTHH:00:00Z". Input must be hour-aligned UTC.
std::string epoch_to_iso8601(std::int64_t epoch_seconds);

/// Inverse of epoch_to_iso8601; accepts "YYYY-MM-DDTHH:MM:SSZ" and the same
/// without the trailing Z. Throws ParseError on malformed input.
std::int64_t iso8601_to_epoch(const std::string& text);

}  // namespace aircorrect
