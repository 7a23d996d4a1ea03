#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "conspace/error.hpp"

namespace conspace::csv {

// Reader for comma-delimited UTF-8 files with a mandatory header row.
// Fields must not contain commas or newlines (no quoting dialect).
// All schema violations throw SchemaError naming file, line and column.
class Reader {
public:
    Reader(const std::filesystem::path& path,
           const std::vector<std::string>& expected_header);

    // Next data row, or nullopt at end of file. Field count is validated.
    std::optional<std::vector<std::string>> next();

    // Typed accessors for the most recent row; column is 0-based.
    double as_double(const std::vector<std::string>& row, std::size_t column) const;
    long long as_long(const std::vector<std::string>& row, std::size_t column) const;

    std::size_t line() const { return line_; }
    const std::string& path() const { return path_str_; }

private:
    std::ifstream in_;
    std::string path_str_;
    std::size_t n_columns_;
    std::size_t line_ = 0;
};

// Writer emitting the same dialect. Numeric fields are formatted with
// std::to_chars (shortest round-trip), so output is locale-independent
// and byte-stable across runs.
class Writer {
public:
    Writer(const std::filesystem::path& path,
           const std::vector<std::string>& header);

    void row(const std::vector<std::string>& fields);

private:
    std::ofstream out_;
    std::string path_str_;
    std::size_t n_columns_;
};

std::vector<std::string> split_fields(const std::string& line);

// Shortest round-trip decimal form of x ("1.5", "0.0022", ...).
std::string format_double(double x);
std::string format_long(long long x);

}  // namespace conspace::csv
