#include "conspace/csv.hpp"

#include <charconv>
#include <system_error>

namespace conspace::csv {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

std::string format_double(double x) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
    if (ec != std::errc{}) throw Error("format_double: to_chars failed");
    return std::string(buf, ptr);
}

std::string format_long(long long x) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
    if (ec != std::errc{}) throw Error("format_long: to_chars failed");
    return std::string(buf, ptr);
}

Reader::Reader(const std::filesystem::path& path,
               const std::vector<std::string>& expected_header)
    : in_(path), path_str_(path.string()), n_columns_(expected_header.size()) {
    if (!in_) throw InvalidInputError("cannot open input file: " + path_str_);
    std::string header;
    if (!std::getline(in_, header)) {
        throw SchemaError(path_str_, 1, 1, "missing header row");
    }
    if (!header.empty() && header.back() == '\r') header.pop_back();
    ++line_;
    const auto fields = split_fields(header);
    if (fields.size() != expected_header.size()) {
        throw SchemaError(path_str_, 1, fields.size(),
                          "expected " + std::to_string(expected_header.size())
                          + " header columns, found " + std::to_string(fields.size()));
    }
    for (std::size_t c = 0; c < fields.size(); ++c) {
        if (fields[c] != expected_header[c]) {
            throw SchemaError(path_str_, 1, c + 1,
                              "expected header column '" + expected_header[c]
                              + "', found '" + fields[c] + "'");
        }
    }
}

std::optional<std::vector<std::string>> Reader::next() {
    std::string raw;
    while (std::getline(in_, raw)) {
        ++line_;
        if (!raw.empty() && raw.back() == '\r') raw.pop_back();
        if (raw.empty()) continue;
        auto fields = split_fields(raw);
        if (fields.size() != n_columns_) {
            throw SchemaError(path_str_, line_, fields.size(),
                              "expected " + std::to_string(n_columns_)
                              + " fields, found " + std::to_string(fields.size()));
        }
        return fields;
    }
    return std::nullopt;
}

double Reader::as_double(const std::vector<std::string>& row, std::size_t column) const {
    const std::string& s = row.at(column);
    double value = 0.0;
    const auto* begin = s.data();
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr != end) {
        throw SchemaError(path_str_, line_, column + 1,
                          "not a number: '" + s + "'");
    }
    return value;
}

long long Reader::as_long(const std::vector<std::string>& row, std::size_t column) const {
    const std::string& s = row.at(column);
    long long value = 0;
    const auto* begin = s.data();
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr != end) {
        throw SchemaError(path_str_, line_, column + 1,
                          "not an integer: '" + s + "'");
    }
    return value;
}

Writer::Writer(const std::filesystem::path& path,
               const std::vector<std::string>& header)
    : out_(path), path_str_(path.string()), n_columns_(header.size()) {
    if (!out_) throw InvalidInputError("cannot open output file: " + path_str_);
    row(header);
}

void Writer::row(const std::vector<std::string>& fields) {
    if (fields.size() != n_columns_) {
        throw Error(path_str_ + ": row has " + std::to_string(fields.size())
                    + " fields, expected " + std::to_string(n_columns_));
    }
    for (std::size_t c = 0; c < fields.size(); ++c) {
        if (fields[c].find_first_of(",\n\r") != std::string::npos) {
            throw Error(path_str_ + ": field contains delimiter: '" + fields[c] + "'");
        }
        if (c) out_ << ',';
        out_ << fields[c];
    }
    out_ << '\n';
}

}  // namespace conspace::csv
