#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace evrec::csv {

struct Row {
    std::size_t line = 0;
    std::vector<std::string> fields;
};

/// Comma-separated table with a header row. Lines starting with '#' before
/// the header are kept verbatim in `comments`; blank lines are skipped.
struct Table {
    std::string source;
    std::vector<std::string> comments;
    std::vector<std::string> header;
    std::vector<Row> rows;

    /// Column index of `name`; throws ParseError naming the file when absent.
    [[nodiscard]] std::size_t column(std::string const& name) const;

    [[nodiscard]] double number(Row const& row, std::string const& name) const;
    [[nodiscard]] long long integer(Row const& row, std::string const& name) const;
    [[nodiscard]] std::string const& text(Row const& row, std::string const& name) const;
};

[[nodiscard]] Table read(std::filesystem::path const& path);

/// Parses `key=value` pairs separated by whitespace or commas in comment lines.
[[nodiscard]] std::map<std::string, std::string> comment_settings(Table const& table);

}  // namespace evrec::csv
