#include "evrec/csv.hpp"

#include "evrec/error.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace evrec::csv {

namespace {

std::string trim(std::string_view s) {
    auto const first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    auto const last = s.find_last_not_of(" \t\r");
    return std::string{s.substr(first, last - first + 1)};
}

std::vector<std::string> split(std::string const& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto const pos = line.find(',', start);
        out.push_back(trim(std::string_view{line}.substr(start, pos - start)));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

}  // namespace

std::size_t Table::column(std::string const& name) const {
    auto const it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
        throw ParseError(source, 0, "missing column '" + name + "'");
    }
    return static_cast<std::size_t>(it - header.begin());
}

std::string const& Table::text(Row const& row, std::string const& name) const {
    return row.fields.at(column(name));
}

double Table::number(Row const& row, std::string const& name) const {
    auto const& s = text(row, name);
    double value = 0.0;
    auto const [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw ParseError(source, row.line, "column '" + name + "': not a number: '" + s + "'");
    }
    return value;
}

long long Table::integer(Row const& row, std::string const& name) const {
    auto const& s = text(row, name);
    long long value = 0;
    auto const [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw ParseError(source, row.line, "column '" + name + "': not an integer: '" + s + "'");
    }
    return value;
}

Table read(std::filesystem::path const& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string(), 0, "cannot open file");
    Table table;
    table.source = path.string();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto const t = trim(line);
        if (t.empty()) continue;
        if (t.front() == '#') {
            if (table.header.empty()) table.comments.push_back(t.substr(1));
            continue;
        }
        auto fields = split(t);
        if (table.header.empty()) {
            table.header = std::move(fields);
            continue;
        }
        if (fields.size() != table.header.size()) {
            throw ParseError(table.source, lineno,
                             "expected " + std::to_string(table.header.size()) + " fields, got " +
                                 std::to_string(fields.size()));
        }
        table.rows.push_back(Row{lineno, std::move(fields)});
    }
    if (table.header.empty()) throw ParseError(table.source, lineno, "missing header row");
    return table;
}

std::map<std::string, std::string> comment_settings(Table const& table) {
    std::map<std::string, std::string> out;
    for (auto const& c : table.comments) {
        std::string normalized = c;
        std::replace(normalized.begin(), normalized.end(), ',', ' ');
        std::istringstream ss(normalized);
        std::string token;
        while (ss >> token) {
            auto const eq = token.find('=');
            if (eq == std::string::npos) continue;
            out[token.substr(0, eq)] = token.substr(eq + 1);
        }
    }
    return out;
}

}  // namespace evrec::csv
