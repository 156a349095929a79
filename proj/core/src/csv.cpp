#include "entryfx/csv.hpp"

#include "entryfx/error.hpp"

#include <fmt/format.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace entryfx::csv {

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string current;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    current.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                current.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(current));
            current.clear();
        } else if (c != '\r') {
            current.push_back(c);
        }
    }
    out.push_back(std::move(current));
    return out;
}

std::string quote_if_needed(const std::string& cell) {
    if (cell.find_first_of(",\"") == std::string::npos) return cell;
    std::string out = "\"";
    for (char c : cell) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

}  // namespace

Table::Table(std::vector<std::string> header) : header_(std::move(header)) {
    for (std::size_t i = 0; i < header_.size(); ++i) index_[header_[i]] = i;
}

bool Table::has_column(std::string_view name) const {
    return index_.find(std::string(name)) != index_.end();
}

std::size_t Table::column(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) {
        throw ValidationError("missing_column", fmt::format("missing column '{}'", name));
    }
    return it->second;
}

const std::string& Table::cell(std::size_t row, std::string_view name) const {
    return rows_[row][column(name)];
}

void Table::add_row(std::vector<std::string> row) {
    if (row.size() != header_.size()) {
        throw ValidationError("ragged_row", fmt::format("row has {} cells, header has {}",
                                                        row.size(), header_.size()));
    }
    rows_.push_back(std::move(row));
}

Table read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw MissingArtifactError("missing_artifact",
                                   fmt::format("missing artifact: {}", path.string()));
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw ValidationError("empty_file", fmt::format("{} is empty", path.string()));
    }
    Table table(split_line(line));
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto cells = split_line(line);
        if (cells.size() != table.header().size()) {
            throw ValidationError("ragged_row", fmt::format("{}:{}: expected {} cells, found {}",
                                                            path.string(), lineno,
                                                            table.header().size(), cells.size()));
        }
        table.add_row(std::move(cells));
    }
    return table;
}

void require_columns(const Table& table, std::initializer_list<std::string_view> columns,
                     const std::filesystem::path& origin) {
    for (auto c : columns) {
        if (!table.has_column(c)) {
            throw ValidationError("missing_column",
                                  fmt::format("{}: missing column '{}'", origin.string(), c));
        }
    }
}

void write(const std::filesystem::path& path, const Table& table) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("unwritable", fmt::format("cannot write {}", path.string()));
    auto emit = [&out](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out << ',';
            out << quote_if_needed(cells[i]);
        }
        out << '\n';
    };
    emit(table.header());
    for (std::size_t r = 0; r < table.rows(); ++r) {
        std::vector<std::string> row;
        row.reserve(table.header().size());
        for (std::size_t c = 0; c < table.header().size(); ++c) row.push_back(table.cell(r, c));
        emit(row);
    }
}

bool is_missing(std::string_view cell) {
    cell = trim(cell);
    return cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan" || cell == "*";
}

double parse_double(std::string_view cell, std::string_view what) {
    auto s = trim(cell);
    std::string cleaned;
    cleaned.reserve(s.size());
    for (char c : s) {
        if (c != ',') cleaned.push_back(c);
    }
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(cleaned.data(), cleaned.data() + cleaned.size(), value);
    if (ec != std::errc() || ptr != cleaned.data() + cleaned.size()) {
        throw ValidationError("bad_number", fmt::format("cannot parse {} from '{}'", what, cell));
    }
    return value;
}

long long parse_int(std::string_view cell, std::string_view what) {
    auto s = trim(cell);
    long long value = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ValidationError("bad_integer", fmt::format("cannot parse {} from '{}'", what, cell));
    }
    return value;
}

std::optional<double> parse_optional(std::string_view cell, std::string_view what) {
    if (is_missing(cell)) return std::nullopt;
    return parse_double(cell, what);
}

std::string format(double value) {
    if (std::isnan(value)) return "NA";
    return fmt::format("{}", value);
}

std::string format(std::optional<double> value) {
    return value ? format(*value) : std::string("NA");
}

}  // namespace entryfx::csv
