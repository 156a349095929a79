#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace entryfx::csv {

/// Header-indexed table of string cells. Small and strict: quoted fields
/// with embedded commas are supported, embedded newlines are not.
class Table {
public:
    Table() = default;
    explicit Table(std::vector<std::string> header);

    const std::vector<std::string>& header() const { return header_; }
    std::size_t rows() const { return rows_.size(); }
    bool has_column(std::string_view name) const;
    std::size_t column(std::string_view name) const;  // throws if absent

    const std::string& cell(std::size_t row, std::size_t col) const { return rows_[row][col]; }
    const std::string& cell(std::size_t row, std::string_view name) const;

    void add_row(std::vector<std::string> row);

private:
    std::vector<std::string> header_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<std::vector<std::string>> rows_;
};

/// Reads a file; throws MissingArtifactError if it does not exist.
Table read(const std::filesystem::path& path);

/// Requires every listed column; throws ValidationError naming the first
/// absent one.
void require_columns(const Table& table, std::initializer_list<std::string_view> columns,
                     const std::filesystem::path& origin);

void write(const std::filesystem::path& path, const Table& table);

bool is_missing(std::string_view cell);
double parse_double(std::string_view cell, std::string_view what);
long long parse_int(std::string_view cell, std::string_view what);
std::optional<double> parse_optional(std::string_view cell, std::string_view what);

/// Shortest round-trip decimal form; "NA" for NaN.
std::string format(double value);
std::string format(std::optional<double> value);

}  // namespace entryfx::csv
