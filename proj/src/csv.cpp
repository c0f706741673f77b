#include "csv.hpp"

#include "lissm/error.hpp"

#include <charconv>
#include <fstream>

namespace lissm::csv {

namespace {

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        cells.push_back(trim(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return cells;
}

} // namespace

std::size_t Table::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    throw SchemaError(path.string() + ": missing column " + name);
}

double Table::number(const Row& row, std::size_t col) const {
    const std::string& text = row.cells.at(col);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
        throw DataError(path.string() + ": row " + std::to_string(row.line) + ": column " + header[col] +
                        ": not a number: '" + text + "'");
    }
    return v;
}

long long Table::integer(const Row& row, std::size_t col) const {
    const std::string& text = row.cells.at(col);
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
        throw DataError(path.string() + ": row " + std::to_string(row.line) + ": column " + header[col] +
                        ": not an integer: '" + text + "'");
    }
    return v;
}

Table read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError(path.string() + ": cannot open file");
    Table t;
    t.path = path;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string text = trim(line);
        if (text.empty()) continue;
        if (text.front() == '#') {
            const auto eq = text.find('=');
            if (eq != std::string::npos) t.meta[trim(text.substr(1, eq - 1))] = trim(text.substr(eq + 1));
            continue;
        }
        if (!have_header) {
            t.header = split(text);
            have_header = true;
            continue;
        }
        Row row{line_no, split(text)};
        if (row.cells.size() != t.header.size()) {
            throw DataError(path.string() + ": row " + std::to_string(line_no) + ": expected " +
                            std::to_string(t.header.size()) + " fields, got " + std::to_string(row.cells.size()));
        }
        t.rows.push_back(std::move(row));
    }
    if (!have_header) throw SchemaError(path.string() + ": missing header row");
    return t;
}

} // namespace lissm::csv
