#pragma once

#include "lissm/dataset_io.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace lissm::csv {

struct Row {
    std::size_t line = 0;  // 1-based line number in the file
    std::vector<std::string> cells;
};

struct Table {
    std::filesystem::path path;
    Metadata meta;
    std::vector<std::string> header;
    std::vector<Row> rows;

    // Index of a required column; SchemaError naming it when absent.
    std::size_t column(const std::string& name) const;
    double number(const Row& row, std::size_t col) const;
    long long integer(const Row& row, std::size_t col) const;
};

Table read(const std::filesystem::path& path);

} // namespace lissm::csv
