#pragma once

#include <map>
#include <string>
#include <vector>

#include "seqcon/sparse.hpp"

namespace seqcon {

// Delimited text table with a header row; all referenced columns numeric,
// missing values forbidden.
class DataTable {
public:
    DataTable() = default;
    DataTable(std::vector<std::string> columns, std::size_t rows);

    static DataTable read_csv(const std::string& path);
    void write_csv(const std::string& path) const;

    std::size_t rows() const { return rows_; }
    const std::vector<std::string>& columns() const { return names_; }
    bool has_column(const std::string& name) const;

    const std::vector<double>& column(const std::string& name) const;
    std::vector<double>& column(const std::string& name);
    void add_column(const std::string& name);

    void append_row(const std::map<std::string, double>& values);

    // Row subset in the given order.
    DataTable select_rows(const std::vector<std::size_t>& idx) const;

private:
    std::vector<std::string> names_;
    std::vector<std::vector<double>> data_;
    std::size_t rows_ = 0;
};

}  // namespace seqcon
