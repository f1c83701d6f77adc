#include "seqcon/table.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "seqcon/errors.hpp"

namespace seqcon {

DataTable::DataTable(std::vector<std::string> columns, std::size_t rows)
    : names_(std::move(columns)), data_(names_.size(), std::vector<double>(rows, 0.0)), rows_(rows) {}

bool DataTable::has_column(const std::string& name) const {
    for (const auto& n : names_)
        if (n == name) return true;
    return false;
}

const std::vector<double>& DataTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return data_[i];
    throw ConfigError("table has no column '" + name + "'");
}

std::vector<double>& DataTable::column(const std::string& name) {
    for (std::size_t i = 0; i < names_.size(); ++i)
        if (names_[i] == name) return data_[i];
    throw ConfigError("table has no column '" + name + "'");
}

void DataTable::add_column(const std::string& name) {
    if (has_column(name)) throw ConfigError("duplicate column '" + name + "'");
    names_.push_back(name);
    data_.emplace_back(rows_, 0.0);
}

void DataTable::append_row(const std::map<std::string, double>& values) {
    for (std::size_t i = 0; i < names_.size(); ++i) {
        auto it = values.find(names_[i]);
        if (it == values.end()) throw ConfigError("append_row missing column '" + names_[i] + "'");
        data_[i].push_back(it->second);
    }
    ++rows_;
}

DataTable DataTable::select_rows(const std::vector<std::size_t>& idx) const {
    DataTable out(names_, idx.size());
    for (std::size_t c = 0; c < names_.size(); ++c)
        for (std::size_t r = 0; r < idx.size(); ++r) {
            if (idx[r] >= rows_) throw ConfigError("row index out of range in selection");
            out.data_[c][r] = data_[c][idx[r]];
        }
    return out;
}

DataTable DataTable::read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open table: " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty table: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    DataTable t;
    {
        std::istringstream header(line);
        std::string name;
        while (std::getline(header, name, ',')) t.names_.push_back(name);
        t.data_.assign(t.names_.size(), {});
    }
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::size_t col = 0, pos = 0;
        while (col < t.names_.size()) {
            const std::size_t next = line.find(',', pos);
            const std::string cell = line.substr(pos, next == std::string::npos ? next : next - pos);
            if (cell.empty())
                throw IoError(path + ":" + std::to_string(lineno) + ": missing value in column '" +
                              t.names_[col] + "'");
            try {
                t.data_[col].push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw IoError(path + ":" + std::to_string(lineno) + ": non-numeric value '" + cell + "'");
            }
            ++col;
            if (next == std::string::npos) break;
            pos = next + 1;
        }
        if (col != t.names_.size())
            throw IoError(path + ":" + std::to_string(lineno) + ": expected " +
                          std::to_string(t.names_.size()) + " fields");
        ++t.rows_;
    }
    return t;
}

void DataTable::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (std::size_t i = 0; i < names_.size(); ++i)
        out << names_[i] << (i + 1 < names_.size() ? ',' : '\n');
    char buf[40];
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < names_.size(); ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", data_[c][r]);
            out << buf << (c + 1 < names_.size() ? ',' : '\n');
        }
    }
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace seqcon
