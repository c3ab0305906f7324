// SPDX-License-Identifier: Apache-2.0
#include "ilm/csv.hpp"

#include "ilm/common.hpp"

#include <cstdio>
#include <sstream>

namespace ilm {

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& columns,
                     const std::string& comment)
    : f_(path, std::ios::binary), n_cols_(columns.size()) {
    if (!f_) fail("csv: cannot open " + path);
    if (!comment.empty()) f_ << "# " << comment << "\n";
    for (size_t i = 0; i < columns.size(); ++i) f_ << (i ? "," : "") << columns[i];
    f_ << "\n";
}

void CsvWriter::row(const std::vector<std::string>& cells) {
    if (cells.size() != n_cols_) fail("csv: row width mismatch");
    for (size_t i = 0; i < cells.size(); ++i) f_ << (i ? "," : "") << cells[i];
    f_ << "\n";
}

std::string CsvWriter::num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

std::string CsvWriter::num(long long v) { return std::to_string(v); }

int CsvFile::col(const std::string& name) const {
    for (size_t i = 0; i < columns.size(); ++i)
        if (columns[i] == name) return static_cast<int>(i);
    fail("csv: no column named " + name);
}

const std::string& CsvFile::at(size_t row, const std::string& name) const {
    return rows.at(row).at(static_cast<size_t>(col(name)));
}

double CsvFile::num_at(size_t row, const std::string& name) const {
    const std::string& s = at(row, name);
    if (s.empty()) fail("csv: empty cell in column " + name);
    return std::stod(s);
}

CsvFile read_csv(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail("csv: cannot open " + path);
    CsvFile out;
    std::string line;
    bool header_done = false;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (out.comment.empty()) out.comment = line.size() > 2 ? line.substr(2) : "";
            continue;
        }
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (line.back() == ',') cells.push_back("");
        if (!header_done) {
            out.columns = std::move(cells);
            header_done = true;
        } else {
            out.rows.push_back(std::move(cells));
        }
    }
    return out;
}

}  // namespace ilm
