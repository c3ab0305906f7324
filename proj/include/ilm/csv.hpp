// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace ilm {

/// Deterministic CSV writer: fixed "%.9g" float formatting, one optional
/// leading "# key=value ..." comment line for run metadata (seeds).
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& columns,
              const std::string& comment = "");
    void row(const std::vector<std::string>& cells);
    static std::string num(double v);
    static std::string num(long long v);

private:
    std::ofstream f_;
    size_t n_cols_;
};

struct CsvFile {
    std::string comment;  // without the leading "# "
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;

    int col(const std::string& name) const;
    double num_at(size_t row, const std::string& name) const;
    const std::string& at(size_t row, const std::string& name) const;
};

CsvFile read_csv(const std::string& path);

}  // namespace ilm
