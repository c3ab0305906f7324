// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace ilm {

struct PlotSeries {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

/// Writes the series twice: a CSV (the ground truth) and a simple SVG line
/// plot with one polyline and markers per series.
void emit_plot(const std::vector<PlotSeries>& series, const std::string& kind,
               const std::string& x_label, const std::string& y_label,
               const std::string& csv_path, const std::string& svg_path,
               const std::string& comment = "");

/// Reads back a CSV written by emit_plot.
std::vector<PlotSeries> read_plot_csv(const std::string& csv_path);

}  // namespace ilm
