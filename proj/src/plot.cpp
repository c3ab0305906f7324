// SPDX-License-Identifier: Apache-2.0
#include "ilm/plot.hpp"

#include "ilm/common.hpp"
#include "ilm/csv.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace ilm {

namespace {

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                          "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

}  // namespace

void emit_plot(const std::vector<PlotSeries>& series, const std::string& kind,
               const std::string& x_label, const std::string& y_label,
               const std::string& csv_path, const std::string& svg_path,
               const std::string& comment) {
    if (series.empty()) fail("emit_plot: no series");

    CsvWriter csv(csv_path, {"series", "x", "y"}, comment);
    for (const auto& s : series)
        for (const auto& [x, y] : s.points)
            csv.row({s.name, CsvWriter::num(x), CsvWriter::num(y)});

    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            if (first) {
                xmin = xmax = x;
                ymin = ymax = y;
                first = false;
            }
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;

    const double w = 640, h = 400, ml = 64, mr = 150, mt = 32, mb = 48;
    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
    auto py = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };

    std::ofstream f(svg_path, std::ios::binary);
    if (!f) fail("emit_plot: cannot open " + svg_path);
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
    f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    f << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << kind
      << "</text>\n";
    // axes
    f << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\""
      << h - mb << "\" stroke=\"black\"/>\n";
    f << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
      << "\" stroke=\"black\"/>\n";
    f << "<text x=\"" << (ml + w - mr) / 2 << "\" y=\"" << h - 12
      << "\" text-anchor=\"middle\" font-size=\"12\">" << x_label << "</text>\n";
    f << "<text x=\"16\" y=\"" << (mt + h - mb) / 2
      << "\" font-size=\"12\" transform=\"rotate(-90 16 " << (mt + h - mb) / 2 << ")\" "
      << "text-anchor=\"middle\">" << y_label << "</text>\n";
    for (double t : {0.0, 0.5, 1.0}) {
        double xv = xmin + t * (xmax - xmin), yv = ymin + t * (ymax - ymin);
        f << "<text x=\"" << px(xv) << "\" y=\"" << h - mb + 16
          << "\" text-anchor=\"middle\" font-size=\"10\">" << CsvWriter::num(xv) << "</text>\n";
        f << "<text x=\"" << ml - 6 << "\" y=\"" << py(yv) + 4
          << "\" text-anchor=\"end\" font-size=\"10\">" << CsvWriter::num(yv) << "</text>\n";
    }

    for (size_t si = 0; si < series.size(); ++si) {
        const char* color = kPalette[si % (sizeof(kPalette) / sizeof(kPalette[0]))];
        const auto& pts = series[si].points;
        if (pts.size() > 1) {
            f << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
            for (const auto& [x, y] : pts) f << px(x) << "," << py(y) << " ";
            f << "\"/>\n";
        }
        for (const auto& [x, y] : pts)
            f << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"2.5\" fill=\"" << color
              << "\"/>\n";
        f << "<text x=\"" << w - mr + 10 << "\" y=\"" << mt + 16 + 16 * static_cast<double>(si)
          << "\" font-size=\"11\" fill=\"" << color << "\">" << series[si].name << "</text>\n";
    }
    f << "</svg>\n";
}

std::vector<PlotSeries> read_plot_csv(const std::string& csv_path) {
    CsvFile f = read_csv(csv_path);
    std::vector<PlotSeries> out;
    for (size_t r = 0; r < f.rows.size(); ++r) {
        const std::string& name = f.at(r, "series");
        if (out.empty() || out.back().name != name) {
            PlotSeries s;
            s.name = name;
            out.push_back(std::move(s));
        }
        out.back().points.emplace_back(f.num_at(r, "x"), f.num_at(r, "y"));
    }
    return out;
}

}  // namespace ilm
