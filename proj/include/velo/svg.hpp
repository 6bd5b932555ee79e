#ifndef VELO_SVG_HPP
#define VELO_SVG_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "velo/data.hpp"

namespace velo::svg {

struct Series {
    std::string label;
    std::string color = "#1f77b4";
    double radius = 2.0;
    bool hollow = false;
    std::vector<double> x;
    std::vector<double> y;
};

struct ScatterPlot {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<Series> series;
    int width = 480;
    int height = 400;
};

/// Data-to-pixel mapping of a plot: the union of all series, padded by 5%, fills the plot area.
struct Projection {
    double x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;
    double left = 60.0, right = 460.0, top = 30.0, bottom = 350.0;

    double px(double x) const { return left + (x - x0) / (x1 - x0) * (right - left); }
    double py(double y) const { return bottom - (y - y0) / (y1 - y0) * (bottom - top); }
};

Projection project(const ScatterPlot& plot);

/// One `<circle>` per finite point, axes with min/max tick labels, and a legend.
std::string render(const ScatterPlot& plot);

/// Colour for the k-th category in a fixed palette.
const std::string& palette(std::size_t k);

/// Data and fitted values for the plots of one run.
struct PlotInputs {
    std::vector<std::string> gene_names;
    Matrix u;
    Matrix s;
    Matrix u_hat;
    Matrix s_hat;
    Vector time;
    /// Per-cell category used for colouring (label or branch); empty for a single colour.
    std::vector<std::string> groups;
    /// Optional reference time (true or capture) for the times scatter.
    std::vector<double> reference_time;
    std::string reference_name = "reference time";
};

/**
 * Writes `<gene>_phase.svg`, `<gene>_u_t.svg`, `<gene>_s_t.svg` for each
 * selected gene and `times.svg` when a reference time is present. Returns the
 * written paths. An empty gene selection writes no gene plots.
 */
std::vector<std::filesystem::path> plot_outputs(const std::filesystem::path& dir, const PlotInputs& inputs,
                                                const std::vector<std::string>& genes);

}  // namespace velo::svg

#endif
