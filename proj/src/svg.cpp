#include "velo/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>

#include "velo/error.hpp"

namespace velo::svg {

namespace {

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string label_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) {
        throw InputError("cannot write '" + path.string() + "'");
    }
    out << text;
}

std::vector<Series> grouped(const std::vector<double>& x, const std::vector<double>& y,
                            const std::vector<std::string>& groups, double radius, bool hollow) {
    std::map<std::string, Series> by_group;
    std::vector<std::string> order;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const std::string g = groups.empty() ? "cells" : groups[i];
        auto [it, inserted] = by_group.try_emplace(g);
        if (inserted) {
            order.push_back(g);
        }
        it->second.x.push_back(x[i]);
        it->second.y.push_back(y[i]);
    }
    std::sort(order.begin(), order.end());
    std::vector<Series> out;
    for (std::size_t k = 0; k < order.size(); ++k) {
        Series s = std::move(by_group[order[k]]);
        s.label = order[k];
        s.color = palette(k);
        s.radius = radius;
        s.hollow = hollow;
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<double> column(const Matrix& m, Eigen::Index g) {
    return {m.col(g).data(), m.col(g).data() + m.rows()};
}

}  // namespace

const std::string& palette(std::size_t k) {
    static const std::vector<std::string> colors{"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    return colors[k % colors.size()];
}

Projection project(const ScatterPlot& plot) {
    Projection p;
    p.right = plot.width - 20.0;
    p.bottom = plot.height - 50.0;
    double lo_x = std::numeric_limits<double>::infinity(), hi_x = -lo_x, lo_y = lo_x, hi_y = -lo_x;
    for (const auto& s : plot.series) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) {
                lo_x = std::min(lo_x, s.x[i]);
                hi_x = std::max(hi_x, s.x[i]);
                lo_y = std::min(lo_y, s.y[i]);
                hi_y = std::max(hi_y, s.y[i]);
            }
        }
    }
    if (!std::isfinite(lo_x)) {
        lo_x = lo_y = 0.0;
        hi_x = hi_y = 1.0;
    }
    auto pad = [](double& lo, double& hi) {
        if (hi <= lo) {
            lo -= 0.5;
            hi += 0.5;
        }
        const double m = 0.05 * (hi - lo);
        lo -= m;
        hi += m;
    };
    pad(lo_x, hi_x);
    pad(lo_y, hi_y);
    p.x0 = lo_x;
    p.x1 = hi_x;
    p.y0 = lo_y;
    p.y1 = hi_y;
    return p;
}

std::string render(const ScatterPlot& plot) {
    const Projection p = project(plot);
    std::string out;
    out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(plot.width) + "\" height=\"" +
           std::to_string(plot.height) + "\" viewBox=\"0 0 " + std::to_string(plot.width) + " " +
           std::to_string(plot.height) + "\">\n";
    out += "<rect x=\"0\" y=\"0\" width=\"" + std::to_string(plot.width) + "\" height=\"" +
           std::to_string(plot.height) + "\" fill=\"white\"/>\n";
    out += "<text x=\"" + num(0.5 * plot.width) + "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" +
           escape(plot.title) + "</text>\n";
    out += "<line x1=\"" + num(p.left) + "\" y1=\"" + num(p.bottom) + "\" x2=\"" + num(p.right) + "\" y2=\"" +
           num(p.bottom) + "\" stroke=\"black\"/>\n";
    out += "<line x1=\"" + num(p.left) + "\" y1=\"" + num(p.top) + "\" x2=\"" + num(p.left) + "\" y2=\"" +
           num(p.bottom) + "\" stroke=\"black\"/>\n";
    out += "<text x=\"" + num(p.left) + "\" y=\"" + num(p.bottom + 14) + "\" font-size=\"10\">" +
           label_num(p.x0) + "</text>\n";
    out += "<text x=\"" + num(p.right) + "\" y=\"" + num(p.bottom + 14) +
           "\" text-anchor=\"end\" font-size=\"10\">" + label_num(p.x1) + "</text>\n";
    out += "<text x=\"" + num(p.left - 4) + "\" y=\"" + num(p.bottom) + "\" text-anchor=\"end\" font-size=\"10\">" +
           label_num(p.y0) + "</text>\n";
    out += "<text x=\"" + num(p.left - 4) + "\" y=\"" + num(p.top + 8) + "\" text-anchor=\"end\" font-size=\"10\">" +
           label_num(p.y1) + "</text>\n";
    out += "<text x=\"" + num(0.5 * (p.left + p.right)) + "\" y=\"" + num(plot.height - 22.0) +
           "\" text-anchor=\"middle\" font-size=\"12\">" + escape(plot.x_label) + "</text>\n";
    out += "<text x=\"14\" y=\"" + num(0.5 * (p.top + p.bottom)) + "\" text-anchor=\"middle\" font-size=\"12\" " +
           "transform=\"rotate(-90 14 " + num(0.5 * (p.top + p.bottom)) + ")\">" + escape(plot.y_label) + "</text>\n";
    for (const auto& s : plot.series) {
        out += "<g class=\"series\" data-label=\"" + escape(s.label) + "\">\n";
        const std::string style = s.hollow ? "fill=\"none\" stroke=\"" + s.color + "\""
                                           : "fill=\"" + s.color + "\" fill-opacity=\"0.6\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
                continue;
            }
            out += "<circle cx=\"" + num(p.px(s.x[i])) + "\" cy=\"" + num(p.py(s.y[i])) + "\" r=\"" + num(s.radius) +
                   "\" " + style + "/>\n";
        }
        out += "</g>\n";
    }
    double ly = p.top + 4.0;
    for (const auto& s : plot.series) {
        out += "<text x=\"" + num(p.right - 4) + "\" y=\"" + num(ly + 8) + "\" text-anchor=\"end\" font-size=\"10\" " +
               "fill=\"" + s.color + "\">" + escape(s.label) + "</text>\n";
        ly += 12.0;
    }
    out += "</svg>\n";
    return out;
}

std::vector<std::filesystem::path> plot_outputs(const std::filesystem::path& dir, const PlotInputs& in,
                                                const std::vector<std::string>& genes) {
    const auto n = in.u.rows();
    if (in.u_hat.rows() != n || in.s_hat.rows() != n || in.s.rows() != n || in.time.size() != n) {
        throw ShapeError("plot: data, fitted values and times must cover the same cells");
    }
    if (!in.groups.empty() && static_cast<Eigen::Index>(in.groups.size()) != n) {
        throw ShapeError("plot: one group per cell required");
    }
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    const std::vector<double> t(in.time.data(), in.time.data() + n);
    for (const auto& gene : genes) {
        const auto it = std::find(in.gene_names.begin(), in.gene_names.end(), gene);
        if (it == in.gene_names.end()) {
            throw InputError("plot: unknown gene '" + gene + "'");
        }
        const auto g = static_cast<Eigen::Index>(it - in.gene_names.begin());
        const auto u = column(in.u, g), s = column(in.s, g), uh = column(in.u_hat, g), sh = column(in.s_hat, g);

        auto make = [&](const std::string& suffix, const std::string& xl, const std::string& yl,
                        const std::vector<double>& dx, const std::vector<double>& dy, const std::vector<double>& fx,
                        const std::vector<double>& fy) {
            ScatterPlot plot;
            plot.title = gene + " " + suffix;
            plot.x_label = xl;
            plot.y_label = yl;
            plot.series = grouped(dx, dy, in.groups, 2.0, false);
            Series fit;
            fit.label = "fitted";
            fit.color = "#000000";
            fit.radius = 1.2;
            fit.hollow = true;
            fit.x = fx;
            fit.y = fy;
            plot.series.push_back(std::move(fit));
            const auto path = dir / (gene + "_" + suffix + ".svg");
            write_file(path, render(plot));
            written.push_back(path);
        };
        make("phase", "spliced", "unspliced", s, u, sh, uh);
        make("u_t", "latent time", "unspliced", t, u, t, uh);
        make("s_t", "latent time", "spliced", t, s, t, sh);
    }
    if (!in.reference_time.empty()) {
        if (static_cast<Eigen::Index>(in.reference_time.size()) != n) {
            throw ShapeError("plot: one reference time per cell required");
        }
        ScatterPlot plot;
        plot.title = "inferred vs " + in.reference_name;
        plot.x_label = in.reference_name;
        plot.y_label = "inferred time";
        plot.series = grouped(in.reference_time, t, in.groups, 2.0, false);
        const auto path = dir / "times.svg";
        write_file(path, render(plot));
        written.push_back(path);
    }
    return written;
}

}  // namespace velo::svg
