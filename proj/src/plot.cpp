#include "modcon/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "modcon/errors.hpp"

namespace modcon {

int CsvTable::column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
}

std::vector<double> CsvTable::numbers(const std::string& name) const {
    const int c = column(name);
    if (c < 0) throw DataError("CSV has no column '" + name + "'");
    std::vector<double> out;
    out.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& cell = rows[r].at(static_cast<std::size_t>(c));
        char* end = nullptr;
        const double v = std::strtod(cell.c_str(), &end);
        if (cell.empty() || *end != '\0')
            throw DataError("CSV row " + std::to_string(r + 2) + ", column '" + name + "': not a number: '" + cell + "'");
        out.push_back(v);
    }
    return out;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open " + path.string());
    CsvTable t;
    std::string line;
    if (!std::getline(f, line)) throw DataError(path.string() + ": empty CSV");
    t.header = split_line(line);
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto row = split_line(line);
        if (row.size() != t.header.size())
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(t.header.size()) + " fields");
        t.rows.push_back(std::move(row));
    }
    return t;
}

PlotKind detect_plot_kind(const CsvTable& t) {
    auto has = [&](const char* c) { return t.column(c) >= 0; };
    if (has("kind") && has("accuracy") && has("layer")) return PlotKind::sweep;
    if (has("detection_text") && has("resolution_text")) return PlotKind::layer_profile;
    if (has("bin_lo") && has("mean_strength")) return PlotKind::bins;
    if (has("confidence") && has("conflict_strength")) return PlotKind::records;
    if (has("head") && has("delta_text")) return PlotKind::head_deltas;
    throw DataError("unrecognized CSV header for plotting");
}

namespace {

constexpr double kW = 720, kH = 440, kLeft = 70, kRight = 160, kTop = 40, kBottom = 50;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
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

struct Frame {
    double x0, x1, y0, y1;
    std::ostringstream body;

    double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kW - kLeft - kRight); }
    double py(double y) const { return kH - kBottom - (y - y0) / (y1 - y0) * (kH - kTop - kBottom); }

    void polyline(const std::vector<double>& xs, const std::vector<double>& ys, const char* color, double width = 1.8) {
        body << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << width << "\" points=\"";
        for (std::size_t i = 0; i < xs.size(); ++i) body << fmt(px(xs[i])) << ',' << fmt(py(ys[i])) << ' ';
        body << "\"/>\n";
    }
    void band(const std::vector<double>& xs, const std::vector<double>& lo, const std::vector<double>& hi,
              const char* color) {
        body << "<polygon fill=\"" << color << "\" fill-opacity=\"0.18\" stroke=\"none\" points=\"";
        for (std::size_t i = 0; i < xs.size(); ++i) body << fmt(px(xs[i])) << ',' << fmt(py(hi[i])) << ' ';
        for (std::size_t i = xs.size(); i-- > 0;) body << fmt(px(xs[i])) << ',' << fmt(py(lo[i])) << ' ';
        body << "\"/>\n";
    }
    void dot(double x, double y, const char* color, double r = 2.0, double opacity = 1.0) {
        body << "<circle cx=\"" << fmt(px(x)) << "\" cy=\"" << fmt(py(y)) << "\" r=\"" << r << "\" fill=\"" << color
             << "\" fill-opacity=\"" << opacity << "\"/>\n";
    }
    void vline(double x, double ylo, double yhi, const char* color) {
        body << "<line x1=\"" << fmt(px(x)) << "\" y1=\"" << fmt(py(ylo)) << "\" x2=\"" << fmt(px(x)) << "\" y2=\""
             << fmt(py(yhi)) << "\" stroke=\"" << color << "\"/>\n";
    }
    void legend(int slot, const std::string& label, const char* color) {
        const double y = kTop + 10 + slot * 18;
        body << "<rect x=\"" << kW - kRight + 12 << "\" y=\"" << y - 8 << "\" width=\"12\" height=\"10\" fill=\""
             << color << "\"/><text x=\"" << kW - kRight + 30 << "\" y=\"" << y << "\" font-size=\"12\">"
             << escape(label) << "</text>\n";
    }
};

Frame make_frame(double x0, double x1, double y0, double y1) {
    if (!(x1 > x0)) x1 = x0 + 1;
    if (!(y1 > y0)) y1 = y0 + 1;
    return Frame{x0, x1, y0, y1, {}};
}

std::pair<double, double> range_of(const std::vector<std::vector<double>>& series, double pad = 0.05) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : series) {
        for (double v : s) {
            if (!std::isfinite(v)) continue;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (!std::isfinite(lo)) return {0, 1};
    const double span = hi > lo ? hi - lo : 1.0;
    return {lo - pad * span, hi + pad * span};
}

std::string wrap(Frame& f, const std::string& title, const std::string& xlabel, const std::string& ylabel) {
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" viewBox=\"0 0 "
      << kW << ' ' << kH << "\" font-family=\"sans-serif\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
      << "</text>\n";
    const double ax0 = kLeft, ax1 = kW - kRight, ay0 = kTop, ay1 = kH - kBottom;
    s << "<rect x=\"" << ax0 << "\" y=\"" << ay0 << "\" width=\"" << ax1 - ax0 << "\" height=\"" << ay1 - ay0
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double xv = f.x0 + (f.x1 - f.x0) * i / 5.0, yv = f.y0 + (f.y1 - f.y0) * i / 5.0;
        s << "<text x=\"" << fmt(f.px(xv)) << "\" y=\"" << ay1 + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
          << fmt(xv) << "</text>\n";
        s << "<text x=\"" << ax0 - 6 << "\" y=\"" << fmt(f.py(yv) + 4) << "\" text-anchor=\"end\" font-size=\"11\">"
          << fmt(yv) << "</text>\n";
        s << "<line x1=\"" << ax0 << "\" x2=\"" << ax1 << "\" y1=\"" << fmt(f.py(yv)) << "\" y2=\"" << fmt(f.py(yv))
          << "\" stroke=\"#ddd\"/>\n";
    }
    s << "<text x=\"" << (ax0 + ax1) / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
      << escape(xlabel) << "</text>\n";
    s << "<text transform=\"translate(16," << (ay0 + ay1) / 2
      << ") rotate(-90)\" text-anchor=\"middle\" font-size=\"12\">" << escape(ylabel) << "</text>\n";
    s << f.body.str() << "</svg>\n";
    return s.str();
}

std::string sweep_svg(const CsvTable& t, const std::string& title) {
    const auto layer = t.numbers("layer");
    const auto acc = t.numbers("accuracy");
    const int kc = t.column("kind");
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> series;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        auto& s = series[t.rows[i][static_cast<std::size_t>(kc)]];
        s.first.push_back(layer[i]);
        s.second.push_back(acc[i]);
    }
    auto [x0, x1] = range_of({layer}, 0.0);
    Frame f = make_frame(x0, x1, 0.4, 1.0);
    int slot = 0;
    for (const auto& [kind, s] : series) {
        const char* color = kPalette[slot % 5];
        f.polyline(s.first, s.second, color);
        f.legend(slot++, kind, color);
    }
    return wrap(f, title, "layer", "probe accuracy");
}

std::string profile_svg(const CsvTable& t, const std::string& title) {
    const auto layer = t.numbers("layer");
    std::vector<std::vector<double>> all;
    struct S {
        std::string col;
        std::vector<double> v, lo, hi;
    };
    std::vector<S> ss;
    for (const char* col : {"detection_text", "detection_image", "resolution_text", "resolution_image"}) {
        if (t.column(col) < 0) continue;
        S s{col, t.numbers(col), {}, {}};
        const std::string sdc = std::string(col) + "_sd";
        const auto sd = t.column(sdc) >= 0 ? t.numbers(sdc) : std::vector<double>(s.v.size(), 0.0);
        for (std::size_t i = 0; i < s.v.size(); ++i) {
            s.lo.push_back(s.v[i] - sd[i]);
            s.hi.push_back(s.v[i] + sd[i]);
        }
        all.push_back(s.lo);
        all.push_back(s.hi);
        ss.push_back(std::move(s));
    }
    auto [x0, x1] = range_of({layer}, 0.0);
    auto [y0, y1] = range_of(all);
    Frame f = make_frame(x0, x1, y0, y1);
    for (std::size_t i = 0; i < ss.size(); ++i) {
        const char* color = kPalette[i % 5];
        f.band(layer, ss[i].lo, ss[i].hi, color);
        f.polyline(layer, ss[i].v, color);
        f.legend(static_cast<int>(i), ss[i].col, color);
    }
    return wrap(f, title, "layer", "summed attention difference");
}

std::string bins_svg(const CsvTable& t, const std::string& title) {
    const auto lo = t.numbers("bin_lo"), hi = t.numbers("bin_hi"), count = t.numbers("count");
    const auto mean = t.numbers("mean_strength"), var = t.numbers("var_strength");
    std::vector<double> x, m, l, h;
    for (std::size_t i = 0; i < lo.size(); ++i) {
        if (count[i] == 0) continue;
        const double sd = std::sqrt(std::max(0.0, var[i]));
        x.push_back((lo[i] + hi[i]) / 2);
        m.push_back(mean[i]);
        l.push_back(mean[i] - sd);
        h.push_back(mean[i] + sd);
    }
    auto [y0, y1] = range_of({l, h});
    Frame f = make_frame(-1, 1, y0, y1);
    for (std::size_t i = 0; i < x.size(); ++i) {
        f.vline(x[i], l[i], h[i], kPalette[0]);
        f.dot(x[i], m[i], kPalette[0], 3.5);
    }
    return wrap(f, title, "resolution confidence", "conflict strength (mean ± sd)");
}

std::string records_svg(const CsvTable& t, const std::string& title) {
    const auto c = t.numbers("confidence"), s = t.numbers("conflict_strength");
    auto [y0, y1] = range_of({s});
    Frame f = make_frame(-1, 1, y0, y1);
    for (std::size_t i = 0; i < c.size(); ++i) f.dot(c[i], s[i], kPalette[0], 1.5, 0.35);
    constexpr int kBins = 20;
    std::vector<double> sum(kBins, 0.0), n(kBins, 0.0);
    for (std::size_t i = 0; i < c.size(); ++i) {
        const int b = std::clamp(static_cast<int>((c[i] + 1.0) / 2.0 * kBins), 0, kBins - 1);
        sum[static_cast<std::size_t>(b)] += s[i];
        n[static_cast<std::size_t>(b)] += 1;
    }
    std::vector<double> bx, by;
    for (int b = 0; b < kBins; ++b) {
        if (n[static_cast<std::size_t>(b)] == 0) continue;
        bx.push_back(-1.0 + (b + 0.5) * 2.0 / kBins);
        by.push_back(sum[static_cast<std::size_t>(b)] / n[static_cast<std::size_t>(b)]);
    }
    f.polyline(bx, by, kPalette[1], 2.2);
    f.legend(0, "samples", kPalette[0]);
    f.legend(1, "binned mean", kPalette[1]);
    return wrap(f, title, "resolution confidence", "conflict strength");
}

std::string heatmap_svg(const CsvTable& t, const std::string& title) {
    const auto layer = t.numbers("layer"), head = t.numbers("head"), d = t.numbers("delta_text");
    const double nl = *std::max_element(layer.begin(), layer.end()) + 1;
    const double nh = *std::max_element(head.begin(), head.end()) + 1;
    double vmax = 0;
    for (double v : d) vmax = std::max(vmax, std::abs(v));
    if (vmax == 0) vmax = 1;
    Frame f = make_frame(0, nh, 0, nl);
    const double cw = (kW - kLeft - kRight) / nh, ch = (kH - kTop - kBottom) / nl;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double a = d[i] / vmax;
        const int r = a > 0 ? 255 : static_cast<int>(255 * (1 + a));
        const int b = a < 0 ? 255 : static_cast<int>(255 * (1 - a));
        const int g = static_cast<int>(255 * (1 - std::abs(a)));
        char color[16];
        std::snprintf(color, sizeof color, "#%02x%02x%02x", r, g, b);
        f.body << "<rect x=\"" << fmt(f.px(head[i])) << "\" y=\"" << fmt(f.py(layer[i] + 1)) << "\" width=\""
               << fmt(cw) << "\" height=\"" << fmt(ch) << "\" fill=\"" << color << "\"/>\n";
    }
    f.legend(0, "+" + fmt(vmax), "#ff0000");
    f.legend(1, "-" + fmt(vmax), "#0000ff");
    return wrap(f, title, "head", "layer");
}

}  // namespace

std::string render_svg(const CsvTable& table, const std::string& title) {
    if (table.rows.empty()) throw DataError("nothing to plot: CSV has no rows");
    switch (detect_plot_kind(table)) {
        case PlotKind::sweep: return sweep_svg(table, title);
        case PlotKind::layer_profile: return profile_svg(table, title);
        case PlotKind::bins: return bins_svg(table, title);
        case PlotKind::records: return records_svg(table, title);
        case PlotKind::head_deltas: return heatmap_svg(table, title);
    }
    return {};
}

void plot_csv(const std::filesystem::path& csv, const std::filesystem::path& svg) {
    CsvTable t;
    std::string body;
    try {
        t = read_csv(csv);
        body = render_svg(t, csv.stem().string());
    } catch (const DataError& e) {
        throw DataError(csv.string() + ": " + e.what());
    }
    std::ofstream f(svg, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + svg.string());
    f << body;
}

}  // namespace modcon
