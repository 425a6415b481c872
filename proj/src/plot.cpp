#include "dla/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "dla/metrics.hpp"

namespace dla {

namespace {

constexpr double kLeft = 70, kRight = 70, kTop = 40, kBottom = 60;

std::string escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

// Round up to 1, 2 or 5 times a power of ten.
double nice_ceiling(double v) {
    if (!(v > 0) || !std::isfinite(v)) return 1;
    const double p = std::pow(10.0, std::floor(std::log10(v)));
    for (double m : {1.0, 2.0, 5.0, 10.0})
        if (v <= m * p * (1 + 1e-12)) return m * p;
    return 10 * p;
}

std::string tick_label(double v) { return fmt::format("{:.4g}", v); }

}  // namespace

std::string render_svg(const std::vector<MetricsRecord>& rows, const PlotOptions& o) {
    if (rows.empty()) throw std::invalid_argument("metrics file has no data rows");
    const double w = o.width, h = o.height;
    const double pw = w - kLeft - kRight, ph = h - kTop - kBottom;

    const double x0 = static_cast<double>(rows.front().step);
    const double x1 = std::max(static_cast<double>(rows.back().step), x0 + 1);
    double loss_max = 0;
    for (const auto& r : rows) {
        for (double v : {r.cls, o.lambda * r.align})
            if (std::isfinite(v)) loss_max = std::max(loss_max, v);
    }
    loss_max = nice_ceiling(loss_max);

    const auto px = [&](double step) { return kLeft + (step - x0) / (x1 - x0) * pw; };
    const auto py = [&](double v, double top) { return kTop + ph - std::clamp(v / top, 0.0, 1.0) * ph; };

    std::string s;
    s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    s += fmt::format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" "
                     "font-family=\"sans-serif\" font-size=\"12\">\n",
                     o.width, o.height, o.width, o.height);
    s += fmt::format("<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", o.width, o.height);
    s += fmt::format("<text x=\"{:.1f}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n", w / 2,
                     escape(o.title));

    s += "<g stroke=\"#ccc\" stroke-width=\"1\">\n";
    for (int i = 0; i <= 5; ++i) {
        const double y = kTop + ph * i / 5.0;
        s += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\"/>\n", kLeft, y, kLeft + pw, y);
    }
    s += "</g>\n";
    s += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" fill=\"none\" "
                     "stroke=\"black\"/>\n",
                     kLeft, kTop, pw, ph);

    s += "<g text-anchor=\"middle\">\n";
    for (int i = 0; i <= 5; ++i) {
        const double step = std::round(x0 + (x1 - x0) * i / 5.0);
        s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\">{}</text>\n", px(step), kTop + ph + 18, tick_label(step));
    }
    s += "</g>\n<g text-anchor=\"end\">\n";
    for (int i = 0; i <= 5; ++i)
        s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\">{}</text>\n", kLeft - 6, kTop + ph - ph * i / 5.0 + 4,
                         tick_label(loss_max * i / 5.0));
    s += "</g>\n<g text-anchor=\"start\">\n";
    for (int i = 0; i <= 5; ++i)
        s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\">{}</text>\n", kLeft + pw + 6, kTop + ph - ph * i / 5.0 + 4,
                         tick_label(i / 5.0));
    s += "</g>\n";
    s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">step</text>\n", kLeft + pw / 2, h - 18);
    s += fmt::format("<text transform=\"translate(18 {:.2f}) rotate(-90)\" text-anchor=\"middle\">loss</text>\n",
                     kTop + ph / 2);
    s += fmt::format("<text transform=\"translate({:.2f} {:.2f}) rotate(90)\" text-anchor=\"middle\">"
                     "validation accuracy</text>\n",
                     w - 18, kTop + ph / 2);

    struct Series {
        const char* id;
        const char* label;
        const char* color;
    };
    const Series series[] = {{"cls", "cls", "#1f77b4"},
                             {"align", "λ·align", "#d62728"},
                             {"val_acc", "val_acc", "#2ca02c"}};
    for (const auto& se : series) {
        std::string pts;
        for (const auto& r : rows) {
            double v;
            double top = loss_max;
            if (se.id[0] == 'c') v = r.cls;
            else if (se.id[0] == 'a') v = o.lambda * r.align;
            else if (r.val_acc) {
                v = *r.val_acc;
                top = 1;
            } else continue;
            if (!std::isfinite(v)) continue;
            if (!pts.empty()) pts += ' ';
            pts += fmt::format("{:.2f},{:.2f}", px(static_cast<double>(r.step)), py(v, top));
        }
        s += fmt::format("<polyline id=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                         se.id, se.color, pts);
    }

    s += "<g>\n";
    for (std::size_t i = 0; i < std::size(series); ++i) {
        const double y = kTop + 14 + 18.0 * static_cast<double>(i);
        s += fmt::format("<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"{}\" "
                         "stroke-width=\"2\"/>\n",
                         kLeft + pw - 120, y, kLeft + pw - 96, y, series[i].color);
        s += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\">{}</text>\n", kLeft + pw - 90, y + 4, series[i].label);
    }
    s += "</g>\n</svg>\n";
    return s;
}

void plot_metrics(const std::filesystem::path& csv, const std::filesystem::path& svg, const PlotOptions& options) {
    const auto rows = read_metrics(csv);
    if (rows.empty()) throw std::invalid_argument(fmt::format("{}: no data rows", csv.string()));
    const auto text = render_svg(rows, options);
    std::ofstream out(svg, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", svg.string()));
}

}  // namespace dla
