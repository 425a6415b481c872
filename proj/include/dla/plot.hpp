#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dla/model.hpp"

namespace dla {

struct PlotOptions {
    double lambda = 1e-3;  // weight applied to the align column
    std::string title = "training curves";
    int width = 800;
    int height = 480;
};

// Line chart of cls, lambda*align (left axis) and val_acc (right axis, 0..1)
// against step. Output depends only on the rows and options. Throws
// std::invalid_argument("... no data rows") for an empty input.
std::string render_svg(const std::vector<MetricsRecord>& rows, const PlotOptions& options);

void plot_metrics(const std::filesystem::path& csv, const std::filesystem::path& svg, const PlotOptions& options);

}  // namespace dla
