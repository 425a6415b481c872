#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "dla/model.hpp"

namespace dla {

inline constexpr std::string_view kMetricsHeader = "step,total,cls,align,k_reg,k,src_acc,val_acc,wall_ms";

// Shortest round-trip decimal, independent of the global locale.
std::string format_number(double value);

// One CSV row without the trailing newline. val_acc is empty when not
// sampled; wall_ms is empty when with_wall_clock is false.
std::string format_metrics_row(const MetricsRecord& rec, bool with_wall_clock = true);

class MetricsWriter {
public:
    // Truncates the file and writes the header.
    MetricsWriter(const std::filesystem::path& path, bool with_wall_clock, std::size_t flush_every = 1);

    // Steps must be strictly increasing.
    void append(const MetricsRecord& rec);
    void flush();

private:
    std::ofstream out_;
    std::filesystem::path path_;
    bool wall_clock_;
    std::size_t flush_every_;
    std::size_t pending_ = 0;
    std::size_t last_step_ = 0;
};

// Throws std::invalid_argument on a wrong header, malformed row or
// non-increasing step.
std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

}  // namespace dla
