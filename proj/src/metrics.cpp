#include "dla/metrics.hpp"

#include <array>
#include <charconv>
#include <sstream>

#include <fmt/format.h>

namespace dla {

std::string format_number(double value) {
    std::array<char, 64> buf;
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    if (ec != std::errc{}) throw std::runtime_error("format_number: conversion failed");
    return std::string(buf.data(), end);
}

std::string format_metrics_row(const MetricsRecord& r, bool with_wall_clock) {
    std::string row = std::to_string(r.step);
    for (double v : {r.total, r.cls, r.align, r.k_reg, r.k, r.src_acc}) row += ',' + format_number(v);
    row += ',';
    if (r.val_acc) row += format_number(*r.val_acc);
    row += ',';
    if (with_wall_clock) row += format_number(r.wall_ms);
    return row;
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path, bool with_wall_clock, std::size_t flush_every)
    : out_(path, std::ios::trunc), path_(path), wall_clock_(with_wall_clock), flush_every_(std::max<std::size_t>(1, flush_every)) {
    if (!out_) throw std::runtime_error(fmt::format("cannot write metrics file {}", path.string()));
    out_ << kMetricsHeader << '\n';
    out_.flush();
}

void MetricsWriter::append(const MetricsRecord& rec) {
    if (rec.step <= last_step_)
        throw std::logic_error(fmt::format("metrics step {} after step {}", rec.step, last_step_));
    last_step_ = rec.step;
    out_ << format_metrics_row(rec, wall_clock_) << '\n';
    if (++pending_ >= flush_every_) flush();
}

void MetricsWriter::flush() {
    out_.flush();
    pending_ = 0;
    if (!out_) throw std::runtime_error(fmt::format("write to {} failed", path_.string()));
}

namespace {

double parse_field(const std::string& s, std::size_t line, std::string_view column) {
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || p != s.data() + s.size())
        throw std::invalid_argument(fmt::format("metrics line {}: bad {} value '{}'", line, column, s));
    return v;
}

}  // namespace

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument(fmt::format("cannot read metrics file {}", path.string()));
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument(fmt::format("{}: empty file, no header", path.string()));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kMetricsHeader)
        throw std::invalid_argument(
            fmt::format("{}: header '{}' does not match the expected columns '{}'", path.string(), line, kMetricsHeader));

    std::vector<MetricsRecord> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (line.back() == ',') f.emplace_back();
        if (f.size() != 9)
            throw std::invalid_argument(fmt::format("metrics line {}: {} columns, expected 9", line_no, f.size()));
        MetricsRecord r;
        const double step = parse_field(f[0], line_no, "step");
        if (step < 1 || step != static_cast<double>(static_cast<std::size_t>(step)))
            throw std::invalid_argument(fmt::format("metrics line {}: bad step '{}'", line_no, f[0]));
        r.step = static_cast<std::size_t>(step);
        r.total = parse_field(f[1], line_no, "total");
        r.cls = parse_field(f[2], line_no, "cls");
        r.align = parse_field(f[3], line_no, "align");
        r.k_reg = parse_field(f[4], line_no, "k_reg");
        r.k = parse_field(f[5], line_no, "k");
        r.src_acc = parse_field(f[6], line_no, "src_acc");
        if (!f[7].empty()) r.val_acc = parse_field(f[7], line_no, "val_acc");
        if (!f[8].empty()) r.wall_ms = parse_field(f[8], line_no, "wall_ms");
        if (!rows.empty() && r.step <= rows.back().step)
            throw std::invalid_argument(fmt::format("metrics line {}: step {} not increasing", line_no, r.step));
        rows.push_back(r);
    }
    return rows;
}

}  // namespace dla
