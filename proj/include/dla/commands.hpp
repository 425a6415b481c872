#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dla/config.hpp"
#include "dla/data.hpp"
#include "dla/linear_lab.hpp"

namespace dla::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

inline constexpr const char* kManifestName = "run_manifest.ini";
inline constexpr const char* kCheckpointName = "checkpoint.bin";

struct TrainRequest {
    std::filesystem::path config;
    std::optional<std::filesystem::path> out;
    std::optional<std::uint64_t> seed;
};

struct TrainOutcome {
    std::filesystem::path dir;
    std::filesystem::path metrics;
    std::filesystem::path checkpoint;
    std::filesystem::path manifest;
    std::size_t steps = 0;
    double final_k = 0.0;
    std::optional<double> final_val_acc;
};

// Config file plus command-line overrides. Throws ConfigError.
RunConfig load_run_config(const TrainRequest& request);

// Model spec with input extents implied by the data section.
ModelSpec model_spec_for(const RunConfig& config);

struct Datasets {
    ImageDataset source;
    std::optional<ImageDataset> source_test;
    std::optional<TargetSplit> target;
};

// Reads (or generates) the data named by the config. Files listed in the
// download manifest are checked against their sha256.
Datasets load_datasets(const RunConfig& config, bool with_source_test = false);

// Writes <dir>/metrics CSV, checkpoint.bin (plus checkpoint_step<N>.bin at
// the configured cadence) and run_manifest.ini.
TrainOutcome cmd_train(const TrainRequest& request);

struct EvalRequest {
    std::filesystem::path checkpoint;
    // target-test | target-val | source-test | usps:<file> | mnist:<images>,<labels>
    std::string dataset = "target-test";
    // Declared model and data location; defaults to the config stored in the checkpoint.
    std::optional<std::filesystem::path> config;
};

// Prints "accuracy <pct>" with two decimals and returns the fraction.
double cmd_eval(const EvalRequest& request, std::ostream& out);

struct LabRequest {
    lab::LabOptions options;
    std::optional<std::filesystem::path> csv;
};

// Prints the residual table; returns kExitOk iff every identity passes.
int cmd_linear_lab(const LabRequest& request, std::ostream& out);

struct PlotRequest {
    std::filesystem::path metrics;
    std::filesystem::path svg;
    std::optional<double> lambda;  // else [train] lambda from a sibling run_manifest.ini, else 1e-3
};

void cmd_plot(const PlotRequest& request);

}  // namespace dla::cli
