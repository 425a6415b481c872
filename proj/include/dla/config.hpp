#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "dla/model.hpp"

namespace dla {

// Bad configuration or command-line input. The message names the offending
// key where there is one.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class SourceKind { mnist, synthetic };
enum class TargetKind { usps, synthetic, none };
enum class Precision { float32, float64 };

std::string_view to_string(SourceKind k);
std::string_view to_string(TargetKind k);
std::string_view to_string(Precision p);

struct DataConfig {
    std::filesystem::path dir;  // base for relative file names
    SourceKind source = SourceKind::mnist;
    TargetKind target = TargetKind::usps;
    std::filesystem::path mnist_train_images = "train-images-idx3-ubyte";
    std::filesystem::path mnist_train_labels = "train-labels-idx1-ubyte";
    std::filesystem::path mnist_test_images = "t10k-images-idx3-ubyte";
    std::filesystem::path mnist_test_labels = "t10k-labels-idx1-ubyte";
    std::filesystem::path usps_train = "usps";
    std::filesystem::path usps_test = "usps.t";
    std::filesystem::path download_manifest;  // optional: "file url sha256" lines
    std::uint64_t split_seed = 0;
    std::size_t synthetic_train = 2000;
    std::size_t synthetic_test = 500;
    std::size_t synthetic_size = 28;
};

struct OutputConfig {
    std::filesystem::path dir = "runs/latest";
    std::string metrics = "metrics.csv";
    std::size_t metrics_flush_every = 1;
    std::size_t checkpoint_every = 0;  // 0: final checkpoint only
    std::size_t log_every = 100;
    bool wall_clock = true;            // false writes an empty wall_ms column
};

struct RunConfig {
    TrainConfig train;
    ModelSpec model;  // input extents are filled from the data at load time
    Precision precision = Precision::float32;
    DataConfig data;
    OutputConfig output;
};

// INI text with sections [train] [model] [data] [output]. Unknown sections
// or keys and malformed values throw ConfigError. Relative [data] dir
// resolves against base_dir.
RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path);

// Canonical INI echo: every key, fixed order, values that parse back to the
// same configuration.
std::string to_ini(const RunConfig& config);

// Resolves a data file name: absolute as is, else under [data] dir, else
// under $DLA_DATA_DIR, else relative to the working directory.
std::filesystem::path resolve_data_path(const DataConfig& data, const std::filesystem::path& name);

// git-style blob hash: sha1("blob <size>\0" + content), lowercase hex.
std::string git_blob_hash(std::string_view content);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace dla
