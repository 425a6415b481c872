#pragma once

// Binary checkpoint, little-endian:
//
//   offset  size   field
//   0       8      magic "DLACKPT\0"
//   8       4      u32 format version (1)
//   12      4      u32 bytes per stored value (4 = float32, 8 = float64)
//   16      8      u64 config length L
//   24      L      config echo (INI text)
//           8      f64 final k_hat
//           8      f64 standardization mean
//           8      f64 standardization stddev
//           4      u32 blob count N
//   N times:
//           4      u32 name length, then the name bytes
//           4      u32 rank R, then R x u64 extents
//           ...    values, row-major, stored width
//           4      u32 CRC-32 of every preceding byte

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "dla/data.hpp"
#include "dla/optim.hpp"

namespace dla {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    struct Blob {
        std::string name;
        Shape shape;
        std::vector<double> values;
    };

    std::uint32_t value_bytes = 4;
    std::string config;
    double k_hat = 0.0;
    Standardization normalization;
    std::vector<Blob> blobs;
};

template <typename T>
Checkpoint make_checkpoint(std::string config, const ParameterSet<T>& params, const Standardization& norm);

// Parameters in the stored order. Values are cast to T.
template <typename T>
ParameterSet<T> checkpoint_parameters(const Checkpoint& ckpt);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

// Every structural problem (bad magic, unknown version, truncation, CRC
// mismatch) throws CheckpointError with a message starting "corrupt
// checkpoint".
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace dla
