#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dla/tensor.hpp"

namespace dla {

enum class Provenance { mnist, usps, synthetic };
enum class Split { train, val, test };

std::string_view to_string(Provenance p);
std::string_view to_string(Split s);

// Malformed dataset file. The message carries a byte offset (binary
// formats) or a line number (text formats).
class DataFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// count x channels x height x width, pixels in [0, 1], row-major.
struct ImageDataset {
    std::vector<float> pixels;
    std::size_t count = 0;
    std::size_t channels = 1;
    std::size_t height = 28;
    std::size_t width = 28;
    std::optional<std::vector<int>> labels;
    Provenance provenance = Provenance::synthetic;
    Split split = Split::train;

    std::size_t image_size() const { return channels * height * width; }
    std::span<const float> image(std::size_t i) const { return {pixels.data() + i * image_size(), image_size()}; }
    bool has_labels() const { return labels.has_value(); }

    // Throws std::logic_error if sizes disagree, a pixel leaves [0, 1] or a
    // label leaves [0, 9].
    void validate() const;
};

// IDX image/label pair. Gzip-compressed files are read transparently.
ImageDataset load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels);

// Sparse "label index:value ..." text, 256 attributes per 16x16 image,
// values in [-1, 1], labels 1..10 meaning digits 0..9. Images are upsampled
// to 28x28. Gzip-compressed files are read transparently.
ImageDataset load_usps(const std::filesystem::path& path);

// Bilinear resize with corner alignment: destination corners sample the
// source corners exactly.
std::vector<float> resize_bilinear(std::span<const float> src, std::size_t src_h, std::size_t src_w,
                                   std::size_t dst_h, std::size_t dst_w);

ImageDataset subset(const ImageDataset& data, std::span<const std::size_t> indices, Split split);

struct TargetSplit {
    ImageDataset adaptation;  // target train images, labels dropped
    ImageDataset val;
    ImageDataset test;
};

// The test set is shuffled by seed; val takes the first floor(n/2) items.
TargetSplit split_target(const ImageDataset& target_train, const ImageDataset& target_test, std::uint64_t seed);

// Endless stream of indices in [0, n): a concatenation of independent
// random permutations, one per epoch. A batch that crosses an epoch
// boundary is completed from the next permutation.
class IndexStream {
public:
    IndexStream(std::size_t n, std::seed_seq& seed);

    std::vector<std::size_t> take(std::size_t b);
    std::size_t epoch() const { return epoch_; }
    std::size_t size() const { return order_.size(); }

private:
    void reshuffle();

    std::mt19937_64 rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
    std::size_t epoch_ = 0;
};

class BatchSampler {
public:
    // target_size may be 0 when no target stream is needed.
    BatchSampler(std::uint64_t seed, std::size_t batch_size, std::size_t source_size, std::size_t target_size);

    std::size_t batch_size() const { return batch_size_; }
    bool has_target() const { return target_.has_value(); }
    std::vector<std::size_t> next_source() { return source_.take(batch_size_); }
    std::vector<std::size_t> next_target();

private:
    std::size_t batch_size_;
    IndexStream source_;
    std::optional<IndexStream> target_;
};

// Per-pixel affine map applied when images are copied into tensors.
// The identity by default; the datasets themselves always stay in [0, 1].
struct Standardization {
    double mean = 0.0;
    double stddev = 1.0;
};

Standardization fit_standardization(const ImageDataset& data);

template <typename T>
Tensor<T> gather_images(const ImageDataset& data, std::span<const std::size_t> indices,
                        const Standardization& norm = {});
std::vector<int> gather_labels(const ImageDataset& data, std::span<const std::size_t> indices);

template <typename T>
struct DomainBatch {
    Tensor<T> source_x;
    std::vector<int> source_y;
    Tensor<T> target_x;  // undefined when the sampler has no target stream
};

template <typename T>
DomainBatch<T> next_batch(BatchSampler& sampler, const ImageDataset& source, const ImageDataset* target,
                          const Standardization& norm = {});

// Procedural digit images rendered from a 5x7 glyph font with random
// shifts, scale and noise. Style "plain" uses thin strokes; "bold" uses
// thick, dimmer, slightly blurred strokes so the two styles form a domain
// pair. Labels cycle through 0..9.
enum class GlyphStyle { plain, bold };
ImageDataset synthetic_digits(std::size_t count, GlyphStyle style, std::uint64_t seed, Split split = Split::train,
                              std::size_t height = 28, std::size_t width = 28);

// Up to per_class images of each digit as ASCII art, for eyeballing a label
// mapping.
std::string render_ascii(const ImageDataset& data, std::size_t per_class = 10);

}  // namespace dla
