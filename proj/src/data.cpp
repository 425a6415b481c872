#include "dla/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <zlib.h>

namespace dla {

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw std::runtime_error(fmt::format("no such file: {}", path.string()));
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error(fmt::format("cannot open {}", path.string()));
    std::vector<unsigned char> out;
    std::array<unsigned char, 1 << 16> buf;
    for (;;) {
        const int got = gzread(f, buf.data(), static_cast<unsigned>(buf.size()));
        if (got < 0) {
            int errnum = 0;
            const std::string msg = gzerror(f, &errnum);
            gzclose(f);
            throw DataFormatError(fmt::format("{}: read failed after {} bytes: {}", path.string(), out.size(), msg));
        }
        if (got == 0) break;
        out.insert(out.end(), buf.begin(), buf.begin() + got);
    }
    gzclose(f);
    return out;
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

void expect_magic(const std::vector<unsigned char>& b, std::uint32_t magic, std::size_t header,
                  const std::filesystem::path& path) {
    if (b.size() < header)
        throw DataFormatError(fmt::format("{}: truncated header, file ends at byte offset {} (header is {} bytes)",
                                          path.string(), b.size(), header));
    if (const auto m = be32(b, 0); m != magic)
        throw DataFormatError(fmt::format("{}: bad magic 0x{:08x} at byte offset 0 (expected 0x{:08x})", path.string(),
                                          m, magic));
}

void expect_payload(const std::vector<unsigned char>& b, std::size_t header, std::size_t payload,
                    const std::filesystem::path& path) {
    if (b.size() < header + payload)
        throw DataFormatError(fmt::format("{}: truncated payload, expected {} bytes from byte offset {} but file ends "
                                          "at byte offset {}",
                                          path.string(), payload, header, b.size()));
    if (b.size() > header + payload)
        throw DataFormatError(fmt::format("{}: {} trailing bytes from byte offset {}", path.string(),
                                          b.size() - header - payload, header + payload));
}

constexpr std::array<const char*, 10> kGlyphs = {
    ".###.#...##..###.#.###..##...#.###.",
    "..#...##....#....#....#....#...###.",
    ".###.#...#....#...#...#...#...#####",
    "#####...#...#.....#.....##...#.###.",
    "...#...##..#.#.#..#.#####...#....#.",
    "######....####.....#....##...#.###.",
    "..##..#...#....####.#...##...#.###.",
    "#####....#...#...#...#....#....#...",
    ".###.#...##...#.###.#...##...#.###.",
    ".###.#...##...#.####....#...#..##..",
};

bool glyph_cell(int digit, int row, int col) {
    const std::string_view g = kGlyphs[static_cast<std::size_t>(digit)];
    const auto i = static_cast<std::size_t>(row * 5 + col);
    return i < g.size() && g[i] == '#';
}

}  // namespace

std::string_view to_string(Provenance p) {
    switch (p) {
        case Provenance::mnist: return "mnist";
        case Provenance::usps: return "usps";
        case Provenance::synthetic: return "synthetic";
    }
    return "?";
}

std::string_view to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

void ImageDataset::validate() const {
    if (pixels.size() != count * image_size())
        throw std::logic_error(
            fmt::format("dataset holds {} pixels, expected {} x {}", pixels.size(), count, image_size()));
    for (std::size_t i = 0; i < pixels.size(); ++i)
        if (!(pixels[i] >= 0.0f && pixels[i] <= 1.0f))
            throw std::logic_error(fmt::format("pixel {} = {} outside [0, 1]", i, pixels[i]));
    if (labels) {
        if (labels->size() != count)
            throw std::logic_error(fmt::format("{} labels for {} images", labels->size(), count));
        for (int y : *labels)
            if (y < 0 || y > 9) throw std::logic_error(fmt::format("label {} outside [0, 9]", y));
    }
}

ImageDataset load_mnist(const std::filesystem::path& images, const std::filesystem::path& labels) {
    const auto ib = read_file(images);
    expect_magic(ib, 0x00000803, 16, images);
    const std::size_t count = be32(ib, 4), rows = be32(ib, 8), cols = be32(ib, 12);
    expect_payload(ib, 16, count * rows * cols, images);

    const auto lb = read_file(labels);
    expect_magic(lb, 0x00000801, 8, labels);
    const std::size_t label_count = be32(lb, 4);
    if (label_count != count)
        throw DataFormatError(fmt::format("count mismatch: {} declares {} images (byte offset 4), {} declares {} labels "
                                          "(byte offset 4)",
                                          images.string(), count, labels.string(), label_count));
    expect_payload(lb, 8, count, labels);

    ImageDataset out;
    out.count = count;
    out.height = rows;
    out.width = cols;
    out.provenance = Provenance::mnist;
    out.pixels.resize(count * rows * cols);
    for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = static_cast<float>(ib[16 + i]) / 255.0f;
    std::vector<int> y(count);
    for (std::size_t i = 0; i < count; ++i) {
        y[i] = lb[8 + i];
        if (y[i] > 9)
            throw DataFormatError(
                fmt::format("{}: label {} at byte offset {} outside [0, 9]", labels.string(), y[i], 8 + i));
    }
    out.labels = std::move(y);
    return out;
}

std::vector<float> resize_bilinear(std::span<const float> src, std::size_t sh, std::size_t sw, std::size_t dh,
                                   std::size_t dw) {
    if (src.size() != sh * sw || sh == 0 || sw == 0 || dh == 0 || dw == 0)
        throw std::invalid_argument(fmt::format("resize_bilinear: bad extents {}x{} -> {}x{} for {} values", sh, sw,
                                                dh, dw, src.size()));
    const auto coord = [](std::size_t i, std::size_t s, std::size_t d) {
        return d == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(s - 1) / static_cast<double>(d - 1);
    };
    std::vector<float> out(dh * dw);
    for (std::size_t r = 0; r < dh; ++r) {
        const double y = coord(r, sh, dh);
        const auto y0 = std::min(static_cast<std::size_t>(y), sh - 1), y1 = std::min(y0 + 1, sh - 1);
        const double fy = y - static_cast<double>(y0);
        for (std::size_t c = 0; c < dw; ++c) {
            const double x = coord(c, sw, dw);
            const auto x0 = std::min(static_cast<std::size_t>(x), sw - 1), x1 = std::min(x0 + 1, sw - 1);
            const double fx = x - static_cast<double>(x0);
            const double top = (1 - fx) * src[y0 * sw + x0] + fx * src[y0 * sw + x1];
            const double bottom = (1 - fx) * src[y1 * sw + x0] + fx * src[y1 * sw + x1];
            out[r * dw + c] = static_cast<float>((1 - fy) * top + fy * bottom);
        }
    }
    return out;
}

ImageDataset load_usps(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    const std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());

    ImageDataset out;
    out.provenance = Provenance::usps;
    std::vector<int> labels;
    std::vector<float> raw(256);
    std::size_t line_no = 0, start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        const auto fail = [&](const std::string& why) {
            return DataFormatError(fmt::format("{}: line {}: {}", path.string(), line_no, why));
        };

        std::istringstream tokens{std::string(line)};
        std::string tok;
        if (!(tokens >> tok)) continue;
        double label = 0;
        if (auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), label);
            ec != std::errc{} || p != tok.data() + tok.size())
            throw fail(fmt::format("unparsable label '{}'", tok));
        if (label != std::floor(label) || label < 1 || label > 10)
            throw fail(fmt::format("label {} outside 1..10", tok));

        // libsvm semantics: attributes that are absent are 0.
        std::fill(raw.begin(), raw.end(), 0.0f);
        while (tokens >> tok) {
            const auto colon = tok.find(':');
            long index = 0;
            double value = 0;
            const char* b = tok.data();
            const char* e = b + tok.size();
            if (colon == std::string::npos) throw fail(fmt::format("expected index:value, got '{}'", tok));
            if (auto [p, ec] = std::from_chars(b, b + colon, index); ec != std::errc{} || p != b + colon)
                throw fail(fmt::format("unparsable attribute index in '{}'", tok));
            if (auto [p, ec] = std::from_chars(b + colon + 1, e, value); ec != std::errc{} || p != e)
                throw fail(fmt::format("unparsable attribute value in '{}'", tok));
            if (index < 1 || index > 256) throw fail(fmt::format("attribute index {} outside [1, 256]", index));
            if (!(std::abs(value) <= 1.0 + 1e-6)) throw fail(fmt::format("attribute value {} outside [-1, 1]", value));
            raw[static_cast<std::size_t>(index - 1)] = static_cast<float>(std::clamp(value, -1.0, 1.0));
        }
        for (auto& v : raw) v = (v + 1.0f) * 0.5f;
        const auto img = resize_bilinear(raw, 16, 16, 28, 28);
        for (float v : img) out.pixels.push_back(std::clamp(v, 0.0f, 1.0f));
        labels.push_back(static_cast<int>(label) - 1);
        ++out.count;
    }
    out.labels = std::move(labels);
    return out;
}

ImageDataset subset(const ImageDataset& data, std::span<const std::size_t> indices, Split split) {
    ImageDataset out;
    out.count = indices.size();
    out.channels = data.channels;
    out.height = data.height;
    out.width = data.width;
    out.provenance = data.provenance;
    out.split = split;
    out.pixels.reserve(indices.size() * data.image_size());
    std::vector<int> labels;
    for (auto i : indices) {
        if (i >= data.count) throw std::out_of_range(fmt::format("subset: index {} >= {}", i, data.count));
        const auto img = data.image(i);
        out.pixels.insert(out.pixels.end(), img.begin(), img.end());
        if (data.labels) labels.push_back((*data.labels)[i]);
    }
    if (data.labels) out.labels = std::move(labels);
    return out;
}

TargetSplit split_target(const ImageDataset& target_train, const ImageDataset& target_test, std::uint64_t seed) {
    TargetSplit out;
    out.adaptation = target_train;
    out.adaptation.labels.reset();
    out.adaptation.split = Split::train;

    std::vector<std::size_t> order(target_test.count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t half = order.size() / 2;
    out.val = subset(target_test, std::span(order).first(half), Split::val);
    out.test = subset(target_test, std::span(order).subspan(half), Split::test);
    return out;
}

IndexStream::IndexStream(std::size_t n, std::seed_seq& seed) : rng_(seed), order_(n) {
    if (n == 0) throw std::invalid_argument("IndexStream: empty dataset");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    reshuffle();
}

void IndexStream::reshuffle() {
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
}

std::vector<std::size_t> IndexStream::take(std::size_t b) {
    std::vector<std::size_t> out;
    out.reserve(b);
    while (out.size() < b) {
        if (pos_ == order_.size()) {
            ++epoch_;
            reshuffle();
        }
        out.push_back(order_[pos_++]);
    }
    return out;
}

namespace {

void check_batch(std::size_t b, std::size_t n, std::string_view which) {
    if (b > n)
        throw std::invalid_argument(fmt::format("batch size {} exceeds the {} dataset size {}", b, which, n));
}

}  // namespace

BatchSampler::BatchSampler(std::uint64_t seed, std::size_t batch_size, std::size_t source_size,
                           std::size_t target_size)
    : batch_size_(batch_size),
      source_([&]() -> IndexStream {
          if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
          check_batch(batch_size, source_size, "source");
          std::seed_seq s{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 1u};
          return IndexStream(source_size, s);
      }()) {
    if (target_size > 0) {
        check_batch(batch_size, target_size, "target");
        std::seed_seq s{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 2u};
        target_.emplace(target_size, s);
    }
}

std::vector<std::size_t> BatchSampler::next_target() {
    if (!target_) throw std::logic_error("BatchSampler: no target stream");
    return target_->take(batch_size_);
}

Standardization fit_standardization(const ImageDataset& data) {
    if (data.pixels.empty()) throw std::invalid_argument("fit_standardization: empty dataset");
    double mean = 0, sq = 0;
    for (float v : data.pixels) mean += v;
    mean /= static_cast<double>(data.pixels.size());
    for (float v : data.pixels) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(data.pixels.size()));
    return {mean, sd > 0 ? sd : 1.0};
}

template <typename T>
Tensor<T> gather_images(const ImageDataset& data, std::span<const std::size_t> indices, const Standardization& norm) {
    Tensor<T> out({indices.size(), data.channels, data.height, data.width});
    auto dst = out.data();
    const std::size_t sz = data.image_size();
    for (std::size_t k = 0; k < indices.size(); ++k) {
        if (indices[k] >= data.count)
            throw std::out_of_range(fmt::format("gather_images: index {} >= {}", indices[k], data.count));
        const auto img = data.image(indices[k]);
        for (std::size_t j = 0; j < sz; ++j)
            dst[k * sz + j] = static_cast<T>((static_cast<double>(img[j]) - norm.mean) / norm.stddev);
    }
    return out;
}

std::vector<int> gather_labels(const ImageDataset& data, std::span<const std::size_t> indices) {
    if (!data.labels) throw std::logic_error("gather_labels: dataset has no labels");
    std::vector<int> out;
    out.reserve(indices.size());
    for (auto i : indices) out.push_back(data.labels->at(i));
    return out;
}

template <typename T>
DomainBatch<T> next_batch(BatchSampler& sampler, const ImageDataset& source, const ImageDataset* target,
                          const Standardization& norm) {
    DomainBatch<T> batch;
    const auto src = sampler.next_source();
    batch.source_x = gather_images<T>(source, src, norm);
    batch.source_y = gather_labels(source, src);
    if (target && sampler.has_target()) batch.target_x = gather_images<T>(*target, sampler.next_target(), norm);
    return batch;
}

ImageDataset synthetic_digits(std::size_t count, GlyphStyle style, std::uint64_t seed, Split split,
                              std::size_t height, std::size_t width) {
    if (height < 8 || width < 8) throw std::invalid_argument("synthetic_digits: images must be at least 8x8");
    ImageDataset out;
    out.count = count;
    out.height = height;
    out.width = width;
    out.split = split;
    out.provenance = Provenance::synthetic;
    out.pixels.assign(count * height * width, 0.0f);
    std::vector<int> labels(count);

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.05);
    const bool bold = style == GlyphStyle::bold;
    const double radius = bold ? 0.9 : 0.55, gain = bold ? 0.85 : 1.0, slant = bold ? 0.2 : 0.0;
    const double H = static_cast<double>(height), W = static_cast<double>(width);

    for (std::size_t n = 0; n < count; ++n) {
        const int digit = static_cast<int>(n % 10);
        labels[n] = digit;
        const double scale = 1.0 + 0.12 * unit(rng);
        const double cell_h = 0.7 * H / 7.0 * scale, cell_w = cell_h;
        const double cy = H / 2 + 0.08 * H * unit(rng), cx = W / 2 + 0.08 * W * unit(rng);
        float* img = out.pixels.data() + n * height * width;
        for (std::size_t r = 0; r < height; ++r)
            for (std::size_t c = 0; c < width; ++c) {
                const double gy = (static_cast<double>(r) + 0.5 - cy) / cell_h + 3.5;
                const double gx = (static_cast<double>(c) + 0.5 - cx) / cell_w + 2.5 + slant * (gy - 3.5);
                double dist = 1e9;
                for (int i = 0; i < 7; ++i)
                    for (int j = 0; j < 5; ++j)
                        if (glyph_cell(digit, i, j))
                            dist = std::min(dist, std::hypot(gy - (i + 0.5), gx - (j + 0.5)));
                double v = gain * std::clamp(1.0 - std::max(0.0, dist - radius) / 0.35, 0.0, 1.0) + noise(rng);
                img[r * width + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
    }
    out.labels = std::move(labels);
    return out;
}

std::string render_ascii(const ImageDataset& data, std::size_t per_class) {
    static constexpr std::string_view ramp = " .:-=+*#%@";
    std::string out;
    for (int digit = 0; digit < 10; ++digit) {
        std::size_t shown = 0;
        for (std::size_t i = 0; i < data.count && shown < per_class; ++i) {
            if (data.labels && (*data.labels)[i] != digit) continue;
            if (!data.labels && digit > 0) break;
            out += fmt::format("-- {} #{} (label {}) --\n", to_string(data.provenance), i,
                               data.labels ? std::to_string(digit) : std::string("?"));
            const auto img = data.image(i);
            for (std::size_t r = 0; r < data.height; ++r) {
                for (std::size_t c = 0; c < data.width; ++c) {
                    const auto level = static_cast<std::size_t>(std::clamp(img[r * data.width + c], 0.0f, 1.0f) * 9.0f + 0.5f);
                    out += ramp[level];
                }
                out += '\n';
            }
            ++shown;
        }
    }
    return out;
}

template Tensor<float> gather_images(const ImageDataset&, std::span<const std::size_t>, const Standardization&);
template Tensor<double> gather_images(const ImageDataset&, std::span<const std::size_t>, const Standardization&);
template DomainBatch<float> next_batch(BatchSampler&, const ImageDataset&, const ImageDataset*,
                                       const Standardization&);
template DomainBatch<double> next_batch(BatchSampler&, const ImageDataset&, const ImageDataset*,
                                        const Standardization&);

}  // namespace dla
