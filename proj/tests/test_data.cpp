#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include <zlib.h>

#include "dla/data.hpp"

using namespace dla;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    TempDir() : path_(fs::temp_directory_path() / ("dla_data_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                                                   ::testing::UnitTest::GetInstance()->current_test_info()->name())) {
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& b) {
    std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::vector<unsigned char> idx_images(std::uint32_t count, std::uint32_t rows, std::uint32_t cols) {
    std::vector<unsigned char> b;
    put_be32(b, 0x803);
    put_be32(b, count);
    put_be32(b, rows);
    put_be32(b, cols);
    for (std::uint32_t i = 0; i < count * rows * cols; ++i) b.push_back(static_cast<unsigned char>(i % 256));
    return b;
}

std::vector<unsigned char> idx_labels(std::uint32_t count) {
    std::vector<unsigned char> b;
    put_be32(b, 0x801);
    put_be32(b, count);
    for (std::uint32_t i = 0; i < count; ++i) b.push_back(static_cast<unsigned char>((i * 7) % 10));
    return b;
}

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST(LoadMnist, ParsesHeaderAndScalesPixels) {
    TempDir dir;
    write_bytes(dir / "img", idx_images(3, 4, 5));
    write_bytes(dir / "lbl", idx_labels(3));
    const auto ds = load_mnist(dir / "img", dir / "lbl");
    EXPECT_EQ(ds.count, 3u);
    EXPECT_EQ(ds.height, 4u);
    EXPECT_EQ(ds.width, 5u);
    EXPECT_EQ(ds.provenance, Provenance::mnist);
    ASSERT_TRUE(ds.labels);
    EXPECT_EQ(*ds.labels, (std::vector<int>{0, 7, 4}));
    EXPECT_FLOAT_EQ(ds.pixels[0], 0.0f);
    EXPECT_FLOAT_EQ(ds.pixels[51], 51.0f / 255.0f);
    EXPECT_NO_THROW(ds.validate());
}

TEST(LoadMnist, ReadsGzipTransparently) {
    TempDir dir;
    const auto img = idx_images(2, 3, 3);
    gzFile f = gzopen((dir / "img.gz").c_str(), "wb");
    gzwrite(f, img.data(), static_cast<unsigned>(img.size()));
    gzclose(f);
    write_bytes(dir / "lbl", idx_labels(2));
    const auto ds = load_mnist(dir / "img.gz", dir / "lbl");
    EXPECT_EQ(ds.count, 2u);
    EXPECT_FLOAT_EQ(ds.pixels[17], 17.0f / 255.0f);
}

TEST(LoadMnist, RejectsBadMagic) {
    TempDir dir;
    auto img = idx_images(2, 3, 3);
    std::fill(img.begin(), img.begin() + 4, 0);
    write_bytes(dir / "img", img);
    write_bytes(dir / "lbl", idx_labels(2));
    const auto msg = error_of([&] { load_mnist(dir / "img", dir / "lbl"); });
    EXPECT_NE(msg.find("bad magic 0x00000000"), std::string::npos) << msg;
    EXPECT_NE(msg.find("byte offset 0"), std::string::npos) << msg;
}

TEST(LoadMnist, RejectsTruncatedPayloadWithOffset) {
    TempDir dir;
    auto img = idx_images(2, 3, 3);
    img.resize(img.size() - 4);
    write_bytes(dir / "img", img);
    write_bytes(dir / "lbl", idx_labels(2));
    const auto msg = error_of([&] { load_mnist(dir / "img", dir / "lbl"); });
    EXPECT_NE(msg.find("truncated payload"), std::string::npos) << msg;
    EXPECT_NE(msg.find("byte offset 30"), std::string::npos) << msg;
}

TEST(LoadMnist, RejectsCountMismatch) {
    TempDir dir;
    write_bytes(dir / "img", idx_images(3, 2, 2));
    write_bytes(dir / "lbl", idx_labels(4));
    const auto msg = error_of([&] { load_mnist(dir / "img", dir / "lbl"); });
    EXPECT_NE(msg.find("count mismatch"), std::string::npos) << msg;
    EXPECT_NE(msg.find("byte offset 4"), std::string::npos) << msg;
}

TEST(LoadMnist, RejectsTruncatedHeaderAndMissingFile) {
    TempDir dir;
    write_bytes(dir / "img", {0, 0, 8, 3, 0});
    write_bytes(dir / "lbl", idx_labels(1));
    EXPECT_THROW(load_mnist(dir / "img", dir / "lbl"), DataFormatError);
    EXPECT_THROW(load_mnist(dir / "nope", dir / "lbl"), std::runtime_error);
}

TEST(LoadMnist, IdempotentLoads) {
    TempDir dir;
    write_bytes(dir / "img", idx_images(5, 6, 6));
    write_bytes(dir / "lbl", idx_labels(5));
    const auto a = load_mnist(dir / "img", dir / "lbl");
    const auto b = load_mnist(dir / "img", dir / "lbl");
    EXPECT_EQ(a.pixels, b.pixels);
    EXPECT_EQ(*a.labels, *b.labels);
}

TEST(ResizeBilinear, ConstantStaysConstant) {
    const std::vector<float> src(256, 0.37f);
    for (float v : resize_bilinear(src, 16, 16, 28, 28)) EXPECT_NEAR(v, 0.37f, 1e-6);
}

TEST(ResizeBilinear, CornerAlignedRamp) {
    // A horizontal ramp 0..15 resampled to 28 columns lands on 15*c/27.
    std::vector<float> src(256);
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c) src[r * 16 + c] = static_cast<float>(c);
    const auto out = resize_bilinear(src, 16, 16, 28, 28);
    for (int r = 0; r < 28; ++r)
        for (int c = 0; c < 28; ++c) EXPECT_NEAR(out[r * 28 + c], 15.0 * c / 27.0, 1e-5);
    EXPECT_THROW(resize_bilinear(src, 16, 15, 28, 28), std::invalid_argument);
}

TEST(LoadUsps, MapsRangeAndLabels) {
    TempDir dir;
    std::ofstream f(dir / "usps");
    f << "1";
    for (int i = 1; i <= 256; ++i) f << ' ' << i << ":-1";
    f << "\n10";
    for (int i = 1; i <= 256; ++i) f << ' ' << i << ":1";
    f << "\n\n3";
    for (int i = 1; i <= 256; ++i) f << ' ' << i << ":0.5";
    f << '\n';
    f.close();
    const auto ds = load_usps(dir / "usps");
    ASSERT_EQ(ds.count, 3u);
    EXPECT_EQ(ds.height, 28u);
    EXPECT_EQ(*ds.labels, (std::vector<int>{0, 9, 2}));
    for (float v : ds.image(0)) EXPECT_EQ(v, 0.0f);
    for (float v : ds.image(1)) EXPECT_NEAR(v, 1.0f, 1e-6);
    for (float v : ds.image(2)) EXPECT_NEAR(v, 0.75f, 1e-6);
    EXPECT_NO_THROW(ds.validate());
}

TEST(LoadUsps, RejectsWithLineNumbers) {
    TempDir dir;
    std::ofstream(dir / "a") << "1 1:0.5\n2 300:0.1\n";
    auto msg = error_of([&] { load_usps(dir / "a"); });
    EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("300"), std::string::npos) << msg;

    std::ofstream(dir / "b") << "1 1:0.5\n\n3 1:x\n";
    msg = error_of([&] { load_usps(dir / "b"); });
    EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;

    std::ofstream(dir / "c") << "eleven 1:0\n";
    EXPECT_THROW(load_usps(dir / "c"), DataFormatError);
    std::ofstream(dir / "d") << "11 1:0\n";
    EXPECT_THROW(load_usps(dir / "d"), DataFormatError);
    std::ofstream(dir / "e") << "1 0:0\n";
    EXPECT_THROW(load_usps(dir / "e"), DataFormatError);
}

TEST(SplitTarget, PartitionsTestSetDeterministically) {
    const auto train = synthetic_digits(40, GlyphStyle::bold, 1);
    const auto test = synthetic_digits(2007, GlyphStyle::bold, 2, Split::test, 8, 8);
    const auto a = split_target(train, test, 5);
    const auto b = split_target(train, test, 5);
    EXPECT_EQ(a.adaptation.count, 40u);
    EXPECT_FALSE(a.adaptation.has_labels());
    EXPECT_EQ(a.val.count, 1003u);
    EXPECT_EQ(a.test.count, 1004u);
    EXPECT_EQ(a.val.split, Split::val);
    EXPECT_EQ(a.val.pixels, b.val.pixels);
    EXPECT_EQ(a.test.pixels, b.test.pixels);

    // Every test image lands in exactly one of val/test.
    std::multiset<std::vector<float>> all, parts;
    for (std::size_t i = 0; i < test.count; ++i) all.emplace(test.image(i).begin(), test.image(i).end());
    for (const auto* s : {&a.val, &a.test})
        for (std::size_t i = 0; i < s->count; ++i) parts.emplace(s->image(i).begin(), s->image(i).end());
    EXPECT_EQ(all, parts);

    const auto c = split_target(train, test, 6);
    EXPECT_NE(a.val.pixels, c.val.pixels);
}

TEST(IndexStream, EpochsArePermutations) {
    std::seed_seq seed{3u};
    IndexStream s(7, seed);
    const auto stream = s.take(21);
    for (int e = 0; e < 3; ++e) {
        std::vector<std::size_t> epoch(stream.begin() + e * 7, stream.begin() + (e + 1) * 7);
        std::sort(epoch.begin(), epoch.end());
        for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(epoch[i], i);
    }
    EXPECT_EQ(s.epoch(), 2u);
}

TEST(BatchSampler, FullBatchCoversEveryIndex) {
    BatchSampler s(1, 10, 10, 10);
    auto b = s.next_source();
    std::sort(b.begin(), b.end());
    for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(b[i], i);
}

TEST(BatchSampler, WrapsWithoutShortBatches) {
    BatchSampler s(9, 128, 7291, 1000);
    std::vector<std::size_t> stream;
    for (int i = 0; i < 120; ++i) {
        const auto src = s.next_source();
        const auto tgt = s.next_target();
        ASSERT_EQ(src.size(), 128u);
        ASSERT_EQ(tgt.size(), 128u);
        stream.insert(stream.end(), src.begin(), src.end());
    }
    for (std::size_t e = 0; (e + 1) * 7291 <= stream.size(); ++e) {
        std::vector<std::size_t> epoch(stream.begin() + static_cast<long>(e * 7291),
                                       stream.begin() + static_cast<long>((e + 1) * 7291));
        std::sort(epoch.begin(), epoch.end());
        EXPECT_EQ(std::adjacent_find(epoch.begin(), epoch.end()), epoch.end());
        EXPECT_EQ(epoch.back(), 7290u);
    }
}

TEST(BatchSampler, SeedDeterminesStreams) {
    BatchSampler a(4, 16, 100, 50), b(4, 16, 100, 50), c(5, 16, 100, 50);
    EXPECT_EQ(a.next_source(), b.next_source());
    EXPECT_EQ(a.next_target(), b.next_target());
    EXPECT_NE(a.next_source(), c.next_source());
    BatchSampler d(4, 16, 100, 50);
    EXPECT_NE(d.next_source(), d.next_target());
}

TEST(BatchSampler, Rejections) {
    EXPECT_THROW(BatchSampler(1, 0, 10, 10), std::invalid_argument);
    EXPECT_THROW(BatchSampler(1, 11, 10, 20), std::invalid_argument);
    EXPECT_THROW(BatchSampler(1, 11, 20, 10), std::invalid_argument);
    BatchSampler source_only(1, 4, 10, 0);
    EXPECT_FALSE(source_only.has_target());
    EXPECT_THROW(source_only.next_target(), std::logic_error);
}

TEST(NextBatch, GathersImagesAndLabels) {
    const auto src = synthetic_digits(30, GlyphStyle::plain, 1);
    const auto tgt = synthetic_digits(20, GlyphStyle::bold, 2);
    BatchSampler s(3, 8, src.count, tgt.count);
    BatchSampler replay(3, 8, src.count, tgt.count);
    const auto batch = next_batch<float>(s, src, &tgt);
    EXPECT_EQ(batch.source_x.shape(), (Shape{8, 1, 28, 28}));
    EXPECT_EQ(batch.target_x.shape(), (Shape{8, 1, 28, 28}));
    const auto idx = replay.next_source();
    for (std::size_t k = 0; k < 8; ++k) {
        EXPECT_EQ(batch.source_y[k], (*src.labels)[idx[k]]);
        EXPECT_EQ(batch.source_x[k * 784 + 300], src.image(idx[k])[300]);
    }
}

TEST(Standardization, AppliedOnlyAtGather) {
    const auto ds = synthetic_digits(50, GlyphStyle::plain, 3);
    const auto norm = fit_standardization(ds);
    EXPECT_GT(norm.stddev, 0.0);
    std::vector<std::size_t> all(ds.count);
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto t = gather_images<double>(ds, all, norm);
    double mean = 0, sq = 0;
    for (double v : t.data()) mean += v;
    mean /= static_cast<double>(t.size());
    for (double v : t.data()) sq += (v - mean) * (v - mean);
    EXPECT_NEAR(mean, 0.0, 1e-6);
    EXPECT_NEAR(sq / static_cast<double>(t.size()), 1.0, 1e-6);
    EXPECT_NO_THROW(ds.validate());
}

TEST(SyntheticDigits, DeterministicBalancedAndInRange) {
    const auto a = synthetic_digits(100, GlyphStyle::plain, 7);
    const auto b = synthetic_digits(100, GlyphStyle::plain, 7);
    EXPECT_EQ(a.pixels, b.pixels);
    EXPECT_NO_THROW(a.validate());
    std::vector<int> counts(10);
    for (int y : *a.labels) ++counts[y];
    for (int c : counts) EXPECT_EQ(c, 10);
    const auto bold = synthetic_digits(100, GlyphStyle::bold, 7);
    double ink_plain = 0, ink_bold = 0;
    for (float v : a.pixels) ink_plain += v;
    for (float v : bold.pixels) ink_bold += v;
    EXPECT_GT(ink_bold, ink_plain);
}

TEST(RenderAscii, ShowsRequestedSamplesPerClass) {
    const auto ds = synthetic_digits(40, GlyphStyle::plain, 1);
    const auto art = render_ascii(ds, 2);
    std::size_t headers = 0;
    for (std::size_t p = art.find("-- synthetic"); p != std::string::npos; p = art.find("-- synthetic", p + 1)) ++headers;
    EXPECT_EQ(headers, 20u);
    EXPECT_NE(art.find('@'), std::string::npos);
}
