#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <zlib.h>

#include "dla/checkpoint.hpp"
#include "dla/config.hpp"
#include "dla/metrics.hpp"

using namespace dla;
namespace fs = std::filesystem;

namespace {

class TempDir : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / fmt::format("dla_io_{}_{}", info->test_suite_name(), info->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    std::string slurp(const fs::path& p) const {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }
    void spit(const fs::path& p, std::string_view s) const {
        std::ofstream out(p, std::ios::binary);
        out.write(s.data(), static_cast<std::streamsize>(s.size()));
    }

    fs::path dir_;
};

std::string message_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST(Config, EmptyTextGivesDefaults) {
    const auto c = parse_config("");
    const TrainConfig t;
    EXPECT_EQ(c.train.lambda, t.lambda);
    EXPECT_EQ(c.train.steps, t.steps);
    EXPECT_EQ(c.train.batch_size, t.batch_size);
    EXPECT_EQ(c.precision, Precision::float32);
    EXPECT_EQ(c.data.source, SourceKind::mnist);
    EXPECT_EQ(c.data.target, TargetKind::usps);
}

TEST(Config, ReadsEverySection) {
    const auto c = parse_config(R"(
; comment
[train]
lambda = 0.5
beta = 7
steps = 12
seed = 99
mode = partial_la
gradient_mode = full
gate = saturated
optimizer = sgd
standardize = true
precision = float64
[model]
conv_channels = 3, 5
feature_width = 9
init = he_normal
[data]
dir = data
source = synthetic
target = synthetic
synthetic_train = 300
[output]
dir = out
wall_clock = false
)",
                                "/base");
    EXPECT_EQ(c.train.lambda, 0.5);
    EXPECT_EQ(c.train.beta, 7.0);
    EXPECT_EQ(c.train.steps, 12u);
    EXPECT_EQ(c.train.seed, 99u);
    EXPECT_EQ(c.train.mode, TrainMode::partial_la);
    EXPECT_EQ(c.train.gradient_mode, GradientMode::full);
    EXPECT_EQ(c.train.gate, GateKind::saturated);
    EXPECT_EQ(c.train.optimizer, OptimizerKind::sgd);
    EXPECT_TRUE(c.train.standardize);
    EXPECT_EQ(c.precision, Precision::float64);
    EXPECT_EQ(c.model.conv_channels, (std::vector<std::size_t>{3, 5}));
    EXPECT_EQ(c.model.feature_width, 9u);
    EXPECT_EQ(c.model.init, InitScheme::he_normal);
    EXPECT_EQ(c.data.dir, fs::path("/base/data"));
    EXPECT_EQ(c.data.synthetic_train, 300u);
    EXPECT_EQ(c.output.dir, fs::path("out"));
    EXPECT_FALSE(c.output.wall_clock);
}

TEST(Config, UnknownKeyAndSectionAreRejected) {
    EXPECT_NE(message_of([] { parse_config("[train]\nlamda = 1\n"); }).find("unknown key [train] lamda"),
              std::string::npos);
    EXPECT_NE(message_of([] { parse_config("[trian]\nlambda = 1\n"); }).find("unknown section [trian]"),
              std::string::npos);
    EXPECT_THROW(parse_config("lambda = 1\n"), ConfigError);
}

TEST(Config, MalformedValuesNameTheKey) {
    const auto msg = message_of([] { parse_config("[train]\nsteps = ten\n"); });
    EXPECT_NE(msg.find("[train] steps = 'ten'"), std::string::npos) << msg;
    EXPECT_THROW(parse_config("[train]\nlambda = 1e-3x\n"), ConfigError);
    EXPECT_THROW(parse_config("[train]\nseed = -1\n"), ConfigError);
    EXPECT_THROW(parse_config("[train]\nmode = magic\n"), ConfigError);
    EXPECT_THROW(parse_config("[output]\nwall_clock = yes\n"), ConfigError);
    EXPECT_THROW(parse_config("[model]\nconv_channels = 4,,8\n"), ConfigError);
}

TEST(Config, InvalidHyperparametersAreRejected) {
    const auto msg = message_of([] { parse_config("[train]\nlambda = -0.1\n"); });
    EXPECT_NE(msg.find("[train]"), std::string::npos) << msg;
    EXPECT_THROW(parse_config("[train]\ngamma = -1\n"), ConfigError);
    EXPECT_THROW(parse_config("[train]\nbatch_size = 0\n"), ConfigError);
    EXPECT_THROW(parse_config("[train]\nstep_size = 0\n"), ConfigError);
    EXPECT_THROW(parse_config("[train]\nsteps = 0\n"), ConfigError);
    EXPECT_THROW(parse_config("[model]\nfeature_width = 0\n"), ConfigError);
}

TEST(Config, CrossSectionChecks) {
    EXPECT_THROW(parse_config("[data]\ntarget = none\n"), ConfigError);
    EXPECT_NO_THROW(parse_config("[train]\nmode = no_adapt\n[data]\ntarget = none\n"));
    EXPECT_THROW(parse_config("[data]\nsource = synthetic\nsynthetic_train = 10\n"), ConfigError);
    EXPECT_THROW(parse_config("[output]\nmetrics = sub/m.csv\n"), ConfigError);
    EXPECT_THROW(parse_config("[data]\nsource = synthetic\nsynthetic_size = 2\n"), ConfigError);
}

TEST(Config, EchoParsesBackToTheSameEcho) {
    const auto c = parse_config(R"(
[train]
lambda = 0.1
gamma = 3.3e-7
step_size = 0.0003
steps = 5
mode = no_adapt
precision = float64
[model]
conv_channels = 2
[data]
dir = /tmp/x
target = none
[output]
wall_clock = false
checkpoint_every = 2
)");
    const auto echo = to_ini(c);
    const auto again = parse_config(echo);
    EXPECT_EQ(to_ini(again), echo);
    EXPECT_EQ(again.train.gamma, 3.3e-7);
    EXPECT_EQ(again.train.step_size, 0.0003);
    EXPECT_EQ(again.output.checkpoint_every, 2u);
    EXPECT_NE(echo.find("gamma = 3.3e-07"), std::string::npos) << echo;
}

TEST(Config, EchoRoundTripsRandomDoublesExactly) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-20, 2);
    for (int i = 0; i < 200; ++i) {
        RunConfig c;
        c.train.lambda = std::pow(10.0, u(rng));
        c.train.beta = std::pow(10.0, u(rng) / 10);
        c.train.step_size = std::pow(10.0, u(rng) / 4);
        const auto back = parse_config(to_ini(c));
        ASSERT_EQ(back.train.lambda, c.train.lambda);
        ASSERT_EQ(back.train.beta, c.train.beta);
        ASSERT_EQ(back.train.step_size, c.train.step_size);
    }
}

TEST(Config, DataPathResolution) {
    DataConfig d;
    EXPECT_EQ(resolve_data_path(d, "/abs/f"), fs::path("/abs/f"));
    d.dir = "/d";
    EXPECT_EQ(resolve_data_path(d, "f"), fs::path("/d/f"));
    d.dir.clear();
    ::setenv("DLA_DATA_DIR", "/env", 1);
    EXPECT_EQ(resolve_data_path(d, "f"), fs::path("/env/f"));
    ::unsetenv("DLA_DATA_DIR");
    EXPECT_EQ(resolve_data_path(d, "f"), fs::path("f"));
}

TEST(Hashing, GitBlobHashMatchesKnownValues) {
    // `printf '' | git hash-object --stdin` and `echo hello | git hash-object --stdin`
    EXPECT_EQ(git_blob_hash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    EXPECT_EQ(git_blob_hash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_F(TempDir, Sha256MatchesKnownValue) {
    spit(dir_ / "abc", "abc");
    EXPECT_EQ(sha256_file(dir_ / "abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_THROW(sha256_file(dir_ / "missing"), std::runtime_error);
}

TEST(Metrics, NumberFormattingIsShortestRoundTrip) {
    EXPECT_EQ(format_number(0.1), "0.1");
    EXPECT_EQ(format_number(1.0), "1");
    EXPECT_EQ(format_number(1e-300), "1e-300");
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0, 100);
    for (int i = 0; i < 500; ++i) {
        const double v = n(rng);
        ASSERT_EQ(std::stod(format_number(v)), v);
    }
}

TEST(Metrics, RowLayout) {
    MetricsRecord r;
    r.step = 3;
    r.total = 1.5;
    r.cls = 1.25;
    r.align = 0.25;
    r.k_reg = 0;
    r.k = 0.5;
    r.src_acc = 0.75;
    r.wall_ms = 12;
    EXPECT_EQ(format_metrics_row(r), "3,1.5,1.25,0.25,0,0.5,0.75,,12");
    EXPECT_EQ(format_metrics_row(r, false), "3,1.5,1.25,0.25,0,0.5,0.75,,");
    r.val_acc = 0.5;
    EXPECT_EQ(format_metrics_row(r, false), "3,1.5,1.25,0.25,0,0.5,0.75,0.5,");
}

TEST_F(TempDir, MetricsWriteReadRoundTrip) {
    std::vector<MetricsRecord> rows;
    for (std::size_t s = 1; s <= 5; ++s) {
        MetricsRecord r;
        r.step = s;
        r.total = 1.0 / static_cast<double>(s);
        r.cls = r.total / 3;
        r.k = 0.1 * static_cast<double>(s);
        if (s % 2 == 0) r.val_acc = 0.3;
        r.wall_ms = 7.25;
        rows.push_back(r);
    }
    {
        MetricsWriter w(dir_ / "m.csv", true, 2);
        for (const auto& r : rows) w.append(r);
        EXPECT_THROW(w.append(rows.front()), std::logic_error);
    }
    EXPECT_EQ(slurp(dir_ / "m.csv").substr(0, kMetricsHeader.size() + 1), std::string(kMetricsHeader) + "\n");
    const auto back = read_metrics(dir_ / "m.csv");
    ASSERT_EQ(back.size(), rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EXPECT_EQ(back[i].step, rows[i].step);
        EXPECT_EQ(back[i].total, rows[i].total);
        EXPECT_EQ(back[i].cls, rows[i].cls);
        EXPECT_EQ(back[i].k, rows[i].k);
        EXPECT_EQ(back[i].val_acc, rows[i].val_acc);
        EXPECT_EQ(back[i].wall_ms, rows[i].wall_ms);
    }
}

TEST_F(TempDir, MetricsReaderRejectsBadFiles) {
    spit(dir_ / "a.csv", "step,total\n1,2\n");
    EXPECT_THROW(read_metrics(dir_ / "a.csv"), std::invalid_argument);
    spit(dir_ / "b.csv", std::string(kMetricsHeader) + "\n1,2,3\n");
    EXPECT_THROW(read_metrics(dir_ / "b.csv"), std::invalid_argument);
    spit(dir_ / "c.csv", std::string(kMetricsHeader) + "\n2,1,1,0,0,0.5,1,,\n2,1,1,0,0,0.5,1,,\n");
    EXPECT_THROW(read_metrics(dir_ / "c.csv"), std::invalid_argument);
    spit(dir_ / "d.csv", "");
    EXPECT_THROW(read_metrics(dir_ / "d.csv"), std::invalid_argument);
    spit(dir_ / "e.csv", std::string(kMetricsHeader) + "\n");
    EXPECT_TRUE(read_metrics(dir_ / "e.csv").empty());
}

namespace {

template <typename V>
void append_raw(std::string& s, V v) {
    char b[sizeof(V)];
    std::memcpy(b, &v, sizeof(V));
    s.append(b, sizeof(V));
}

ParameterSet<float> tiny_params() {
    ParameterSet<float> p;
    p.add("w", Tensor<float>({2, 3}, {1, -2, 3.5f, 0.25f, 0, -1e-3f}));
    p.add("k_hat", Tensor<float>({1}, {0.75f}));
    return p;
}

}  // namespace

TEST_F(TempDir, CheckpointBytesMatchHandBuiltLayout) {
    Standardization norm{0.125, 2.5};
    write_checkpoint(dir_ / "c.bin", make_checkpoint("[train]\n", tiny_params(), norm));

    std::string expect("DLACKPT\0", 8);
    append_raw<std::uint32_t>(expect, 1);
    append_raw<std::uint32_t>(expect, 4);
    append_raw<std::uint64_t>(expect, 8);
    expect += "[train]\n";
    append_raw<double>(expect, 0.75);
    append_raw<double>(expect, 0.125);
    append_raw<double>(expect, 2.5);
    append_raw<std::uint32_t>(expect, 2);
    append_raw<std::uint32_t>(expect, 1);
    expect += "w";
    append_raw<std::uint32_t>(expect, 2);
    append_raw<std::uint64_t>(expect, 2);
    append_raw<std::uint64_t>(expect, 3);
    for (float v : {1.0f, -2.0f, 3.5f, 0.25f, 0.0f, -1e-3f}) append_raw(expect, v);
    append_raw<std::uint32_t>(expect, 5);
    expect += "k_hat";
    append_raw<std::uint32_t>(expect, 1);
    append_raw<std::uint64_t>(expect, 1);
    append_raw(expect, 0.75f);
    append_raw<std::uint32_t>(
        expect, static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(expect.data()),
                                                 static_cast<uInt>(expect.size()))));
    EXPECT_EQ(slurp(dir_ / "c.bin"), expect);
}

TEST_F(TempDir, CheckpointRoundTripsBothWidths) {
    const auto f = tiny_params();
    write_checkpoint(dir_ / "f.bin", make_checkpoint("cfg", f, {0.5, 1.5}));
    const auto back = read_checkpoint(dir_ / "f.bin");
    EXPECT_EQ(back.value_bytes, 4u);
    EXPECT_EQ(back.config, "cfg");
    EXPECT_EQ(back.k_hat, 0.75);
    EXPECT_EQ(back.normalization.stddev, 1.5);
    const auto p = checkpoint_parameters<float>(back);
    ASSERT_EQ(p.size(), 2u);
    EXPECT_EQ(p.at("w").shape(), (Shape{2, 3}));
    EXPECT_TRUE(std::ranges::equal(p.at("w").data(), f.at("w").data()));

    ParameterSet<double> d;
    d.add("x", Tensor<double>({3}, {0.1, 1.0 / 3.0, -1e-300}));
    write_checkpoint(dir_ / "d.bin", make_checkpoint("", d, {}));
    const auto pd = checkpoint_parameters<double>(read_checkpoint(dir_ / "d.bin"));
    EXPECT_TRUE(std::ranges::equal(pd.at("x").data(), d.at("x").data()));
}

TEST_F(TempDir, CorruptCheckpointsAreRejected) {
    write_checkpoint(dir_ / "ok.bin", make_checkpoint("cfg", tiny_params(), {}));
    const auto good = slurp(dir_ / "ok.bin");

    const auto expect_corrupt = [&](const std::string& bytes, const char* what) {
        spit(dir_ / "bad.bin", bytes);
        const auto msg = message_of([&] { read_checkpoint(dir_ / "bad.bin"); });
        EXPECT_EQ(msg.rfind("corrupt checkpoint", 0), 0u) << what << ": " << msg;
    };
    for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{20}, good.size() / 2, good.size() - 1})
        expect_corrupt(good.substr(0, cut), "truncated");
    auto flipped = good;
    flipped[good.size() / 2] ^= 0x40;
    expect_corrupt(flipped, "bit flip");
    auto magic = good;
    magic[0] = 'X';
    expect_corrupt(magic, "magic");
    auto version = good;
    version[8] = 9;
    expect_corrupt(version, "version");
    expect_corrupt(good + "x", "trailing");
    EXPECT_THROW(read_checkpoint(dir_ / "none.bin"), CheckpointError);
}
