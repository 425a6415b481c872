#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "dla/checkpoint.hpp"
#include "dla/commands.hpp"
#include "dla/metrics.hpp"
#include "dla/model.hpp"
#include "dla/plot.hpp"

using namespace dla;
using namespace dla::cli;
namespace fs = std::filesystem;

namespace {

constexpr const char* kSmallRun = R"([train]
steps = 6
batch_size = 16
val_every = 3
lambda = 0.01
[model]
conv_channels = 3
feature_width = 12
[data]
source = synthetic
target = synthetic
synthetic_train = 64
synthetic_test = 40
synthetic_size = 12
[output]
wall_clock = false
log_every = 0
)";

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        spdlog::set_level(spdlog::level::warn);
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / fmt::format("dla_cli_{}", info->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    fs::path write(const std::string& name, std::string_view text) const {
        std::ofstream out(dir_ / name, std::ios::binary);
        out << text;
        return dir_ / name;
    }
    static std::string slurp(const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }
    TrainOutcome train_small(const std::string& out, std::string_view extra = "") {
        const auto cfg = write(out + ".ini", std::string(kSmallRun) + std::string(extra));
        return cmd_train({cfg, dir_ / out, std::nullopt});
    }

    fs::path dir_;
};

std::size_t count(const std::string& s, const std::string& needle) {
    std::size_t n = 0;
    for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
    return n;
}

}  // namespace

TEST_F(Cli, SingleStepRunWritesOneRowAndArtifacts) {
    std::string text = kSmallRun;
    text.replace(text.find("steps = 6"), 9, "steps = 1");
    const auto out = cmd_train({write("one.ini", text), dir_ / "one", std::nullopt});
    EXPECT_EQ(out.steps, 1u);
    const auto rows = read_metrics(out.metrics);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(rows[0].step, 1u);
    EXPECT_TRUE(rows[0].val_acc.has_value());
    EXPECT_TRUE(fs::exists(out.checkpoint));
    EXPECT_TRUE(fs::exists(out.manifest));
}

TEST_F(Cli, ManifestRecordsHashSeedAndMode) {
    const auto out = train_small("run");
    const std::string manifest = slurp(out.manifest);
    const auto body = manifest.substr(manifest.find("[train]"));
    EXPECT_NE(manifest.find("; config_hash = " + git_blob_hash(body) + "\n"), std::string::npos) << manifest;
    EXPECT_NE(manifest.find("; seed = 0\n"), std::string::npos);
    EXPECT_NE(manifest.find("; gradient_mode = projected\n"), std::string::npos);
    EXPECT_EQ(read_checkpoint(out.checkpoint).config, body);
}

TEST_F(Cli, ManifestRefeedReproducesMetricsBitwise) {
    const auto first = train_small("first");
    const auto again = cmd_train({first.manifest, dir_ / "again", std::nullopt});
    EXPECT_EQ(slurp(again.metrics), slurp(first.metrics));
    const auto a = read_checkpoint(first.checkpoint), b = read_checkpoint(again.checkpoint);
    ASSERT_EQ(a.blobs.size(), b.blobs.size());
    for (std::size_t i = 0; i < a.blobs.size(); ++i) EXPECT_EQ(a.blobs[i].values, b.blobs[i].values) << a.blobs[i].name;
}

TEST_F(Cli, SeedFlagOverridesConfig) {
    const auto a = train_small("a");
    const auto cfg = write("b.ini", kSmallRun);
    const auto b = cmd_train({cfg, dir_ / "b", 7});
    EXPECT_NE(slurp(a.metrics), slurp(b.metrics));
    EXPECT_NE(slurp(b.manifest).find("; seed = 7\n"), std::string::npos);
}

TEST_F(Cli, InvalidConfigIsRejectedBeforeAnyWork) {
    std::string text = kSmallRun;
    text.replace(text.find("lambda = 0.01"), 13, "lambda = -1");
    try {
        cmd_train({write("bad.ini", text), dir_ / "never", std::nullopt});
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("lambda"), std::string::npos) << e.what();
    }
    EXPECT_FALSE(fs::exists(dir_ / "never"));

    text = kSmallRun;
    text.replace(text.find("lambda = 0.01"), 13, "lamdba = 0.01");
    try {
        cmd_train({write("typo.ini", text), dir_ / "never", std::nullopt});
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("lamdba"), std::string::npos) << e.what();
    }
}

TEST_F(Cli, CheckpointCadence) {
    train_small("cad");
    EXPECT_FALSE(fs::exists(dir_ / "cad" / "checkpoint_step2.bin"));
    std::string text = kSmallRun;
    text += "checkpoint_every = 2\n";
    const auto run = cmd_train({write("cad2.ini", text), dir_ / "cad2", std::nullopt});
    EXPECT_TRUE(fs::exists(dir_ / "cad2" / "checkpoint_step2.bin"));
    EXPECT_TRUE(fs::exists(dir_ / "cad2" / "checkpoint_step4.bin"));
    EXPECT_FALSE(fs::exists(dir_ / "cad2" / "checkpoint_step6.bin"));
    EXPECT_TRUE(fs::exists(run.checkpoint));
}

TEST_F(Cli, EvalMatchesDirectEvaluationAndIsRepeatable) {
    const auto out = train_small("ev");
    std::ostringstream first, second;
    const double acc = cmd_eval({out.checkpoint, "target-test", std::nullopt}, first);
    cmd_eval({out.checkpoint, "target-test", std::nullopt}, second);
    EXPECT_EQ(first.str(), second.str());
    EXPECT_TRUE(std::regex_match(first.str(), std::regex("accuracy [0-9]+\\.[0-9]{2}\n"))) << first.str();

    // Independent path: retrain in-process and evaluate the resulting parameters.
    const auto config = parse_config(kSmallRun);
    const auto data = load_datasets(config);
    const auto spec = model_spec_for(config);
    const auto result = train<float>(spec, config.train, {&data.source, &data.target->adaptation, &data.target->val});
    EXPECT_EQ(acc, evaluate(spec, result.params, data.target->test, result.normalization));

    std::ostringstream src;
    EXPECT_NO_THROW(cmd_eval({out.checkpoint, "source-test", std::nullopt}, src));
    EXPECT_THROW(cmd_eval({out.checkpoint, "nonsense", std::nullopt}, src), ConfigError);
}

TEST_F(Cli, EvalRejectsShapeMismatch) {
    const auto out = train_small("shape");
    std::string text = kSmallRun;
    text.replace(text.find("feature_width = 12"), 18, "feature_width = 13");
    const auto other = write("other.ini", text);
    std::ostringstream sink;
    try {
        cmd_eval({out.checkpoint, "target-test", other}, sink);
        FAIL() << "expected a shape mismatch";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("fc.weight"), std::string::npos) << e.what();
    }
}

TEST_F(Cli, EvalReportsCorruptCheckpoint) {
    const auto out = train_small("corrupt");
    const auto bytes = slurp(out.checkpoint);
    const auto cut = write("cut.bin", bytes.substr(0, bytes.size() - 9));
    std::ostringstream sink;
    try {
        cmd_eval({cut, "target-test", std::nullopt}, sink);
        FAIL() << "expected CheckpointError";
    } catch (const CheckpointError& e) {
        EXPECT_NE(std::string(e.what()).find("corrupt checkpoint"), std::string::npos);
    }
    EXPECT_TRUE(sink.str().empty());
}

TEST_F(Cli, DoublePrecisionRunStoresWideValues) {
    const auto out = train_small("f64");
    std::string text = kSmallRun;
    text.replace(text.find("[model]"), 7, "precision = float64\n[model]");
    const auto wide = cmd_train({write("wide.ini", text), dir_ / "wide", std::nullopt});
    EXPECT_EQ(read_checkpoint(wide.checkpoint).value_bytes, 8u);
    EXPECT_EQ(read_checkpoint(out.checkpoint).value_bytes, 4u);
    std::ostringstream sink;
    EXPECT_NO_THROW(cmd_eval({wide.checkpoint, "target-val", std::nullopt}, sink));
}

namespace {

std::string idx_images(std::size_t n) {
    std::string s;
    for (std::uint32_t v : {0x00000803u, static_cast<std::uint32_t>(n), 28u, 28u})
        for (int b = 3; b >= 0; --b) s += static_cast<char>((v >> (8 * b)) & 0xff);
    for (std::size_t i = 0; i < n * 28 * 28; ++i) s += static_cast<char>((i * 37) % 256);
    return s;
}

std::string idx_labels(std::size_t n) {
    std::string s;
    for (std::uint32_t v : {0x00000801u, static_cast<std::uint32_t>(n)})
        for (int b = 3; b >= 0; --b) s += static_cast<char>((v >> (8 * b)) & 0xff);
    for (std::size_t i = 0; i < n; ++i) s += static_cast<char>(i % 10);
    return s;
}

std::string usps_text(std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) {
        s += std::to_string(i % 10 + 1);
        for (int f = 1; f <= 256; f += 5) s += fmt::format(" {}:{}", f, (f % 3) - 1);
        s += '\n';
    }
    return s;
}

}  // namespace

TEST_F(Cli, RealFileLayoutWithDownloadManifest) {
    const auto data = dir_ / "data";
    fs::create_directories(data);
    write("data/train-images-idx3-ubyte", idx_images(40));
    write("data/train-labels-idx1-ubyte", idx_labels(40));
    write("data/usps", usps_text(30));
    write("data/usps.t", usps_text(20));
    const std::string good = fmt::format("# file url sha256\nusps https://example.invalid/usps {}\n",
                                         sha256_file(data / "usps"));
    write("data/manifest.txt", good);

    const std::string cfg = R"([train]
steps = 2
batch_size = 16
[model]
conv_channels = 2
feature_width = 8
[data]
dir = data
download_manifest = manifest.txt
[output]
log_every = 0
)";
    const auto path = write("real.ini", cfg);
    const auto out = cmd_train({path, dir_ / "real", std::nullopt});
    EXPECT_EQ(out.steps, 2u);
    std::ostringstream sink;
    EXPECT_NO_THROW(cmd_eval({out.checkpoint, "usps:" + (data / "usps.t").string(), std::nullopt}, sink));
    EXPECT_NO_THROW(cmd_eval(
        {out.checkpoint,
         "mnist:" + (data / "train-images-idx3-ubyte").string() + "," + (data / "train-labels-idx1-ubyte").string(),
         std::nullopt},
        sink));

    write("data/manifest.txt", fmt::format("usps https://example.invalid/usps {}\n", std::string(64, '0')));
    EXPECT_THROW(cmd_train({path, dir_ / "real2", std::nullopt}), DataFormatError);

    fs::remove(data / "usps");
    write("data/manifest.txt", good);
    try {
        cmd_train({path, dir_ / "real3", std::nullopt});
        FAIL() << "expected a missing-file error";
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("DLA_DATA_DIR"), std::string::npos) << msg;
        EXPECT_NE(msg.find("https://example.invalid/usps"), std::string::npos) << msg;
    }
}

TEST_F(Cli, LinearLabDefaultsPassAndWriteCsv) {
    std::ostringstream out;
    LabRequest req;
    req.csv = dir_ / "lab.csv";
    EXPECT_EQ(cmd_linear_lab(req, out), kExitOk);
    EXPECT_NE(out.str().find("all 100 checks passed"), std::string::npos) << out.str();
    const auto csv = slurp(dir_ / "lab.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "identity,n,d,seed,residual,bound,check,pass");
    EXPECT_EQ(count(csv, "\n"), 101u);
    EXPECT_EQ(count(csv, ",0\n"), 0u);
}

TEST_F(Cli, LinearLabFailuresAreListed) {
    std::ostringstream out;
    LabRequest req;
    req.options.seeds = 2;
    req.options.tolerance = 1e-30;
    EXPECT_EQ(cmd_linear_lab(req, out), kExitValidation);
    EXPECT_NE(out.str().find("FAIL full=decomposed n=64 d=16 seed="), std::string::npos) << out.str();
}

TEST_F(Cli, LinearLabNoisyModeAndValidation) {
    std::ostringstream out;
    LabRequest req;
    req.options.noise = 0.1;
    req.options.seeds = 3;
    EXPECT_EQ(cmd_linear_lab(req, out), kExitOk);
    EXPECT_NE(out.str().find("bounded"), std::string::npos);
    EXPECT_EQ(out.str().find("alignment"), std::string::npos);

    req.options.n_values = {8};
    EXPECT_THROW(cmd_linear_lab(req, out), ConfigError);
}

TEST_F(Cli, PlotIsDeterministicWithThreeCurves) {
    const auto run = train_small("plot");
    cmd_plot({run.metrics, dir_ / "a.svg", std::nullopt});
    cmd_plot({run.metrics, dir_ / "b.svg", std::nullopt});
    const auto svg = slurp(dir_ / "a.svg");
    EXPECT_EQ(svg, slurp(dir_ / "b.svg"));
    EXPECT_EQ(count(svg, "<polyline"), 3u);
    EXPECT_EQ(svg.rfind("<?xml", 0), 0u);
    EXPECT_EQ(svg.substr(svg.size() - 7), "</svg>\n");
    EXPECT_EQ(count(svg, "<g"), count(svg, "</g>"));
    for (const char* label : {">step<", ">loss<", ">validation accuracy<", ">cls<", ">val_acc<"})
        EXPECT_NE(svg.find(label), std::string::npos) << label;

    // lambda comes from the sibling manifest (0.01) unless given
    PlotOptions opts;
    opts.title = "metrics.csv";
    opts.lambda = 0.01;
    EXPECT_EQ(svg, render_svg(read_metrics(run.metrics), opts));
    cmd_plot({run.metrics, dir_ / "c.svg", 5.0});
    EXPECT_NE(slurp(dir_ / "c.svg"), svg);
}

TEST_F(Cli, PlotRejectsEmptyAndMalformedCsv) {
    const auto empty = write("empty.csv", std::string(kMetricsHeader) + "\n");
    try {
        cmd_plot({empty, dir_ / "e.svg", std::nullopt});
        FAIL() << "expected rejection";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("no data rows"), std::string::npos);
    }
    const auto narrow = write("narrow.csv", "step,total,cls\n1,2,3\n");
    EXPECT_THROW(cmd_plot({narrow, dir_ / "n.svg", std::nullopt}), std::invalid_argument);
    EXPECT_FALSE(fs::exists(dir_ / "e.svg"));
}

#ifdef DLA_CLI_PATH
TEST_F(Cli, ExecutableExitCodes) {
    const auto run = [&](const std::string& args) {
        const int status = std::system(fmt::format("\"{}\" {} >/dev/null 2>&1", DLA_CLI_PATH, args).c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    };
    const auto cfg = write("exe.ini", kSmallRun);
    EXPECT_EQ(run(fmt::format("train -q -c \"{}\" -o \"{}\"", cfg.string(), (dir_ / "exe").string())), kExitOk);
    EXPECT_EQ(run(fmt::format("eval \"{}\"", (dir_ / "exe" / kCheckpointName).string())), kExitOk);
    EXPECT_EQ(run("linear-lab --seeds 2"), kExitOk);
    EXPECT_EQ(run("linear-lab --n 8 --d 16"), kExitValidation);
    std::string bad = kSmallRun;
    bad.replace(bad.find("lambda = 0.01"), 13, "lambda = -1");
    EXPECT_EQ(run(fmt::format("train -c \"{}\"", write("neg.ini", bad).string())), kExitValidation);
    const auto ckpt = slurp(dir_ / "exe" / kCheckpointName);
    EXPECT_EQ(run(fmt::format("eval \"{}\"", write("cut.bin", ckpt.substr(0, 50)).string())), kExitRuntime);
    EXPECT_EQ(run("frobnicate"), kExitValidation);
}
#endif
