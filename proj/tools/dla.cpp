#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "dla/checkpoint.hpp"
#include "dla/commands.hpp"

namespace {

using namespace dla;
using namespace dla::cli;

int fail(int code, const std::string& what) {
    std::cerr << "dla: " << what << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Deep label alignment: training, evaluation, linear lab and curve plots"};
    app.require_subcommand(1);
    app.fallthrough();
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Only log warnings and errors");

    TrainRequest train_req;
    std::uint64_t seed = 0;
    std::string out_dir;
    auto* train = app.add_subcommand("train", "Train a model from an INI config");
    train->add_option("-c,--config", train_req.config, "Run config (INI)")->required();
    auto* out_opt = train->add_option("-o,--out", out_dir, "Output directory (overrides [output] dir)");
    auto* seed_opt = train->add_option("-s,--seed", seed, "Seed (overrides [train] seed)");

    EvalRequest eval_req;
    std::string eval_config;
    auto* eval = app.add_subcommand("eval", "Accuracy of a checkpoint on a labeled dataset");
    eval->add_option("checkpoint", eval_req.checkpoint, "Checkpoint file")->required();
    eval->add_option("-d,--dataset", eval_req.dataset,
                     "target-test | target-val | source-test | usps:<file> | mnist:<images>,<labels>")
        ->capture_default_str();
    auto* eval_config_opt =
        eval->add_option("-c,--config", eval_config, "Declared model and data config (default: the stored one)");

    LabRequest lab_req;
    std::string lab_csv;
    auto* lab = app.add_subcommand("linear-lab", "Check the linear label-alignment identities");
    lab->add_option("--n", lab_req.options.n_values, "Sample counts")->delimiter(',')->capture_default_str();
    lab->add_option("--d", lab_req.options.d_values, "Feature dimensions")->delimiter(',')->capture_default_str();
    lab->add_option("--k-star", lab_req.options.k_star, "Top-k cutoff")->capture_default_str();
    lab->add_option("--seeds", lab_req.options.seeds, "Seeds per size")->capture_default_str();
    lab->add_option("--samples", lab_req.options.weight_samples, "Weight vectors per seed")->capture_default_str();
    lab->add_option("--noise", lab_req.options.noise, "Label noise (nonzero switches to bounded checks)")
        ->capture_default_str();
    lab->add_option("--tolerance", lab_req.options.tolerance, "Relative residual tolerance")->capture_default_str();
    auto* lab_csv_opt = lab->add_option("-o,--out", lab_csv, "Residual CSV");

    PlotRequest plot_req;
    double lambda = 0;
    auto* plot = app.add_subcommand("plot", "SVG chart of a metrics CSV");
    plot->add_option("metrics", plot_req.metrics, "Metrics CSV")->required();
    plot->add_option("-o,--out", plot_req.svg, "Output SVG")->required();
    auto* lambda_opt = plot->add_option("--lambda", lambda, "Weight for the align curve (default: from the run)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    }

    auto logger = spdlog::stderr_color_mt("dla");
    logger->set_pattern("[%H:%M:%S] %v");
    spdlog::set_default_logger(logger);
    spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);

    try {
        if (train->parsed()) {
            if (*out_opt) train_req.out = out_dir;
            if (*seed_opt) train_req.seed = seed;
            cmd_train(train_req);
            return kExitOk;
        }
        if (eval->parsed()) {
            if (*eval_config_opt) eval_req.config = eval_config;
            cmd_eval(eval_req, std::cout);
            return kExitOk;
        }
        if (lab->parsed()) {
            if (*lab_csv_opt) lab_req.csv = lab_csv;
            return cmd_linear_lab(lab_req, std::cout);
        }
        if (plot->parsed()) {
            if (*lambda_opt) plot_req.lambda = lambda;
            cmd_plot(plot_req);
            return kExitOk;
        }
    } catch (const CheckpointError& e) {
        return fail(kExitRuntime, e.what());
    } catch (const std::invalid_argument& e) {
        return fail(kExitValidation, e.what());
    } catch (const std::exception& e) {
        return fail(kExitRuntime, e.what());
    }
    return kExitValidation;
}
