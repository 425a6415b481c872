#include "dla/commands.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <tuple>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "dla/checkpoint.hpp"
#include "dla/metrics.hpp"
#include "dla/model.hpp"
#include "dla/plot.hpp"

namespace dla::cli {

namespace fs = std::filesystem;

namespace {

struct ManifestEntry {
    std::string url;
    std::string sha256;
};

// "<file> <url> <sha256>" per line; blank lines and '#' comments ignored.
std::map<std::string, ManifestEntry> read_download_manifest(const DataConfig& data) {
    std::map<std::string, ManifestEntry> entries;
    if (data.download_manifest.empty()) return entries;
    const fs::path path = resolve_data_path(data, data.download_manifest);
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("[data] download_manifest: cannot read {}", path.string()));
    std::string line;
    for (std::size_t no = 1; std::getline(in, line); ++no) {
        std::istringstream ss(line);
        std::string name, url, sha, extra;
        if (!(ss >> name) || name[0] == '#') continue;
        if (!(ss >> url >> sha) || (ss >> extra) || sha.size() != 64)
            throw ConfigError(fmt::format("{} line {}: expected '<file> <url> <sha256>'", path.string(), no));
        entries[name] = {url, sha};
    }
    return entries;
}

class DataFiles {
public:
    explicit DataFiles(const DataConfig& data) : data_(data), manifest_(read_download_manifest(data)) {}

    // Resolved path of an existing file; name.gz is accepted in place of name.
    fs::path require(const fs::path& name) const {
        fs::path path = resolve_data_path(data_, name);
        std::string key = name.filename().string();
        if (!fs::exists(path) && fs::exists(fs::path(path.string() + ".gz"))) {
            path += ".gz";
            key += ".gz";
        }
        auto entry = manifest_.find(key);
        if (entry == manifest_.end()) entry = manifest_.find(name.string());
        if (!fs::exists(path)) {
            std::string msg = fmt::format("data file {} not found (set [data] dir or DLA_DATA_DIR)", path.string());
            if (entry != manifest_.end()) msg += fmt::format("; it is listed for download at {}", entry->second.url);
            throw std::runtime_error(msg);
        }
        if (entry != manifest_.end()) {
            const auto actual = sha256_file(path);
            if (actual != entry->second.sha256)
                throw DataFormatError(fmt::format("{}: sha256 {} does not match the download manifest ({})",
                                                  path.string(), actual, entry->second.sha256));
        }
        return path;
    }

private:
    const DataConfig& data_;
    std::map<std::string, ManifestEntry> manifest_;
};

std::uint64_t synthetic_seed(const DataConfig& d, std::uint64_t stream) { return d.split_seed * 8 + stream; }

ImageDataset load_source(const RunConfig& c, const DataFiles& files, Split split) {
    const auto& d = c.data;
    if (d.source == SourceKind::synthetic) {
        const std::size_t n = split == Split::train ? d.synthetic_train : d.synthetic_test;
        return synthetic_digits(n, GlyphStyle::plain, synthetic_seed(d, split == Split::train ? 1 : 2), split,
                                d.synthetic_size, d.synthetic_size);
    }
    auto data = split == Split::train
                    ? load_mnist(files.require(d.mnist_train_images), files.require(d.mnist_train_labels))
                    : load_mnist(files.require(d.mnist_test_images), files.require(d.mnist_test_labels));
    data.split = split;
    return data;
}

std::optional<TargetSplit> load_target(const RunConfig& c, const DataFiles& files) {
    const auto& d = c.data;
    switch (d.target) {
        case TargetKind::none: return std::nullopt;
        case TargetKind::synthetic:
            return split_target(synthetic_digits(d.synthetic_train, GlyphStyle::bold, synthetic_seed(d, 3), Split::train,
                                                 d.synthetic_size, d.synthetic_size),
                                synthetic_digits(d.synthetic_test, GlyphStyle::bold, synthetic_seed(d, 4), Split::test,
                                                 d.synthetic_size, d.synthetic_size),
                                d.split_seed);
        case TargetKind::usps:
            return split_target(load_usps(files.require(d.usps_train)), load_usps(files.require(d.usps_test)),
                                d.split_seed);
    }
    return std::nullopt;
}

std::string manifest_text(const RunConfig& c, const std::string& echo) {
    std::string s;
    s += "; dla run manifest. Feed this file back with `dla train --config` to repeat the run.\n";
    s += fmt::format("; config_hash = {}\n", git_blob_hash(echo));
    s += fmt::format("; seed = {}\n", c.train.seed);
    s += fmt::format("; gradient_mode = {}\n", to_string(c.train.gradient_mode));
    s += fmt::format("; optimizer = {}\n", to_string(c.train.optimizer));
    s += fmt::format("; precision = {}\n", to_string(c.precision));
    s += echo;
    return s;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
}

template <typename T>
TrainOutcome run_training(const RunConfig& c, const Datasets& data, const fs::path& dir, const std::string& echo) {
    const ModelSpec spec = model_spec_for(c);
    TrainData td;
    td.source = &data.source;
    if (data.target) {
        if (c.train.mode == TrainMode::dla) td.adaptation = &data.target->adaptation;
        td.validation = &data.target->val;
    }

    TrainOutcome outcome;
    outcome.dir = dir;
    outcome.metrics = dir / c.output.metrics;
    outcome.checkpoint = dir / kCheckpointName;
    outcome.manifest = dir / kManifestName;
    write_text(outcome.manifest, manifest_text(c, echo));

    MetricsWriter writer(outcome.metrics, c.output.wall_clock, c.output.metrics_flush_every);
    const auto on_step = [&](const MetricsRecord& r, const ParameterSet<T>& params, const Standardization& norm) {
        writer.append(r);
        if (c.output.log_every && (r.step % c.output.log_every == 0 || r.step == c.train.steps))
            spdlog::info("step {}/{} total={:.5g} cls={:.5g} align={:.5g} k={:.4f} src_acc={:.3f}{}", r.step,
                         c.train.steps, r.total, r.cls, r.align, r.k, r.src_acc,
                         r.val_acc ? fmt::format(" val_acc={:.4f}", *r.val_acc) : std::string());
        if (c.output.checkpoint_every && r.step % c.output.checkpoint_every == 0 && r.step != c.train.steps)
            write_checkpoint(dir / fmt::format("checkpoint_step{}.bin", r.step), make_checkpoint(echo, params, norm));
    };
    const auto result = train<T>(spec, c.train, td, on_step);
    writer.flush();
    write_checkpoint(outcome.checkpoint, make_checkpoint(echo, result.params, result.normalization));

    outcome.steps = result.metrics.size();
    outcome.final_k = result.metrics.back().k;
    outcome.final_val_acc = result.metrics.back().val_acc;
    return outcome;
}

template <typename T>
double evaluate_checkpoint(const Checkpoint& ckpt, const ModelSpec& spec, const ImageDataset& data) {
    const auto params = checkpoint_parameters<T>(ckpt);
    check_parameters(spec, params);
    return evaluate(spec, params, data, ckpt.normalization);
}

std::vector<std::string> split_list(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(item);
    return out;
}

}  // namespace

RunConfig load_run_config(const TrainRequest& request) {
    RunConfig c = load_config(request.config);
    if (request.seed) c.train.seed = *request.seed;
    if (request.out) c.output.dir = *request.out;
    return c;
}

ModelSpec model_spec_for(const RunConfig& config) {
    ModelSpec spec = config.model;
    spec.height = spec.width = config.data.source == SourceKind::synthetic ? config.data.synthetic_size : 28;
    if (config.data.target == TargetKind::synthetic && config.data.source != SourceKind::synthetic)
        throw ConfigError("[data] target = synthetic needs source = synthetic (image sizes must agree)");
    spec.validate();
    return spec;
}

Datasets load_datasets(const RunConfig& config, bool with_source_test) {
    const DataFiles files(config.data);
    Datasets d{load_source(config, files, Split::train), std::nullopt, load_target(config, files)};
    if (with_source_test) d.source_test = load_source(config, files, Split::test);
    if (d.target && d.target->adaptation.height != d.source.height)
        throw DataFormatError(fmt::format("source images are {}x{} but target images are {}x{}", d.source.height,
                                          d.source.width, d.target->adaptation.height, d.target->adaptation.width));
    return d;
}

TrainOutcome cmd_train(const TrainRequest& request) {
    const RunConfig c = load_run_config(request);
    model_spec_for(c);
    const std::string echo = to_ini(c);

    spdlog::info("loading data (source {}, target {})", to_string(c.data.source), to_string(c.data.target));
    const Datasets data = load_datasets(c);
    spdlog::info("source {} images, target adaptation {} / val {} / test {}", data.source.count,
                 data.target ? data.target->adaptation.count : 0, data.target ? data.target->val.count : 0,
                 data.target ? data.target->test.count : 0);

    fs::create_directories(c.output.dir);
    spdlog::info("training {} mode, {} steps, seed {}, {} -> {}", to_string(c.train.mode), c.train.steps,
                 c.train.seed, to_string(c.precision), c.output.dir.string());
    auto outcome = c.precision == Precision::float64 ? run_training<double>(c, data, c.output.dir, echo)
                                                     : run_training<float>(c, data, c.output.dir, echo);
    spdlog::info("wrote {}, {} and {}", outcome.metrics.string(), outcome.checkpoint.string(),
                 outcome.manifest.string());
    return outcome;
}

double cmd_eval(const EvalRequest& request, std::ostream& out) {
    const Checkpoint ckpt = read_checkpoint(request.checkpoint);
    const RunConfig c = request.config ? load_config(*request.config) : parse_config(ckpt.config);
    const ModelSpec spec = model_spec_for(c);

    const std::string& what = request.dataset;
    ImageDataset data;
    if (what == "target-test" || what == "target-val") {
        if (c.data.target == TargetKind::none) throw ConfigError(fmt::format("dataset {}: config has no target", what));
        auto target = load_target(c, DataFiles(c.data));
        data = what == "target-test" ? std::move(target->test) : std::move(target->val);
    } else if (what == "source-test") {
        data = load_source(c, DataFiles(c.data), Split::test);
    } else if (what.rfind("usps:", 0) == 0) {
        data = load_usps(what.substr(5));
    } else if (what.rfind("mnist:", 0) == 0) {
        const auto parts = split_list(what.substr(6), ',');
        if (parts.size() != 2) throw ConfigError("dataset mnist:<images>,<labels> needs two file names");
        data = load_mnist(parts[0], parts[1]);
    } else {
        throw ConfigError(fmt::format(
            "unknown dataset '{}' (target-test, target-val, source-test, usps:<file>, mnist:<images>,<labels>)", what));
    }
    if (data.height != spec.height || data.width != spec.width)
        throw ConfigError(fmt::format("dataset images are {}x{} but the model expects {}x{}", data.height, data.width,
                                      spec.height, spec.width));

    const double acc = ckpt.value_bytes == 8 ? evaluate_checkpoint<double>(ckpt, spec, data)
                                             : evaluate_checkpoint<float>(ckpt, spec, data);
    out << fmt::format("accuracy {:.2f}\n", 100.0 * acc);
    return acc;
}

int cmd_linear_lab(const LabRequest& request, std::ostream& out) {
    for (auto n : request.options.n_values)
        for (auto d : request.options.d_values)
            if (d > n) throw ConfigError(fmt::format("linear-lab: d = {} exceeds n = {} (the lab needs d <= n)", d, n));
    const auto rows = lab::run_identity_suite(request.options);

    struct Group {
        double worst = 0.0;
        double bound = 0.0;
        std::size_t passed = 0, total = 0;
        bool exact = true;
    };
    std::map<std::tuple<std::string, std::size_t, std::size_t>, Group> groups;
    std::vector<std::tuple<std::string, std::size_t, std::size_t>> order;
    for (const auto& r : rows) {
        const auto key = std::make_tuple(r.identity, r.n, r.d);
        auto [it, fresh] = groups.try_emplace(key);
        if (fresh) order.push_back(key);
        auto& g = it->second;
        g.worst = std::max(g.worst, r.residual);
        g.bound = r.bound;
        g.exact = r.exact;
        g.passed += r.pass;
        ++g.total;
    }

    out << fmt::format("linear-lab: k*={} seeds={} noise={} tolerance={:g}\n", request.options.k_star,
                       request.options.seeds, request.options.noise, request.options.tolerance);
    out << fmt::format("{:<20} {:>5} {:>5} {:>8} {:>13} {:>13} {:>7}\n", "identity", "n", "d", "check", "max_resid",
                       "bound", "passed");
    for (const auto& key : order) {
        const auto& g = groups.at(key);
        out << fmt::format("{:<20} {:>5} {:>5} {:>8} {:>13.3e} {:>13.3e} {:>3}/{:<3}\n", std::get<0>(key),
                           std::get<1>(key), std::get<2>(key), g.exact ? "equal" : "bounded", g.worst, g.bound,
                           g.passed, g.total);
    }

    std::size_t failures = 0;
    for (const auto& r : rows) {
        if (r.pass) continue;
        ++failures;
        out << fmt::format("FAIL {} n={} d={} seed={} residual={:.6e} bound={:.6e}\n", r.identity, r.n, r.d, r.seed,
                           r.residual, r.bound);
    }

    if (request.csv) {
        std::string csv = "identity,n,d,seed,residual,bound,check,pass\n";
        for (const auto& r : rows)
            csv += fmt::format("{},{},{},{},{},{},{},{}\n", r.identity, r.n, r.d, r.seed, format_number(r.residual),
                               format_number(r.bound), r.exact ? "equal" : "bounded", r.pass ? 1 : 0);
        write_text(*request.csv, csv);
    }
    out << (failures ? fmt::format("{} of {} checks failed\n", failures, rows.size())
                     : fmt::format("all {} checks passed\n", rows.size()));
    return failures ? kExitValidation : kExitOk;
}

void cmd_plot(const PlotRequest& request) {
    PlotOptions options;
    options.title = request.metrics.filename().string();
    if (request.lambda) {
        options.lambda = *request.lambda;
    } else if (const auto manifest = request.metrics.parent_path() / kManifestName; fs::exists(manifest)) {
        options.lambda = load_config(manifest).train.lambda;
    }
    plot_metrics(request.metrics, request.svg, options);
}

}  // namespace dla::cli
