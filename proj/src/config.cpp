#include "dla/config.hpp"

#include <array>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <openssl/evp.h>

namespace dla {

namespace pt = boost::property_tree;

std::string_view to_string(SourceKind k) { return k == SourceKind::mnist ? "mnist" : "synthetic"; }
std::string_view to_string(TargetKind k) {
    switch (k) {
        case TargetKind::usps: return "usps";
        case TargetKind::synthetic: return "synthetic";
        case TargetKind::none: return "none";
    }
    return "?";
}
std::string_view to_string(Precision p) { return p == Precision::float32 ? "float32" : "float64"; }

namespace {

const std::map<std::string, std::set<std::string>>& known_keys() {
    static const std::map<std::string, std::set<std::string>> keys = {
        {"train",
         {"lambda", "gamma", "beta", "step_size", "batch_size", "steps", "seed", "mode", "gradient_mode",
          "align_target", "class_loss", "optimizer", "gate", "val_every", "standardize", "precision"}},
        {"model", {"conv_channels", "feature_width", "init"}},
        {"data",
         {"dir", "source", "target", "mnist_train_images", "mnist_train_labels", "mnist_test_images",
          "mnist_test_labels", "usps_train", "usps_test", "download_manifest", "split_seed", "synthetic_train",
          "synthetic_test", "synthetic_size"}},
        {"output", {"dir", "metrics", "metrics_flush_every", "checkpoint_every", "log_every", "wall_clock"}},
    };
    return keys;
}

class Reader {
public:
    Reader(const pt::ptree& tree, std::string section) : section_(std::move(section)) {
        if (auto child = tree.get_child_optional(section_)) node_ = &*child;
    }

    template <typename F>
    void with(const std::string& key, F&& apply) const {
        if (!node_) return;
        auto v = node_->get_optional<std::string>(key);
        if (!v) return;
        try {
            apply(trim(*v));
        } catch (const std::exception& e) {
            throw ConfigError(fmt::format("[{}] {} = '{}': {}", section_, key, *v, e.what()));
        }
    }

    void number(const std::string& key, double& out) const {
        with(key, [&](const std::string& s) { out = parse_double(s); });
    }
    void count(const std::string& key, std::size_t& out) const {
        with(key, [&](const std::string& s) { out = static_cast<std::size_t>(parse_u64(s)); });
    }
    void seed(const std::string& key, std::uint64_t& out) const {
        with(key, [&](const std::string& s) { out = parse_u64(s); });
    }
    void flag(const std::string& key, bool& out) const {
        with(key, [&](const std::string& s) {
            if (s == "true") out = true;
            else if (s == "false") out = false;
            else throw std::invalid_argument("expected true or false");
        });
    }
    void path(const std::string& key, std::filesystem::path& out) const {
        with(key, [&](const std::string& s) { out = s; });
    }
    void text(const std::string& key, std::string& out) const {
        with(key, [&](const std::string& s) { out = s; });
    }

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return {};
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    }
    static double parse_double(const std::string& s) {
        double v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) throw std::invalid_argument("not a number");
        return v;
    }
    static std::uint64_t parse_u64(const std::string& s) {
        std::uint64_t v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || p != s.data() + s.size() || s.empty())
            throw std::invalid_argument("not a nonnegative integer");
        return v;
    }

private:
    std::string section_;
    const pt::ptree* node_ = nullptr;
};

void reject_unknown(const pt::ptree& tree) {
    const auto& known = known_keys();
    for (const auto& [section, child] : tree) {
        auto it = known.find(section);
        if (it == known.end()) {
            if (child.empty()) throw ConfigError(fmt::format("key '{}' outside any section", section));
            throw ConfigError(fmt::format("unknown section [{}]", section));
        }
        for (const auto& [key, value] : child)
            if (!it->second.count(key)) throw ConfigError(fmt::format("unknown key [{}] {}", section, key));
    }
}

std::string join(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

std::string digest_hex(const EVP_MD* md, std::string_view prefix, const std::function<void(EVP_MD_CTX*)>& feed) {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, md, nullptr);
    if (!prefix.empty()) EVP_DigestUpdate(ctx, prefix.data(), prefix.size());
    feed(ctx);
    std::array<unsigned char, EVP_MAX_MD_SIZE> out{};
    unsigned len = 0;
    EVP_DigestFinal_ex(ctx, out.data(), &len);
    EVP_MD_CTX_free(ctx);
    std::string hex;
    for (unsigned i = 0; i < len; ++i) hex += fmt::format("{:02x}", out[i]);
    return hex;
}

}  // namespace

RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
    pt::ptree tree;
    try {
        std::istringstream in{std::string(text)};
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(fmt::format("config line {}: {}", e.line(), e.message()));
    }
    reject_unknown(tree);

    RunConfig c;
    const Reader train(tree, "train"), model(tree, "model"), data(tree, "data"), output(tree, "output");
    auto& t = c.train;
    train.number("lambda", t.lambda);
    train.number("gamma", t.gamma);
    train.number("beta", t.beta);
    train.number("step_size", t.step_size);
    train.count("batch_size", t.batch_size);
    train.count("steps", t.steps);
    train.seed("seed", t.seed);
    train.with("mode", [&](const std::string& s) { t.mode = parse_train_mode(s); });
    train.with("gradient_mode", [&](const std::string& s) { t.gradient_mode = parse_gradient_mode(s); });
    train.with("align_target", [&](const std::string& s) { t.align_target = parse_align_target(s); });
    train.with("class_loss", [&](const std::string& s) { t.class_loss = parse_class_loss(s); });
    train.with("optimizer", [&](const std::string& s) { t.optimizer = parse_optimizer(s); });
    train.with("gate", [&](const std::string& s) { t.gate = parse_gate_kind(s); });
    train.count("val_every", t.val_every);
    train.flag("standardize", t.standardize);
    train.with("precision", [&](const std::string& s) {
        if (s == "float32") c.precision = Precision::float32;
        else if (s == "float64") c.precision = Precision::float64;
        else throw std::invalid_argument("expected float32 or float64");
    });

    model.with("conv_channels", [&](const std::string& s) {
        c.model.conv_channels.clear();
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, ',')) c.model.conv_channels.push_back(Reader::parse_u64(Reader::trim(item)));
        if (c.model.conv_channels.empty()) throw std::invalid_argument("need at least one conv layer");
    });
    model.count("feature_width", c.model.feature_width);
    model.with("init", [&](const std::string& s) { c.model.init = parse_init(s); });

    auto& d = c.data;
    data.path("dir", d.dir);
    if (!d.dir.empty() && d.dir.is_relative() && !base_dir.empty()) d.dir = base_dir / d.dir;
    if (!d.dir.empty()) d.dir = d.dir.lexically_normal();
    data.with("source", [&](const std::string& s) {
        if (s == "mnist") d.source = SourceKind::mnist;
        else if (s == "synthetic") d.source = SourceKind::synthetic;
        else throw std::invalid_argument("expected mnist or synthetic");
    });
    data.with("target", [&](const std::string& s) {
        if (s == "usps") d.target = TargetKind::usps;
        else if (s == "synthetic") d.target = TargetKind::synthetic;
        else if (s == "none") d.target = TargetKind::none;
        else throw std::invalid_argument("expected usps, synthetic or none");
    });
    data.path("mnist_train_images", d.mnist_train_images);
    data.path("mnist_train_labels", d.mnist_train_labels);
    data.path("mnist_test_images", d.mnist_test_images);
    data.path("mnist_test_labels", d.mnist_test_labels);
    data.path("usps_train", d.usps_train);
    data.path("usps_test", d.usps_test);
    data.path("download_manifest", d.download_manifest);
    data.seed("split_seed", d.split_seed);
    data.count("synthetic_train", d.synthetic_train);
    data.count("synthetic_test", d.synthetic_test);
    data.count("synthetic_size", d.synthetic_size);

    auto& o = c.output;
    output.path("dir", o.dir);
    output.text("metrics", o.metrics);
    output.count("metrics_flush_every", o.metrics_flush_every);
    output.count("checkpoint_every", o.checkpoint_every);
    output.count("log_every", o.log_every);
    output.flag("wall_clock", o.wall_clock);

    const auto check = [](std::string_view where, const std::function<void()>& run) {
        try {
            run();
        } catch (const std::exception& e) {
            throw ConfigError(fmt::format("{}: {}", where, e.what()));
        }
    };
    check("[train]", [&] { t.validate(); });
    check("[model]", [&] {
        auto probe = c.model;
        probe.height = probe.width = d.source == SourceKind::synthetic ? d.synthetic_size : 28;
        probe.validate();
    });
    if (d.source == SourceKind::synthetic && d.synthetic_train < t.batch_size)
        throw ConfigError(fmt::format("[data] synthetic_train = {} is smaller than [train] batch_size = {}",
                                      d.synthetic_train, t.batch_size));
    if (t.mode == TrainMode::dla && d.target == TargetKind::none)
        throw ConfigError("[data] target = none but [train] mode = dla needs a target domain");
    if (o.metrics.empty() || o.metrics.find('/') != std::string::npos)
        throw ConfigError("[output] metrics must be a plain file name");
    if (o.metrics_flush_every == 0) throw ConfigError("[output] metrics_flush_every must be >= 1");
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot read config file {}", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), std::filesystem::absolute(path).parent_path());
}

std::string to_ini(const RunConfig& c) {
    const auto& t = c.train;
    const auto& d = c.data;
    const auto& o = c.output;
    std::string s;
    s += "[train]\n";
    s += fmt::format("lambda = {}\ngamma = {}\nbeta = {}\nstep_size = {}\n", t.lambda, t.gamma, t.beta, t.step_size);
    s += fmt::format("batch_size = {}\nsteps = {}\nseed = {}\n", t.batch_size, t.steps, t.seed);
    s += fmt::format("mode = {}\ngradient_mode = {}\nalign_target = {}\nclass_loss = {}\n", to_string(t.mode),
                     to_string(t.gradient_mode), to_string(t.align_target), to_string(t.class_loss));
    s += fmt::format("optimizer = {}\ngate = {}\nval_every = {}\nstandardize = {}\nprecision = {}\n",
                     to_string(t.optimizer), to_string(t.gate), t.val_every, t.standardize, to_string(c.precision));
    s += "\n[model]\n";
    s += fmt::format("conv_channels = {}\nfeature_width = {}\ninit = {}\n", join(c.model.conv_channels),
                     c.model.feature_width, to_string(c.model.init));
    s += "\n[data]\n";
    s += fmt::format("dir = {}\nsource = {}\ntarget = {}\n", d.dir.string(), to_string(d.source), to_string(d.target));
    s += fmt::format("mnist_train_images = {}\nmnist_train_labels = {}\n", d.mnist_train_images.string(),
                     d.mnist_train_labels.string());
    s += fmt::format("mnist_test_images = {}\nmnist_test_labels = {}\n", d.mnist_test_images.string(),
                     d.mnist_test_labels.string());
    s += fmt::format("usps_train = {}\nusps_test = {}\ndownload_manifest = {}\n", d.usps_train.string(),
                     d.usps_test.string(), d.download_manifest.string());
    s += fmt::format("split_seed = {}\nsynthetic_train = {}\nsynthetic_test = {}\nsynthetic_size = {}\n", d.split_seed,
                     d.synthetic_train, d.synthetic_test, d.synthetic_size);
    s += "\n[output]\n";
    s += fmt::format("dir = {}\nmetrics = {}\nmetrics_flush_every = {}\ncheckpoint_every = {}\nlog_every = {}\n",
                     o.dir.string(), o.metrics, o.metrics_flush_every, o.checkpoint_every, o.log_every);
    s += fmt::format("wall_clock = {}\n", o.wall_clock);
    return s;
}

std::filesystem::path resolve_data_path(const DataConfig& data, const std::filesystem::path& name) {
    if (name.empty() || name.is_absolute()) return name;
    if (!data.dir.empty()) return data.dir / name;
    if (const char* env = std::getenv("DLA_DATA_DIR"); env && *env) return std::filesystem::path(env) / name;
    return name;
}

std::string git_blob_hash(std::string_view content) {
    const std::string header = fmt::format("blob {}", content.size());
    return digest_hex(EVP_sha1(), std::string_view(header.c_str(), header.size() + 1),
                      [&](EVP_MD_CTX* ctx) { EVP_DigestUpdate(ctx, content.data(), content.size()); });
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("cannot read {}", path.string()));
    return digest_hex(EVP_sha256(), {}, [&](EVP_MD_CTX* ctx) {
        std::array<char, 1 << 16> buf;
        while (in) {
            in.read(buf.data(), buf.size());
            if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
        }
    });
}

}  // namespace dla
