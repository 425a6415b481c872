#include "dla/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "dla/ops.hpp"

namespace dla {

std::size_t ModelSpec::flat_width() const {
    std::size_t h = height, w = width, c = in_channels;
    for (auto ch : conv_channels) {
        h /= 2;
        w /= 2;
        c = ch;
    }
    return c * h * w;
}

void ModelSpec::validate() const {
    if (in_channels == 0 || height == 0 || width == 0)
        throw std::invalid_argument(fmt::format("model: input extents {}x{}x{} must be positive", in_channels, height, width));
    for (auto ch : conv_channels)
        if (ch == 0) throw std::invalid_argument("model: conv_channels entries must be positive");
    if (flat_width() == 0)
        throw std::invalid_argument(fmt::format("model: {} pooling stages leave nothing of a {}x{} input",
                                                conv_channels.size(), height, width));
    if (feature_width == 0) throw std::invalid_argument("model: feature_width must be positive");
    if (classes < 2) throw std::invalid_argument("model: classes must be >= 2");
}

namespace {

template <typename E>
E parse_enum(std::string_view text, std::initializer_list<E> values, std::string_view what) {
    std::string options;
    for (auto v : values) {
        if (to_string(v) == text) return v;
        options += (options.empty() ? "" : ", ") + std::string(to_string(v));
    }
    throw std::invalid_argument(fmt::format("unknown {} '{}' (expected one of: {})", what, text, options));
}

template <typename T>
Tensor<T> init_tensor(Shape shape, std::size_t fan_in, InitScheme scheme, bool bias, std::mt19937_64& rng) {
    Tensor<T> t(std::move(shape));
    const double f = static_cast<double>(fan_in);
    if (scheme == InitScheme::uniform_fan_in) {
        std::uniform_real_distribution<double> dist(-1.0 / std::sqrt(f), 1.0 / std::sqrt(f));
        for (auto& x : t.data()) x = static_cast<T>(dist(rng));
    } else if (!bias) {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / f));
        for (auto& x : t.data()) x = static_cast<T>(dist(rng));
    }
    return t;
}

std::string conv_name(std::size_t i, std::string_view what) { return fmt::format("conv{}.{}", i + 1, what); }

template <typename T>
double accuracy_of(const Tensor<T>& logits, std::span<const int> labels) {
    const std::size_t n = logits.dim(0), m = logits.dim(1);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = logits.data().subspan(i * m, m);
        const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
        hits += best == labels[i];
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace

std::string_view to_string(InitScheme s) { return s == InitScheme::uniform_fan_in ? "uniform_fan_in" : "he_normal"; }
InitScheme parse_init(std::string_view t) {
    return parse_enum(t, {InitScheme::uniform_fan_in, InitScheme::he_normal}, "init scheme");
}

std::string_view to_string(TrainMode m) {
    switch (m) {
        case TrainMode::dla: return "dla";
        case TrainMode::no_adapt: return "no_adapt";
        case TrainMode::partial_la: return "partial_la";
    }
    return "?";
}
std::string_view to_string(AlignTarget a) { return a == AlignTarget::probabilities ? "probabilities" : "logits"; }
std::string_view to_string(ClassLoss c) { return c == ClassLoss::cross_entropy ? "cross_entropy" : "squared_error"; }
std::string_view to_string(GateKind g) { return g == GateKind::learned ? "learned" : "saturated"; }

TrainMode parse_train_mode(std::string_view t) {
    return parse_enum(t, {TrainMode::dla, TrainMode::no_adapt, TrainMode::partial_la}, "mode");
}
AlignTarget parse_align_target(std::string_view t) {
    return parse_enum(t, {AlignTarget::probabilities, AlignTarget::logits}, "alignment target");
}
ClassLoss parse_class_loss(std::string_view t) {
    return parse_enum(t, {ClassLoss::cross_entropy, ClassLoss::squared_error}, "classification loss");
}
GateKind parse_gate_kind(std::string_view t) { return parse_enum(t, {GateKind::learned, GateKind::saturated}, "gate"); }

void TrainConfig::validate() const {
    const auto bad = [](std::string_view field, auto value, std::string_view rule) {
        return std::invalid_argument(fmt::format("{} = {} is invalid ({})", field, value, rule));
    };
    if (!(lambda >= 0) || !std::isfinite(lambda)) throw bad("lambda", lambda, "must be >= 0");
    if (!(gamma >= 0) || !std::isfinite(gamma)) throw bad("gamma", gamma, "must be >= 0");
    if (!(beta > 0) || !std::isfinite(beta)) throw bad("beta", beta, "must be > 0");
    if (!(step_size > 0) || !std::isfinite(step_size)) throw bad("step_size", step_size, "must be > 0");
    if (batch_size < 2) throw bad("batch_size", batch_size, "must be >= 2");
    if (steps < 1) throw bad("steps", steps, "must be >= 1");
    if (val_every < 1) throw bad("val_every", val_every, "must be >= 1");
}

template <typename T>
ParameterSet<T> build_model(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 3u};
    std::mt19937_64 rng(seq);
    ParameterSet<T> params;
    std::size_t in = spec.in_channels;
    for (std::size_t i = 0; i < spec.conv_channels.size(); ++i) {
        const std::size_t out = spec.conv_channels[i], fan_in = in * 9;
        params.add(conv_name(i, "weight"), init_tensor<T>({out, in, 3, 3}, fan_in, spec.init, false, rng));
        params.add(conv_name(i, "bias"), init_tensor<T>({out}, fan_in, spec.init, true, rng));
        in = out;
    }
    const std::size_t flat = spec.flat_width();
    params.add("fc.weight", init_tensor<T>({flat, spec.feature_width}, flat, spec.init, false, rng));
    params.add("fc.bias", init_tensor<T>({spec.feature_width}, flat, spec.init, true, rng));
    params.add("head.weight", init_tensor<T>({spec.feature_width, spec.classes}, spec.feature_width, spec.init, false, rng));
    params.add("head.bias", init_tensor<T>({spec.classes}, spec.feature_width, spec.init, true, rng));
    std::normal_distribution<double> k_dist(0.0, 1.0);
    params.add(std::string(kGateParam), Tensor<T>::scalar(static_cast<T>(k_dist(rng))));
    return params;
}

template <typename T>
void check_parameters(const ModelSpec& spec, const ParameterSet<T>& params) {
    const auto expect = [&](const std::string& name, const Shape& shape) {
        if (!params.contains(name)) throw std::invalid_argument(fmt::format("missing parameter '{}'", name));
        if (params.at(name).shape() != shape)
            throw std::invalid_argument(fmt::format("parameter '{}' has shape {}, model expects {}", name,
                                                    to_string(params.at(name).shape()), to_string(shape)));
    };
    std::size_t in = spec.in_channels;
    for (std::size_t i = 0; i < spec.conv_channels.size(); ++i) {
        expect(conv_name(i, "weight"), {spec.conv_channels[i], in, 3, 3});
        expect(conv_name(i, "bias"), {spec.conv_channels[i]});
        in = spec.conv_channels[i];
    }
    expect("fc.weight", {spec.flat_width(), spec.feature_width});
    expect("fc.bias", {spec.feature_width});
    expect("head.weight", {spec.feature_width, spec.classes});
    expect("head.bias", {spec.classes});
    expect(std::string(kGateParam), {1});
    const std::size_t expected = 2 * spec.conv_channels.size() + 5;
    if (params.size() != expected)
        throw std::invalid_argument(fmt::format("model expects {} parameters, got {}", expected, params.size()));
}

template <typename T>
Tensor<T> extract_features(const ModelSpec& spec, const ParameterSet<T>& params, const Tensor<T>& images) {
    if (images.rank() != 4 || images.dim(1) != spec.in_channels || images.dim(2) != spec.height ||
        images.dim(3) != spec.width)
        throw std::invalid_argument(fmt::format("model expects images [b x {} x {} x {}], got {}", spec.in_channels,
                                                spec.height, spec.width, to_string(images.shape())));
    Tensor<T> x = images;
    for (std::size_t i = 0; i < spec.conv_channels.size(); ++i) {
        x = conv2d(x, params.at(conv_name(i, "weight")), 1, 1);
        x = max_pool2d(relu(bias_add(x, params.at(conv_name(i, "bias")))));
    }
    return bias_add(matmul(flatten(x), params.at("fc.weight")), params.at("fc.bias"));
}

template <typename T>
Tensor<T> classify(const ParameterSet<T>& params, const Tensor<T>& features) {
    return bias_add(matmul(features, params.at("head.weight")), params.at("head.bias"));
}

template <typename T>
DlaLossParts<T> dla_loss(const ModelSpec& spec, const ParameterSet<T>& params, const Tensor<T>& source,
                         std::span<const int> labels, const Tensor<T>& target, const TrainConfig& config) {
    if (!source.defined() || source.rank() != 4 || source.dim(0) == 0)
        throw std::invalid_argument("dla_loss: empty source batch");
    if (labels.size() != source.dim(0))
        throw std::invalid_argument(
            fmt::format("dla_loss: {} labels for a source batch of {}", labels.size(), source.dim(0)));
    const bool adapt = config.mode == TrainMode::dla;
    if (adapt) {
        if (!target.defined() || target.rank() != 4 || target.dim(0) == 0)
            throw std::invalid_argument("dla_loss: dla mode needs a nonempty target batch");
        if (!std::equal(source.shape().begin() + 1, source.shape().end(), target.shape().begin() + 1))
            throw std::invalid_argument(fmt::format("dla_loss: source batch {} and target batch {} differ in width",
                                                    to_string(source.shape()), to_string(target.shape())));
    }

    DlaLossParts<T> parts;
    const Tensor<T>& k_hat = params.at(kGateParam);
    const Tensor<T> k = sigmoid(k_hat);
    parts.k = static_cast<double>(k.item());

    const auto weights_for = [&](std::size_t rows) {
        const std::size_t r = std::min(rows, spec.feature_width);
        if (config.gate == GateKind::saturated) return Tensor<T>({r}, T(1));
        return gate_weights(k, static_cast<T>(config.beta), r);
    };

    Tensor<T> phi = extract_features(spec, params, source);
    if (config.mode != TrainMode::no_adapt)
        phi = spectral_filter(phi, weights_for(phi.dim(0)), FilterSide::top, config.gradient_mode);
    const Tensor<T> logits = classify(params, phi);
    parts.source_accuracy = accuracy_of(logits, labels);

    Tensor<T> cls;
    if (config.class_loss == ClassLoss::cross_entropy) {
        cls = softmax_cross_entropy(logits, labels).loss;
    } else {
        const auto diff = sub(softmax(logits), one_hot<T>(labels, spec.classes));
        cls = scale(squared_norm(diff), T(1) / static_cast<T>(logits.dim(0)));
    }
    parts.cls = static_cast<double>(cls.item());
    parts.total = cls;
    if (config.mode == TrainMode::no_adapt) {
        parts.total_value = parts.cls;
        return parts;
    }

    const Tensor<T> k_reg = mul(k, k);
    parts.k_reg = static_cast<double>(k_reg.item());
    parts.total = add(parts.total, scale(k_reg, static_cast<T>(config.gamma)));
    if (adapt) {
        const Tensor<T> phi_t = extract_features(spec, params, target);
        const Tensor<T> filtered = spectral_filter(phi_t, weights_for(phi_t.dim(0)), FilterSide::bottom,
                                                   config.gradient_mode);
        Tensor<T> out = classify(params, filtered);
        if (config.align_target == AlignTarget::probabilities) out = softmax(out);
        const Tensor<T> align = scale(squared_norm(out), T(1) / static_cast<T>(out.dim(0)));
        parts.align = static_cast<double>(align.item());
        parts.total = add(parts.total, scale(align, static_cast<T>(config.lambda)));
    }
    parts.total_value = static_cast<double>(parts.total.item());
    return parts;
}

template <typename T>
double evaluate(const ModelSpec& spec, const ParameterSet<T>& params, const ImageDataset& data,
                const Standardization& norm, std::size_t batch) {
    if (data.count == 0) throw std::invalid_argument("evaluate: empty dataset");
    if (!data.labels) throw std::invalid_argument("evaluate: dataset has no labels");
    if (batch == 0) throw std::invalid_argument("evaluate: batch must be >= 1");
    std::size_t hits = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.count; start += batch) {
        const std::size_t end = std::min(data.count, start + batch);
        idx.resize(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const auto logits = classify(params, extract_features(spec, params, gather_images<T>(data, idx, norm)));
        const std::size_t m = logits.dim(1);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const auto row = logits.data().subspan(i * m, m);
            hits += static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) == (*data.labels)[idx[i]];
        }
    }
    return static_cast<double>(hits) / static_cast<double>(data.count);
}

template <typename T>
TrainResult<T> train(const ModelSpec& spec, const TrainConfig& config, const TrainData& data,
                     const StepCallback<T>& on_step) {
    config.validate();
    spec.validate();
    if (!data.source || !data.source->has_labels()) throw std::invalid_argument("train: need a labeled source dataset");
    const bool adapt = config.mode == TrainMode::dla;
    if (adapt && !data.adaptation) throw std::invalid_argument("train: dla mode needs a target adaptation set");
    if (data.validation && !data.validation->has_labels())
        throw std::invalid_argument("train: validation set has no labels");

    TrainResult<T> result;
    result.params = build_model<T>(spec, config.seed);
    if (config.standardize) result.normalization = fit_standardization(*data.source);
    const auto& norm = result.normalization;

    // no_adapt never touches k_hat, so it is left out of the update.
    ParameterSet<T> trainable =
        config.mode == TrainMode::no_adapt ? result.params.without(kGateParam) : result.params;
    OptimizerState<T> opt;
    opt.kind = config.optimizer;
    opt.step_size = static_cast<T>(config.step_size);

    BatchSampler sampler(config.seed, config.batch_size, data.source->count, adapt ? data.adaptation->count : 0);
    result.metrics.reserve(config.steps);

    for (std::size_t step = 1; step <= config.steps; ++step) {
        const auto started = std::chrono::steady_clock::now();
        const auto batch = next_batch<T>(sampler, *data.source, adapt ? data.adaptation : nullptr, norm);

        Tape<T> tape;
        DlaLossParts<T> parts;
        {
            RecordScope<T> scope(tape);
            parts = dla_loss(spec, result.params, batch.source_x, batch.source_y, batch.target_x, config);
        }
        if (!std::isfinite(parts.total_value) || !std::isfinite(parts.cls) || !std::isfinite(parts.align))
            throw TrainingDivergedError(fmt::format(
                "non-finite loss at step {}: total={} cls={} align={} k_reg={} k={}", step, parts.total_value,
                parts.cls, parts.align, parts.k_reg, parts.k));
        tape.backward(parts.total);
        optimizer_step(trainable, opt);
        result.params.zero_grad();

        MetricsRecord rec;
        rec.step = step;
        rec.total = parts.total_value;
        rec.cls = parts.cls;
        rec.align = parts.align;
        rec.k_reg = parts.k_reg;
        rec.k = parts.k;
        rec.src_acc = parts.source_accuracy;
        if (data.validation && (step % config.val_every == 0 || step == config.steps))
            rec.val_acc = evaluate(spec, result.params, *data.validation, norm);
        rec.wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
        if (on_step) on_step(rec, result.params, norm);
        result.metrics.push_back(rec);
    }
    return result;
}

#define DLA_INSTANTIATE_MODEL(T)                                                                                   \
    template ParameterSet<T> build_model(const ModelSpec&, std::uint64_t);                                        \
    template void check_parameters(const ModelSpec&, const ParameterSet<T>&);                                      \
    template Tensor<T> extract_features(const ModelSpec&, const ParameterSet<T>&, const Tensor<T>&);               \
    template Tensor<T> classify(const ParameterSet<T>&, const Tensor<T>&);                                         \
    template DlaLossParts<T> dla_loss(const ModelSpec&, const ParameterSet<T>&, const Tensor<T>&,                  \
                                      std::span<const int>, const Tensor<T>&, const TrainConfig&);                 \
    template double evaluate(const ModelSpec&, const ParameterSet<T>&, const ImageDataset&, const Standardization&, \
                             std::size_t);                                                                          \
    template TrainResult<T> train(const ModelSpec&, const TrainConfig&, const TrainData&,                           \
                                  const StepCallback<T>&);

DLA_INSTANTIATE_MODEL(float)
DLA_INSTANTIATE_MODEL(double)

}  // namespace dla
