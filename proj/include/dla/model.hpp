#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dla/data.hpp"
#include "dla/optim.hpp"
#include "dla/spectral.hpp"
#include "dla/tensor.hpp"

namespace dla {

enum class InitScheme { uniform_fan_in, he_normal };

// f: (conv 3x3 pad 1 -> relu -> maxpool 2) per entry of conv_channels,
//    flatten, dense to feature_width.
// g: dense feature_width -> classes.
// Dense layers compute x W + b with W stored [in x out].
struct ModelSpec {
    std::size_t in_channels = 1;
    std::size_t height = 28;
    std::size_t width = 28;
    std::vector<std::size_t> conv_channels{16, 32};
    std::size_t feature_width = 128;
    std::size_t classes = 10;
    InitScheme init = InitScheme::uniform_fan_in;

    std::size_t flat_width() const;
    void validate() const;
};

std::string_view to_string(InitScheme s);
InitScheme parse_init(std::string_view text);

inline constexpr std::string_view kGateParam = "k_hat";

// Parameters in a fixed order: conv{i}.weight, conv{i}.bias, ..., fc.weight,
// fc.bias, head.weight, head.bias, k_hat. Deterministic for a fixed seed.
template <typename T>
ParameterSet<T> build_model(const ModelSpec& spec, std::uint64_t seed);

// Throws std::invalid_argument if a parameter is missing or misshapen.
template <typename T>
void check_parameters(const ModelSpec& spec, const ParameterSet<T>& params);

template <typename T>
Tensor<T> extract_features(const ModelSpec& spec, const ParameterSet<T>& params, const Tensor<T>& images);

template <typename T>
Tensor<T> classify(const ParameterSet<T>& params, const Tensor<T>& features);

enum class TrainMode { dla, no_adapt, partial_la };
enum class AlignTarget { probabilities, logits };
enum class ClassLoss { cross_entropy, squared_error };
// saturated pins every gate weight to 1 so the top filter is the identity
// and the bottom filter is zero; k_hat still enters the rank term.
enum class GateKind { learned, saturated };

std::string_view to_string(TrainMode m);
std::string_view to_string(AlignTarget a);
std::string_view to_string(ClassLoss c);
std::string_view to_string(GateKind g);
TrainMode parse_train_mode(std::string_view text);
AlignTarget parse_align_target(std::string_view text);
ClassLoss parse_class_loss(std::string_view text);
GateKind parse_gate_kind(std::string_view text);

struct TrainConfig {
    double lambda = 1e-3;
    double gamma = 1e-3;
    double beta = 5.0;
    double step_size = 1e-3;
    std::size_t batch_size = 128;
    std::size_t steps = 2100;
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::dla;
    GradientMode gradient_mode = GradientMode::projected;
    AlignTarget align_target = AlignTarget::probabilities;
    ClassLoss class_loss = ClassLoss::cross_entropy;
    OptimizerKind optimizer = OptimizerKind::adam;
    GateKind gate = GateKind::learned;
    std::size_t val_every = 10;
    bool standardize = false;

    // Throws std::invalid_argument naming the offending field.
    void validate() const;
};

template <typename T>
struct DlaLossParts {
    Tensor<T> total;  // scalar on the tape, for backward
    double cls = 0;
    double align = 0;
    double k_reg = 0;
    double total_value = 0;
    double k = 0;
    double source_accuracy = 0;
};

// target may be undefined in no_adapt and partial_la modes.
template <typename T>
DlaLossParts<T> dla_loss(const ModelSpec& spec, const ParameterSet<T>& params, const Tensor<T>& source,
                         std::span<const int> labels, const Tensor<T>& target, const TrainConfig& config);

struct MetricsRecord {
    std::size_t step = 0;
    double total = 0;
    double cls = 0;
    double align = 0;
    double k_reg = 0;
    double k = 0;
    double src_acc = 0;
    std::optional<double> val_acc;
    double wall_ms = 0;
};

class TrainingDivergedError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainData {
    const ImageDataset* source = nullptr;      // labeled
    const ImageDataset* adaptation = nullptr;  // unlabeled target pool, required in dla mode
    const ImageDataset* validation = nullptr;  // labeled target split, optional
};

template <typename T>
struct TrainResult {
    ParameterSet<T> params;
    std::vector<MetricsRecord> metrics;
    Standardization normalization;
};

template <typename T>
using StepCallback = std::function<void(const MetricsRecord&, const ParameterSet<T>&, const Standardization&)>;

// Validation accuracy is sampled every config.val_every steps and at the
// last step. on_step, if set, sees every record as it is produced, together
// with the parameters after that step's update.
template <typename T>
TrainResult<T> train(const ModelSpec& spec, const TrainConfig& config, const TrainData& data,
                     const StepCallback<T>& on_step = {});

// Accuracy of argmax g(f(x)) on unfiltered features.
template <typename T>
double evaluate(const ModelSpec& spec, const ParameterSet<T>& params, const ImageDataset& data,
                const Standardization& norm = {}, std::size_t batch = 256);

}  // namespace dla
