#pragma once

#include "slipnet/preprocess.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace slipnet::snn {

struct IafParams {
    double v_th = 1.0;
    double v_reset = 0.0;
};

/// v' = v + input; neurons with v' >= v_th spike and reset to v_reset.
/// Throws ShapeMismatch / NonFiniteInput.
std::vector<std::uint8_t> iaf_step(std::vector<double>& v_mem, std::span<const double> input,
                                   const IafParams& params = {});

enum class LayerKind : std::uint8_t { Conv = 1, Dense = 2 };

struct LayerSpec {
    LayerKind kind = LayerKind::Dense;
    std::size_t out = 0; // channels (Conv) or units (Dense)
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t pad = 1;
    IafParams iaf;
};

struct Shape {
    std::size_t c = 0, h = 1, w = 1;
    std::size_t size() const { return c * h * w; }
    bool operator==(const Shape&) const = default;
};

struct NetworkSpec {
    std::size_t steps = kSteps;
    Shape input{kChannels, kGrid, kGrid};
    std::vector<LayerSpec> layers;

    /// Conv(1->8, s1) / Conv(8->16, s2) / Dense(1600->128) / Dense(128->3), all IAF.
    static NetworkSpec standard();

    /// Output shape of every layer. Throws ShapeMismatch if layers do not compose.
    std::vector<Shape> shapes() const;
    /// Input shape of layer l.
    Shape input_of(std::size_t l) const;
    std::size_t weight_count(std::size_t l) const;
    std::size_t classes() const;
    /// Stable text form; its FNV-1a hash is the digest stored with weights.
    std::string describe() const;
    std::uint64_t digest() const;
};

/// Per-layer weights. Conv kernels are [out][in][ky][kx]; dense matrices are
/// input-major [in][out], with inputs flattened as (c, y, x). No biases.
template <typename Real>
struct BasicWeights {
    std::vector<std::vector<Real>> layers;
    bool operator==(const BasicWeights&) const = default;
};
using Weights = BasicWeights<float>;

/// Uniform in +-gain[l] * sqrt(6 / (fan_in + fan_out)) for layer l; the last
/// gain repeats for deeper layers.
Weights init_weights(const NetworkSpec& spec, std::uint64_t seed, std::span<const double> gain = {});
void check_weights(const NetworkSpec& spec, const Weights& weights);

using ClassCounts = std::array<std::uint32_t, 3>;

/// Spiking neuron indices per step, for one layer.
using SpikeRecord = std::vector<std::vector<std::uint32_t>>;

struct ForwardResult {
    std::vector<std::uint32_t> counts; // output spikes per unit over all steps
    std::vector<SpikeRecord> layers;   // one record per layer
};

/// Dense input of steps * input.size() values in (t, c, y, x) order.
ForwardResult forward(std::span<const double> input, const NetworkSpec& spec, const Weights& weights);
ForwardResult forward(const SpikeVolume& volume, const NetworkSpec& spec, const Weights& weights);
ClassCounts forward_counts(const SparseVolume& volume, const NetworkSpec& spec, const Weights& weights);
std::vector<ClassCounts> forward_counts(std::span<const SparseVolume> volumes, const NetworkSpec& spec,
                                        const Weights& weights);

/// Argmax, ties to the lowest index.
SlipClass classify(const ClassCounts& counts);

/// Boxcar: 1/w on |x| <= w/2, else 0.
double surrogate_grad(double v_minus_th, double width = 1.0);

/// Spike nonlinearity used for the backward pass. Soft replaces the spike by
/// sigmoid(4 (v - v_th)) without reset, which makes the surrogate gradient exact.
enum class Mode { Hard, Soft };

/// Cross-entropy of softmax(output counts) and its weight gradient.
template <typename Real>
struct LossGrad {
    double loss = 0.0;
    std::vector<Real> counts; // real-valued in Soft mode
    BasicWeights<Real> grad;
};

template <typename Real>
LossGrad<Real> loss_and_gradient(std::span<const double> input, std::size_t label, const NetworkSpec& spec,
                                 const BasicWeights<Real>& weights, Mode mode);

struct Example {
    SparseVolume volume;
    SlipClass label = SlipClass::NoSlip;
};

std::vector<Example> to_examples(const std::vector<LabeledSample>& samples);

enum class Optimizer { Sgd, Adam };

struct TrainParams {
    Optimizer optimizer = Optimizer::Adam;
    std::size_t epochs = 100;
    std::size_t batch = 64;
    double learning_rate = 1e-3;
    double momentum = 0.9;      // SGD momentum, Adam beta1
    double beta2 = 0.999;       // Adam only
    double surrogate_width = 1.0;
    std::vector<double> init_gain{4.0, 4.0, 2.0, 2.0}; // per layer; the last entry repeats
    std::size_t patience = 0;   // stop after this many epochs without a better val_acc; 0 = never
    double time_budget_s = 0.0; // stop once exceeded; 0 = unlimited
    std::uint64_t seed = 0;
};

struct EpochLog {
    std::size_t epoch = 0; // 1-based
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
};

struct TrainResult {
    Weights weights;          // best validation epoch (initial weights when no epoch ran)
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;
    double best_val_acc = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Mini-batch SGD with momentum, or Adam, on batch-mean loss. Throws EmptySplit, DivergedLoss.
TrainResult train(const std::vector<Example>& train_set, const std::vector<Example>& validation_set,
                  const NetworkSpec& spec, const TrainParams& params, const EpochCallback& on_epoch = {});
TrainResult train(const DatasetSplit& split, const NetworkSpec& spec, const TrainParams& params);

std::string format_training_log(const std::vector<EpochLog>& log);

struct Confusion {
    std::array<std::array<std::uint64_t, 3>, 3> matrix{}; // rows true, cols predicted
    std::uint64_t total() const;
    double accuracy() const;
    double precision(std::size_t c) const;
    double recall(std::size_t c) const;
};

Confusion evaluate(const std::vector<Example>& samples, const NetworkSpec& spec, const Weights& weights);
Confusion evaluate(const std::vector<LabeledSample>& samples, const NetworkSpec& spec, const Weights& weights);
/// 3x3 matrix as CSV, rows true class.
std::string format_confusion(const Confusion& confusion);
/// Per-class precision/recall and overall accuracy as CSV.
std::string format_metrics(const Confusion& confusion);

// Weights file: "SNNW", u16 version, u64 spec digest, u16 layer count, then
// per layer u8 kind, u32 in, u32 out, u32 kernel, u32 stride, u32 pad,
// f64 v_th, f64 v_reset, u32 value count, f32 values. Little-endian.
constexpr std::uint16_t kWeightsFileVersion = 1;

std::vector<unsigned char> encode_weights(const NetworkSpec& spec, const Weights& weights);
/// Throws MalformedHeader, VersionMismatch, ShapeMismatch (digest or shape differs from `spec`).
Weights decode_weights(const std::vector<unsigned char>& bytes, const NetworkSpec& spec);
void save_weights(const NetworkSpec& spec, const Weights& weights, const std::filesystem::path& path);
Weights load_weights(const std::filesystem::path& path, const NetworkSpec& spec);

} // namespace slipnet::snn
