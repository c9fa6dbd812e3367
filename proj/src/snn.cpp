#include "slipnet/snn.hpp"

#include "slipnet/binary_io.hpp"
#include "slipnet/error.hpp"
#include "slipnet/rng.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <numeric>

namespace slipnet::snn {

namespace {

std::string num(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, end);
}

std::string fixed(double v, int digits) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
    (void)ec;
    return std::string(buf, end);
}

} // namespace

// ---------------------------------------------------------------------------
// Neuron

std::vector<std::uint8_t> iaf_step(std::vector<double>& v_mem, std::span<const double> input, const IafParams& p) {
    if (v_mem.size() != input.size()) {
        throw Error(ErrorKind::ShapeMismatch,
                    "membrane has " + std::to_string(v_mem.size()) + " neurons, input " + std::to_string(input.size()));
    }
    for (std::size_t i = 0; i < input.size(); ++i) {
        if (!std::isfinite(input[i])) throw Error(ErrorKind::NonFiniteInput, "non-finite input current", i);
    }
    std::vector<std::uint8_t> spikes(v_mem.size(), 0);
    for (std::size_t i = 0; i < v_mem.size(); ++i) {
        v_mem[i] += input[i];
        if (v_mem[i] >= p.v_th) {
            spikes[i] = 1;
            v_mem[i] = p.v_reset;
        }
    }
    return spikes;
}

double surrogate_grad(double v_minus_th, double width) {
    return std::abs(v_minus_th) <= 0.5 * width ? 1.0 / width : 0.0;
}

SlipClass classify(const ClassCounts& counts) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < counts.size(); ++i) {
        if (counts[i] > counts[best]) best = i;
    }
    return static_cast<SlipClass>(best);
}

// ---------------------------------------------------------------------------
// Topology

NetworkSpec NetworkSpec::standard() {
    NetworkSpec spec;
    spec.layers = {
        {LayerKind::Conv, 8, 3, 1, 1, {}},
        {LayerKind::Conv, 16, 3, 2, 1, {}},
        {LayerKind::Dense, 128, 0, 0, 0, {}},
        {LayerKind::Dense, 3, 0, 0, 0, {}},
    };
    return spec;
}

std::vector<Shape> NetworkSpec::shapes() const {
    if (steps == 0 || input.size() == 0) throw Error(ErrorKind::ShapeMismatch, "empty input shape");
    if (layers.empty()) throw Error(ErrorKind::ShapeMismatch, "network has no layers");
    std::vector<Shape> out;
    Shape cur = input;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const LayerSpec& L = layers[l];
        if (L.out == 0) throw Error(ErrorKind::ShapeMismatch, "layer " + std::to_string(l) + " has no outputs");
        if (!(L.iaf.v_th > L.iaf.v_reset)) throw Error(ErrorKind::InvalidConfig, "v_th must exceed v_reset");
        if (L.kind == LayerKind::Conv) {
            if (L.kernel == 0 || L.stride == 0) throw Error(ErrorKind::ShapeMismatch, "bad conv geometry");
            if (cur.h + 2 * L.pad < L.kernel || cur.w + 2 * L.pad < L.kernel) {
                throw Error(ErrorKind::ShapeMismatch, "kernel larger than padded input");
            }
            cur = {L.out, (cur.h + 2 * L.pad - L.kernel) / L.stride + 1, (cur.w + 2 * L.pad - L.kernel) / L.stride + 1};
        } else {
            cur = {L.out, 1, 1};
        }
        out.push_back(cur);
    }
    return out;
}

Shape NetworkSpec::input_of(std::size_t l) const {
    return l == 0 ? input : shapes().at(l - 1);
}

std::size_t NetworkSpec::weight_count(std::size_t l) const {
    const Shape in = input_of(l);
    const LayerSpec& L = layers.at(l);
    return L.kind == LayerKind::Conv ? L.out * in.c * L.kernel * L.kernel : in.size() * L.out;
}

std::size_t NetworkSpec::classes() const {
    return shapes().back().size();
}

std::string NetworkSpec::describe() const {
    std::string s = "steps=" + std::to_string(steps) + ";input=" + std::to_string(input.c) + "x" +
                    std::to_string(input.h) + "x" + std::to_string(input.w);
    for (const LayerSpec& L : layers) {
        s += L.kind == LayerKind::Conv ? ";conv(" : ";dense(";
        s += std::to_string(L.out);
        if (L.kind == LayerKind::Conv) {
            s += ",k" + std::to_string(L.kernel) + ",s" + std::to_string(L.stride) + ",p" + std::to_string(L.pad);
        }
        s += ",th" + num(L.iaf.v_th) + ",r" + num(L.iaf.v_reset) + ")";
    }
    return s;
}

std::uint64_t NetworkSpec::digest() const {
    return fnv1a64(describe());
}

Weights init_weights(const NetworkSpec& spec, std::uint64_t seed, std::span<const double> gain) {
    const auto shapes = spec.shapes();
    Weights w;
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        const LayerSpec& L = spec.layers[l];
        const Shape in = spec.input_of(l);
        const double kk = L.kind == LayerKind::Conv ? static_cast<double>(L.kernel * L.kernel) : 1.0;
        const double fan_in = L.kind == LayerKind::Conv ? static_cast<double>(in.c) * kk : static_cast<double>(in.size());
        const double fan_out = static_cast<double>(L.out) * kk;
        const double g = gain.empty() ? 1.0 : gain[std::min(l, gain.size() - 1)];
        const double limit = g * std::sqrt(6.0 / (fan_in + fan_out));
        Rng rng(derive_seed(seed, "init", l));
        std::vector<float> layer(spec.weight_count(l));
        for (float& x : layer) x = static_cast<float>(rng.uniform(-limit, limit));
        w.layers.push_back(std::move(layer));
    }
    return w;
}

void check_weights(const NetworkSpec& spec, const Weights& weights) {
    if (weights.layers.size() != spec.layers.size()) {
        throw Error(ErrorKind::ShapeMismatch, "weights have " + std::to_string(weights.layers.size()) + " layers, spec " +
                                                  std::to_string(spec.layers.size()));
    }
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        if (weights.layers[l].size() != spec.weight_count(l)) {
            throw Error(ErrorKind::ShapeMismatch, "layer " + std::to_string(l) + " weight count");
        }
        for (std::size_t i = 0; i < weights.layers[l].size(); ++i) {
            if (!std::isfinite(weights.layers[l][i])) throw Error(ErrorKind::NonFiniteInput, "non-finite weight", i);
        }
    }
}

// ---------------------------------------------------------------------------
// Engine: event-driven forward pass and truncated-reset BPTT

namespace {

template <typename Real>
struct Act {
    std::uint32_t idx;
    Real val;
};

struct Tap {
    std::uint32_t q; // output spatial position
    std::uint32_t t; // kernel tap ky * k + kx
};

struct Plan {
    LayerKind kind;
    Shape in, out;
    std::size_t kk = 1;
    double v_th = 1.0, v_reset = 0.0;
    // Conv: taps reached from input spatial position p are taps[offset[p] .. offset[p + 1]).
    std::vector<std::uint32_t> offset;
    std::vector<Tap> taps;
};

std::vector<Plan> make_plans(const NetworkSpec& spec) {
    const auto shapes = spec.shapes();
    std::vector<Plan> plans;
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        const LayerSpec& L = spec.layers[l];
        Plan p;
        p.kind = L.kind;
        p.in = spec.input_of(l);
        p.out = shapes[l];
        p.v_th = L.iaf.v_th;
        p.v_reset = L.iaf.v_reset;
        if (L.kind == LayerKind::Conv) {
            p.kk = L.kernel * L.kernel;
            const auto k = static_cast<long>(L.kernel);
            const auto s = static_cast<long>(L.stride);
            const auto pad = static_cast<long>(L.pad);
            p.offset.push_back(0);
            for (long iy = 0; iy < static_cast<long>(p.in.h); ++iy) {
                for (long ix = 0; ix < static_cast<long>(p.in.w); ++ix) {
                    for (long ky = 0; ky < k; ++ky) {
                        const long ny = iy + pad - ky;
                        if (ny < 0 || ny % s != 0 || ny / s >= static_cast<long>(p.out.h)) continue;
                        for (long kx = 0; kx < k; ++kx) {
                            const long nx = ix + pad - kx;
                            if (nx < 0 || nx % s != 0 || nx / s >= static_cast<long>(p.out.w)) continue;
                            p.taps.push_back({static_cast<std::uint32_t>((ny / s) * static_cast<long>(p.out.w) + nx / s),
                                              static_cast<std::uint32_t>(ky * k + kx)});
                        }
                    }
                    p.offset.push_back(static_cast<std::uint32_t>(p.taps.size()));
                }
            }
        }
        plans.push_back(std::move(p));
    }
    return plans;
}

template <typename Real>
class Engine {
public:
    using Acts = std::vector<std::vector<Act<Real>>>; // [step] -> nonzero activations

    explicit Engine(const NetworkSpec& spec, double surrogate_width = 1.0)
        : spec_(spec), plans_(make_plans(spec)), half_(static_cast<Real>(0.5 * surrogate_width)),
          height_(static_cast<Real>(1.0 / surrogate_width)) {
        acts_.resize(plans_.size() + 1, Acts(spec.steps));
        sur_.resize(plans_.size(), Acts(spec.steps));
        counts_.resize(plans_.back().out.size());
    }

    Acts& input() {
        for (auto& step : acts_[0]) step.clear();
        return acts_[0];
    }

    const Acts& layer_output(std::size_t l) const { return acts_[l + 1]; }
    const std::vector<Real>& counts() const { return counts_; }

    void run(const BasicWeights<Real>& w, Mode mode, bool record) {
        for (std::size_t l = 0; l < plans_.size(); ++l) {
            const Plan& P = plans_[l];
            const std::vector<Real>& W = w.layers[l];
            const auto th = static_cast<Real>(P.v_th);
            const auto reset = static_cast<Real>(P.v_reset);
            v_.assign(P.out.size(), Real(0));
            for (std::size_t t = 0; t < spec_.steps; ++t) {
                for (const auto& a : acts_[l][t]) scatter(P, W, a.idx, a.val, v_.data());
                auto& out = acts_[l + 1][t];
                auto& sur = sur_[l][t];
                out.clear();
                sur.clear();
                if (mode == Mode::Hard) {
                    for (std::size_t n = 0; n < v_.size(); ++n) {
                        const Real d = v_[n] - th;
                        if (record && d <= half_ && d >= -half_) sur.push_back({static_cast<std::uint32_t>(n), height_});
                        if (v_[n] >= th) {
                            out.push_back({static_cast<std::uint32_t>(n), Real(1)});
                            v_[n] = reset;
                        }
                    }
                } else {
                    for (std::size_t n = 0; n < v_.size(); ++n) {
                        const Real s = Real(1) / (Real(1) + std::exp(Real(-4) * (v_[n] - th)));
                        out.push_back({static_cast<std::uint32_t>(n), s});
                        sur.push_back({static_cast<std::uint32_t>(n), Real(4) * s * (Real(1) - s)});
                    }
                }
            }
        }
        std::fill(counts_.begin(), counts_.end(), Real(0));
        for (const auto& step : acts_.back()) {
            for (const auto& a : step) counts_[a.idx] += a.val;
        }
    }

    /// Accumulates dLoss/dW into `grad`, given dLoss/dcounts. Requires run(record = true).
    void backward(const BasicWeights<Real>& w, std::span<const Real> grad_counts, BasicWeights<Real>& grad) {
        const std::size_t T = spec_.steps;
        const std::size_t top = plans_.size() - 1;
        gs_.assign(T, {});
        for (std::size_t t = 0; t < T; ++t) {
            gs_[t].resize(sur_[top][t].size());
            for (std::size_t j = 0; j < sur_[top][t].size(); ++j) gs_[t][j] = grad_counts[sur_[top][t][j].idx];
        }
        for (std::size_t l = plans_.size(); l-- > 0;) {
            const Plan& P = plans_[l];
            const std::vector<Real>& W = w.layers[l];
            std::vector<Real>& dW = grad.layers[l];
            const std::size_t n_out = P.out.size();
            // G[t] = sum over t' >= t of dL/dv(t'): the reset is treated as pass-through.
            G_.assign(T * n_out, Real(0));
            for (std::size_t t = T; t-- > 0;) {
                Real* row = G_.data() + t * n_out;
                if (t + 1 < T) std::copy_n(row + n_out, n_out, row);
                const auto& sur = sur_[l][t];
                for (std::size_t j = 0; j < sur.size(); ++j) row[sur[j].idx] += gs_[t][j] * sur[j].val;
            }
            for (std::size_t t = 0; t < T; ++t) {
                const Real* row = G_.data() + t * n_out;
                for (const auto& a : acts_[l][t]) accumulate(P, dW.data(), a.idx, a.val, row);
            }
            if (l == 0) break;
            const auto& below = sur_[l - 1];
            for (std::size_t t = 0; t < T; ++t) {
                const Real* row = G_.data() + t * n_out;
                gs_[t].resize(below[t].size());
                for (std::size_t j = 0; j < below[t].size(); ++j) gs_[t][j] = gather(P, W.data(), below[t][j].idx, row);
            }
        }
    }

private:
    static void scatter(const Plan& P, const std::vector<Real>& W, std::uint32_t i, Real a, Real* v) {
        const std::size_t n_out = P.out.c;
        if (P.kind == LayerKind::Dense) {
            const Real* w = W.data() + static_cast<std::size_t>(i) * n_out;
            for (std::size_t o = 0; o < n_out; ++o) v[o] += a * w[o];
            return;
        }
        const std::size_t hw = P.in.h * P.in.w;
        const std::size_t c = i / hw, p = i % hw;
        const std::size_t ohw = P.out.h * P.out.w;
        const std::size_t in_c = P.in.c;
        for (std::uint32_t k = P.offset[p]; k < P.offset[p + 1]; ++k) {
            const Tap tap = P.taps[k];
            for (std::size_t o = 0; o < n_out; ++o) v[o * ohw + tap.q] += a * W[(o * in_c + c) * P.kk + tap.t];
        }
    }

    static void accumulate(const Plan& P, Real* dW, std::uint32_t i, Real a, const Real* G) {
        const std::size_t n_out = P.out.c;
        if (P.kind == LayerKind::Dense) {
            Real* d = dW + static_cast<std::size_t>(i) * n_out;
            for (std::size_t o = 0; o < n_out; ++o) d[o] += a * G[o];
            return;
        }
        const std::size_t hw = P.in.h * P.in.w;
        const std::size_t c = i / hw, p = i % hw;
        const std::size_t ohw = P.out.h * P.out.w;
        for (std::uint32_t k = P.offset[p]; k < P.offset[p + 1]; ++k) {
            const Tap tap = P.taps[k];
            for (std::size_t o = 0; o < n_out; ++o) dW[(o * P.in.c + c) * P.kk + tap.t] += a * G[o * ohw + tap.q];
        }
    }

    static Real gather(const Plan& P, const Real* W, std::uint32_t i, const Real* G) {
        const std::size_t n_out = P.out.c;
        Real sum = 0;
        if (P.kind == LayerKind::Dense) {
            const Real* w = W + static_cast<std::size_t>(i) * n_out;
            for (std::size_t o = 0; o < n_out; ++o) sum += w[o] * G[o];
            return sum;
        }
        const std::size_t hw = P.in.h * P.in.w;
        const std::size_t c = i / hw, p = i % hw;
        const std::size_t ohw = P.out.h * P.out.w;
        for (std::uint32_t k = P.offset[p]; k < P.offset[p + 1]; ++k) {
            const Tap tap = P.taps[k];
            for (std::size_t o = 0; o < n_out; ++o) sum += W[(o * P.in.c + c) * P.kk + tap.t] * G[o * ohw + tap.q];
        }
        return sum;
    }

    const NetworkSpec& spec_;
    std::vector<Plan> plans_;
    Real half_, height_; // boxcar surrogate
    std::vector<Acts> acts_; // acts_[0] input, acts_[l + 1] output of layer l
    std::vector<Acts> sur_;  // surrogate derivative at each recorded neuron
    std::vector<Real> v_;
    std::vector<Real> counts_;
    std::vector<std::vector<Real>> gs_; // dL/ds aligned with sur_ entries of the current layer
    std::vector<Real> G_;
};

template <typename Real>
void load_dense(typename Engine<Real>::Acts& in, std::span<const double> input, const NetworkSpec& spec) {
    const std::size_t per_step = spec.input.size();
    if (input.size() != spec.steps * per_step) {
        throw Error(ErrorKind::ShapeMismatch, "input has " + std::to_string(input.size()) + " values, expected " +
                                                  std::to_string(spec.steps * per_step));
    }
    for (std::size_t t = 0; t < spec.steps; ++t) {
        for (std::size_t i = 0; i < per_step; ++i) {
            const double x = input[t * per_step + i];
            if (!std::isfinite(x)) throw Error(ErrorKind::NonFiniteInput, "non-finite input", t * per_step + i);
            if (x != 0.0) in[t].push_back({static_cast<std::uint32_t>(i), static_cast<Real>(x)});
        }
    }
}

template <typename Real>
void load_sparse(typename Engine<Real>::Acts& in, const SparseVolume& volume, const NetworkSpec& spec) {
    const std::size_t per_step = spec.input.size();
    if (spec.steps * per_step != kVolumeSize) throw Error(ErrorKind::ShapeMismatch, "spec input is not (30,1,20,20)");
    for (const auto& e : volume.entries) {
        in[e.index / per_step].push_back({static_cast<std::uint32_t>(e.index % per_step), static_cast<Real>(e.count)});
    }
}

void require_standard_input(const NetworkSpec& spec) {
    if (spec.steps != kSteps || !(spec.input == Shape{kChannels, kGrid, kGrid})) {
        throw Error(ErrorKind::ShapeMismatch, "network input must be (30,1,20,20)");
    }
}

ClassCounts to_class_counts(const std::vector<float>& counts) {
    if (counts.size() != 3) throw Error(ErrorKind::ShapeMismatch, "classification needs exactly 3 output units");
    ClassCounts out{};
    for (std::size_t i = 0; i < 3; ++i) out[i] = static_cast<std::uint32_t>(counts[i]);
    return out;
}

template <typename Real>
double softmax_xent(std::span<const Real> counts, std::size_t label, std::vector<Real>& grad) {
    const Real mx = *std::max_element(counts.begin(), counts.end());
    double z = 0.0;
    grad.resize(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) {
        grad[i] = static_cast<Real>(std::exp(static_cast<double>(counts[i] - mx)));
        z += static_cast<double>(grad[i]);
    }
    for (auto& g : grad) g = static_cast<Real>(static_cast<double>(g) / z);
    const double loss = -std::log(static_cast<double>(grad[label]));
    grad[label] -= Real(1);
    return loss;
}

} // namespace

ForwardResult forward(std::span<const double> input, const NetworkSpec& spec, const Weights& weights) {
    check_weights(spec, weights);
    Engine<float> engine(spec);
    load_dense<float>(engine.input(), input, spec);
    engine.run(weights, Mode::Hard, false);
    ForwardResult res;
    for (float c : engine.counts()) res.counts.push_back(static_cast<std::uint32_t>(c));
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        SpikeRecord rec;
        for (const auto& step : engine.layer_output(l)) {
            std::vector<std::uint32_t> idx;
            idx.reserve(step.size());
            for (const auto& a : step) idx.push_back(a.idx);
            rec.push_back(std::move(idx));
        }
        res.layers.push_back(std::move(rec));
    }
    return res;
}

ForwardResult forward(const SpikeVolume& volume, const NetworkSpec& spec, const Weights& weights) {
    require_standard_input(spec);
    if (volume.data.size() != kVolumeSize) throw Error(ErrorKind::ShapeMismatch, "volume is not (30,1,20,20)");
    std::vector<double> input(volume.data.begin(), volume.data.end());
    return forward(input, spec, weights);
}

ClassCounts forward_counts(const SparseVolume& volume, const NetworkSpec& spec, const Weights& weights) {
    require_standard_input(spec);
    check_weights(spec, weights);
    Engine<float> engine(spec);
    load_sparse<float>(engine.input(), volume, spec);
    engine.run(weights, Mode::Hard, false);
    return to_class_counts(engine.counts());
}

std::vector<ClassCounts> forward_counts(std::span<const SparseVolume> volumes, const NetworkSpec& spec,
                                        const Weights& weights) {
    require_standard_input(spec);
    check_weights(spec, weights);
    Engine<float> engine(spec);
    std::vector<ClassCounts> out;
    out.reserve(volumes.size());
    for (const auto& v : volumes) {
        load_sparse<float>(engine.input(), v, spec);
        engine.run(weights, Mode::Hard, false);
        out.push_back(to_class_counts(engine.counts()));
    }
    return out;
}

template <typename Real>
LossGrad<Real> loss_and_gradient(std::span<const double> input, std::size_t label, const NetworkSpec& spec,
                                 const BasicWeights<Real>& weights, Mode mode) {
    if (label >= spec.classes()) throw Error(ErrorKind::ShapeMismatch, "label out of range");
    Engine<Real> engine(spec);
    load_dense<Real>(engine.input(), input, spec);
    engine.run(weights, mode, true);
    LossGrad<Real> out;
    out.counts = engine.counts();
    std::vector<Real> dc;
    out.loss = softmax_xent<Real>(out.counts, label, dc);
    for (const auto& layer : weights.layers) out.grad.layers.emplace_back(layer.size(), Real(0));
    engine.backward(weights, dc, out.grad);
    return out;
}

template LossGrad<float> loss_and_gradient<float>(std::span<const double>, std::size_t, const NetworkSpec&,
                                                  const BasicWeights<float>&, Mode);
template LossGrad<double> loss_and_gradient<double>(std::span<const double>, std::size_t, const NetworkSpec&,
                                                    const BasicWeights<double>&, Mode);

// ---------------------------------------------------------------------------
// Training and evaluation

std::vector<Example> to_examples(const std::vector<LabeledSample>& samples) {
    std::vector<Example> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back({SparseVolume::from_dense(s.volume), s.label});
    return out;
}

Confusion evaluate(const std::vector<Example>& samples, const NetworkSpec& spec, const Weights& weights) {
    if (samples.empty()) throw Error(ErrorKind::EmptySplit, "nothing to evaluate");
    require_standard_input(spec);
    check_weights(spec, weights);
    Engine<float> engine(spec);
    Confusion c;
    for (const auto& ex : samples) {
        load_sparse<float>(engine.input(), ex.volume, spec);
        engine.run(weights, Mode::Hard, false);
        c.matrix[static_cast<std::size_t>(ex.label)][static_cast<std::size_t>(classify(to_class_counts(engine.counts())))]++;
    }
    return c;
}

Confusion evaluate(const std::vector<LabeledSample>& samples, const NetworkSpec& spec, const Weights& weights) {
    return evaluate(to_examples(samples), spec, weights);
}

TrainResult train(const std::vector<Example>& train_set, const std::vector<Example>& validation_set,
                  const NetworkSpec& spec, const TrainParams& params, const EpochCallback& on_epoch) {
    if (train_set.empty()) throw Error(ErrorKind::EmptySplit, "training split is empty");
    if (validation_set.empty()) throw Error(ErrorKind::EmptySplit, "validation split is empty");
    if (spec.classes() != 3) throw Error(ErrorKind::ShapeMismatch, "classifier needs 3 output units");
    if (params.batch == 0) throw Error(ErrorKind::InvalidConfig, "batch size must be positive");
    require_standard_input(spec);

    const auto started = std::chrono::steady_clock::now();
    TrainResult res;
    Weights w = init_weights(spec, params.seed, params.init_gain);
    res.weights = w;
    if (params.epochs == 0) return res;

    Engine<float> engine(spec, params.surrogate_width);
    Weights grad, velocity, second;
    for (const auto& layer : w.layers) {
        grad.layers.emplace_back(layer.size(), 0.0f);
        velocity.layers.emplace_back(layer.size(), 0.0f);
        second.layers.emplace_back(layer.size(), 0.0f);
    }
    std::size_t updates = 0;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<float> dc;
    bool have_best = false;
    std::size_t since_best = 0;

    for (std::size_t epoch = 1; epoch <= params.epochs; ++epoch) {
        Rng rng(derive_seed(params.seed, "shuffle", epoch));
        rng.shuffle(std::span<std::size_t>(order));
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += params.batch) {
            const std::size_t end = std::min(order.size(), start + params.batch);
            for (auto& g : grad.layers) std::fill(g.begin(), g.end(), 0.0f);
            for (std::size_t b = start; b < end; ++b) {
                const Example& ex = train_set[order[b]];
                load_sparse<float>(engine.input(), ex.volume, spec);
                engine.run(w, Mode::Hard, true);
                const double loss = softmax_xent<float>(engine.counts(), static_cast<std::size_t>(ex.label), dc);
                if (!std::isfinite(loss)) throw Error(ErrorKind::DivergedLoss, "loss is not finite in epoch " + std::to_string(epoch));
                loss_sum += loss;
                if (classify(to_class_counts(engine.counts())) == ex.label) ++correct;
                engine.backward(w, dc, grad);
            }
            const float scale = 1.0f / static_cast<float>(end - start);
            const auto lr = static_cast<float>(params.learning_rate);
            const auto mu = static_cast<float>(params.momentum);
            ++updates;
            if (params.optimizer == Optimizer::Sgd) {
                for (std::size_t l = 0; l < w.layers.size(); ++l) {
                    auto& W = w.layers[l];
                    auto& V = velocity.layers[l];
                    const auto& G = grad.layers[l];
                    for (std::size_t i = 0; i < W.size(); ++i) {
                        V[i] = mu * V[i] + G[i] * scale;
                        W[i] -= lr * V[i];
                    }
                }
            } else {
                const auto b2 = static_cast<float>(params.beta2);
                const auto n = static_cast<double>(updates);
                const auto c1 = static_cast<float>(1.0 - std::pow(params.momentum, n));
                const auto c2 = static_cast<float>(1.0 - std::pow(params.beta2, n));
                for (std::size_t l = 0; l < w.layers.size(); ++l) {
                    auto& W = w.layers[l];
                    auto& M = velocity.layers[l];
                    auto& S = second.layers[l];
                    const auto& G = grad.layers[l];
                    for (std::size_t i = 0; i < W.size(); ++i) {
                        const float g = G[i] * scale;
                        M[i] = mu * M[i] + (1.0f - mu) * g;
                        S[i] = b2 * S[i] + (1.0f - b2) * g * g;
                        W[i] -= lr * (M[i] / c1) / (std::sqrt(S[i] / c2) + 1e-8f);
                    }
                }
            }
        }
        for (const auto& layer : w.layers) {
            for (float x : layer) {
                if (!std::isfinite(x)) throw Error(ErrorKind::DivergedLoss, "weights diverged in epoch " + std::to_string(epoch));
            }
        }

        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = loss_sum / static_cast<double>(order.size());
        entry.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
        entry.val_acc = evaluate(validation_set, spec, w).accuracy();
        res.log.push_back(entry);
        if (on_epoch) on_epoch(entry);

        if (!have_best || entry.val_acc > res.best_val_acc) {
            have_best = true;
            res.best_val_acc = entry.val_acc;
            res.best_epoch = epoch;
            res.weights = w;
            since_best = 0;
        } else {
            ++since_best;
        }
        if (params.patience > 0 && since_best >= params.patience) break;
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        if (params.time_budget_s > 0.0 && elapsed >= params.time_budget_s) break;
    }
    return res;
}

TrainResult train(const DatasetSplit& split, const NetworkSpec& spec, const TrainParams& params) {
    return train(to_examples(split.train), to_examples(split.validation), spec, params);
}

std::string format_training_log(const std::vector<EpochLog>& log) {
    std::string out = "epoch,train_loss,train_acc,val_acc\n";
    for (const auto& e : log) {
        out += std::to_string(e.epoch) + "," + fixed(e.train_loss, 6) + "," + fixed(e.train_acc, 6) + "," +
               fixed(e.val_acc, 6) + "\n";
    }
    return out;
}

std::uint64_t Confusion::total() const {
    std::uint64_t n = 0;
    for (const auto& row : matrix) n += row[0] + row[1] + row[2];
    return n;
}

double Confusion::accuracy() const {
    const auto n = total();
    return n == 0 ? 0.0 : static_cast<double>(matrix[0][0] + matrix[1][1] + matrix[2][2]) / static_cast<double>(n);
}

double Confusion::precision(std::size_t c) const {
    const std::uint64_t predicted = matrix[0][c] + matrix[1][c] + matrix[2][c];
    return predicted == 0 ? 0.0 : static_cast<double>(matrix[c][c]) / static_cast<double>(predicted);
}

double Confusion::recall(std::size_t c) const {
    const std::uint64_t actual = matrix[c][0] + matrix[c][1] + matrix[c][2];
    return actual == 0 ? 0.0 : static_cast<double>(matrix[c][c]) / static_cast<double>(actual);
}

std::string format_confusion(const Confusion& c) {
    std::string out = "true,pred_NoSlip,pred_Incipient,pred_Gross\n";
    for (std::size_t i = 0; i < 3; ++i) {
        out += to_string(static_cast<SlipClass>(i));
        for (std::size_t j = 0; j < 3; ++j) out += "," + std::to_string(c.matrix[i][j]);
        out += "\n";
    }
    return out;
}

std::string format_metrics(const Confusion& c) {
    std::string out = "class,precision,recall\n";
    for (std::size_t i = 0; i < 3; ++i) {
        out += to_string(static_cast<SlipClass>(i)) + "," + fixed(c.precision(i), 4) + "," + fixed(c.recall(i), 4) + "\n";
    }
    out += "accuracy," + fixed(c.accuracy(), 4) + ",\n";
    return out;
}

// ---------------------------------------------------------------------------
// Weights file

std::vector<unsigned char> encode_weights(const NetworkSpec& spec, const Weights& weights) {
    check_weights(spec, weights);
    io::ByteWriter w;
    w.bytes("SNNW");
    w.put<std::uint16_t>(kWeightsFileVersion);
    w.put<std::uint64_t>(spec.digest());
    w.put<std::uint16_t>(static_cast<std::uint16_t>(spec.layers.size()));
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        const LayerSpec& L = spec.layers[l];
        const Shape in = spec.input_of(l);
        w.put<std::uint8_t>(static_cast<std::uint8_t>(L.kind));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(L.kind == LayerKind::Conv ? in.c : in.size()));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(L.out));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(L.kind == LayerKind::Conv ? L.kernel : 0));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(L.kind == LayerKind::Conv ? L.stride : 0));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(L.kind == LayerKind::Conv ? L.pad : 0));
        w.put<double>(L.iaf.v_th);
        w.put<double>(L.iaf.v_reset);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(weights.layers[l].size()));
        for (float x : weights.layers[l]) w.put<float>(x);
    }
    return std::move(w.buffer());
}

Weights decode_weights(const std::vector<unsigned char>& bytes, const NetworkSpec& spec) {
    io::ByteReader r(bytes);
    if (r.bytes(4) != "SNNW") throw Error(ErrorKind::MalformedHeader, "not a weights file");
    const auto version = r.get<std::uint16_t>();
    if (version != kWeightsFileVersion) {
        throw Error(ErrorKind::VersionMismatch, "weights file version " + std::to_string(version));
    }
    if (r.get<std::uint64_t>() != spec.digest()) {
        throw Error(ErrorKind::ShapeMismatch, "weights were trained for a different network spec");
    }
    const auto layers = r.get<std::uint16_t>();
    if (layers != spec.layers.size()) throw Error(ErrorKind::ShapeMismatch, "layer count differs from spec");
    Weights out;
    for (std::size_t l = 0; l < layers; ++l) {
        const auto kind = r.get<std::uint8_t>();
        r.skip(5 * 4 + 2 * 8);
        if (kind != static_cast<std::uint8_t>(spec.layers[l].kind)) {
            throw Error(ErrorKind::ShapeMismatch, "layer " + std::to_string(l) + " kind differs from spec");
        }
        const auto count = r.get<std::uint32_t>();
        if (count != spec.weight_count(l)) {
            throw Error(ErrorKind::ShapeMismatch, "layer " + std::to_string(l) + " weight count differs from spec");
        }
        if (!r.has(std::size_t{count} * 4)) throw Error(ErrorKind::MalformedHeader, "truncated weights");
        std::vector<float> layer(count);
        for (float& x : layer) x = r.get<float>();
        out.layers.push_back(std::move(layer));
    }
    if (r.remaining() != 0) throw Error(ErrorKind::MalformedHeader, "trailing bytes after weights");
    check_weights(spec, out);
    return out;
}

void save_weights(const NetworkSpec& spec, const Weights& weights, const std::filesystem::path& path) {
    io::write_file(path, encode_weights(spec, weights));
}

Weights load_weights(const std::filesystem::path& path, const NetworkSpec& spec) {
    return decode_weights(io::read_file(path), spec);
}

} // namespace slipnet::snn
