#pragma once

// Reference implementations shared by the unit tests and the acceptance
// runner. They are written independently of the library code they check.

#include "slipnet/rng.hpp"
#include "slipnet/snn.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace slipnet::oracle {

/// Step-major, per-neuron IAF simulation of `spec` with explicit convolution
/// loops. Returns spike[layer][step][neuron].
inline std::vector<std::vector<std::vector<int>>> naive_forward(const std::vector<double>& input,
                                                                const snn::NetworkSpec& spec,
                                                                const snn::Weights& w) {
    const std::size_t L = spec.layers.size();
    std::vector<snn::Shape> in_shape(L), out_shape(L);
    snn::Shape cur = spec.input;
    for (std::size_t l = 0; l < L; ++l) {
        const auto& ls = spec.layers[l];
        in_shape[l] = cur;
        if (ls.kind == snn::LayerKind::Conv) {
            cur = {ls.out, (cur.h + 2 * ls.pad - ls.kernel) / ls.stride + 1, (cur.w + 2 * ls.pad - ls.kernel) / ls.stride + 1};
        } else {
            cur = {ls.out, 1, 1};
        }
        out_shape[l] = cur;
    }

    std::vector<std::vector<double>> v(L);
    for (std::size_t l = 0; l < L; ++l) v[l].assign(out_shape[l].size(), 0.0);
    std::vector<std::vector<std::vector<int>>> spikes(L, std::vector<std::vector<int>>(spec.steps));

    const std::size_t per_step = spec.input.size();
    for (std::size_t t = 0; t < spec.steps; ++t) {
        std::vector<double> x(input.begin() + static_cast<long>(t * per_step),
                              input.begin() + static_cast<long>((t + 1) * per_step));
        for (std::size_t l = 0; l < L; ++l) {
            const auto& ls = spec.layers[l];
            const auto& is = in_shape[l];
            const auto& os = out_shape[l];
            std::vector<double> current(os.size(), 0.0);
            if (ls.kind == snn::LayerKind::Conv) {
                for (std::size_t o = 0; o < os.c; ++o) {
                    for (std::size_t oy = 0; oy < os.h; ++oy) {
                        for (std::size_t ox = 0; ox < os.w; ++ox) {
                            double sum = 0.0;
                            for (std::size_t c = 0; c < is.c; ++c) {
                                for (std::size_t ky = 0; ky < ls.kernel; ++ky) {
                                    for (std::size_t kx = 0; kx < ls.kernel; ++kx) {
                                        const long iy = static_cast<long>(oy * ls.stride + ky) - static_cast<long>(ls.pad);
                                        const long ix = static_cast<long>(ox * ls.stride + kx) - static_cast<long>(ls.pad);
                                        if (iy < 0 || ix < 0 || iy >= static_cast<long>(is.h) || ix >= static_cast<long>(is.w)) {
                                            continue;
                                        }
                                        const double wt = w.layers[l][((o * is.c + c) * ls.kernel + ky) * ls.kernel + kx];
                                        sum += wt * x[(c * is.h + static_cast<std::size_t>(iy)) * is.w + static_cast<std::size_t>(ix)];
                                    }
                                }
                            }
                            current[(o * os.h + oy) * os.w + ox] = sum;
                        }
                    }
                }
            } else {
                for (std::size_t o = 0; o < os.c; ++o) {
                    double sum = 0.0;
                    for (std::size_t i = 0; i < is.size(); ++i) sum += w.layers[l][i * os.c + o] * x[i];
                    current[o] = sum;
                }
            }
            std::vector<double> s(os.size(), 0.0);
            for (std::size_t n = 0; n < os.size(); ++n) {
                v[l][n] += current[n];
                if (v[l][n] >= ls.iaf.v_th) {
                    s[n] = 1.0;
                    v[l][n] = ls.iaf.v_reset;
                    spikes[l][t].push_back(static_cast<int>(n));
                }
            }
            x = std::move(s);
        }
    }
    return spikes;
}

/// Small random topology of at most 3 layers: 1-2 convs (random stride/pad/kernel), then dense layers.
inline snn::NetworkSpec random_small_spec(Rng& rng) {
    snn::NetworkSpec spec;
    spec.steps = 2 + rng.below(5);
    spec.input = {1 + rng.below(2), 4 + rng.below(4), 4 + rng.below(4)};
    std::size_t h = spec.input.h, w = spec.input.w;
    const std::size_t convs = 1 + rng.below(2);
    for (std::size_t i = 0; i < convs; ++i) {
        snn::LayerSpec ls;
        ls.kind = snn::LayerKind::Conv;
        ls.out = 1 + rng.below(3);
        ls.kernel = 1 + 2 * rng.below(2);
        ls.stride = 1 + rng.below(2);
        ls.pad = rng.below(2);
        if (h + 2 * ls.pad < ls.kernel || w + 2 * ls.pad < ls.kernel) ls.kernel = 1;
        ls.iaf.v_th = rng.uniform() < 0.5 ? 1.0 : 0.5;
        h = (h + 2 * ls.pad - ls.kernel) / ls.stride + 1;
        w = (w + 2 * ls.pad - ls.kernel) / ls.stride + 1;
        spec.layers.push_back(ls);
    }
    const std::size_t denses = convs == 2 ? 1 : 1 + rng.below(2);
    for (std::size_t i = 0; i < denses; ++i) {
        snn::LayerSpec ls;
        ls.kind = snn::LayerKind::Dense;
        ls.out = i + 1 == denses ? 3 : 2 + rng.below(6);
        ls.iaf.v_th = 1.0;
        spec.layers.push_back(ls);
    }
    return spec;
}

/// Weights on a 1/16 grid in [-1, 1], so float sums of small integer inputs are exact.
inline snn::Weights dyadic_weights(const snn::NetworkSpec& spec, Rng& rng) {
    snn::Weights w;
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        std::vector<float> layer(spec.weight_count(l));
        for (auto& x : layer) x = static_cast<float>(static_cast<double>(static_cast<long>(rng.below(33)) - 16) / 16.0);
        w.layers.push_back(std::move(layer));
    }
    return w;
}

inline std::vector<double> integer_input(const snn::NetworkSpec& spec, Rng& rng, std::uint64_t max_count = 3) {
    std::vector<double> in(spec.steps * spec.input.size());
    for (auto& x : in) x = rng.uniform() < 0.4 ? static_cast<double>(rng.below(max_count + 1)) : 0.0;
    return in;
}

/// Relative error used for gradient checks.
inline double rel_error(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-8});
    return std::abs(a - b) / scale;
}

/// Central finite difference of the soft-mode loss w.r.t. one weight.
inline double numeric_grad(const std::vector<double>& input, std::size_t label, const snn::NetworkSpec& spec,
                           snn::BasicWeights<double> w, std::size_t layer, std::size_t index, double h = 1e-4) {
    const double orig = w.layers[layer][index];
    w.layers[layer][index] = orig + h;
    const double up = snn::loss_and_gradient<double>(input, label, spec, w, snn::Mode::Soft).loss;
    w.layers[layer][index] = orig - h;
    const double down = snn::loss_and_gradient<double>(input, label, spec, w, snn::Mode::Soft).loss;
    return (up - down) / (2 * h);
}

/// Two-layer dense toy network used by the gradient check.
inline snn::NetworkSpec toy_spec() {
    snn::NetworkSpec spec;
    spec.steps = 5;
    spec.input = {1, 3, 3};
    spec.layers = {{snn::LayerKind::Dense, 6, 0, 0, 0, {}}, {snn::LayerKind::Dense, 3, 0, 0, 0, {}}};
    return spec;
}

} // namespace slipnet::oracle
