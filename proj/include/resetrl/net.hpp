#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "resetrl/rng.hpp"
#include "resetrl/types.hpp"

namespace resetrl::net {

// Shape of the streaming policy network. Every low-latency layer (hidden and
// output) consumes hidden_width recurrent inputs plus inputs_per_layer fresh
// downsampled samples, so the dense input size N is uniform across layers.
struct NetTopology {
    int n_hidden_layers = 7;
    int hidden_width = 12;
    int inputs_per_layer = 8;  // fresh samples per layer, half I half Q
    int preproc_layers = 2;    // width == hidden_width
    int memory_depth = 0;      // l: previous cycles fed via the preprocessing net
    int n_actions = 3;
    int mem_blocks_per_quad = 8;  // 32-point boxcar over a 256-sample readout

    int dense_input_size() const { return hidden_width + inputs_per_layer; }
    int current_inputs() const { return inputs_per_layer * (n_hidden_layers + 1); }
    int blocks_per_quad() const { return current_inputs() / 2; }
    int mem_inputs_per_cycle() const { return 2 * mem_blocks_per_quad + n_actions; }
    int memory_inputs() const { return memory_depth * mem_inputs_per_cycle(); }
    bool has_preproc() const { return memory_depth > 0 && preproc_layers > 0; }

    void validate(bool classifier_mode = false) const {
        auto fail = [](const std::string& f, const std::string& why) {
            throw ConfigError("topology." + f + ": " + why);
        };
        if (n_hidden_layers < 1) fail("n_hidden_layers", "must be >= 1");
        if (hidden_width < 1) fail("hidden_width", "must be >= 1");
        if (inputs_per_layer < 2 || inputs_per_layer % 2 != 0)
            fail("inputs_per_layer", "must be even and >= 2");
        if (preproc_layers < 0) fail("preproc_layers", "must be >= 0");
        if (memory_depth < 0 || memory_depth > 2) fail("memory_depth", "must be 0, 1 or 2");
        if (classifier_mode) {
            if (n_actions != 2) fail("n_actions", "classifier mode requires 2 outputs");
        } else if (n_actions != 3 && n_actions != 4) {
            fail("n_actions", "must be 3 or 4");
        }
        if (mem_blocks_per_quad < 1) fail("mem_blocks_per_quad", "must be >= 1");
    }
};

struct LayerShape {
    int in = 0;
    int out = 0;
    bool relu = true;
};

inline std::vector<LayerShape> layer_shapes(const NetTopology& t) {
    std::vector<LayerShape> shapes;
    if (t.has_preproc()) {
        shapes.push_back({t.memory_inputs(), t.hidden_width, true});
        for (int i = 1; i < t.preproc_layers; ++i)
            shapes.push_back({t.hidden_width, t.hidden_width, true});
    }
    for (int i = 0; i < t.n_hidden_layers; ++i)
        shapes.push_back({t.dense_input_size(), t.hidden_width, true});
    shapes.push_back({t.dense_input_size(), t.n_actions, false});
    return shapes;
}

inline std::size_t parameter_count(const NetTopology& t) {
    std::size_t n = 0;
    for (const auto& s : layer_shapes(t)) n += static_cast<std::size_t>(s.out) * (s.in + 1);
    return n;
}

// Flat parameter vector: per layer, row-major kernel then bias.
struct PolicyParams {
    NetTopology topo;
    std::vector<double> flat;

    static PolicyParams zeros(const NetTopology& t) {
        PolicyParams p;
        p.topo = t;
        p.flat.assign(parameter_count(t), 0.0);
        return p;
    }

    // He-normal hidden kernels; the output layer starts at zero so the
    // initial policy is uniform.
    static PolicyParams init(const NetTopology& t, Rng& rng) {
        PolicyParams p = zeros(t);
        const auto shapes = layer_shapes(t);
        std::size_t off = 0;
        for (std::size_t li = 0; li < shapes.size(); ++li) {
            const auto& s = shapes[li];
            const bool output = li + 1 == shapes.size();
            const double std_dev = output ? 0.0 : std::sqrt(2.0 / s.in);
            for (int r = 0; r < s.out; ++r)
                for (int c = 0; c < s.in; ++c) p.flat[off + r * s.in + c] = std_dev * rng.normal();
            off += static_cast<std::size_t>(s.out) * (s.in + 1);
        }
        return p;
    }
};

// Policy input for one cycle: fresh boxcar-downsampled samples of the current
// readout, grouped per layer in arrival order, plus summaries of up to l
// previous cycles (boxcar traces and one-hot encoded actions).
struct ObservationWindow {
    std::vector<double> current;  // inputs_per_layer * (n_hidden_layers + 1)
    std::vector<double> memory;   // memory_depth * (2*mem_blocks + n_actions)
};

// Non-overlapping block means; an incomplete tail block is truncated.
inline std::vector<double> boxcar(std::span<const double> samples, std::size_t width) {
    if (width == 0) throw std::invalid_argument("boxcar: width must be > 0");
    const std::size_t n_blocks = samples.size() / width;
    std::vector<double> out(n_blocks);
    for (std::size_t b = 0; b < n_blocks; ++b) {
        double acc = 0.0;
        for (std::size_t k = 0; k < width; ++k) acc += samples[b * width + k];
        out[b] = acc / static_cast<double>(width);
    }
    return out;
}

// Downsampling widths and fixed input gain applied when building windows.
struct WindowSpec {
    std::size_t current_boxcar = 8;
    std::size_t memory_boxcar = 32;
    double current_scale = 1.0;
    double memory_scale = 1.0;
};

struct PastCycle {
    std::vector<double> i_blocks;  // boxcar(memory_boxcar) of the past trace
    std::vector<double> q_blocks;
    Action action = Action::Idle;
};

inline PastCycle summarize_cycle(const Trace& tr, Action a, const WindowSpec& ws) {
    PastCycle pc;
    pc.i_blocks = boxcar(tr.i_samples, ws.memory_boxcar);
    pc.q_blocks = boxcar(tr.q_samples, ws.memory_boxcar);
    for (double& v : pc.i_blocks) v *= ws.memory_scale;
    for (double& v : pc.q_blocks) v *= ws.memory_scale;
    pc.action = a;
    return pc;
}

// past.front() is the most recent cycle; missing history is zero-filled.
inline ObservationWindow encode_window(const NetTopology& t, const WindowSpec& ws,
                                       const Trace& current,
                                       const std::deque<PastCycle>& past) {
    ObservationWindow win;
    const auto ib = boxcar(current.i_samples, ws.current_boxcar);
    const auto qb = boxcar(current.q_samples, ws.current_boxcar);
    const int bpq = t.blocks_per_quad();
    if (static_cast<int>(ib.size()) < bpq || static_cast<int>(qb.size()) < bpq)
        throw std::invalid_argument("encode_window: trace too short for topology");
    const int half = t.inputs_per_layer / 2;
    win.current.resize(static_cast<std::size_t>(t.current_inputs()));
    for (int layer = 0; layer <= t.n_hidden_layers; ++layer) {
        double* dst = win.current.data() + static_cast<std::size_t>(layer) * t.inputs_per_layer;
        for (int k = 0; k < half; ++k) {
            dst[k] = ib[layer * half + k] * ws.current_scale;
            dst[half + k] = qb[layer * half + k] * ws.current_scale;
        }
    }
    win.memory.assign(static_cast<std::size_t>(t.memory_inputs()), 0.0);
    const int per_cycle = t.mem_inputs_per_cycle();
    for (int j = 0; j < t.memory_depth && j < static_cast<int>(past.size()); ++j) {
        const PastCycle& pc = past[j];
        double* dst = win.memory.data() + static_cast<std::size_t>(j) * per_cycle;
        const int nb = std::min<int>(t.mem_blocks_per_quad, static_cast<int>(pc.i_blocks.size()));
        for (int k = 0; k < nb; ++k) {
            dst[k] = pc.i_blocks[k];
            dst[t.mem_blocks_per_quad + k] = pc.q_blocks[k];
        }
        const int ai = static_cast<int>(pc.action);
        if (ai < t.n_actions) dst[2 * t.mem_blocks_per_quad + ai] = 1.0;
    }
    return win;
}

namespace detail {

inline void softmax_inplace(std::vector<double>& z) {
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - zmax);
        sum += v;
    }
    for (double& v : z) v /= sum;
}

}  // namespace detail

// Per-layer inputs and outputs captured during a forward pass; needed for
// the training-time backward pass.
struct ForwardCache {
    std::vector<std::vector<double>> inputs;       // per layer
    std::vector<std::vector<double>> activations;  // post-ReLU (logits for output)
    std::vector<double> probs;
};

// Streaming evaluation: the preprocessing network runs on past-cycle data,
// then each low-latency layer consumes the previous layer's outputs together
// with the next fresh block of downsampled samples.
inline ForwardCache forward_cached(const PolicyParams& p, const ObservationWindow& win) {
    const NetTopology& t = p.topo;
    if (static_cast<int>(win.current.size()) != t.current_inputs())
        throw std::invalid_argument("forward: window current size mismatch");
    if (static_cast<int>(win.memory.size()) != t.memory_inputs())
        throw std::invalid_argument("forward: window memory size mismatch");

    const auto shapes = layer_shapes(t);
    ForwardCache cache;
    cache.inputs.resize(shapes.size());
    cache.activations.resize(shapes.size());

    std::vector<double> carry(static_cast<std::size_t>(t.hidden_width), 0.0);
    std::size_t off = 0;
    std::size_t li = 0;
    if (t.has_preproc()) {
        std::vector<double> x = win.memory;
        for (int pl = 0; pl < t.preproc_layers; ++pl, ++li) {
            const auto& s = shapes[li];
            cache.inputs[li] = x;
            std::vector<double> y(static_cast<std::size_t>(s.out));
            const double* kern = p.flat.data() + off;
            const double* bias = kern + static_cast<std::size_t>(s.out) * s.in;
            for (int r = 0; r < s.out; ++r) {
                double acc = bias[r];
                const double* row = kern + static_cast<std::size_t>(r) * s.in;
                for (int c = 0; c < s.in; ++c) acc += row[c] * x[c];
                y[r] = acc > 0.0 ? acc : 0.0;
            }
            cache.activations[li] = y;
            x = std::move(y);
            off += static_cast<std::size_t>(s.out) * (s.in + 1);
        }
        carry = std::move(x);
    }

    const int n_lowlat = t.n_hidden_layers + 1;
    for (int k = 0; k < n_lowlat; ++k, ++li) {
        const auto& s = shapes[li];
        std::vector<double> x(static_cast<std::size_t>(s.in));
        std::copy(carry.begin(), carry.end(), x.begin());
        const double* block = win.current.data() + static_cast<std::size_t>(k) * t.inputs_per_layer;
        std::copy(block, block + t.inputs_per_layer, x.begin() + t.hidden_width);
        cache.inputs[li] = x;

        std::vector<double> y(static_cast<std::size_t>(s.out));
        const double* kern = p.flat.data() + off;
        const double* bias = kern + static_cast<std::size_t>(s.out) * s.in;
        for (int r = 0; r < s.out; ++r) {
            double acc = bias[r];
            const double* row = kern + static_cast<std::size_t>(r) * s.in;
            for (int c = 0; c < s.in; ++c) acc += row[c] * x[c];
            y[r] = (s.relu && acc < 0.0) ? 0.0 : acc;
        }
        cache.activations[li] = y;
        if (s.relu) carry = y;
        off += static_cast<std::size_t>(s.out) * (s.in + 1);
    }

    cache.probs = cache.activations.back();
    detail::softmax_inplace(cache.probs);
    return cache;
}

inline std::vector<double> forward_stream(const PolicyParams& p, const ObservationWindow& win) {
    return forward_cached(p, win).probs;
}

// Accumulates d(loss)/d(theta) given d(loss)/d(logits); returns nothing, the
// gradient is summed into grad (same layout as PolicyParams.flat).
inline void backward(const PolicyParams& p, const ForwardCache& cache,
                     std::span<const double> dlogits, std::vector<double>& grad) {
    const NetTopology& t = p.topo;
    const auto shapes = layer_shapes(t);
    if (grad.size() != p.flat.size()) throw std::invalid_argument("backward: grad size mismatch");

    std::vector<std::size_t> offsets(shapes.size());
    std::size_t off = 0;
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        offsets[i] = off;
        off += static_cast<std::size_t>(shapes[i].out) * (shapes[i].in + 1);
    }

    std::vector<double> delta(dlogits.begin(), dlogits.end());
    const int preproc = t.has_preproc() ? t.preproc_layers : 0;
    for (int li = static_cast<int>(shapes.size()) - 1; li >= 0; --li) {
        const auto& s = shapes[li];
        const auto& x = cache.inputs[li];
        const auto& y = cache.activations[li];
        if (s.relu)
            for (int r = 0; r < s.out; ++r)
                if (y[r] <= 0.0) delta[r] = 0.0;

        double* gk = grad.data() + offsets[li];
        double* gb = gk + static_cast<std::size_t>(s.out) * s.in;
        const double* kern = p.flat.data() + offsets[li];
        std::vector<double> dx(static_cast<std::size_t>(s.in), 0.0);
        for (int r = 0; r < s.out; ++r) {
            const double d = delta[r];
            if (d == 0.0) continue;
            gb[r] += d;
            double* grow = gk + static_cast<std::size_t>(r) * s.in;
            const double* krow = kern + static_cast<std::size_t>(r) * s.in;
            for (int c = 0; c < s.in; ++c) {
                grow[c] += d * x[c];
                dx[c] += d * krow[c];
            }
        }

        if (li == 0) break;
        if (li >= preproc) {
            // into a low-latency layer: only the carried hidden part flows back,
            // the fresh-block inputs are leaves
            delta.assign(dx.begin(), dx.begin() + t.hidden_width);
        } else {
            delta = std::move(dx);
        }
    }
}

// Gumbel-max sampling over a probability vector; distributionally identical
// to categorical sampling and adds no sequential latency on hardware.
inline int sample_action_index(std::span<const double> probs, Rng& rng) {
    double sum = 0.0;
    for (double p : probs) {
        if (p < 0.0 || !std::isfinite(p)) throw std::invalid_argument("sample_action: bad probability");
        sum += p;
    }
    if (!(sum > 0.0)) throw std::invalid_argument("sample_action: zero probability vector");
    int best = -1;
    double best_v = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] <= 0.0) {
            rng.gumbel();  // keep the draw count independent of the values
            continue;
        }
        const double v = std::log(probs[i]) + rng.gumbel();
        if (v > best_v) {
            best_v = v;
            best = static_cast<int>(i);
        }
    }
    return best;
}

inline Action sample_action(std::span<const double> probs, Rng& rng) {
    return static_cast<Action>(sample_action_index(probs, rng));
}

// Latency bookkeeping of the hardware pipeline. Only the boxcar fill and the
// final layer add to the loop latency; every other layer overlaps the
// acquisition of the samples it consumes.
struct LatencyLedger {
    double clock_ns = 8.0;
    int dense_input_size = 0;
    double per_layer_ns = 0.0;
    double boxcar_ns = 0.0;
    double total_nn_ns = 0.0;
    double overhead_ns = 0.0;   // converters, propagation, front-end
    double total_loop_ns = 0.0;
    int layers_overlapped = 0;  // layers contributing zero loop latency
};

inline int ceil_log4(int m) {
    int k = 0;
    long long pow4 = 1;
    while (pow4 < m) {
        pow4 *= 4;
        ++k;
    }
    return k;
}

// tau_dense = tau_clock * (1 + ceil(log4(N + 1)))
inline double dense_latency_ns(int n_inputs, double clock_ns = 8.0) {
    return clock_ns * (1.0 + ceil_log4(n_inputs + 1));
}

inline LatencyLedger latency_report(const NetTopology& t, double clock_ns = 8.0,
                                    double ns_per_sample = 1.0, double overhead_ns = 403.0,
                                    std::size_t boxcar_width = 8) {
    LatencyLedger led;
    led.clock_ns = clock_ns;
    led.dense_input_size = t.dense_input_size();
    led.per_layer_ns = dense_latency_ns(led.dense_input_size, clock_ns);
    // the filter waits for its samples and spends one clock on the sum
    led.boxcar_ns = static_cast<double>(boxcar_width) * ns_per_sample + clock_ns;
    led.total_nn_ns = led.boxcar_ns + led.per_layer_ns;
    led.overhead_ns = overhead_ns;
    led.total_loop_ns = led.total_nn_ns + overhead_ns;
    led.layers_overlapped = t.n_hidden_layers + (t.has_preproc() ? t.preproc_layers : 0);
    return led;
}

// Fixed-point rounding scheme (sign bit included in total_bits).
struct FixedPointScheme {
    int total_bits = 18;
    int frac_bits = 12;

    double step() const { return std::ldexp(1.0, -frac_bits); }
    double max_value() const { return std::ldexp(1.0, total_bits - 1 - frac_bits) - step(); }
};

struct QuantizeResult {
    PolicyParams params;
    bool saturated = false;
};

inline double quantize_value(double v, const FixedPointScheme& s, bool& saturated) {
    const double q = std::nearbyint(v / s.step()) * s.step();
    const double lim = s.max_value();
    if (q > lim) {
        saturated = true;
        return lim;
    }
    if (q < -lim - s.step()) {
        saturated = true;
        return -lim - s.step();
    }
    return q;
}

inline QuantizeResult quantize(const PolicyParams& p, const FixedPointScheme& s) {
    QuantizeResult r;
    r.params = p;
    for (double& v : r.params.flat) v = quantize_value(v, s, r.saturated);
    return r;
}

// Forward pass with fixed-point rounding of inputs and every activation,
// mimicking the hardware datapath; accumulation stays wide.
inline std::vector<double> forward_stream_quantized(const PolicyParams& p,
                                                    const ObservationWindow& win,
                                                    const FixedPointScheme& s,
                                                    bool* saturated = nullptr) {
    bool sat = false;
    ObservationWindow qwin = win;
    for (double& v : qwin.current) v = quantize_value(v, s, sat);
    for (double& v : qwin.memory) v = quantize_value(v, s, sat);

    const NetTopology& t = p.topo;
    const auto shapes = layer_shapes(t);
    std::vector<double> carry(static_cast<std::size_t>(t.hidden_width), 0.0);
    std::size_t off = 0;
    std::size_t li = 0;
    std::vector<double> x;
    auto run_layer = [&](const LayerShape& shape, const std::vector<double>& in,
                         std::vector<double>& out) {
        out.assign(static_cast<std::size_t>(shape.out), 0.0);
        const double* kern = p.flat.data() + off;
        const double* bias = kern + static_cast<std::size_t>(shape.out) * shape.in;
        for (int r = 0; r < shape.out; ++r) {
            double acc = bias[r];
            const double* row = kern + static_cast<std::size_t>(r) * shape.in;
            for (int c = 0; c < shape.in; ++c) acc += row[c] * in[c];
            if (shape.relu && acc < 0.0) acc = 0.0;
            out[r] = quantize_value(acc, s, sat);
        }
        off += static_cast<std::size_t>(shape.out) * (shape.in + 1);
    };

    if (t.has_preproc()) {
        x = qwin.memory;
        std::vector<double> y;
        for (int pl = 0; pl < t.preproc_layers; ++pl, ++li) {
            run_layer(shapes[li], x, y);
            x = y;
        }
        carry = x;
    }
    for (int k = 0; k <= t.n_hidden_layers; ++k, ++li) {
        const auto& shape = shapes[li];
        std::vector<double> in(static_cast<std::size_t>(shape.in));
        std::copy(carry.begin(), carry.end(), in.begin());
        const double* block = qwin.current.data() + static_cast<std::size_t>(k) * t.inputs_per_layer;
        std::copy(block, block + t.inputs_per_layer, in.begin() + t.hidden_width);
        std::vector<double> y;
        run_layer(shape, in, y);
        if (shape.relu) carry = y;
        else x = y;
    }
    detail::softmax_inplace(x);
    if (saturated) *saturated = sat;
    return x;
}

}  // namespace resetrl::net
