#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "resetrl/rng.hpp"
#include "resetrl/types.hpp"

namespace resetrl::optim {

// Adam with bias correction; epsilon follows the reference PPO implementation.
class Adam {
public:
    Adam(std::size_t n_params, double lr, double beta1 = 0.98, double beta2 = 0.999,
         double eps = 1e-5)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(n_params, 0.0), v_(n_params, 0.0) {}

    void step(std::vector<double>& params, const std::vector<double>& grad) {
        if (params.size() != m_.size() || grad.size() != m_.size())
            throw std::invalid_argument("adam: size mismatch");
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, t_);
        const double c2 = 1.0 - std::pow(b2_, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
            v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
            params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
        }
    }

    void set_lr(double lr) { lr_ = lr; }

private:
    double lr_, b1_, b2_, eps_;
    long t_ = 0;
    std::vector<double> m_, v_;
};

// Plain fully-connected ReLU network with a linear head, flat parameters.
struct Mlp {
    std::vector<int> dims;  // e.g. {in, 64, 64, 1}
    std::vector<double> flat;

    static std::size_t parameter_count(const std::vector<int>& dims) {
        std::size_t n = 0;
        for (std::size_t i = 0; i + 1 < dims.size(); ++i)
            n += static_cast<std::size_t>(dims[i + 1]) * (dims[i] + 1);
        return n;
    }

    static Mlp init(std::vector<int> dims, Rng& rng, double head_scale = 0.01) {
        Mlp m;
        m.dims = std::move(dims);
        m.flat.assign(parameter_count(m.dims), 0.0);
        std::size_t off = 0;
        for (std::size_t li = 0; li + 1 < m.dims.size(); ++li) {
            const int in = m.dims[li], out = m.dims[li + 1];
            const bool head = li + 2 == m.dims.size();
            const double sd = (head ? head_scale : 1.0) * std::sqrt(2.0 / in);
            for (int r = 0; r < out; ++r)
                for (int c = 0; c < in; ++c) m.flat[off + static_cast<std::size_t>(r) * in + c] = sd * rng.normal();
            off += static_cast<std::size_t>(out) * (in + 1);
        }
        return m;
    }

    struct Cache {
        std::vector<std::vector<double>> inputs;
        std::vector<std::vector<double>> activations;
    };

    std::vector<double> forward(const std::vector<double>& x, Cache* cache = nullptr) const {
        if (static_cast<int>(x.size()) != dims.front())
            throw std::invalid_argument("mlp: input size mismatch");
        std::vector<double> cur = x;
        std::size_t off = 0;
        if (cache) {
            cache->inputs.clear();
            cache->activations.clear();
        }
        for (std::size_t li = 0; li + 1 < dims.size(); ++li) {
            const int in = dims[li], out = dims[li + 1];
            const bool head = li + 2 == dims.size();
            if (cache) cache->inputs.push_back(cur);
            std::vector<double> y(static_cast<std::size_t>(out));
            const double* kern = flat.data() + off;
            const double* bias = kern + static_cast<std::size_t>(out) * in;
            for (int r = 0; r < out; ++r) {
                double acc = bias[r];
                const double* row = kern + static_cast<std::size_t>(r) * in;
                for (int c = 0; c < in; ++c) acc += row[c] * cur[c];
                y[r] = (!head && acc < 0.0) ? 0.0 : acc;
            }
            if (cache) cache->activations.push_back(y);
            cur = std::move(y);
            off += static_cast<std::size_t>(out) * (in + 1);
        }
        return cur;
    }

    // accumulate d(loss)/d(flat) given d(loss)/d(output)
    void backward(const Cache& cache, std::vector<double> dout, std::vector<double>& grad) const {
        if (grad.size() != flat.size()) throw std::invalid_argument("mlp: grad size mismatch");
        std::vector<std::size_t> offsets(dims.size() - 1);
        std::size_t off = 0;
        for (std::size_t li = 0; li + 1 < dims.size(); ++li) {
            offsets[li] = off;
            off += static_cast<std::size_t>(dims[li + 1]) * (dims[li] + 1);
        }
        for (int li = static_cast<int>(dims.size()) - 2; li >= 0; --li) {
            const int in = dims[li], out = dims[li + 1];
            const bool head = li + 2 == static_cast<int>(dims.size());
            const auto& x = cache.inputs[li];
            const auto& y = cache.activations[li];
            if (!head)
                for (int r = 0; r < out; ++r)
                    if (y[r] <= 0.0) dout[r] = 0.0;
            double* gk = grad.data() + offsets[li];
            double* gb = gk + static_cast<std::size_t>(out) * in;
            const double* kern = flat.data() + offsets[li];
            std::vector<double> dx(static_cast<std::size_t>(in), 0.0);
            for (int r = 0; r < out; ++r) {
                const double d = dout[r];
                if (d == 0.0) continue;
                gb[r] += d;
                double* grow = gk + static_cast<std::size_t>(r) * in;
                const double* krow = kern + static_cast<std::size_t>(r) * in;
                for (int c = 0; c < in; ++c) {
                    grow[c] += d * x[c];
                    dx[c] += d * krow[c];
                }
            }
            dout = std::move(dx);
        }
    }
};

}  // namespace resetrl::optim
