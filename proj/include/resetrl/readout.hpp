#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "resetrl/types.hpp"

namespace resetrl::readout {

// Linear integration weights for one signal axis. `w` is unit-norm; the
// normalization divisor makes the g/e contrast of the U axis exactly 1.
// `center` is plot/threshold metadata (axis offset) and is deliberately not
// applied by integrate(), which stays linear.
struct FilterWeights {
    std::vector<double> wi;
    std::vector<double> wq;
    char label = 'U';
    double normalization = 1.0;
    double center = 0.0;
};

inline double integrate(const Trace& tr, const FilterWeights& w) {
    if (tr.i_samples.size() != w.wi.size() || tr.q_samples.size() != w.wq.size())
        throw std::invalid_argument("integrate: trace/weights length mismatch");
    double acc = 0.0;
    for (std::size_t k = 0; k < w.wi.size(); ++k)
        acc += w.wi[k] * tr.i_samples[k] + w.wq[k] * tr.q_samples[k];
    return acc / w.normalization;
}

namespace detail {

struct MeanPair {
    std::vector<double> i, q;
};

inline MeanPair ensemble_mean(std::span<const Trace> traces) {
    if (traces.empty()) throw std::invalid_argument("estimate_weights: empty trace set");
    const std::size_t n = traces.front().size();
    MeanPair m;
    m.i.assign(n, 0.0);
    m.q.assign(n, 0.0);
    for (const Trace& t : traces) {
        if (t.size() != n || t.q_samples.size() != n)
            throw std::invalid_argument("estimate_weights: trace length mismatch");
        for (std::size_t k = 0; k < n; ++k) {
            m.i[k] += t.i_samples[k];
            m.q[k] += t.q_samples[k];
        }
    }
    const double inv = 1.0 / static_cast<double>(traces.size());
    for (std::size_t k = 0; k < n; ++k) {
        m.i[k] *= inv;
        m.q[k] *= inv;
    }
    return m;
}

}  // namespace detail

// Matched-filter weights proportional to the g/e mean-trace difference.
inline FilterWeights estimate_weights(std::span<const Trace> traces_g,
                                      std::span<const Trace> traces_e) {
    const auto mg = detail::ensemble_mean(traces_g);
    const auto me = detail::ensemble_mean(traces_e);
    if (mg.i.size() != me.i.size())
        throw std::invalid_argument("estimate_weights: g/e trace length mismatch");
    FilterWeights w;
    const std::size_t n = mg.i.size();
    w.wi.resize(n);
    w.wq.resize(n);
    double norm2 = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        w.wi[k] = mg.i[k] - me.i[k];
        w.wq[k] = mg.q[k] - me.q[k];
        norm2 += w.wi[k] * w.wi[k] + w.wq[k] * w.wq[k];
    }
    const double norm = std::sqrt(norm2);
    double scale = 0.0;
    for (std::size_t k = 0; k < n; ++k) scale += std::abs(mg.i[k]) + std::abs(me.i[k]) +
                                                 std::abs(mg.q[k]) + std::abs(me.q[k]);
    if (!(norm > 1e-12 * std::max(1.0, scale)))
        throw NumericalError("estimate_weights: degenerate weights (zero g/e contrast)");
    for (std::size_t k = 0; k < n; ++k) {
        w.wi[k] /= norm;
        w.wq[k] /= norm;
    }
    // unit-norm direction; dividing by |d| once more makes Delta-U exactly 1
    w.normalization = norm;
    return w;
}

// Orthonormal (U, W) pair for three-level readout. W is the component of the
// f contrast orthogonal to the g/e axis; both axes share the U normalization
// so their noise scales match. W.center puts the f discrimination midpoint
// at zero on exported axes.
inline std::pair<FilterWeights, FilterWeights> estimate_weights_qutrit(
    std::span<const Trace> traces_g, std::span<const Trace> traces_e,
    std::span<const Trace> traces_f) {
    FilterWeights u = estimate_weights(traces_g, traces_e);
    const auto mg = detail::ensemble_mean(traces_g);
    const auto me = detail::ensemble_mean(traces_e);
    const auto mf = detail::ensemble_mean(traces_f);
    const std::size_t n = mg.i.size();
    if (mf.i.size() != n) throw std::invalid_argument("estimate_weights: f trace length mismatch");

    FilterWeights w;
    w.label = 'W';
    w.wi.resize(n);
    w.wq.resize(n);
    double dot = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        w.wi[k] = mf.i[k] - 0.5 * (mg.i[k] + me.i[k]);
        w.wq[k] = mf.q[k] - 0.5 * (mg.q[k] + me.q[k]);
        dot += w.wi[k] * u.wi[k] + w.wq[k] * u.wq[k];
    }
    double norm2 = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        w.wi[k] -= dot * u.wi[k];
        w.wq[k] -= dot * u.wq[k];
        norm2 += w.wi[k] * w.wi[k] + w.wq[k] * w.wq[k];
    }
    const double norm = std::sqrt(norm2);
    if (!(norm > 1e-9)) throw NumericalError("estimate_weights: f state lies on the g/e axis");
    for (std::size_t k = 0; k < n; ++k) {
        w.wi[k] /= norm;
        w.wq[k] /= norm;
    }
    w.normalization = u.normalization;

    auto project = [&](const detail::MeanPair& m) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) acc += w.wi[k] * m.i[k] + w.wq[k] * m.q[k];
        return acc / w.normalization;
    };
    w.center = 0.5 * (project(mf) + 0.5 * (project(mg) + project(me)));
    return {std::move(u), std::move(w)};
}

// Binned counts; y_edges empty for 1-D. 2-D counts are x-major.
struct Histogram {
    std::vector<double> x_edges;
    std::vector<double> y_edges;
    std::vector<std::uint64_t> counts;

    bool is_2d() const { return !y_edges.empty(); }
    std::size_t nx() const { return x_edges.size() - 1; }
    std::size_t ny() const { return y_edges.empty() ? 0 : y_edges.size() - 1; }
    std::uint64_t total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }
};

namespace detail {

inline std::size_t clamp_bin(double v, const std::vector<double>& edges) {
    // values on/outside the range land in the edge bins
    const std::size_t nb = edges.size() - 1;
    if (v <= edges.front()) return 0;
    if (v >= edges.back()) return nb - 1;
    const auto it = std::upper_bound(edges.begin(), edges.end(), v);
    return static_cast<std::size_t>(it - edges.begin()) - 1;
}

}  // namespace detail

// Freedman-Diaconis bin count, floored at 64 bins.
inline std::size_t fd_bin_count(std::vector<double> sorted, std::size_t min_bins = 64) {
    const std::size_t n = sorted.size();
    if (n < 4) return min_bins;
    const double q1 = sorted[n / 4];
    const double q3 = sorted[(3 * n) / 4];
    const double iqr = q3 - q1;
    const double range = sorted.back() - sorted.front();
    if (!(iqr > 0) || !(range > 0)) return min_bins;
    const double width = 2.0 * iqr / std::cbrt(static_cast<double>(n));
    const auto bins = static_cast<std::size_t>(std::ceil(range / width));
    return std::clamp(bins, min_bins, static_cast<std::size_t>(4096));
}

inline Histogram make_histogram(std::span<const double> values, std::size_t bins = 0) {
    if (values.empty()) throw std::invalid_argument("make_histogram: no values");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    if (bins == 0) bins = fd_bin_count(sorted);
    double lo = sorted.front(), hi = sorted.back();
    if (!(hi > lo)) {
        lo -= 0.5;
        hi += 0.5;
    }
    const double pad = 1e-9 * (hi - lo);
    lo -= pad;
    hi += pad;
    Histogram h;
    h.x_edges.resize(bins + 1);
    for (std::size_t i = 0; i <= bins; ++i)
        h.x_edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
    h.counts.assign(bins, 0);
    for (double v : values) ++h.counts[detail::clamp_bin(v, h.x_edges)];
    return h;
}

inline Histogram make_histogram_2d(std::span<const double> xs, std::span<const double> ys,
                                   std::size_t nx = 64, std::size_t ny = 64) {
    if (xs.empty() || xs.size() != ys.size())
        throw std::invalid_argument("make_histogram_2d: bad input sizes");
    auto edges = [](std::span<const double> v, std::size_t nb) {
        double lo = *std::min_element(v.begin(), v.end());
        double hi = *std::max_element(v.begin(), v.end());
        if (!(hi > lo)) {
            lo -= 0.5;
            hi += 0.5;
        }
        const double pad = 1e-9 * (hi - lo);
        lo -= pad;
        hi += pad;
        std::vector<double> e(nb + 1);
        for (std::size_t i = 0; i <= nb; ++i)
            e[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(nb);
        return e;
    };
    Histogram h;
    h.x_edges = edges(xs, nx);
    h.y_edges = edges(ys, ny);
    h.counts.assign(nx * ny, 0);
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const std::size_t ix = detail::clamp_bin(xs[k], h.x_edges);
        const std::size_t iy = detail::clamp_bin(ys[k], h.y_edges);
        ++h.counts[ix * ny + iy];
    }
    return h;
}

// One Gaussian component. In 1-D only mean[0] and cov[0][0] are used.
struct MixtureComponent {
    Level label = Level::G;
    double amplitude = 0.0;  // expected total counts of this component
    std::array<double, 2> mean{0.0, 0.0};
    std::array<std::array<double, 2>, 2> cov{{{1.0, 0.0}, {0.0, 1.0}}};

    double sigma() const { return std::sqrt(cov[0][0]); }
};

// Result of a bi-/tri-modal Gaussian maximum-likelihood fit to binned counts.
struct MixtureFit {
    int dim = 1;
    std::vector<MixtureComponent> components;
    double log_likelihood = -std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
    // accepted log-likelihood after each iteration (monotone by construction)
    std::vector<double> ll_trace;

    std::size_t n_components() const { return components.size(); }

    double total_amplitude() const {
        double s = 0.0;
        for (const auto& c : components) s += c.amplitude;
        return s;
    }

    double population(Level l) const {
        const double tot = total_amplitude();
        for (const auto& c : components)
            if (c.label == l) return c.amplitude / tot;
        return 0.0;
    }

    // 1-D decision boundaries: midpoints between adjacent means.
    std::vector<double> thresholds() const {
        std::vector<double> means;
        for (const auto& c : components) means.push_back(c.mean[0]);
        std::sort(means.begin(), means.end());
        std::vector<double> t;
        for (std::size_t i = 0; i + 1 < means.size(); ++i) t.push_back(0.5 * (means[i] + means[i + 1]));
        return t;
    }
};

struct FitOptions {
    bool equal_variance = false;          // weak-measurement mode
    std::optional<MixtureFit> fixed_shape;  // fit amplitudes only
    int max_iterations = 500;
    double rel_tolerance = 1e-9;
    bool keep_ll_trace = false;
};

namespace detail {

inline double norm_cdf(double z) { return 0.5 * std::erfc(-z * 0.70710678118654752440); }

// expected fraction of a N(mu, sigma^2) component falling in [lo, hi)
inline double bin_prob_1d(double mu, double sigma, double lo, double hi) {
    return norm_cdf((hi - mu) / sigma) - norm_cdf((lo - mu) / sigma);
}

inline double gauss2_density(double x, double y, const MixtureComponent& c) {
    const double sx = std::sqrt(c.cov[0][0]);
    const double sy = std::sqrt(c.cov[1][1]);
    const double rho = c.cov[0][1] / (sx * sy);
    const double om = 1.0 - rho * rho;
    const double zx = (x - c.mean[0]) / sx;
    const double zy = (y - c.mean[1]) / sy;
    const double q = (zx * zx - 2.0 * rho * zx * zy + zy * zy) / om;
    return std::exp(-0.5 * q) / (6.283185307179586 * sx * sy * std::sqrt(om));
}

// Poisson log-likelihood of binned counts (n! terms dropped).
class BinnedModel {
public:
    BinnedModel(const Histogram& h, bool two_d) : hist_(h), two_d_(two_d) {
        if (two_d_) {
            const std::size_t ny = h.ny();
            centers_x_.reserve(h.nx());
            centers_y_.reserve(ny);
            for (std::size_t i = 0; i < h.nx(); ++i)
                centers_x_.push_back(0.5 * (h.x_edges[i] + h.x_edges[i + 1]));
            for (std::size_t j = 0; j < ny; ++j)
                centers_y_.push_back(0.5 * (h.y_edges[j] + h.y_edges[j + 1]));
            area_ = (h.x_edges[1] - h.x_edges[0]) * (h.y_edges[1] - h.y_edges[0]);
        }
    }

    double log_likelihood(const std::vector<MixtureComponent>& comps) const {
        double ll = 0.0;
        if (!two_d_) {
            for (std::size_t i = 0; i < hist_.nx(); ++i) {
                double m = 0.0;
                for (const auto& c : comps)
                    m += c.amplitude * bin_prob_1d(c.mean[0], c.sigma(), hist_.x_edges[i], hist_.x_edges[i + 1]);
                ll += term(hist_.counts[i], m);
            }
        } else {
            const std::size_t ny = hist_.ny();
            for (std::size_t i = 0; i < hist_.nx(); ++i) {
                for (std::size_t j = 0; j < ny; ++j) {
                    double m = 0.0;
                    for (const auto& c : comps)
                        m += c.amplitude * area_ * gauss2_density(centers_x_[i], centers_y_[j], c);
                    ll += term(hist_.counts[i * ny + j], m);
                }
            }
        }
        return ll;
    }

    // component bin fractions, for the multiplicative amplitude update
    void bin_fractions(const MixtureComponent& c, std::vector<double>& out) const {
        if (!two_d_) {
            out.resize(hist_.nx());
            for (std::size_t i = 0; i < hist_.nx(); ++i)
                out[i] = bin_prob_1d(c.mean[0], c.sigma(), hist_.x_edges[i], hist_.x_edges[i + 1]);
        } else {
            const std::size_t ny = hist_.ny();
            out.resize(hist_.nx() * ny);
            for (std::size_t i = 0; i < hist_.nx(); ++i)
                for (std::size_t j = 0; j < ny; ++j)
                    out[i * ny + j] = area_ * gauss2_density(centers_x_[i], centers_y_[j], c);
        }
    }

    const Histogram& hist() const { return hist_; }

private:
    static double term(std::uint64_t n, double m) {
        m = std::max(m, 1e-300);
        return static_cast<double>(n) * std::log(m) - m;
    }

    const Histogram& hist_;
    bool two_d_;
    std::vector<double> centers_x_, centers_y_;
    double area_ = 0.0;
};

// Richardson-Lucy style multiplicative amplitude update; never decreases the
// Poisson likelihood of a linear-in-amplitudes model.
inline void update_amplitudes(const BinnedModel& model, std::vector<MixtureComponent>& comps) {
    const auto& counts = model.hist().counts;
    const std::size_t nb = counts.size();
    std::vector<std::vector<double>> fracs(comps.size());
    for (std::size_t c = 0; c < comps.size(); ++c) model.bin_fractions(comps[c], fracs[c]);
    std::vector<double> m(nb, 0.0);
    for (std::size_t c = 0; c < comps.size(); ++c)
        for (std::size_t i = 0; i < nb; ++i) m[i] += comps[c].amplitude * fracs[c][i];
    for (std::size_t c = 0; c < comps.size(); ++c) {
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < nb; ++i) {
            den += fracs[c][i];
            if (counts[i] > 0) num += static_cast<double>(counts[i]) * fracs[c][i] / std::max(m[i], 1e-300);
        }
        if (den > 0) comps[c].amplitude = std::max(comps[c].amplitude * num / den, 0.0);
    }
}

// Damped per-coordinate Newton ascent with backtracking; only steps that
// improve the exact binned likelihood are accepted.
class CoordinateAscent {
public:
    CoordinateAscent(const BinnedModel& model, std::vector<MixtureComponent>& comps)
        : model_(model), comps_(comps) {}

    // getter/setter pair addressing one scalar shape parameter
    template <typename Get, typename Set>
    bool improve(double& ll, Get get, Set set, double max_step) {
        const double x0 = get();
        const double h = std::max(1e-7, 1e-5 * std::abs(x0));
        const double lp = eval(set, x0 + h), lm = eval(set, x0 - h);
        set(x0);
        const double g = (lp - lm) / (2.0 * h);
        const double curv = (lp - 2.0 * ll + lm) / (h * h);
        double step = (curv < -1e-12) ? -g / curv : (g > 0 ? max_step : -max_step);
        step = std::clamp(step, -max_step, max_step);
        if (std::abs(step) < 1e-15) return false;
        for (int bt = 0; bt < 30; ++bt) {
            const double cand = eval(set, x0 + step);
            if (cand > ll) {
                set(x0 + step);
                ll = cand;
                return true;
            }
            step *= 0.5;
        }
        set(x0);
        return false;
    }

private:
    template <typename Set>
    double eval(Set set, double v) {
        set(v);
        return model_.log_likelihood(comps_);
    }

    const BinnedModel& model_;
    std::vector<MixtureComponent>& comps_;
};

inline void check_covariances(const std::vector<MixtureComponent>& comps, int dim, double scale) {
    for (const auto& c : comps) {
        if (!(c.cov[0][0] > 1e-18 * scale * scale))
            throw NumericalError("fit_mixture: singular covariance");
        if (dim == 2) {
            const double det = c.cov[0][0] * c.cov[1][1] - c.cov[0][1] * c.cov[0][1];
            if (!(det > 0)) throw NumericalError("fit_mixture: singular covariance");
        }
    }
}

}  // namespace detail

// Maximum-likelihood fit of a bi-/tri-modal Gaussian to binned counts under
// the Poisson model for bin occupancy. With fixed_shape only the amplitudes
// are free; equal_variance ties all 1-D component variances together.
inline MixtureFit fit_mixture(const Histogram& hist, int n_components,
                              const FitOptions& opts = {}) {
    if (hist.total() == 0) throw std::invalid_argument("fit_mixture: empty histogram");
    const bool two_d = hist.is_2d();
    if (n_components < 1 || n_components > 3)
        throw std::invalid_argument("fit_mixture: n_components must be 1..3");

    detail::BinnedModel model(hist, two_d);
    const double total = static_cast<double>(hist.total());
    const double range = hist.x_edges.back() - hist.x_edges.front();

    MixtureFit fit;
    fit.dim = two_d ? 2 : 1;

    if (opts.fixed_shape) {
        // amplitude-only refit against previously obtained means/covariances
        fit = *opts.fixed_shape;
        fit.ll_trace.clear();
        if (static_cast<int>(fit.components.size()) != n_components)
            throw std::invalid_argument("fit_mixture: fixed_shape component count mismatch");
        for (auto& c : fit.components) c.amplitude = total / static_cast<double>(n_components);
        double ll = model.log_likelihood(fit.components);
        fit.converged = false;
        for (int it = 0; it < opts.max_iterations; ++it) {
            detail::update_amplitudes(model, fit.components);
            const double next = model.log_likelihood(fit.components);
            fit.iterations = it + 1;
            if (opts.keep_ll_trace) fit.ll_trace.push_back(next);
            if (std::abs(next - ll) <= opts.rel_tolerance * (std::abs(ll) + 1.0)) {
                ll = next;
                fit.converged = true;
                break;
            }
            ll = next;
        }
        fit.log_likelihood = ll;
        if (!fit.converged) throw NumericalError("fit_mixture: amplitude fit did not converge");
        return fit;
    }

    if (two_d)
        throw std::invalid_argument("fit_mixture: free-shape 2-D fits require labeled seeds; "
                                    "use fit_mixture_2d");

    // moment-based starting points, jittered splits as multi-start
    std::vector<double> centers(hist.nx());
    for (std::size_t i = 0; i < hist.nx(); ++i)
        centers[i] = 0.5 * (hist.x_edges[i] + hist.x_edges[i + 1]);
    double mu = 0.0;
    for (std::size_t i = 0; i < hist.nx(); ++i) mu += centers[i] * static_cast<double>(hist.counts[i]);
    mu /= total;
    double var = 0.0;
    for (std::size_t i = 0; i < hist.nx(); ++i) {
        const double d = centers[i] - mu;
        var += d * d * static_cast<double>(hist.counts[i]);
    }
    var /= total;
    const double sd = std::sqrt(std::max(var, 1e-12 * range * range));

    std::vector<std::vector<double>> seeds;
    if (n_components == 1) {
        seeds.push_back({mu});
    } else if (n_components == 2) {
        seeds.push_back({mu - 0.8 * sd, mu + 0.8 * sd});
        seeds.push_back({mu - 1.5 * sd, mu + 1.5 * sd});
        seeds.push_back({mu - 0.3 * sd, mu + 1.2 * sd});
    } else {
        seeds.push_back({mu - 1.2 * sd, mu, mu + 1.2 * sd});
        seeds.push_back({mu - 1.8 * sd, mu - 0.3 * sd, mu + 1.5 * sd});
    }

    MixtureFit best;
    best.dim = 1;
    for (const auto& seed : seeds) {
        std::vector<MixtureComponent> comps(n_components);
        for (int c = 0; c < n_components; ++c) {
            comps[c].amplitude = total / n_components;
            comps[c].mean[0] = seed[c];
            comps[c].cov[0][0] = (0.5 * sd) * (0.5 * sd);
        }

        double ll = model.log_likelihood(comps);
        detail::CoordinateAscent ca(model, comps);
        MixtureFit run;
        run.dim = 1;
        for (int it = 0; it < opts.max_iterations; ++it) {
            const double prev = ll;
            detail::update_amplitudes(model, comps);
            ll = model.log_likelihood(comps);
            for (int c = 0; c < n_components; ++c) {
                auto& comp = comps[c];
                ca.improve(ll, [&] { return comp.mean[0]; },
                           [&](double v) { comp.mean[0] = v; }, 0.5 * range);
                if (!opts.equal_variance) {
                    ca.improve(ll, [&] { return 0.5 * std::log(comp.cov[0][0]); },
                               [&](double v) { comp.cov[0][0] = std::exp(2.0 * v); }, 0.5);
                }
            }
            if (opts.equal_variance) {
                ca.improve(ll, [&] { return 0.5 * std::log(comps[0].cov[0][0]); },
                           [&](double v) {
                               for (auto& comp : comps) comp.cov[0][0] = std::exp(2.0 * v);
                           },
                           0.5);
            }
            run.iterations = it + 1;
            if (opts.keep_ll_trace) run.ll_trace.push_back(ll);
            if (std::abs(ll - prev) <= opts.rel_tolerance * (std::abs(prev) + 1.0)) {
                run.converged = true;
                break;
            }
        }
        run.components = comps;
        run.log_likelihood = ll;
        if (ll > best.log_likelihood) best = std::move(run);
    }

    detail::check_covariances(best.components, 1, range);
    if (!best.converged) throw NumericalError("fit_mixture: no start converged within iteration cap");

    // label components along the axis; U convention puts g at the top
    std::sort(best.components.begin(), best.components.end(),
              [](const auto& a, const auto& b) { return a.mean[0] > b.mean[0]; });
    const Level order[3] = {Level::G, Level::E, Level::F};
    for (int c = 0; c < n_components; ++c) best.components[c].label = order[c];
    return best;
}

// Tri-modal 2-D fit refined from labeled seed components (means/covariances
// estimated per prepared class); bins are modeled by their center density.
inline MixtureFit fit_mixture_2d(const Histogram& hist, std::vector<MixtureComponent> seed,
                                 const FitOptions& opts = {}) {
    if (!hist.is_2d()) throw std::invalid_argument("fit_mixture_2d: need a 2-D histogram");
    if (hist.total() == 0) throw std::invalid_argument("fit_mixture_2d: empty histogram");
    detail::BinnedModel model(hist, true);
    const double total = static_cast<double>(hist.total());
    const double range = hist.x_edges.back() - hist.x_edges.front();

    MixtureFit fit;
    fit.dim = 2;
    for (auto& c : seed)
        if (!(c.amplitude > 0)) c.amplitude = total / static_cast<double>(seed.size());

    double ll = model.log_likelihood(seed);
    detail::CoordinateAscent ca(model, seed);
    for (int it = 0; it < opts.max_iterations; ++it) {
        const double prev = ll;
        detail::update_amplitudes(model, seed);
        ll = model.log_likelihood(seed);
        for (auto& comp : seed) {
            for (int d = 0; d < 2; ++d)
                ca.improve(ll, [&] { return comp.mean[d]; },
                           [&](double v) { comp.mean[d] = v; }, 0.25 * range);
            for (int d = 0; d < 2; ++d) {
                ca.improve(ll, [&] { return 0.5 * std::log(comp.cov[d][d]); },
                           [&](double v) {
                               const double old = comp.cov[d][d];
                               comp.cov[d][d] = std::exp(2.0 * v);
                               const double s = std::sqrt(comp.cov[d][d] / old);
                               comp.cov[0][1] *= s;
                               comp.cov[1][0] *= s;
                           },
                           0.3);
            }
            ca.improve(ll,
                       [&] {
                           const double r = comp.cov[0][1] /
                                            std::sqrt(comp.cov[0][0] * comp.cov[1][1]);
                           return std::atanh(std::clamp(r, -0.99, 0.99));
                       },
                       [&](double v) {
                           const double r = std::tanh(v);
                           comp.cov[0][1] = comp.cov[1][0] =
                               r * std::sqrt(comp.cov[0][0] * comp.cov[1][1]);
                       },
                       0.3);
        }
        fit.iterations = it + 1;
        if (opts.keep_ll_trace) fit.ll_trace.push_back(ll);
        if (std::abs(ll - prev) <= opts.rel_tolerance * (std::abs(prev) + 1.0)) {
            fit.converged = true;
            break;
        }
    }
    fit.components = std::move(seed);
    fit.log_likelihood = ll;
    detail::check_covariances(fit.components, 2, range);
    if (!fit.converged) throw NumericalError("fit_mixture_2d: did not converge within iteration cap");
    return fit;
}

// 1-D classification by midpoint thresholds. Exactly on a boundary the more
// excited of the two adjacent components wins.
inline Level classify(double u, const MixtureFit& fit) {
    if (fit.dim != 1) throw std::invalid_argument("classify: fit is not 1-D");
    std::vector<const MixtureComponent*> order;
    for (const auto& c : fit.components) order.push_back(&c);
    std::sort(order.begin(), order.end(),
              [](const auto* a, const auto* b) { return a->mean[0] < b->mean[0]; });
    const MixtureComponent* chosen = order.front();
    for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        const double t = 0.5 * (order[i]->mean[0] + order[i + 1]->mean[0]);
        if (u > t) {
            chosen = order[i + 1];
        } else if (u == t) {
            chosen = static_cast<int>(order[i]->label) > static_cast<int>(order[i + 1]->label)
                         ? order[i]
                         : order[i + 1];
        }
    }
    return chosen->label;
}

// 2-D classification: maximum component density among the fitted Gaussians.
inline Level classify(double u, double w, const MixtureFit& fit) {
    if (fit.dim != 2) throw std::invalid_argument("classify: fit is not 2-D");
    const MixtureComponent* bestc = nullptr;
    double bestd = -1.0;
    for (const auto& c : fit.components) {
        const double d = detail::gauss2_density(u, w, c);
        if (d > bestd) {
            bestd = d;
            bestc = &c;
        }
    }
    return bestc->label;
}

// Symmetric misassignment average (two-level) or one minus the mean diagonal
// of the assignment matrix (three-level).
inline double readout_infidelity(std::span<const Level> assigned,
                                 std::span<const Level> prepared, int levels = 2) {
    if (assigned.size() != prepared.size())
        throw std::invalid_argument("readout_infidelity: size mismatch");
    double counts[3][3] = {};
    double totals[3] = {};
    for (std::size_t k = 0; k < assigned.size(); ++k) {
        counts[static_cast<int>(prepared[k])][static_cast<int>(assigned[k])] += 1.0;
        totals[static_cast<int>(prepared[k])] += 1.0;
    }
    for (int l = 0; l < levels; ++l)
        if (totals[l] == 0) throw std::invalid_argument("readout_infidelity: empty class");
    if (levels == 2) {
        const double p_e_given_g = counts[0][1] / totals[0];
        const double p_g_given_e = counts[1][0] / totals[1];
        return 0.5 * (p_e_given_g + p_g_given_e);
    }
    double diag = 0.0;
    for (int l = 0; l < 3; ++l) diag += counts[l][l] / totals[l];
    return 1.0 - diag / 3.0;
}

}  // namespace resetrl::readout
