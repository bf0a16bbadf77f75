#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace resetrl {

// Lowest three transmon levels. F is reachable only in three-level configs.
enum class Level : int { G = 0, E = 1, F = 2 };

// Discrete agent actions. GfFlip is legal only in four-action (qutrit) mode.
enum class Action : int { Idle = 0, Flip = 1, Terminate = 2, GfFlip = 3 };

inline const char* to_string(Level l) {
    switch (l) {
        case Level::G: return "g";
        case Level::E: return "e";
        case Level::F: return "f";
    }
    return "?";
}

inline const char* to_string(Action a) {
    switch (a) {
        case Action::Idle: return "idle";
        case Action::Flip: return "flip";
        case Action::Terminate: return "terminate";
        case Action::GfFlip: return "gf_flip";
    }
    return "?";
}

// Invalid configuration or malformed input file. CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A policy emitted an action that is illegal in the current mode.
class ProtocolError : public std::runtime_error {
public:
    explicit ProtocolError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure (non-convergence, singular covariance, non-finite
// gradients). CLI maps this to exit code 3.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// One digitized readout record: both quadrature sample sequences plus the
// hidden state trajectory that generated it. latent_path is for tests and
// oracles only and must never feed a policy input.
struct Trace {
    std::vector<double> i_samples;
    std::vector<double> q_samples;
    // (start time [s], level) segments; first entry is the pre-measurement
    // state at t=0, last entry's level is the post-measurement state.
    std::vector<std::pair<double, Level>> latent_path;

    std::size_t size() const { return i_samples.size(); }
};

}  // namespace resetrl
