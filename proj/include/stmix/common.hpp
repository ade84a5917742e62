#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace stmix {

// Shape/contract violations (dimension mismatches, even kernels, ...).
class ShapeError : public std::invalid_argument {
public:
    explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

// Malformed text inputs (config files, CSV embeddings, reports).
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, int line = -1)
        : std::runtime_error(line >= 0 ? what + " (line " + std::to_string(line) + ")" : what),
          line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

class IOError : public std::runtime_error {
public:
    explicit IOError(const std::string& what) : std::runtime_error(what) {}
};

// Deterministic RNG used everywhere a seed is accepted.
using Rng = std::mt19937_64;

inline float uniform(Rng& rng, float lo, float hi) {
    std::uniform_real_distribution<float> d(lo, hi);
    return d(rng);
}

}  // namespace stmix
