// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <splatprior/geometry.hpp>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace splatprior {

/// A named trainable tensor with its gradient accumulator.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter() = default;
    Parameter(std::string n, Eigen::Index rows, Eigen::Index cols)
        : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Uniform fan-in initialization U(-b, b) with b = gain * sqrt(3 / fan_in).
void init_uniform(Parameter &p, int fan_in, double gain, std::mt19937_64 &rng);

/// FNV-1a over raw bytes, used for configuration and cache hashes.
std::uint64_t fnv1a(const void *data, std::size_t bytes, std::uint64_t seed = 1469598103934665603ull);

/// Adam with bias correction. State is keyed by parameter order.
struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step = 0;
    std::vector<Matrix> m;
    std::vector<Matrix> v;

    /// Applies one update to every parameter from its grad and zeroes nothing.
    void update(const std::vector<Parameter *> &params);
};

} // namespace splatprior
