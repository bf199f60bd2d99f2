// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#include <splatprior/errors.hpp>
#include <splatprior/parameter.hpp>

#include <cmath>

namespace splatprior {

void init_uniform(Parameter &p, int fan_in, double gain, std::mt19937_64 &rng) {
    const double bound = gain * std::sqrt(3.0 / std::max(1, fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
        p.value.data()[i] = u(rng);
    }
    p.zero_grad();
}

std::uint64_t fnv1a(const void *data, std::size_t bytes, std::uint64_t seed) {
    const auto *b = static_cast<const unsigned char *>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= b[i];
        h *= 1099511628211ull;
    }
    return h;
}

void AdamState::update(const std::vector<Parameter *> &params) {
    if (m.empty()) {
        for (const Parameter *p : params) {
            m.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
            v.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        }
    }
    if (m.size() != params.size()) {
        throw ShapeError("Adam state does not match the parameter list");
    }
    ++step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t n = 0; n < params.size(); ++n) {
        Parameter &p = *params[n];
        if (m[n].rows() != p.value.rows() || m[n].cols() != p.value.cols()) {
            throw ShapeError("Adam state shape mismatch for " + p.name);
        }
        m[n] = beta1 * m[n] + (1.0 - beta1) * p.grad;
        v[n] = beta2 * v[n] + (1.0 - beta2) * p.grad.cwiseProduct(p.grad);
        p.value.array() -= lr * (m[n].array() / c1) / ((v[n].array() / c2).sqrt() + eps);
    }
}

} // namespace splatprior
