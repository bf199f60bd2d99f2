// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#include <splatprior/autodiff.hpp>
#include <splatprior/errors.hpp>

#include <algorithm>
#include <cmath>
#include <memory>

namespace splatprior {

Var Tape::constant(Matrix value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter &p) {
    Node n;
    n.value = p.value;
    n.requires_grad = true;
    n.param = &p;
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
}

Var Tape::push(Matrix value, const std::vector<Var> &parents, Backward backward) {
    Node n;
    n.value = std::move(value);
    for (Var p : parents) {
        n.requires_grad = n.requires_grad || nodes_.at(p.id).requires_grad;
    }
    if (n.requires_grad) {
        n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
}

Matrix &Tape::grad(int id) {
    Node &n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
        n.has_grad = true;
    }
    return n.grad;
}

void Tape::backward(Var loss) {
    if (used_) {
        throw UsedTape("backward already ran on this tape");
    }
    used_ = true;
    if (value(loss).size() != 1) {
        throw ShapeError("backward needs a scalar loss");
    }
    grad(loss)(0, 0) += 1.0;
    for (int id = loss.id; id >= 0; --id) {
        Node &n = nodes_[id];
        if (!n.requires_grad || !n.has_grad) {
            continue;
        }
        if (n.backward) {
            n.backward(*this, id);
        }
        if (n.param) {
            n.param->grad += n.grad;
        }
    }
}

namespace ad {

namespace {

bool needs(Tape &t, Var v) { return t.requires_grad(v); }

} // namespace

Var matmul(Tape &t, Var a, Var b) {
    return t.push(t.value(a) * t.value(b), {a, b}, [a, b](Tape &t, int self) {
        const Matrix &g = t.grad(self);
        if (needs(t, a)) t.grad(a) += g * t.value(b).transpose();
        if (needs(t, b)) t.grad(b) += t.value(a).transpose() * g;
    });
}

Var add_row(Tape &t, Var x, Var row) {
    if (t.value(row).rows() != 1 || t.value(row).cols() != t.value(x).cols()) {
        throw ShapeError("add_row needs a 1 x c row");
    }
    Matrix v = t.value(x).rowwise() + t.value(row).row(0);
    return t.push(std::move(v), {x, row}, [x, row](Tape &t, int self) {
        const Matrix &g = t.grad(self);
        if (needs(t, x)) t.grad(x) += g;
        if (needs(t, row)) t.grad(row) += g.colwise().sum();
    });
}

Var linear(Tape &t, Var x, Var w, Var b) { return add_row(t, matmul(t, x, w), b); }

Var add(Tape &t, Var a, Var b) {
    if (t.value(a).rows() != t.value(b).rows() || t.value(a).cols() != t.value(b).cols()) {
        throw ShapeError("add needs equal shapes");
    }
    return t.push(t.value(a) + t.value(b), {a, b}, [a, b](Tape &t, int self) {
        if (needs(t, a)) t.grad(a) += t.grad(self);
        if (needs(t, b)) t.grad(b) += t.grad(self);
    });
}

Var scale(Tape &t, Var a, double s) {
    return t.push(t.value(a) * s, {a}, [a, s](Tape &t, int self) { t.grad(a) += t.grad(self) * s; });
}

Var mul(Tape &t, Var a, Var b) {
    return t.push(t.value(a).cwiseProduct(t.value(b)), {a, b}, [a, b](Tape &t, int self) {
        if (needs(t, a)) t.grad(a) += t.grad(self).cwiseProduct(t.value(b));
        if (needs(t, b)) t.grad(b) += t.grad(self).cwiseProduct(t.value(a));
    });
}

Var leaky_relu(Tape &t, Var x, double slope) {
    Matrix v = t.value(x).unaryExpr([slope](double z) { return z > 0.0 ? z : slope * z; });
    return t.push(std::move(v), {x}, [x, slope](Tape &t, int self) {
        t.grad(x) += t.grad(self).binaryExpr(t.value(x), [slope](double g, double z) { return z > 0.0 ? g : slope * g; });
    });
}

Var sigmoid(Tape &t, Var x) {
    Matrix v = t.value(x).unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
    return t.push(std::move(v), {x}, [x](Tape &t, int self) {
        const Matrix &s = t.value(Var{self});
        t.grad(x) += t.grad(self).cwiseProduct(s.cwiseProduct((1.0 - s.array()).matrix()));
    });
}

Var tanh(Tape &t, Var x) {
    Matrix v = t.value(x).array().tanh().matrix();
    return t.push(std::move(v), {x}, [x](Tape &t, int self) {
        const Matrix &y = t.value(Var{self});
        t.grad(x) += t.grad(self).cwiseProduct((1.0 - y.array().square()).matrix());
    });
}

Var softplus(Tape &t, Var x) {
    Matrix v = t.value(x).unaryExpr([](double z) { return z > 20.0 ? z : std::log1p(std::exp(z)); });
    return t.push(std::move(v), {x}, [x](Tape &t, int self) {
        t.grad(x) += t.grad(self).binaryExpr(t.value(x), [](double g, double z) {
            return z > 20.0 ? g : g / (1.0 + std::exp(-z));
        });
    });
}

Var concat_cols(Tape &t, const std::vector<Var> &parts) {
    Eigen::Index rows = t.value(parts.at(0)).rows(), cols = 0;
    for (Var p : parts) {
        if (t.value(p).rows() != rows) throw ShapeError("concat_cols needs equal row counts");
        cols += t.value(p).cols();
    }
    Matrix v(rows, cols);
    Eigen::Index c = 0;
    for (Var p : parts) {
        v.middleCols(c, t.value(p).cols()) = t.value(p);
        c += t.value(p).cols();
    }
    return t.push(std::move(v), parts, [parts](Tape &t, int self) {
        Eigen::Index c = 0;
        for (Var p : parts) {
            const Eigen::Index w = t.value(p).cols();
            if (needs(t, p)) t.grad(p) += t.grad(self).middleCols(c, w);
            c += w;
        }
    });
}

Var slice_cols(Tape &t, Var x, int start, int count) {
    if (start < 0 || start + count > t.value(x).cols()) {
        throw ShapeError("slice_cols out of range");
    }
    return t.push(t.value(x).middleCols(start, count), {x}, [x, start, count](Tape &t, int self) {
        t.grad(x).middleCols(start, count) += t.grad(self);
    });
}

Var gather_rows(Tape &t, Var x, const std::vector<int> &idx) {
    const Matrix &xv = t.value(x);
    Matrix v = Matrix::Zero(static_cast<Eigen::Index>(idx.size()), xv.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= xv.rows()) throw ShapeError("gather_rows index out of range");
        if (idx[r] >= 0) v.row(r) = xv.row(idx[r]);
    }
    return t.push(std::move(v), {x}, [x, idx](Tape &t, int self) {
        Matrix &gx = t.grad(x);
        const Matrix &g = t.grad(self);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            if (idx[r] >= 0) gx.row(idx[r]) += g.row(r);
        }
    });
}

Var concat_rows(Tape &t, const std::vector<Var> &parts) {
    Eigen::Index rows = 0, cols = t.value(parts.at(0)).cols();
    for (Var p : parts) {
        if (t.value(p).cols() != cols) throw ShapeError("concat_rows needs equal column counts");
        rows += t.value(p).rows();
    }
    Matrix v(rows, cols);
    Eigen::Index r = 0;
    for (Var p : parts) {
        v.middleRows(r, t.value(p).rows()) = t.value(p);
        r += t.value(p).rows();
    }
    return t.push(std::move(v), parts, [parts](Tape &t, int self) {
        Eigen::Index r = 0;
        for (Var p : parts) {
            const Eigen::Index h = t.value(p).rows();
            if (needs(t, p)) t.grad(p) += t.grad(self).middleRows(r, h);
            r += h;
        }
    });
}

Var repeat_rows(Tape &t, Var row, std::size_t n) {
    if (t.value(row).rows() != 1) throw ShapeError("repeat_rows needs a single row");
    Matrix v = t.value(row).replicate(static_cast<Eigen::Index>(n), 1);
    return t.push(std::move(v), {row}, [row](Tape &t, int self) { t.grad(row) += t.grad(self).colwise().sum(); });
}

Var sparse_conv(Tape &t, Var x, Var w, Var b, const KernelMap &map) {
    const Matrix &xv = t.value(x), &wv = t.value(w);
    const Eigen::Index cin = xv.cols(), cout = wv.cols();
    if (wv.rows() != cin * map.volume || static_cast<std::size_t>(xv.rows()) != map.in_rows ||
        t.value(b).cols() != cout) {
        throw ShapeError("sparse_conv weight, bias or input shape does not match the kernel map");
    }
    Matrix out = t.value(b).replicate(static_cast<Eigen::Index>(map.out_rows), 1);
    for (int k = 0; k < map.volume; ++k) {
        const auto &in = map.in[k], &dst = map.out[k];
        if (in.empty()) continue;
        Matrix gathered(static_cast<Eigen::Index>(in.size()), cin);
        for (std::size_t n = 0; n < in.size(); ++n) gathered.row(n) = xv.row(in[n]);
        const Matrix y = gathered * wv.middleRows(k * cin, cin);
        for (std::size_t n = 0; n < dst.size(); ++n) out.row(dst[n]) += y.row(n);
    }
    auto keep = std::make_shared<KernelMap>(map);
    return t.push(std::move(out), {x, w, b}, [x, w, b, keep, cin, cout](Tape &t, int self) {
        const KernelMap &map = *keep;
        const Matrix &g = t.grad(self);
        const Matrix &xv = t.value(x), &wv = t.value(w);
        const bool gx = needs(t, x), gw = needs(t, w);
        if (needs(t, b)) t.grad(b) += g.colwise().sum();
        for (int k = 0; k < map.volume; ++k) {
            const auto &in = map.in[k], &dst = map.out[k];
            if (in.empty()) continue;
            Matrix gy(static_cast<Eigen::Index>(dst.size()), cout);
            for (std::size_t n = 0; n < dst.size(); ++n) gy.row(n) = g.row(dst[n]);
            if (gw) {
                Matrix gathered(static_cast<Eigen::Index>(in.size()), cin);
                for (std::size_t n = 0; n < in.size(); ++n) gathered.row(n) = xv.row(in[n]);
                t.grad(w).middleRows(k * cin, cin) += gathered.transpose() * gy;
            }
            if (gx) {
                const Matrix back = gy * wv.middleRows(k * cin, cin).transpose();
                Matrix &gxm = t.grad(x);
                for (std::size_t n = 0; n < in.size(); ++n) gxm.row(in[n]) += back.row(n);
            }
        }
    });
}

Var sum(Tape &t, Var x) {
    Matrix v(1, 1);
    v(0, 0) = t.value(x).sum();
    return t.push(std::move(v), {x}, [x](Tape &t, int self) { t.grad(x).array() += t.grad(self)(0, 0); });
}

Var mean(Tape &t, Var x) {
    const double n = static_cast<double>(std::max<Eigen::Index>(1, t.value(x).size()));
    Matrix v(1, 1);
    v(0, 0) = t.value(x).sum() / n;
    return t.push(std::move(v), {x}, [x, n](Tape &t, int self) { t.grad(x).array() += t.grad(self)(0, 0) / n; });
}

Var bce_mean(Tape &t, Var p, const std::vector<double> &targets) {
    const Matrix &pv = t.value(p);
    if (static_cast<std::size_t>(pv.size()) != targets.size()) {
        throw ShapeError("bce_mean needs one target per prediction");
    }
    constexpr double lo = 1e-6, hi = 1.0 - 1e-6;
    const double n = static_cast<double>(std::max<std::size_t>(1, targets.size()));
    double loss = 0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const double q = std::clamp(pv.data()[i], lo, hi);
        loss -= (targets[i] * std::log(q) + (1.0 - targets[i]) * std::log(1.0 - q)) / n;
    }
    Matrix v(1, 1);
    v(0, 0) = loss;
    return t.push(std::move(v), {p}, [p, targets, n](Tape &t, int self) {
        const Matrix &pv = t.value(p);
        Matrix &gp = t.grad(p);
        const double g = t.grad(self)(0, 0);
        for (std::size_t i = 0; i < targets.size(); ++i) {
            const double raw = pv.data()[i];
            if (raw <= lo || raw >= hi) continue;
            gp.data()[i] += g * (-targets[i] / raw + (1.0 - targets[i]) / (1.0 - raw)) / n;
        }
    });
}

} // namespace ad

} // namespace splatprior
