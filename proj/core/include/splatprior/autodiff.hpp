// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <splatprior/parameter.hpp>
#include <splatprior/voxel_grid.hpp>

#include <functional>
#include <vector>

namespace splatprior {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Records matrix-valued operations and replays them in reverse to produce
/// gradients. A tape supports exactly one backward pass.
class Tape {
  public:
    using Backward = std::function<void(Tape &, int self)>;

    Var constant(Matrix value);
    /// Gradients reaching this node are added to `p.grad` by backward().
    Var param(Parameter &p);
    /// Appends a node; `backward` reads grad(self) and accumulates into parents.
    Var push(Matrix value, const std::vector<Var> &parents, Backward backward);

    const Matrix &value(Var v) const { return nodes_[v.id].value; }
    /// Gradient of node `v`, allocated as zeros on first access.
    Matrix &grad(Var v) { return grad(v.id); }
    Matrix &grad(int id);
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
    std::size_t size() const { return nodes_.size(); }
    bool used() const { return used_; }

    /// Reverse pass from a 1x1 node. Throws UsedTape when called twice.
    void backward(Var loss);

  private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool has_grad = false;
        bool requires_grad = false;
        Backward backward;
        Parameter *param = nullptr;
    };
    std::vector<Node> nodes_;
    bool used_ = false;
};

namespace ad {

Var matmul(Tape &t, Var a, Var b);
/// x (n x c) plus a 1 x c row broadcast to every row.
Var add_row(Tape &t, Var x, Var row);
Var linear(Tape &t, Var x, Var w, Var b);
Var add(Tape &t, Var a, Var b);
Var scale(Tape &t, Var a, double s);
Var mul(Tape &t, Var a, Var b);
Var leaky_relu(Tape &t, Var x, double slope);
Var sigmoid(Tape &t, Var x);
Var tanh(Tape &t, Var x);
Var softplus(Tape &t, Var x);
Var concat_cols(Tape &t, const std::vector<Var> &parts);
Var slice_cols(Tape &t, Var x, int start, int count);
/// Row r of the result is row idx[r] of x, or zeros when idx[r] < 0.
Var gather_rows(Tape &t, Var x, const std::vector<int> &idx);
/// Stacks rows of several matrices with equal column counts.
Var concat_rows(Tape &t, const std::vector<Var> &parts);
/// n copies of a 1 x c row.
Var repeat_rows(Tape &t, Var row, std::size_t n);
/// Sparse convolution: out[o_k] += x[i_k] * W_k + b for each kernel offset k;
/// W stacks the per-offset (c_in x c_out) blocks vertically.
Var sparse_conv(Tape &t, Var x, Var w, Var b, const KernelMap &map);
Var sum(Tape &t, Var x);
Var mean(Tape &t, Var x);
/// Mean binary cross-entropy of probabilities (n x 1) against 0/1 targets,
/// with probabilities clamped to [1e-6, 1 - 1e-6].
Var bce_mean(Tape &t, Var p, const std::vector<double> &targets);

} // namespace ad

} // namespace splatprior
