// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#include "test_util.hpp"

#include <splatprior/errors.hpp>
#include <splatprior/losses.hpp>
#include <splatprior/nets.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

using namespace splatprior;
using splatprior::testing::central_difference;
using splatprior::testing::relative_error;

namespace {

NetConfig tiny(NetConfig c, int feature_dim = 4) {
    c.channels = {4, 5, 6, 7};
    if (c.input_width != kDescriptorWidth) c.input_width = 2 * feature_dim + 1;
    c.feature_dim = feature_dim;
    if (c.time_dim > 0) c.time_dim = 3;
    return c;
}

// An L-shaped pair of wall patches plus a few scattered cells, in level-0 keys.
std::vector<VoxelKey> patch_keys() {
    std::vector<VoxelKey> keys;
    for (int i = 0; i < 9; ++i)
        for (int k = 0; k < 7; ++k) keys.push_back({i, 0, k});
    for (int j = 1; j < 6; ++j)
        for (int k = 0; k < 7; ++k) keys.push_back({0, j, k});
    keys.push_back({20, 3, 2});
    keys.push_back({-5, 7, 1});
    std::sort(keys.begin(), keys.end());
    return keys;
}

SparseGrid descriptor_grid(const std::vector<VoxelKey> &keys, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    SparseGrid g = SparseGrid::from_keys(keys, kDescriptorWidth, 0.04, 0,
                                         Bbox{Vec3(-0.3, -0.1, -0.1), Vec3(0.9, 0.4, 0.35)});
    for (Eigen::Index i = 0; i < g.features.size(); ++i) g.features.data()[i] = u(rng);
    std::fill(g.occupancy.begin(), g.occupancy.end(), 1.0);
    return g;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64 &rng, double s = 1.0) {
    std::normal_distribution<double> n(0.0, s);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

void zero_weights(SparseNet &net) {
    for (auto *p : net.parameters()) p->value.setZero();
}

// Random projection of a generator output into a scalar, plus the occupancy loss.
Var generator_objective(Tape &t, const GeneratorOutput &g, const KeyPyramid &gt, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Var wf = t.constant(random_matrix(t.value(g.features).rows(), t.value(g.features).cols(), rng));
    Var wo = t.constant(random_matrix(t.value(g.occupancy).rows(), 1, rng));
    Var a = ad::sum(t, ad::mul(t, g.features, wf));
    Var b = ad::sum(t, ad::mul(t, g.occupancy, wo));
    return ad::add(t, ad::add(t, a, b), occupancy_loss_var(t, g.levels, gt));
}

// Zero biases leave far-away children at occupancy exactly 0.5, on the
// allocation threshold; small random biases move them off it.
void audit_parameters(SparseNet &net, const std::function<Var(Tape &)> &objective, int samples_per_param) {
    std::mt19937_64 brng(5);
    std::uniform_real_distribution<double> ub(-0.2, 0.2);
    for (auto *p : net.parameters()) {
        if (p->name.back() == 'b') {
            for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = ub(brng);
        }
    }
    net.zero_grad();
    {
        Tape t;
        t.backward(objective(t));
    }
    auto eval = [&] {
        Tape t;
        return t.value(objective(t))(0, 0);
    };
    std::mt19937_64 rng(77);
    for (auto *p : net.parameters()) {
        std::uniform_int_distribution<Eigen::Index> pick(0, p->value.size() - 1);
        for (int s = 0; s < samples_per_param; ++s) {
            const Eigen::Index i = pick(rng);
            const double fd = central_difference(p->value.data()[i], eval, 1e-5);
            EXPECT_LT(relative_error(p->grad.data()[i], fd, 1e-7), 1e-3) << p->name << "[" << i << "] " << p->grad.data()[i] << " vs " << fd;
        }
    }
}

} // namespace

TEST(Nets, SparseConvOnDenseBlockEqualsDenseConvolution) {
    std::mt19937_64 rng(5);
    const int n = 6, cin = 3, cout = 2;
    std::vector<VoxelKey> keys;
    for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) keys.push_back({i + 10, j - 3, k});
    std::shuffle(keys.begin(), keys.end(), rng);
    const Matrix x = random_matrix(keys.size(), cin, rng);
    const Matrix w = random_matrix(27 * cin, cout, rng);
    const Matrix b = random_matrix(1, cout, rng);
    // Dense volume with zero padding.
    std::vector<double> vol(static_cast<std::size_t>(n * n * n * cin), 0.0);
    auto at = [&](int i, int j, int k, int c) -> double & { return vol[((k * n + j) * n + i) * cin + c]; };
    for (std::size_t r = 0; r < keys.size(); ++r)
        for (int c = 0; c < cin; ++c) at(keys[r].i - 10, keys[r].j + 3, keys[r].k, c) = x(r, c);
    Tape t;
    Var y = ad::sparse_conv(t, t.constant(x), t.constant(w), t.constant(b), neighbor_map(keys, keys));
    for (std::size_t r = 0; r < keys.size(); ++r) {
        const int i0 = keys[r].i - 10, j0 = keys[r].j + 3, k0 = keys[r].k;
        for (int co = 0; co < cout; ++co) {
            double acc = b(0, co);
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int i = i0 + dx, j = j0 + dy, k = k0 + dz;
                        if (i < 0 || j < 0 || k < 0 || i >= n || j >= n || k >= n) continue;
                        const int tap = (dz + 1) * 9 + (dy + 1) * 3 + (dx + 1);
                        for (int c = 0; c < cin; ++c) acc += at(i, j, k, c) * w(tap * cin + c, co);
                    }
            EXPECT_NEAR(t.value(y)(r, co), acc, 1e-6);
        }
    }
}

TEST(Nets, InitializerGradientAuditCoversEveryParameter) {
    InitializerNet net(tiny(initializer_config()), 11);
    const SparseGrid in = descriptor_grid(patch_keys(), 1);
    auto gt_keys = patch_keys();
    for (int i = 0; i < 9; ++i) gt_keys.push_back({i, 1, 3});
    const KeyPyramid gt = key_pyramid(gt_keys);
    ForwardOptions opts;
    opts.train = true;
    opts.gt = &gt;
    audit_parameters(net, [&](Tape &t) { return generator_objective(t, net.forward(t, in, in.frame, opts), gt, 4); }, 2);
}

TEST(Nets, DensifierGradientAuditCoversEveryParameter) {
    DensifierNet net(tiny(densifier_config()), 12);
    const auto keys = patch_keys();
    std::mt19937_64 rng(2);
    const Matrix feats = random_matrix(keys.size(), 4, rng);
    GradBuffer g;
    g.values = random_matrix(keys.size(), 4, rng, 1e-3);
    const Matrix gin = gradient_input(g);
    const KeyPyramid gt = key_pyramid(keys);
    ForwardOptions opts;
    opts.train = true;
    opts.gt = &gt;
    audit_parameters(net, [&](Tape &t) {
        return generator_objective(t, net.forward(t, keys, t.constant(feats), gin, 2, opts), gt, 5);
    }, 3);
}

TEST(Nets, OptimizerGradientAuditCoversEveryParameter) {
    OptimizerNet net(tiny(optimizer_config()), 13);
    const auto keys = patch_keys();
    std::mt19937_64 rng(3);
    const Matrix feats = random_matrix(keys.size(), 4, rng);
    GradBuffer g;
    g.values = random_matrix(keys.size(), 4, rng);
    const Matrix gin = gradient_input(g);
    const Matrix proj = random_matrix(keys.size(), 4, rng);
    audit_parameters(net, [&](Tape &t) {
        return ad::sum(t, ad::mul(t, net.forward(t, keys, t.constant(feats), gin, 1), t.constant(proj)));
    }, 3);
}

TEST(Nets, FeatureInputGradientMatchesFiniteDifference) {
    OptimizerNet net(tiny(optimizer_config()), 14);
    const auto keys = patch_keys();
    std::mt19937_64 rng(4);
    Parameter feats("feats", keys.size(), 4);
    feats.value = random_matrix(keys.size(), 4, rng);
    const Matrix gin = gradient_input(GradBuffer::zeros(keys.size(), 4));
    const Matrix proj = random_matrix(keys.size(), 4, rng);
    auto objective = [&](Tape &t) {
        return ad::sum(t, ad::mul(t, net.forward(t, keys, t.param(feats), gin, 0, false), t.constant(proj)));
    };
    feats.zero_grad();
    {
        Tape t;
        t.backward(objective(t));
    }
    for (Eigen::Index i = 0; i < feats.value.size(); i += 7) {
        const double fd = central_difference(feats.value.data()[i], [&] {
            Tape t;
            return t.value(objective(t))(0, 0);
        });
        EXPECT_LT(relative_error(feats.grad.data()[i], fd, 1e-7), 1e-4);
    }
}

TEST(Nets, SquashedCompositeAtZeroWeightMatchesFiniteDifference) {
    std::mt19937_64 rng(8);
    Parameter w("w", 3, 2);
    const Matrix x = random_matrix(5, 3, rng);
    const Matrix proj = random_matrix(5, 2, rng);
    auto f = [&](Tape &t) {
        return ad::sum(t, ad::mul(t, ad::tanh(t, ad::matmul(t, t.constant(x), t.param(w))), t.constant(proj)));
    };
    w.zero_grad();
    {
        Tape t;
        t.backward(f(t));
    }
    for (Eigen::Index i = 0; i < w.value.size(); ++i) {
        const double fd = central_difference(w.value.data()[i], [&] {
            Tape t;
            return t.value(f(t))(0, 0);
        });
        EXPECT_LT(relative_error(w.grad.data()[i], fd, 1e-9), 1e-4);
    }
}

TEST(Nets, DisconnectedParameterHasExactlyZeroGradient) {
    OptimizerNet net(tiny(optimizer_config()), 15);
    const auto keys = patch_keys();
    std::mt19937_64 rng(1);
    const Matrix feats = random_matrix(keys.size(), 4, rng);
    const Matrix gin = gradient_input(GradBuffer::zeros(keys.size(), 4));
    net.zero_grad();
    Tape t;
    Var out = net.forward(t, keys, t.constant(feats), gin, 0);
    t.backward(ad::sum(t, ad::slice_cols(t, out, 0, 1)));
    for (auto *p : net.parameters()) {
        if (p->name == "out.w") {
            EXPECT_EQ(p->grad.rightCols(3).cwiseAbs().maxCoeff(), 0.0);
        }
        if (p->name == "out.b") {
            EXPECT_EQ(p->grad.rightCols(3).cwiseAbs().maxCoeff(), 0.0);
        }
    }
}

TEST(Nets, GradientsBitIdenticalAcrossRuns) {
    auto run = [] {
        DensifierNet net(tiny(densifier_config()), 21);
        const auto keys = patch_keys();
        std::mt19937_64 rng(6);
        const Matrix feats = random_matrix(keys.size(), 4, rng);
        const Matrix gin = gradient_input(GradBuffer::zeros(keys.size(), 4));
        const KeyPyramid gt = key_pyramid(keys);
        Tape t;
        ForwardOptions opts;
        t.backward(generator_objective(t, net.forward(t, keys, t.constant(feats), gin, 0, opts), gt, 3));
        std::vector<Matrix> grads;
        for (auto *p : net.parameters()) grads.push_back(p->grad);
        return grads;
    };
    const auto a = run(), b = run();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(a[i] == b[i]);
}

TEST(Nets, InitializerTrainingModeCoversInputAndGroundTruth) {
    InitializerNet net(tiny(initializer_config()), 31);
    const auto keys = patch_keys();
    SparseGrid in = descriptor_grid(keys, 2);
    in.frame = Bbox{Vec3(-0.3, -0.1, -0.1), Vec3(0.9, 0.4, 0.35)};
    std::vector<VoxelKey> gt_keys;
    for (int i = 0; i < 9; ++i)
        for (int j = 0; j < 6; ++j) gt_keys.push_back({i, j, 0});
    const KeyPyramid gt = key_pyramid(gt_keys);
    Tape t;
    ForwardOptions opts;
    opts.train = true;
    opts.gt = &gt;
    const GeneratorOutput g = net.forward(t, in, in.frame, opts);
    auto out = g.keys;
    std::sort(out.begin(), out.end());
    for (const auto &k : gt_keys) EXPECT_TRUE(std::binary_search(out.begin(), out.end(), k));
    for (const auto &k : keys) {
        if (in.frame.contains(key_center(k, 0.04))) EXPECT_TRUE(std::binary_search(out.begin(), out.end(), k));
    }
    const Matrix &occ = t.value(g.occupancy);
    EXPECT_EQ(occ.rows(), static_cast<Eigen::Index>(g.keys.size()));
    EXPECT_GE(occ.minCoeff(), 0.0);
    EXPECT_LE(occ.maxCoeff(), 1.0);
    ASSERT_EQ(g.levels.size(), 4u);
    EXPECT_EQ(g.levels.back().level, 0);
}

TEST(Nets, InitializerZeroLogitsKeepsOnlySurvivors) {
    InitializerNet net(tiny(initializer_config()), 32);
    zero_weights(net);
    const auto keys = patch_keys();
    SparseGrid in = descriptor_grid(keys, 3);
    in.frame = Bbox{Vec3(-0.3, -0.1, -0.1), Vec3(0.9, 0.4, 0.35)};
    const InitializerResult r = initializer_forward(in, net, in.frame);
    for (double o : r.grid.occupancy) EXPECT_DOUBLE_EQ(o, 0.5);
    for (const auto &lv : r.level_occupancy)
        for (double o : lv) EXPECT_DOUBLE_EQ(o, 0.5);
    std::vector<VoxelKey> expect;
    for (const auto &k : keys)
        if (in.frame.contains(key_center(k, 0.04))) expect.push_back(k);
    EXPECT_EQ(r.grid.keys, expect);
    EXPECT_EQ(r.grid.level, 0);
    EXPECT_NO_THROW(r.grid.validate());
}

TEST(Nets, InitializerDenseBudgetEnforced) {
    NetConfig c = tiny(initializer_config());
    c.dense_budget = 2;
    InitializerNet net(c, 33);
    const SparseGrid in = descriptor_grid(patch_keys(), 4);
    EXPECT_THROW(initializer_forward(in, net, Bbox{Vec3(-5, -5, -5), Vec3(5, 5, 5)}), BudgetExceeded);
}

TEST(Nets, InitializerRejectsEmptyAndMisshapedInput) {
    InitializerNet net(tiny(initializer_config()), 34);
    SparseGrid empty = SparseGrid::from_keys({}, kDescriptorWidth, 0.04, 0, Bbox{Vec3::Zero(), Vec3::Ones()});
    EXPECT_THROW(initializer_forward(empty, net, empty.frame), EmptyInput);
    SparseGrid wrong = SparseGrid::from_keys({{0, 0, 0}}, 3, 0.04, 0, Bbox{Vec3::Zero(), Vec3::Ones()});
    EXPECT_THROW(initializer_forward(wrong, net, wrong.frame), ShapeError);
}

TEST(Nets, DensifierZeroNetGivesHalfOccupancyAndExcludesExisting) {
    DensifierNet net(tiny(densifier_config()), 41);
    zero_weights(net);
    SparseGrid grid = SparseGrid::from_keys(patch_keys(), 4, 0.04, 0, Bbox{Vec3::Zero(), Vec3::Ones()});
    const Candidates c = densifier_forward(grid, GradBuffer::zeros(grid.size(), 4), 0, net);
    ASSERT_FALSE(c.keys.empty());
    for (double o : c.occupancy) EXPECT_DOUBLE_EQ(o, 0.5);
    for (const auto &k : c.keys) EXPECT_FALSE(grid.contains(k));
    EXPECT_EQ(c.features.rows(), static_cast<Eigen::Index>(c.keys.size()));
    EXPECT_EQ(c.features.cols(), 4);
}

TEST(Nets, DensifierCandidatesStayInsideLocalityCone) {
    DensifierNet net(tiny(densifier_config()), 42);
    std::mt19937_64 rng(9);
    SparseGrid grid = SparseGrid::from_keys(patch_keys(), 4, 0.04, 0, Bbox{Vec3::Zero(), Vec3::Ones()});
    grid.features = random_matrix(grid.size(), 4, rng);
    GradBuffer g;
    g.values = random_matrix(grid.size(), 4, rng);
    // Push the heads towards allocation so the cone is exercised.
    for (auto *p : net.parameters())
        if (p->name.rfind("occ", 0) == 0 && p->name.back() == 'b') p->value.setConstant(5.0);
    const Candidates c = densifier_forward(grid, g, 3, net);
    ASSERT_FALSE(c.keys.empty());
    const int bound = (1 << kNetLevels) * 3;
    for (const auto &k : c.keys) {
        int best = std::numeric_limits<int>::max();
        for (const auto &q : grid.keys) {
            best = std::min(best, std::max({std::abs(k.i - q.i), std::abs(k.j - q.j), std::abs(k.k - q.k)}));
        }
        EXPECT_LE(best, bound);
    }
}

TEST(Nets, DensifierDependsOnTimestep) {
    DensifierNet net(tiny(densifier_config()), 43);
    std::mt19937_64 rng(10);
    SparseGrid grid = SparseGrid::from_keys(patch_keys(), 4, 0.04, 0, Bbox{Vec3::Zero(), Vec3::Ones()});
    grid.features = random_matrix(grid.size(), 4, rng);
    GradBuffer g;
    g.values = random_matrix(grid.size(), 4, rng);
    const Candidates a = densifier_forward(grid, g, 0, net);
    const Candidates b = densifier_forward(grid, g, 4, net);
    double diff = a.keys == b.keys ? 0.0 : 1.0;
    for (std::size_t i = 0; diff == 0.0 && i < a.occupancy.size(); ++i) {
        diff = std::max(diff, std::abs(a.occupancy[i] - b.occupancy[i]));
    }
    EXPECT_GT(diff, 1e-9);
    EXPECT_THROW(densifier_forward(grid, g, 5, net), ValidationError);
}

TEST(Nets, OptimizerZeroNetGivesZeroUpdate) {
    OptimizerNet net(tiny(optimizer_config()), 51);
    zero_weights(net);
    std::mt19937_64 rng(11);
    SparseGrid grid = SparseGrid::from_keys(patch_keys(), 4, 0.04, 0, Bbox{Vec3::Zero(), Vec3::Ones()});
    grid.features = random_matrix(grid.size(), 4, rng);
    GradBuffer g;
    g.values = random_matrix(grid.size(), 4, rng);
    const Matrix d = optimizer_forward(grid, g, 2, net);
    EXPECT_EQ(d.rows(), static_cast<Eigen::Index>(grid.size()));
    EXPECT_EQ(d.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Nets, OptimizerOutputBoundedForExtremeInputs) {
    NetConfig c = tiny(optimizer_config());
    c.output_gain = 50.0;
    OptimizerNet net(c, 52);
    std::mt19937_64 rng(12);
    SparseGrid grid = SparseGrid::from_keys(patch_keys(), 4, 0.04, 0, Bbox{Vec3::Zero(), Vec3::Ones()});
    grid.features = random_matrix(grid.size(), 4, rng, 1e6);
    GradBuffer g;
    g.values = random_matrix(grid.size(), 4, rng, 1e8);
    const Matrix d = optimizer_forward(grid, g, 0, net);
    EXPECT_TRUE(d.allFinite());
    EXPECT_LE(d.cwiseAbs().maxCoeff(), 1.0);
}

TEST(Nets, OptimizerIsEquivariantToSlotOrder) {
    OptimizerNet net(tiny(optimizer_config()), 53);
    std::mt19937_64 rng(13);
    auto keys = patch_keys();
    const Matrix feats = random_matrix(keys.size(), 4, rng);
    GradBuffer g;
    g.values = random_matrix(keys.size(), 4, rng);
    std::vector<int> perm(keys.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<VoxelKey> pkeys(keys.size());
    Matrix pfeats(feats.rows(), feats.cols());
    GradBuffer pg = GradBuffer::zeros(keys.size(), 4);
    for (std::size_t r = 0; r < perm.size(); ++r) {
        pkeys[r] = keys[perm[r]];
        pfeats.row(r) = feats.row(perm[r]);
        pg.values.row(r) = g.values.row(perm[r]);
    }
    Tape t1, t2;
    const Matrix a = t1.value(net.forward(t1, keys, t1.constant(feats), gradient_input(g), 1, false));
    const Matrix b = t2.value(net.forward(t2, pkeys, t2.constant(pfeats), gradient_input(pg), 1, false));
    for (std::size_t r = 0; r < perm.size(); ++r) EXPECT_LT((b.row(r) - a.row(perm[r])).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Nets, GradientInputNormalizesRows) {
    GradBuffer g = GradBuffer::zeros(2, 3);
    g.values.row(0) << 3.0, 0.0, 4.0;
    const Matrix in = gradient_input(g);
    EXPECT_NEAR(in.row(0).head(3).norm(), 1.0, 1e-8);
    EXPECT_NEAR(in(0, 3), std::log10(5.0 + 1e-8) / 8.0, 1e-12);
    EXPECT_EQ(in.row(1).head(3).norm(), 0.0);
    EXPECT_NEAR(in(1, 3), -1.0, 1e-12);
}

TEST(Nets, OccupancyLossVarMatchesLossesModule) {
    Tape t;
    LevelOccupancy a{0, {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}}, {}};
    Matrix pa(3, 1);
    pa << 0.9, 0.2, 0.6;
    a.occupancy = t.constant(pa);
    LevelOccupancy b{1, {{0, 0, 0}, {5, 5, 5}}, {}};
    Matrix pb(2, 1);
    pb << 0.7, 0.4;
    b.occupancy = t.constant(pb);
    const KeyPyramid gt = key_pyramid({{0, 0, 0}, {2, 0, 0}});
    const double v = t.value(occupancy_loss_var(t, {a, b}, gt))(0, 0);
    const double la = occupancy_loss(a.keys, {0.9, 0.2, 0.6}, 0, gt[0], 0).value;
    const double lb = occupancy_loss(b.keys, {0.7, 0.4}, 1, gt[1], 1).value;
    EXPECT_NEAR(v, 0.5 * (la + lb), 1e-12);
}

TEST(Nets, CheckpointRoundTripAndMismatch) {
    const auto dir = std::filesystem::temp_directory_path() / "splatprior_nets_ckpt";
    std::filesystem::create_directories(dir);
    OptimizerNet a(tiny(optimizer_config()), 61);
    save_net(a, "optimizer", dir / "opt.bin");
    OptimizerNet b(tiny(optimizer_config()), 62);
    load_net(b, "optimizer", dir / "opt.bin");
    const auto pa = a.parameters(), pb = b.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(pa[i]->value == pb[i]->value);
    EXPECT_THROW(load_net(b, "densifier", dir / "opt.bin"), CheckpointMismatch);
    NetConfig other = tiny(optimizer_config());
    other.channels[2] = 9;
    OptimizerNet c(other, 63);
    EXPECT_THROW(load_net(c, "optimizer", dir / "opt.bin"), CheckpointMismatch);
    EXPECT_THROW(load_net(c, "optimizer", dir / "missing.bin"), MissingAsset);
    std::filesystem::remove_all(dir);
}

TEST(Nets, AdamStateRoundTrip) {
    const auto path = std::filesystem::temp_directory_path() / "splatprior_adam.bin";
    Parameter p("p", 2, 3);
    p.grad.setConstant(0.5);
    AdamState s;
    s.lr = 3e-3;
    s.update({&p});
    save_adam(s, path);
    const AdamState r = load_adam(path);
    EXPECT_EQ(r.step, 1);
    EXPECT_EQ(r.lr, 3e-3);
    ASSERT_EQ(r.m.size(), 1u);
    EXPECT_TRUE(r.m[0] == s.m[0]);
    EXPECT_TRUE(r.v[0] == s.v[0]);
    std::filesystem::remove(path);
}

TEST(Nets, DefaultChannelPlan) {
    const NetConfig c = initializer_config();
    EXPECT_EQ(c.channels, (std::array<int, 4>{32, 64, 96, 128}));
    EXPECT_EQ(c.dense_blocks, 2);
    EXPECT_EQ(densifier_config().dense_blocks, 0);
    EXPECT_EQ(densifier_config().time_dim, 16);
    EXPECT_EQ(optimizer_config().input_width, 129);
    EXPECT_NE(initializer_config().hash(), densifier_config().hash());
}
