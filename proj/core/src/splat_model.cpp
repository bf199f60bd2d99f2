// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#include <splatprior/errors.hpp>
#include <splatprior/splat_model.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace splatprior {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double softplus(double x) { return x > 20.0 ? x : std::log1p(std::exp(x)); }

double softplus_inverse(double y) { return y > 20.0 ? y : std::log(std::expm1(y)); }

Vec4 raw_quaternion(const double *r) {
    Vec4 q(r[0], r[1], r[2], r[3]);
    if (q.squaredNorm() == 0.0) {
        q[0] += 1e-8;
    }
    return q;
}

struct Activations {
    Matrix x, z1, h1, z2, h2, raw;
};

Matrix leaky(const Matrix &z, double slope) {
    return z.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
}

Activations forward(const SparseGrid &grid, const DecoderParams &p) {
    const auto &cfg = p.config;
    if (grid.width() != cfg.feature_dim) {
        throw ShapeError("grid feature width " + std::to_string(grid.width()) + " does not match decoder input " +
                         std::to_string(cfg.feature_dim));
    }
    Activations a;
    a.x.resize(static_cast<Eigen::Index>(grid.size()), cfg.input_width());
    a.x.leftCols(cfg.feature_dim) = grid.features;
    a.x.rightCols(kPositionalWidth) = positional_encoding(grid);
    a.z1 = (a.x * p.w0.value).rowwise() + p.b0.value.row(0);
    a.h1 = leaky(a.z1, cfg.leaky_slope);
    a.z2 = (a.h1 * p.w1.value).rowwise() + p.b1.value.row(0);
    a.h2 = leaky(a.z2, cfg.leaky_slope);
    a.raw = (a.h2 * p.w2.value).rowwise() + p.b2.value.row(0);
    return a;
}

constexpr char kDecoderMagic[8] = {'S', 'P', 'D', 'E', 'C', '0', '1', '\0'};

} // namespace

Vec3 gaussian_normal(const Gaussian2D &g) { return quat_to_matrix(g.rotation).col(2); }

DecoderParams DecoderParams::create(const DecoderConfig &config, std::uint64_t seed) {
    DecoderParams p;
    p.config = config;
    const int in = config.input_width(), h = config.hidden, out = config.output_width();
    p.w0 = Parameter("decoder.w0", in, h);
    p.b0 = Parameter("decoder.b0", 1, h);
    p.w1 = Parameter("decoder.w1", h, h);
    p.b1 = Parameter("decoder.b1", 1, h);
    p.w2 = Parameter("decoder.w2", h, out);
    p.b2 = Parameter("decoder.b2", 1, out);
    std::mt19937_64 rng(seed);
    init_uniform(p.w0, in, std::sqrt(2.0), rng);
    init_uniform(p.w1, h, std::sqrt(2.0), rng);
    init_uniform(p.w2, h, 0.1, rng);
    const double scale_bias = softplus_inverse(0.5 * config.voxel_size);
    for (int g = 0; g < config.gaussians_per_voxel; ++g) {
        const int o = g * kRawPerGaussian;
        p.b2.value(0, o + 3) = scale_bias;
        p.b2.value(0, o + 4) = scale_bias;
        p.b2.value(0, o + 5) = 1.0;
    }
    return p;
}

std::vector<Parameter *> DecoderParams::parameters() { return {&w0, &b0, &w1, &b1, &w2, &b2}; }

std::vector<const Parameter *> DecoderParams::parameters() const { return {&w0, &b0, &w1, &b1, &w2, &b2}; }

void DecoderParams::validate() const {
    const int in = config.input_width(), h = config.hidden, out = config.output_width();
    auto check = [](const Parameter &p, Eigen::Index r, Eigen::Index c) {
        if (p.value.rows() != r || p.value.cols() != c) {
            throw ShapeError("decoder parameter " + p.name + " has the wrong shape");
        }
        if (!p.value.allFinite()) {
            throw NumericalError("decoder parameter " + p.name + " is not finite");
        }
    };
    check(w0, in, h);
    check(b0, 1, h);
    check(w1, h, h);
    check(b1, 1, h);
    check(w2, h, out);
    check(b2, 1, out);
}

Matrix positional_encoding(const SparseGrid &grid) {
    Matrix pe(static_cast<Eigen::Index>(grid.size()), kPositionalWidth);
    const Vec3 lo = grid.frame.min;
    const Vec3 ext = grid.frame.extent().cwiseMax(Vec3::Constant(1e-9));
    for (std::size_t s = 0; s < grid.size(); ++s) {
        const Vec3 n = (2.0 * (grid.center(s) - lo).cwiseQuotient(ext)).array() - 1.0;
        pe(s, 0) = grid.level;
        for (int a = 0; a < 3; ++a) {
            pe(s, 1 + a) = n[a];
            pe(s, 4 + a) = std::sin(std::numbers::pi * n[a]);
            pe(s, 7 + a) = std::cos(std::numbers::pi * n[a]);
        }
    }
    return pe;
}

Gaussian2D activate_raw(const double *r, const Vec3 &voxel_center, double occupancy, const DecoderConfig &cfg) {
    Gaussian2D g;
    const double R = cfg.offset_radius();
    for (int a = 0; a < 3; ++a) {
        g.center[a] = voxel_center[a] + R * (2.0 * sigmoid(r[a]) - 1.0);
    }
    for (int a = 0; a < 2; ++a) {
        g.scales[a] = std::clamp(softplus(r[3 + a]), cfg.min_scale(), cfg.max_scale());
    }
    g.rotation = raw_quaternion(r + 5).normalized();
    g.opacity = occupancy;
    for (int a = 0; a < 3; ++a) {
        g.color[a] = sigmoid(r[10 + a]);
    }
    return g;
}

DecodedSplats decode(const SparseGrid &grid, const DecoderParams &params) {
    if (grid.empty()) {
        throw EmptyInput("cannot decode an empty grid");
    }
    const Activations a = forward(grid, params);
    const int vg = params.config.gaussians_per_voxel;
    DecodedSplats out;
    out.gaussians.resize(grid.size() * vg);
    out.slot.resize(grid.size() * vg);
    for (std::size_t s = 0; s < grid.size(); ++s) {
        const Vec3 vc = grid.center(s);
        for (int g = 0; g < vg; ++g) {
            out.gaussians[s * vg + g] =
                activate_raw(a.raw.row(s).data() + g * kRawPerGaussian, vc, grid.occupancy[s], params.config);
            out.slot[s * vg + g] = static_cast<int>(s);
        }
    }
    return out;
}

DecoderGrads decode_backward(const SparseGrid &grid, const DecoderParams &params, const GaussianGrads &grads) {
    const auto &cfg = params.config;
    const int vg = cfg.gaussians_per_voxel;
    if (grads.size() != grid.size() * vg) {
        throw ShapeError("Gaussian gradient count does not match the decoded grid");
    }
    const Activations a = forward(grid, params);
    const double R = cfg.offset_radius();
    Matrix draw = Matrix::Zero(a.raw.rows(), a.raw.cols());
    DecoderGrads out;
    out.occupancy.assign(grid.size(), 0.0);
    for (std::size_t s = 0; s < grid.size(); ++s) {
        for (int g = 0; g < vg; ++g) {
            const GaussianGrad &gg = grads[s * vg + g];
            const double *r = a.raw.row(s).data() + g * kRawPerGaussian;
            double *d = draw.row(s).data() + g * kRawPerGaussian;
            for (int k = 0; k < 3; ++k) {
                const double sg = sigmoid(r[k]);
                d[k] = gg.center[k] * 2.0 * R * sg * (1.0 - sg);
            }
            for (int k = 0; k < 2; ++k) {
                const double x = r[3 + k];
                const double sp = softplus(x);
                const bool inside = sp > cfg.min_scale() && sp < cfg.max_scale();
                d[3 + k] = inside ? gg.scales[k] * (x > 20.0 ? 1.0 : sigmoid(x)) : 0.0;
            }
            const Vec4 q = raw_quaternion(r + 5);
            const double qn = q.norm();
            const Vec4 qh = q / qn;
            const Vec4 dq = (gg.rotation - qh * qh.dot(gg.rotation)) / qn;
            for (int k = 0; k < 4; ++k) d[5 + k] = dq[k];
            d[9] = 0.0;
            for (int k = 0; k < 3; ++k) {
                const double sg = sigmoid(r[10 + k]);
                d[10 + k] = gg.color[k] * sg * (1.0 - sg);
            }
            out.occupancy[s] += gg.opacity;
        }
    }
    const double slope = cfg.leaky_slope;
    auto leaky_grad = [slope](const Matrix &z, const Matrix &up) {
        return up.binaryExpr(z, [slope](double u, double v) { return v > 0.0 ? u : slope * u; }).eval();
    };
    out.params.resize(6);
    out.params[5] = draw.colwise().sum();
    out.params[4] = a.h2.transpose() * draw;
    const Matrix dz2 = leaky_grad(a.z2, draw * params.w2.value.transpose());
    out.params[3] = dz2.colwise().sum();
    out.params[2] = a.h1.transpose() * dz2;
    const Matrix dz1 = leaky_grad(a.z1, dz2 * params.w1.value.transpose());
    out.params[1] = dz1.colwise().sum();
    out.params[0] = a.x.transpose() * dz1;
    out.features.values = (dz1 * params.w0.value.transpose()).leftCols(cfg.feature_dim);
    return out;
}

void save_decoder(const DecoderParams &params, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    auto put = [&](const auto &v) { out.write(reinterpret_cast<const char *>(&v), sizeof(v)); };
    out.write(kDecoderMagic, sizeof(kDecoderMagic));
    const auto &c = params.config;
    put(static_cast<std::int32_t>(c.feature_dim));
    put(static_cast<std::int32_t>(c.hidden));
    put(static_cast<std::int32_t>(c.gaussians_per_voxel));
    put(c.voxel_size);
    put(c.leaky_slope);
    for (const Parameter *p : params.parameters()) {
        put(static_cast<std::int64_t>(p->value.rows()));
        put(static_cast<std::int64_t>(p->value.cols()));
        out.write(reinterpret_cast<const char *>(p->value.data()),
                  static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
    if (!out) {
        throw IoError("failed writing " + path.string());
    }
}

DecoderParams load_decoder(const std::filesystem::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw MissingAsset("cannot open " + path.string());
    }
    auto get = [&](auto &v) {
        in.read(reinterpret_cast<char *>(&v), sizeof(v));
        if (!in) throw ParseError("truncated decoder file " + path.string());
    };
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kDecoderMagic, sizeof(magic)) != 0) {
        throw ParseError("not a decoder file: " + path.string());
    }
    DecoderConfig c;
    std::int32_t fd, hid, vg;
    get(fd);
    get(hid);
    get(vg);
    get(c.voxel_size);
    get(c.leaky_slope);
    c.feature_dim = fd;
    c.hidden = hid;
    c.gaussians_per_voxel = vg;
    DecoderParams p = DecoderParams::create(c, 0);
    for (Parameter *q : p.parameters()) {
        std::int64_t rows, cols;
        get(rows);
        get(cols);
        if (rows != q->value.rows() || cols != q->value.cols()) {
            throw ParseError("decoder layer shape mismatch in " + path.string());
        }
        in.read(reinterpret_cast<char *>(q->value.data()), static_cast<std::streamsize>(q->value.size() * sizeof(double)));
        if (!in) {
            throw ParseError("truncated decoder file " + path.string());
        }
    }
    return p;
}

} // namespace splatprior
