// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#include <splatprior/errors.hpp>
#include <splatprior/nets.hpp>

#include <absl/container/flat_hash_map.h>
#include <fmt/format.h>

#include <cmath>
#include <cstring>
#include <fstream>

namespace splatprior {

namespace {

using KeyIndex = absl::flat_hash_map<VoxelKey, int>;

KeyIndex index_keys(const std::vector<VoxelKey> &keys) {
    KeyIndex idx;
    idx.reserve(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) idx.emplace(keys[i], static_cast<int>(i));
    return idx;
}

std::vector<int> rows_in(const KeyIndex &idx, const std::vector<VoxelKey> &query) {
    std::vector<int> rows(query.size(), -1);
    for (std::size_t i = 0; i < query.size(); ++i) {
        const auto it = idx.find(query[i]);
        if (it != idx.end()) rows[i] = it->second;
    }
    return rows;
}

bool sorted_contains(const std::vector<VoxelKey> &sorted, const VoxelKey &k) {
    return std::binary_search(sorted.begin(), sorted.end(), k);
}

} // namespace

std::string NetConfig::describe() const {
    return fmt::format(
        "in={} F={} ch={},{},{},{} td={} T={} dense={} budget={} dil={} slope={:.17g} gain={:.17g} prior={:.17g}",
        input_width, feature_dim, channels[0], channels[1], channels[2], channels[3], time_dim, timesteps,
        dense_blocks, dense_budget, coarse_dilation, leaky_slope, output_gain, occupancy_prior);
}

std::uint64_t NetConfig::hash() const {
    const std::string s = describe();
    return fnv1a(s.data(), s.size());
}

void NetConfig::validate() const {
    if (input_width < 1 || feature_dim < 1 || timesteps < 1 || time_dim < 0 || dense_blocks < 0 ||
        coarse_dilation < 0 || dense_budget < 1 || !(occupancy_prior > 0.0 && occupancy_prior < 1.0)) {
        throw ValidationError("invalid network configuration: " + describe());
    }
    for (int c : channels) {
        if (c < 1) throw ValidationError("network channels must be positive");
    }
}

NetConfig initializer_config(int feature_dim) {
    NetConfig c;
    c.input_width = kDescriptorWidth;
    c.feature_dim = feature_dim;
    c.dense_blocks = 2;
    return c;
}

NetConfig densifier_config(int feature_dim, int timesteps) {
    NetConfig c;
    c.input_width = 2 * feature_dim + 1;
    c.feature_dim = feature_dim;
    c.time_dim = 16;
    c.timesteps = timesteps;
    c.coarse_dilation = 1;
    // Proposals start nearly transparent, since their occupancy is their opacity.
    c.occupancy_prior = 0.05;
    return c;
}

NetConfig optimizer_config(int feature_dim, int timesteps) {
    NetConfig c = densifier_config(feature_dim, timesteps);
    c.coarse_dilation = 0;
    c.occupancy_prior = 0.5;
    // A fresh optimizer predicts no update, so an untrained loop keeps G_0.
    c.output_gain = 0.0;
    return c;
}

KeyPyramid key_pyramid(std::vector<VoxelKey> level0) {
    std::sort(level0.begin(), level0.end());
    level0.erase(std::unique(level0.begin(), level0.end()), level0.end());
    KeyPyramid p;
    p.push_back(std::move(level0));
    for (int l = 1; l <= kNetLevels; ++l) p.push_back(parent_keys(p.back()));
    return p;
}

// ---------------------------------------------------------------------------

std::vector<Parameter *> SparseNet::parameters() {
    std::vector<Parameter *> out;
    for (auto &p : params_) out.push_back(&p);
    return out;
}

std::vector<const Parameter *> SparseNet::parameters() const {
    std::vector<const Parameter *> out;
    for (const auto &p : params_) out.push_back(&p);
    return out;
}

std::size_t SparseNet::parameter_count() const {
    std::size_t n = 0;
    for (const auto &p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
}

void SparseNet::zero_grad() {
    for (auto &p : params_) p.zero_grad();
}

SparseNet::Layer SparseNet::add_layer(const std::string &name, int fan_in, int rows, int cols, double gain) {
    Layer l;
    Parameter w(name + ".w", rows, cols);
    init_uniform(w, fan_in, gain, rng_);
    params_.push_back(std::move(w));
    l.w = static_cast<int>(params_.size()) - 1;
    params_.emplace_back(name + ".b", 1, cols);
    l.b = static_cast<int>(params_.size()) - 1;
    return l;
}

Var SparseNet::bind(Tape &t, int index, bool trainable) const {
    Parameter &p = params_[static_cast<std::size_t>(index)];
    return trainable ? t.param(p) : t.constant(p.value);
}

Var SparseNet::apply_linear(Tape &t, Var x, Layer l, bool trainable) const {
    return ad::linear(t, x, bind(t, l.w, trainable), bind(t, l.b, trainable));
}

Var SparseNet::apply_conv(Tape &t, Var x, Layer l, const KernelMap &map, bool trainable) const {
    return ad::sparse_conv(t, x, bind(t, l.w, trainable), bind(t, l.b, trainable), map);
}

Var SparseNet::with_time(Tape &t, Var x, Var temb) const {
    if (!temb.valid()) return x;
    return ad::concat_cols(t, {x, ad::repeat_rows(t, temb, static_cast<std::size_t>(t.value(x).rows()))});
}

Var SparseNet::time_embedding(Tape &t, int timestep, bool trainable) const {
    if (config_.time_dim == 0) return {};
    if (timestep < 0 || timestep >= config_.timesteps) {
        throw ValidationError(fmt::format("timestep {} outside [0, {})", timestep, config_.timesteps));
    }
    Matrix onehot = Matrix::Zero(1, config_.timesteps);
    onehot(0, timestep) = 1.0;
    return apply_linear(t, t.constant(std::move(onehot)), time_, trainable);
}

// ---------------------------------------------------------------------------

GeneratorNet::GeneratorNet(NetConfig config, std::uint64_t seed) : SparseNet(std::move(config), seed) {
    config_.validate();
    const NetConfig &c = config_;
    const double he = std::sqrt(2.0);
    const int td = c.time_dim;
    if (td > 0) time_ = add_layer("time", c.timesteps, c.timesteps, td, 1.0);
    in_ = add_layer("in", c.input_width, c.input_width, c.channels[0], he);
    for (int l = 0; l < kNetLevels; ++l) {
        const int cl = c.level_channels(l), cn = c.level_channels(l + 1);
        enc_[l] = add_layer(fmt::format("enc{}", l), 27 * (cl + td), 27 * (cl + td), cl, he);
        down_[l] = add_layer(fmt::format("down{}", l), cl, 8 * cl, cn, he);
    }
    const int c4 = c.level_channels(kNetLevels);
    for (int b = 0; b < c.dense_blocks; ++b) {
        res_.push_back({add_layer(fmt::format("res{}a", b), 27 * c4, 27 * c4, c4, he),
                        add_layer(fmt::format("res{}b", b), 27 * c4, 27 * c4, c4, 0.5)});
    }
    if (c.dense_blocks == 0) coarse_ = add_layer("coarse", 27 * (c4 + td), 27 * (c4 + td), c4, he);
    for (int l = kNetLevels - 1; l >= 0; --l) {
        const int cl = c.level_channels(l), cp = c.level_channels(l + 1);
        up_[l] = add_layer(fmt::format("up{}", l), cp, 8 * cp, cl, he);
        fuse_[l] = add_layer(fmt::format("fuse{}", l), 27 * (2 * cl + td), 27 * (2 * cl + td), cl, he);
        occ_[l] = add_layer(fmt::format("occ{}", l), cl, cl, 1, 0.1);
    }
    params_[static_cast<std::size_t>(occ_[0].b)].value.setConstant(
        std::log(c.occupancy_prior / (1.0 - c.occupancy_prior)));
    out_ = add_layer("out", c.channels[0], c.channels[0], c.feature_dim, c.output_gain);
}

GeneratorOutput GeneratorNet::generate(Tape &t, const std::vector<VoxelKey> &keys0, Var x0, int timestep,
                                       const Bbox &frame, double edge0, const ForwardOptions &opts, bool final_threshold) const {
    if (keys0.empty()) throw EmptyInput("network input has no voxels");
    if (opts.train && (!opts.gt || opts.gt->size() < kNetLevels + 1)) {
        throw MissingGroundTruth("training-mode allocation needs a ground-truth key pyramid");
    }
    const bool tr = opts.trainable;
    const Var temb = time_embedding(t, timestep, tr);

    std::array<std::vector<VoxelKey>, kNetLevels + 1> enc_keys;
    std::array<Var, kNetLevels> skips;
    enc_keys[0] = keys0;
    Var x = act(t, apply_linear(t, x0, in_, tr));
    for (int l = 0; l < kNetLevels; ++l) {
        skips[l] = act(t, apply_conv(t, with_time(t, x, temb), enc_[l], neighbor_map(enc_keys[l], enc_keys[l]), tr));
        enc_keys[l + 1] = parent_keys(enc_keys[l]);
        x = act(t, apply_conv(t, skips[l], down_[l], down_map(enc_keys[l], enc_keys[l + 1]), tr));
    }

    std::vector<VoxelKey> parents;
    if (config_.dense_blocks > 0) {
        if (!frame.valid()) throw ValidationError("dense bottleneck needs a valid bbox");
        const double coarse_edge = edge0 * (1 << kNetLevels);
        const VoxelKey lo = key_of_point(frame.min, coarse_edge), hi = key_of_point(frame.max, coarse_edge);
        const std::int64_t cells =
            std::int64_t(hi.i - lo.i + 1) * (hi.j - lo.j + 1) * std::int64_t(hi.k - lo.k + 1);
        if (cells > config_.dense_budget) {
            throw BudgetExceeded(fmt::format("dense bottleneck needs {} cells, budget {}", cells, config_.dense_budget));
        }
        for (int k = lo.k; k <= hi.k; ++k)
            for (int j = lo.j; j <= hi.j; ++j)
                for (int i = lo.i; i <= hi.i; ++i) parents.push_back({i, j, k});
        x = ad::gather_rows(t, x, rows_in(index_keys(enc_keys[kNetLevels]), parents));
        const KernelMap map = neighbor_map(parents, parents);
        for (const auto &blk : res_) {
            Var h = act(t, apply_conv(t, x, blk[0], map, tr));
            x = act(t, ad::add(t, x, apply_conv(t, h, blk[1], map, tr)));
        }
    } else {
        parents = config_.coarse_dilation > 0 ? dilate_keys(enc_keys[kNetLevels], config_.coarse_dilation)
                                              : enc_keys[kNetLevels];
        x = ad::gather_rows(t, x, rows_in(index_keys(enc_keys[kNetLevels]), parents));
        x = act(t, apply_conv(t, with_time(t, x, temb), coarse_, neighbor_map(parents, parents), tr));
    }

    GeneratorOutput out;
    Var kept_occ;
    for (int l = kNetLevels - 1; l >= 0; --l) {
        std::vector<VoxelKey> children = child_keys(parents);
        Var u = act(t, apply_conv(t, x, up_[l], up_map(parents, children), tr));
        const KeyIndex enc_index = index_keys(enc_keys[l]);
        const std::vector<int> skip_rows = rows_in(enc_index, children);
        Var skip = ad::gather_rows(t, skips[l], skip_rows);
        Var h = act(t, apply_conv(t, with_time(t, ad::concat_cols(t, {u, skip}), temb), fuse_[l],
                                  neighbor_map(children, children), tr));
        Var occ = ad::sigmoid(t, apply_linear(t, h, occ_[l], tr));
        out.levels.push_back({l, children, occ});
        if (l > 0 || final_threshold) {
            const Matrix &ov = t.value(occ);
            std::vector<int> keep;
            std::vector<VoxelKey> kept_keys;
            for (std::size_t r = 0; r < children.size(); ++r) {
                const bool k = ov(static_cast<Eigen::Index>(r), 0) > 0.5 || skip_rows[r] >= 0 ||
                               (opts.train && sorted_contains((*opts.gt)[l], children[r]));
                if (k) {
                    keep.push_back(static_cast<int>(r));
                    kept_keys.push_back(children[r]);
                }
            }
            parents = std::move(kept_keys);
            x = ad::gather_rows(t, h, keep);
            kept_occ = ad::gather_rows(t, occ, keep);
        } else {
            parents = std::move(children);
            x = h;
            kept_occ = occ;
        }
    }
    out.keys = std::move(parents);
    out.features = apply_linear(t, x, out_, tr);
    out.occupancy = kept_occ;
    return out;
}

GeneratorOutput InitializerNet::forward(Tape &t, const SparseGrid &input, const Bbox &bbox,
                                        const ForwardOptions &opts) const {
    if (input.empty()) throw EmptyInput("initializer input grid is empty");
    if (input.width() != config_.input_width) {
        throw ShapeError(fmt::format("initializer expects {} input channels, got {}", config_.input_width,
                                     input.width()));
    }
    return generate(t, input.keys, t.constant(input.features), 0, bbox, input.edge, opts, true);
}

GeneratorOutput DensifierNet::forward(Tape &t, const std::vector<VoxelKey> &keys, Var features,
                                      const Matrix &grad_input, int timestep, const ForwardOptions &opts) const {
    if (grad_input.rows() != static_cast<Eigen::Index>(keys.size()) ||
        t.value(features).rows() != grad_input.rows()) {
        throw ShapeError("densifier inputs are not aligned with the key list");
    }
    Var x0 = ad::concat_cols(t, {features, t.constant(grad_input)});
    if (t.value(x0).cols() != config_.input_width) throw ShapeError("densifier input width mismatch");
    GeneratorOutput g = generate(t, keys, x0, timestep, Bbox{}, 0.0, opts, false);
    const KeyIndex existing = index_keys(keys);
    std::vector<int> rows;
    std::vector<VoxelKey> fresh;
    for (std::size_t r = 0; r < g.keys.size(); ++r) {
        if (!existing.contains(g.keys[r])) {
            rows.push_back(static_cast<int>(r));
            fresh.push_back(g.keys[r]);
        }
    }
    g.keys = std::move(fresh);
    g.features = ad::gather_rows(t, g.features, rows);
    g.occupancy = ad::gather_rows(t, g.occupancy, rows);
    return g;
}

// ---------------------------------------------------------------------------

OptimizerNet::OptimizerNet(NetConfig config, std::uint64_t seed) : SparseNet(std::move(config), seed) {
    config_.validate();
    const NetConfig &c = config_;
    const double he = std::sqrt(2.0);
    const int td = c.time_dim;
    if (td > 0) time_ = add_layer("time", c.timesteps, c.timesteps, td, 1.0);
    in_ = add_layer("in", c.input_width, c.input_width, c.channels[0], he);
    for (int l = 0; l < kNetLevels; ++l) {
        const int cl = c.level_channels(l), cn = c.level_channels(l + 1);
        enc_[l] = add_layer(fmt::format("enc{}", l), 27 * (cl + td), 27 * (cl + td), cl, he);
        down_[l] = add_layer(fmt::format("down{}", l), cl, 8 * cl, cn, he);
    }
    const int c4 = c.level_channels(kNetLevels);
    mid_ = add_layer("mid", 27 * (c4 + td), 27 * (c4 + td), c4, he);
    for (int l = kNetLevels - 1; l >= 0; --l) {
        const int cl = c.level_channels(l), cp = c.level_channels(l + 1);
        up_[l] = add_layer(fmt::format("up{}", l), cp, 8 * cp, cl, he);
        fuse_[l] = add_layer(fmt::format("fuse{}", l), 27 * (2 * cl + td), 27 * (2 * cl + td), cl, he);
    }
    out_ = add_layer("out", c.channels[0], c.channels[0], c.feature_dim, c.output_gain);
}

Var OptimizerNet::forward(Tape &t, const std::vector<VoxelKey> &keys, Var features, const Matrix &grad_input,
                          int timestep, bool trainable) const {
    if (keys.empty()) throw EmptyInput("optimizer input has no voxels");
    if (grad_input.rows() != static_cast<Eigen::Index>(keys.size()) ||
        t.value(features).rows() != grad_input.rows()) {
        throw ShapeError("optimizer inputs are not aligned with the key list");
    }
    Var x0 = ad::concat_cols(t, {features, t.constant(grad_input)});
    if (t.value(x0).cols() != config_.input_width) throw ShapeError("optimizer input width mismatch");
    const bool tr = trainable;
    const Var temb = time_embedding(t, timestep, tr);
    std::array<std::vector<VoxelKey>, kNetLevels + 1> lk;
    std::array<Var, kNetLevels> skips;
    lk[0] = keys;
    Var x = act(t, apply_linear(t, x0, in_, tr));
    for (int l = 0; l < kNetLevels; ++l) {
        skips[l] = act(t, apply_conv(t, with_time(t, x, temb), enc_[l], neighbor_map(lk[l], lk[l]), tr));
        lk[l + 1] = parent_keys(lk[l]);
        x = act(t, apply_conv(t, skips[l], down_[l], down_map(lk[l], lk[l + 1]), tr));
    }
    x = act(t, apply_conv(t, with_time(t, x, temb), mid_, neighbor_map(lk[kNetLevels], lk[kNetLevels]), tr));
    for (int l = kNetLevels - 1; l >= 0; --l) {
        Var u = act(t, apply_conv(t, x, up_[l], up_map(lk[l + 1], lk[l]), tr));
        x = act(t, apply_conv(t, with_time(t, ad::concat_cols(t, {u, skips[l]}), temb), fuse_[l],
                              neighbor_map(lk[l], lk[l]), tr));
    }
    return ad::tanh(t, apply_linear(t, x, out_, tr));
}

// ---------------------------------------------------------------------------

Matrix gradient_input(const GradBuffer &grad) {
    const Matrix &g = grad.values;
    Matrix out(g.rows(), g.cols() + 1);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const double n = g.row(r).norm();
        out.row(r).head(g.cols()) = g.row(r) / (n + 1e-8);
        out(r, g.cols()) = std::log10(n + 1e-8) / 8.0;
    }
    return out;
}

Var occupancy_loss_var(Tape &t, const std::vector<LevelOccupancy> &levels, const KeyPyramid &gt) {
    if (levels.empty()) throw EmptyInput("no occupancy predictions");
    std::vector<Var> terms;
    for (const auto &lv : levels) {
        if (lv.level < 0 || static_cast<std::size_t>(lv.level) >= gt.size()) {
            throw KeyError(fmt::format("no ground-truth keys at level {}", lv.level));
        }
        std::vector<double> target(lv.keys.size());
        for (std::size_t i = 0; i < lv.keys.size(); ++i) target[i] = sorted_contains(gt[lv.level], lv.keys[i]) ? 1.0 : 0.0;
        terms.push_back(ad::bce_mean(t, lv.occupancy, target));
    }
    return ad::mean(t, ad::concat_rows(t, terms));
}

InitializerResult initializer_forward(const SparseGrid &sfm_grid, const InitializerNet &net, const Bbox &bbox) {
    Tape t;
    ForwardOptions opts;
    opts.trainable = false;
    GeneratorOutput g = net.forward(t, sfm_grid, bbox, opts);
    InitializerResult r;
    r.grid.edge = sfm_grid.edge;
    r.grid.level = 0;
    r.grid.frame = sfm_grid.frame;
    r.grid.keys = g.keys;
    r.grid.features = t.value(g.features);
    const Matrix &occ = t.value(g.occupancy);
    r.grid.occupancy.assign(occ.data(), occ.data() + occ.size());
    r.grid.reindex();
    for (const auto &lv : g.levels) {
        r.level_keys.push_back(lv.keys);
        const Matrix &o = t.value(lv.occupancy);
        r.level_occupancy.emplace_back(o.data(), o.data() + o.size());
    }
    return r;
}

Candidates densifier_forward(const SparseGrid &grid, const GradBuffer &grad, int timestep, const DensifierNet &net) {
    if (grad.values.rows() != static_cast<Eigen::Index>(grid.size()) || grad.values.cols() != grid.width()) {
        throw ShapeError("gradient buffer is not aligned with the grid");
    }
    Tape t;
    ForwardOptions opts;
    opts.trainable = false;
    GeneratorOutput g = net.forward(t, grid.keys, t.constant(grid.features), gradient_input(grad), timestep, opts);
    Candidates c;
    c.keys = std::move(g.keys);
    c.features = t.value(g.features);
    const Matrix &occ = t.value(g.occupancy);
    c.occupancy.assign(occ.data(), occ.data() + occ.size());
    return c;
}

Matrix optimizer_forward(const SparseGrid &grid, const GradBuffer &grad, int timestep, const OptimizerNet &net) {
    if (grad.values.rows() != static_cast<Eigen::Index>(grid.size()) || grad.values.cols() != grid.width()) {
        throw ShapeError("gradient buffer is not aligned with the grid");
    }
    Tape t;
    return t.value(net.forward(t, grid.keys, t.constant(grid.features), gradient_input(grad), timestep, false));
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kNetMagic[8] = {'S', 'P', 'N', 'E', 'T', '0', '1', '\0'};
constexpr char kAdamMagic[8] = {'S', 'P', 'A', 'D', 'M', '0', '1', '\0'};

template <typename T> void put(std::ostream &out, const T &v) { out.write(reinterpret_cast<const char *>(&v), sizeof(T)); }

template <typename T> T get(std::istream &in, const std::filesystem::path &path) {
    T v{};
    in.read(reinterpret_cast<char *>(&v), sizeof(T));
    if (!in) throw ParseError("truncated checkpoint " + path.string());
    return v;
}

void put_string(std::ostream &out, const std::string &s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream &in, const std::filesystem::path &path) {
    const auto n = get<std::uint32_t>(in, path);
    if (n > (1u << 20)) throw ParseError("implausible string length in " + path.string());
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) throw ParseError("truncated checkpoint " + path.string());
    return s;
}

void put_matrix(std::ostream &out, const Matrix &m) {
    put<std::int64_t>(out, m.rows());
    put<std::int64_t>(out, m.cols());
    out.write(reinterpret_cast<const char *>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
}

Matrix get_matrix(std::istream &in, const std::filesystem::path &path) {
    const auto r = get<std::int64_t>(in, path), c = get<std::int64_t>(in, path);
    if (r < 0 || c < 0 || r * c > (std::int64_t(1) << 32)) throw ParseError("bad matrix shape in " + path.string());
    Matrix m(r, c);
    in.read(reinterpret_cast<char *>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!in) throw ParseError("truncated checkpoint " + path.string());
    return m;
}

std::ifstream open_checked(const std::filesystem::path &path, const char (&magic)[8]) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingAsset("cannot open " + path.string());
    char m[8];
    in.read(m, 8);
    if (!in || std::memcmp(m, magic, 8) != 0) throw ParseError("bad magic in " + path.string());
    return in;
}

} // namespace

void save_net(const SparseNet &net, const std::string &kind, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(kNetMagic, 8);
    put_string(out, kind);
    put<std::uint64_t>(out, net.config().hash());
    const auto params = net.parameters();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto *p : params) {
        put_string(out, p->name);
        put_matrix(out, p->value);
    }
    if (!out) throw IoError("failed writing " + path.string());
}

void load_net(SparseNet &net, const std::string &kind, const std::filesystem::path &path) {
    std::ifstream in = open_checked(path, kNetMagic);
    const std::string stored_kind = get_string(in, path);
    if (stored_kind != kind) {
        throw CheckpointMismatch(fmt::format("{} holds a '{}' network, expected '{}'", path.string(), stored_kind, kind));
    }
    const auto hash = get<std::uint64_t>(in, path);
    if (hash != net.config().hash()) {
        throw CheckpointMismatch(fmt::format("{} was written for a different architecture ({:016x} vs {:016x})",
                                             path.string(), hash, net.config().hash()));
    }
    const auto params = net.parameters();
    const auto count = get<std::uint32_t>(in, path);
    if (count != params.size()) throw CheckpointMismatch("parameter count differs in " + path.string());
    std::vector<Matrix> values;
    for (auto *p : params) {
        const std::string name = get_string(in, path);
        Matrix m = get_matrix(in, path);
        if (name != p->name || m.rows() != p->value.rows() || m.cols() != p->value.cols()) {
            throw CheckpointMismatch(fmt::format("parameter '{}' does not match '{}' in {}", name, p->name,
                                                 path.string()));
        }
        if (!m.allFinite()) throw NumericalError("non-finite weights in " + path.string());
        values.push_back(std::move(m));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i]->value = std::move(values[i]);
        params[i]->zero_grad();
    }
}

void save_adam(const AdamState &state, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(kAdamMagic, 8);
    put(out, state.lr);
    put(out, state.beta1);
    put(out, state.beta2);
    put(out, state.eps);
    put(out, state.step);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(state.m.size()));
    for (std::size_t i = 0; i < state.m.size(); ++i) {
        put_matrix(out, state.m[i]);
        put_matrix(out, state.v[i]);
    }
    if (!out) throw IoError("failed writing " + path.string());
}

AdamState load_adam(const std::filesystem::path &path) {
    std::ifstream in = open_checked(path, kAdamMagic);
    AdamState s;
    s.lr = get<double>(in, path);
    s.beta1 = get<double>(in, path);
    s.beta2 = get<double>(in, path);
    s.eps = get<double>(in, path);
    s.step = get<std::int64_t>(in, path);
    const auto n = get<std::uint32_t>(in, path);
    for (std::uint32_t i = 0; i < n; ++i) {
        s.m.push_back(get_matrix(in, path));
        s.v.push_back(get_matrix(in, path));
    }
    return s;
}

} // namespace splatprior
