// Copyright Contributors to the splatprior project
// SPDX-License-Identifier: Apache-2.0
//
#include <splatprior/errors.hpp>
#include <splatprior/losses.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>

namespace splatprior {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> gaussian_taps() {
    std::array<double, kWindow> w{};
    double sum = 0;
    for (int k = 0; k < kWindow; ++k) {
        const double x = k - kWindow / 2;
        w[k] = std::exp(-x * x / (2 * kSigma * kSigma));
        sum += w[k];
    }
    for (auto &v : w) v /= sum;
    return w;
}

// Separable same-size convolution of one H x W plane with zero padding. The
// kernel is symmetric, so this is also its own adjoint.
std::vector<double> blur(const std::vector<double> &in, int H, int W) {
    static const auto taps = gaussian_taps();
    constexpr int r = kWindow / 2;
    std::vector<double> tmp(in.size(), 0.0), out(in.size(), 0.0);
    for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
            double s = 0;
            for (int k = -r; k <= r; ++k) {
                const int jj = j + k;
                if (jj >= 0 && jj < W) s += taps[k + r] * in[static_cast<std::size_t>(i) * W + jj];
            }
            tmp[static_cast<std::size_t>(i) * W + j] = s;
        }
    }
    for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
            double s = 0;
            for (int k = -r; k <= r; ++k) {
                const int ii = i + k;
                if (ii >= 0 && ii < H) s += taps[k + r] * tmp[static_cast<std::size_t>(ii) * W + j];
            }
            out[static_cast<std::size_t>(i) * W + j] = s;
        }
    }
    return out;
}

std::vector<double> plane(const Image &img, int c) {
    std::vector<double> p(img.pixels());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = img.data[i * img.channels + c];
    return p;
}

ImageLoss ssim_impl(const Image &a, const Image &b, bool want_grad) {
    if (!a.same_shape(b)) {
        throw ShapeError("SSIM inputs differ in shape");
    }
    ImageLoss out;
    if (a.empty()) {
        out.value = 1.0;
        return out;
    }
    const int H = a.height, W = a.width, C = a.channels;
    const std::size_t n = a.pixels();
    if (want_grad) out.grad = Image(H, W, C);
    double total = 0;
    for (int c = 0; c < C; ++c) {
        const auto x = plane(a, c), y = plane(b, c);
        std::vector<double> xx(n), yy(n), xy(n);
        for (std::size_t i = 0; i < n; ++i) {
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = blur(x, H, W), my = blur(y, H, W);
        const auto exx = blur(xx, H, W), eyy = blur(yy, H, W), exy = blur(xy, H, W);
        std::vector<double> g_mx(n), g_exx(n), g_exy(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double sxx = exx[i] - mx[i] * mx[i], syy = eyy[i] - my[i] * my[i], sxy = exy[i] - mx[i] * my[i];
            const double A1 = 2 * mx[i] * my[i] + kC1, A2 = 2 * sxy + kC2;
            const double B1 = mx[i] * mx[i] + my[i] * my[i] + kC1, B2 = sxx + syy + kC2;
            const double S = (A1 * A2) / (B1 * B2);
            total += S;
            if (want_grad) {
                g_mx[i] = S * (2 * my[i] / A1 - 2 * my[i] / A2 - 2 * mx[i] / B1 + 2 * mx[i] / B2);
                g_exx[i] = -S / B2;
                g_exy[i] = 2 * S / A2;
            }
        }
        if (want_grad) {
            const auto bmx = blur(g_mx, H, W), bexx = blur(g_exx, H, W), bexy = blur(g_exy, H, W);
            const double norm = 1.0 / (static_cast<double>(n) * C);
            for (std::size_t i = 0; i < n; ++i) {
                out.grad.data[i * C + c] = norm * (bmx[i] + 2 * x[i] * bexx[i] + y[i] * bexy[i]);
            }
        }
    }
    out.value = total / (static_cast<double>(n) * C);
    return out;
}

} // namespace

double ssim(const Image &a, const Image &b) { return ssim_impl(a, b, false).value; }

ImageLoss ssim_with_grad(const Image &a, const Image &b) { return ssim_impl(a, b, true); }

ImageLoss rendering_loss(const Image &rendered, const Image &target) {
    if (!rendered.same_shape(target)) {
        throw ShapeError("rendered and target images differ in shape");
    }
    ImageLoss s = ssim_with_grad(rendered, target);
    ImageLoss out;
    out.grad = Image(rendered.height, rendered.width, rendered.channels);
    const double n = static_cast<double>(std::max<std::size_t>(1, rendered.data.size()));
    double l1 = 0;
    for (std::size_t i = 0; i < rendered.data.size(); ++i) {
        const double d = rendered.data[i] - target.data[i];
        l1 += std::abs(d);
        const double sign = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
        out.grad.data[i] = 0.8 * sign / n - 0.2 * (s.grad.empty() ? 0.0 : s.grad.data[i]);
    }
    out.value = 0.8 * l1 / n + 0.2 * (1.0 - s.value);
    return out;
}

DepthLoss depth_loss(const Image &rendered, const Image &gt, const Image *mask) {
    if (rendered.pixels() != gt.pixels() || (mask && mask->pixels() != gt.pixels())) {
        throw ShapeError("depth maps differ in shape");
    }
    DepthLoss out;
    out.grad = Image(rendered.height, rendered.width, 1);
    std::vector<std::size_t> valid;
    for (std::size_t i = 0; i < gt.pixels(); ++i) {
        if (gt.data[i] > 0.0 && (!mask || mask->data[i] > 0.5)) valid.push_back(i);
    }
    out.valid = valid.size();
    if (valid.empty()) {
        out.empty_mask = true;
        return out;
    }
    const double inv = 1.0 / static_cast<double>(valid.size());
    for (std::size_t i : valid) {
        const double d = rendered.data[i] - gt.data[i];
        out.value += std::abs(d) * inv;
        out.grad.data[i] = (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) * inv;
    }
    return out;
}

NormalLoss normal_loss(const std::vector<Gaussian2D> &gaussians, const TriangleBvh &mesh) {
    if (mesh.mesh().faces.empty()) {
        throw MissingGroundTruth("normal loss needs a non-empty mesh");
    }
    NormalLoss out;
    out.rotation_grad.assign(gaussians.size(), Vec4::Zero());
    out.opacity_grad.assign(gaussians.size(), 0.0);
    double wsum = 0;
    for (const auto &g : gaussians) wsum += g.opacity;
    if (wsum <= 0.0) {
        return out;
    }
    std::vector<double> err(gaussians.size());
    for (std::size_t k = 0; k < gaussians.size(); ++k) {
        const auto &g = gaussians[k];
        const ClosestPoint cp = mesh.closest_point(g.center);
        const Vec3 nm = mesh.mesh().face_normal(static_cast<std::size_t>(cp.face));
        const Vec3 ng = gaussian_normal(g);
        err[k] = 1.0 - ng.dot(nm);
        out.value += g.opacity * err[k] / wsum;
        Mat3 dR = Mat3::Zero();
        dR.col(2) = -g.opacity * nm / wsum;
        out.rotation_grad[k] = quat_matrix_backward(g.rotation, dR);
    }
    for (std::size_t k = 0; k < gaussians.size(); ++k) out.opacity_grad[k] = (err[k] - out.value) / wsum;
    return out;
}

double ray_distortion(std::span<const Fragment> frags) {
    double w_before = 0, wz_before = 0, total = 0;
    for (const auto &f : frags) {
        const double w = f.alpha * f.T;
        total += 2.0 * w * (f.z * w_before - wz_before);
        w_before += w;
        wz_before += w * f.z;
    }
    return total;
}

DistortionLoss distortion_loss(const RenderOutput &output, double alpha_threshold) {
    DistortionLoss out;
    out.weight_grad.assign(output.fragments.size(), 0.0);
    out.depth_grad.assign(output.fragments.size(), 0.0);
    const std::size_t pixels = output.alpha.pixels();
    std::vector<std::size_t> rays;
    for (std::size_t p = 0; p < pixels; ++p) {
        if (output.alpha.data[p] > alpha_threshold) rays.push_back(p);
    }
    out.rays = rays.size();
    if (rays.empty()) {
        return out;
    }
    const double inv = 1.0 / static_cast<double>(rays.size());
    for (std::size_t p : rays) {
        const std::size_t b = output.offsets[p], e = output.offsets[p + 1];
        out.value += ray_distortion(output.pixel_fragments(p)) * inv;
        double w_total = 0, wz_total = 0;
        for (std::size_t f = b; f < e; ++f) {
            const double w = output.fragments[f].alpha * output.fragments[f].T;
            w_total += w;
            wz_total += w * output.fragments[f].z;
        }
        double w_before = 0, wz_before = 0;
        for (std::size_t f = b; f < e; ++f) {
            const auto &fr = output.fragments[f];
            const double w = fr.alpha * fr.T;
            const double w_after = w_total - w_before - w, wz_after = wz_total - wz_before - w * fr.z;
            out.weight_grad[f] = 2.0 * inv * (fr.z * w_before - wz_before + wz_after - fr.z * w_after);
            out.depth_grad[f] = 2.0 * inv * w * (w_before - w_after);
            w_before += w;
            wz_before += w * fr.z;
        }
    }
    return out;
}

OccupancyLoss occupancy_loss(const std::vector<VoxelKey> &candidates, const std::vector<double> &predicted, int level,
                             const std::vector<VoxelKey> &gt_keys, int gt_level) {
    if (level != gt_level) {
        throw KeyError("occupancy targets are at level " + std::to_string(gt_level) + ", predictions at level " +
                       std::to_string(level));
    }
    if (candidates.size() != predicted.size()) {
        throw ShapeError("one prediction per candidate key is required");
    }
    OccupancyLoss out;
    out.grad.assign(predicted.size(), 0.0);
    if (candidates.empty()) {
        return out;
    }
    const double inv = 1.0 / static_cast<double>(candidates.size());
    constexpr double lo = 1e-6, hi = 1.0 - 1e-6;
    for (std::size_t n = 0; n < candidates.size(); ++n) {
        const bool target = std::binary_search(gt_keys.begin(), gt_keys.end(), candidates[n]);
        out.positives += target;
        const double raw = predicted[n];
        const double p = std::clamp(raw, lo, hi);
        const bool inside = raw > lo && raw < hi;
        if (target) {
            out.value -= std::log(p) * inv;
            out.grad[n] = inside ? -inv / p : 0.0;
        } else {
            out.value -= std::log(1.0 - p) * inv;
            out.grad[n] = inside ? inv / (1.0 - p) : 0.0;
        }
    }
    return out;
}

double assemble(const LossReport &r, const LossWeights &w) {
    return w.color * r.color + w.depth * r.depth + w.occupancy * r.occupancy + w.normal * r.normal +
           w.distortion * r.distortion;
}

double assemble_stage1(const LossReport &r) { return assemble(r, LossWeights::stage1()); }

double assemble_stage2(const LossReport &r) { return assemble(r, LossWeights::stage2()); }

std::string LossReport::to_json_line() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["timestep"] = timestep;
    j["voxels"] = voxels;
    j["gaussians"] = gaussians;
    j["L_c"] = color;
    j["L_d"] = depth;
    j["L_n"] = normal;
    j["L_dist"] = distortion;
    j["L_occ"] = occupancy;
    j["total"] = total;
    j["wall_time"] = wall_time;
    return j.dump();
}

LossReport LossReport::from_json_line(const std::string &line) {
    LossReport r;
    try {
        const auto j = nlohmann::json::parse(line);
        r.step = j.at("step").get<long>();
        r.timestep = j.at("timestep").get<int>();
        r.voxels = j.at("voxels").get<std::size_t>();
        r.gaussians = j.at("gaussians").get<std::size_t>();
        r.color = j.at("L_c").get<double>();
        r.depth = j.at("L_d").get<double>();
        r.normal = j.at("L_n").get<double>();
        r.distortion = j.at("L_dist").get<double>();
        r.occupancy = j.at("L_occ").get<double>();
        r.total = j.at("total").get<double>();
        r.wall_time = j.at("wall_time").get<double>();
    } catch (const nlohmann::json::exception &e) {
        throw ParseError(std::string("loss record: ") + e.what());
    }
    return r;
}

} // namespace splatprior
