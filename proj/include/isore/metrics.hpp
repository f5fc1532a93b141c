#pragma once

#include <complex>
#include <limits>

#include "isore/volume.hpp"

namespace isore {

// FWHM of a Gaussian = 2*sqrt(2*ln 2) * sigma
inline constexpr double kFwhmPerSigma = 2.3548200450309493;

// ---------------------------------------------------------------------------
// PSNR: 10*log10(N * max(reference)^2 / sum((r-t)^2))
// The peak is taken over the reference image, not a bit-depth constant.
// ---------------------------------------------------------------------------

template <class T>
double psnr_span(const T* r, const T* t, size_t n) {
    double peak = -std::numeric_limits<double>::infinity();
    double sse = 0;
    for (size_t i = 0; i < n; ++i) {
        peak = std::max(peak, double(r[i]));
        const double d = double(r[i]) - double(t[i]);
        sse += d * d;
    }
    if (peak <= 0) throw NumericError("psnr: reference peak must be > 0");
    if (sse == 0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(double(n) * peak * peak / sse);
}

template <class T>
double psnr(const VolumeT<T>& reference, const VolumeT<T>& test) {
    if (!reference.same_dims(test)) throw ConfigError("psnr: dimension mismatch");
    return psnr_span(reference.data.data(), test.data.data(), reference.size());
}

template <class T>
double psnr(const ImageT<T>& reference, const ImageT<T>& test) {
    if (reference.h != test.h || reference.w != test.w)
        throw ConfigError("psnr: dimension mismatch");
    return psnr_span(reference.data.data(), test.data.data(), reference.data.size());
}

// ---------------------------------------------------------------------------
// Bright-spot detection: 26-neighbourhood maxima above a threshold, with
// greedy non-maximum suppression at min_sep (Euclidean, voxels).
// ---------------------------------------------------------------------------

struct Spot {
    int z = 0, y = 0, x = 0;
    float value = 0;
};

struct SpotSet {
    std::vector<Spot> spots;  // sorted by intensity, descending
    double min_sep = 0;
    size_t count() const { return spots.size(); }
};

template <class T>
SpotSet detect_spots(const VolumeT<T>& v, double threshold, double min_sep) {
    std::vector<Spot> cand;
    for (int z = 0; z < v.nz; ++z)
        for (int y = 0; y < v.ny; ++y)
            for (int x = 0; x < v.nx; ++x) {
                const T c = v.at(z, y, x);
                if (double(c) <= threshold) continue;
                bool is_max = true;
                for (int dz = -1; dz <= 1 && is_max; ++dz)
                    for (int dy = -1; dy <= 1 && is_max; ++dy)
                        for (int dx = -1; dx <= 1 && is_max; ++dx) {
                            if (!dz && !dy && !dx) continue;
                            const int zz = z + dz, yy = y + dy, xx = x + dx;
                            if (zz < 0 || zz >= v.nz || yy < 0 || yy >= v.ny || xx < 0 ||
                                xx >= v.nx)
                                continue;
                            if (v.at(zz, yy, xx) > c) is_max = false;
                        }
                if (is_max) cand.push_back({z, y, x, float(c)});
            }
    std::sort(cand.begin(), cand.end(), [](const Spot& a, const Spot& b) {
        if (a.value != b.value) return a.value > b.value;
        return std::tie(a.z, a.y, a.x) < std::tie(b.z, b.y, b.x);
    });
    SpotSet out;
    out.min_sep = min_sep;
    const double sep2 = min_sep * min_sep;
    for (const Spot& s : cand) {
        bool keep = true;
        for (const Spot& k : out.spots) {
            const double dz = s.z - k.z, dy = s.y - k.y, dx = s.x - k.x;
            if (dz * dz + dy * dy + dx * dx < sep2) {
                keep = false;
                break;
            }
        }
        if (keep) out.spots.push_back(s);
    }
    return out;
}

// Evaluation "from the same locations": wrap an externally supplied list.
inline SpotSet spots_from_positions(const std::vector<std::array<int, 3>>& positions) {
    SpotSet s;
    for (const auto& p : positions) s.spots.push_back({p[0], p[1], p[2], 0.f});
    return s;
}

// ---------------------------------------------------------------------------
// 2D / 1D Gaussian least-squares fits (damped Gauss-Newton with moment init)
// ---------------------------------------------------------------------------

struct GaussianFit2D {
    double amplitude = 0;
    double cy = 0, cx = 0;        // sub-pixel centre, patch coordinates
    double sigma_y = 0, sigma_x = 0;
    double offset = 0;
    double residual_rms = 0;
    int iterations = 0;
    double fwhm_y() const { return kFwhmPerSigma * sigma_y; }
    double fwhm_x() const { return kFwhmPerSigma * sigma_x; }
};

struct GaussianFit1D {
    double amplitude = 0, center = 0, sigma = 0, offset = 0;
    double residual_rms = 0;
    double fwhm() const { return kFwhmPerSigma * sigma; }
};

namespace fitdetail {

// Solve (A + lambda*diag(A)) x = b for a small SPD system, in place.
inline bool solve_damped(std::vector<double> a, std::vector<double> b, int n, double lambda,
                         std::vector<double>& x) {
    for (int i = 0; i < n; ++i) a[i * n + i] *= (1.0 + lambda);
    // Cholesky
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = a[i * n + j];
            for (int k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
            if (i == j) {
                if (s <= 0) return false;
                a[i * n + i] = std::sqrt(s);
            } else {
                a[i * n + j] = s / a[j * n + j];
            }
        }
    }
    for (int i = 0; i < n; ++i) {
        double s = b[i];
        for (int k = 0; k < i; ++k) s -= a[i * n + k] * b[k];
        b[i] = s / a[i * n + i];
    }
    x.assign(n, 0.0);
    for (int i = n - 1; i >= 0; --i) {
        double s = b[i];
        for (int k = i + 1; k < n; ++k) s -= a[k * n + i] * x[k];
        x[i] = s / a[i * n + i];
    }
    return true;
}

}  // namespace fitdetail

// Fit A*exp(-((y-cy)^2/2sy^2 + (x-cx)^2/2sx^2)) + b to a patch holding one
// dominant peak. Throws NumericError on flat input or non-convergence.
template <class T>
GaussianFit2D fit_gaussian_2d(const ImageT<T>& patch, int max_iterations = 200,
                              double tol = 1e-8) {
    const int h = patch.h, w = patch.w;
    if (h < 7 || w < 7) throw ConfigError("fit_gaussian_2d: patch side must be >= 7");

    // moment initialization; the border estimates the background
    std::vector<double> border;
    for (int x = 0; x < w; ++x) {
        border.push_back(patch.at(0, x));
        border.push_back(patch.at(h - 1, x));
    }
    for (int y = 1; y < h - 1; ++y) {
        border.push_back(patch.at(y, 0));
        border.push_back(patch.at(y, w - 1));
    }
    std::nth_element(border.begin(), border.begin() + border.size() / 2, border.end());
    double b0 = border[border.size() / 2];
    double peak = -std::numeric_limits<double>::infinity();
    for (const T& p : patch.data) peak = std::max(peak, double(p));
    const double a0 = peak - b0;
    if (!(a0 > 0) || !std::isfinite(a0)) throw NumericError("fit_gaussian_2d: flat patch");

    double m0 = 0, my = 0, mx = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double v = std::max(0.0, double(patch.at(y, x)) - b0);
            m0 += v;
            my += v * y;
            mx += v * x;
        }
    if (m0 <= 0) throw NumericError("fit_gaussian_2d: flat patch");
    double cy0 = my / m0, cx0 = mx / m0, vy = 0, vx = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double v = std::max(0.0, double(patch.at(y, x)) - b0);
            vy += v * (y - cy0) * (y - cy0);
            vx += v * (x - cx0) * (x - cx0);
        }
    double p[6] = {a0, cy0, cx0, std::clamp(std::sqrt(vy / m0), 0.7, h / 2.0),
                   std::clamp(std::sqrt(vx / m0), 0.7, w / 2.0), b0};

    const int n = h * w;
    std::vector<double> resid(n), jac(size_t(n) * 6);
    auto evaluate = [&](const double* q, std::vector<double>* J) {
        double sse = 0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int i = y * w + x;
                const double uy = (y - q[1]) / q[3], ux = (x - q[2]) / q[4];
                const double e = std::exp(-0.5 * (uy * uy + ux * ux));
                const double m = q[0] * e + q[5];
                resid[i] = double(patch.at(y, x)) - m;
                sse += resid[i] * resid[i];
                if (J) {
                    double* row = &(*J)[size_t(i) * 6];
                    row[0] = e;
                    row[1] = q[0] * e * uy / q[3];
                    row[2] = q[0] * e * ux / q[4];
                    row[3] = q[0] * e * uy * uy / q[3];
                    row[4] = q[0] * e * ux * ux / q[4];
                    row[5] = 1.0;
                }
            }
        return sse;
    };

    double sse = evaluate(p, &jac);
    double lambda = 1e-3;
    bool converged = false;
    int it = 0;
    std::vector<double> jtj(36), jtr(6), step;
    for (; it < max_iterations && !converged; ++it) {
        std::fill(jtj.begin(), jtj.end(), 0.0);
        std::fill(jtr.begin(), jtr.end(), 0.0);
        for (int i = 0; i < n; ++i) {
            const double* row = &jac[size_t(i) * 6];
            for (int a = 0; a < 6; ++a) {
                jtr[a] += row[a] * resid[i];
                for (int b = a; b < 6; ++b) jtj[a * 6 + b] += row[a] * row[b];
            }
        }
        for (int a = 0; a < 6; ++a)
            for (int b = 0; b < a; ++b) jtj[a * 6 + b] = jtj[b * 6 + a];

        bool accepted = false;
        for (int tries = 0; tries < 12 && !accepted; ++tries) {
            if (!fitdetail::solve_damped(jtj, jtr, 6, lambda, step)) {
                lambda *= 10;
                continue;
            }
            double q[6];
            for (int a = 0; a < 6; ++a) q[a] = p[a] + step[a];
            q[3] = std::max(q[3], 0.3);
            q[4] = std::max(q[4], 0.3);
            const double new_sse = evaluate(q, nullptr);
            if (new_sse < sse) {
                double rel = 0;
                for (int a = 0; a < 6; ++a)
                    rel = std::max(rel, std::abs(step[a]) / (1.0 + std::abs(p[a])));
                std::copy(q, q + 6, p);
                sse = new_sse;
                lambda = std::max(lambda / 3, 1e-12);
                accepted = true;
                if (rel < tol) converged = true;
            } else {
                lambda *= 4;
            }
        }
        if (!accepted) {
            // stalled: accept as converged only if the damping is already huge
            converged = lambda > 1e8;
            if (!converged) break;
        }
        if (!converged) evaluate(p, &jac);
    }
    if (!converged) throw NumericError("fit_gaussian_2d: no convergence");
    if (p[1] < -1 || p[1] > h || p[2] < -1 || p[2] > w)
        throw NumericError("fit_gaussian_2d: centre left the patch");
    if (p[3] > std::max(h, w) || p[4] > std::max(h, w))
        throw NumericError("fit_gaussian_2d: sigma exceeds the patch size");

    GaussianFit2D out;
    out.amplitude = p[0];
    out.cy = p[1];
    out.cx = p[2];
    out.sigma_y = p[3];
    out.sigma_x = p[4];
    out.offset = p[5];
    out.residual_rms = std::sqrt(sse / n);
    out.iterations = it;
    return out;
}

// 1D variant used for line profiles. `xs` are physical positions (µm).
inline GaussianFit1D fit_gaussian_1d(const std::vector<double>& xs,
                                     const std::vector<double>& ys, int max_iterations = 200,
                                     double tol = 1e-8) {
    const int n = int(xs.size());
    if (n < 5 || ys.size() != xs.size()) throw ConfigError("fit_gaussian_1d: need >= 5 samples");
    double b0 = std::min(ys.front(), ys.back());
    double peak = *std::max_element(ys.begin(), ys.end());
    const double a0 = peak - b0;
    if (!(a0 > 0) || !std::isfinite(a0)) throw NumericError("fit_gaussian_1d: flat profile");
    double m0 = 0, mc = 0;
    for (int i = 0; i < n; ++i) {
        const double v = std::max(0.0, ys[i] - b0);
        m0 += v;
        mc += v * xs[i];
    }
    if (m0 <= 0) throw NumericError("fit_gaussian_1d: flat profile");
    const double c0 = mc / m0;
    double vv = 0;
    for (int i = 0; i < n; ++i) vv += std::max(0.0, ys[i] - b0) * (xs[i] - c0) * (xs[i] - c0);
    const double span = xs.back() - xs.front();
    double p[4] = {a0, c0, std::clamp(std::sqrt(vv / m0), span / (4.0 * n), span), b0};

    std::vector<double> resid(n), jac(size_t(n) * 4);
    auto evaluate = [&](const double* q, std::vector<double>* J) {
        double sse = 0;
        for (int i = 0; i < n; ++i) {
            const double u = (xs[i] - q[1]) / q[2];
            const double e = std::exp(-0.5 * u * u);
            resid[i] = ys[i] - (q[0] * e + q[3]);
            sse += resid[i] * resid[i];
            if (J) {
                double* row = &(*J)[size_t(i) * 4];
                row[0] = e;
                row[1] = q[0] * e * u / q[2];
                row[2] = q[0] * e * u * u / q[2];
                row[3] = 1.0;
            }
        }
        return sse;
    };
    double sse = evaluate(p, &jac), lambda = 1e-3;
    bool converged = false;
    std::vector<double> jtj(16), jtr(4), step;
    for (int it = 0; it < max_iterations && !converged; ++it) {
        std::fill(jtj.begin(), jtj.end(), 0.0);
        std::fill(jtr.begin(), jtr.end(), 0.0);
        for (int i = 0; i < n; ++i) {
            const double* row = &jac[size_t(i) * 4];
            for (int a = 0; a < 4; ++a) {
                jtr[a] += row[a] * resid[i];
                for (int b = a; b < 4; ++b) jtj[a * 4 + b] += row[a] * row[b];
            }
        }
        for (int a = 0; a < 4; ++a)
            for (int b = 0; b < a; ++b) jtj[a * 4 + b] = jtj[b * 4 + a];
        bool accepted = false;
        for (int tries = 0; tries < 12 && !accepted; ++tries) {
            if (!fitdetail::solve_damped(jtj, jtr, 4, lambda, step)) {
                lambda *= 10;
                continue;
            }
            double q[4];
            for (int a = 0; a < 4; ++a) q[a] = p[a] + step[a];
            q[2] = std::max(q[2], 1e-6);
            const double new_sse = evaluate(q, nullptr);
            if (new_sse < sse) {
                double rel = 0;
                for (int a = 0; a < 4; ++a)
                    rel = std::max(rel, std::abs(step[a]) / (1.0 + std::abs(p[a])));
                std::copy(q, q + 4, p);
                sse = new_sse;
                lambda = std::max(lambda / 3, 1e-12);
                accepted = true;
                if (rel < tol) converged = true;
            } else {
                lambda *= 4;
            }
        }
        if (!accepted) {
            converged = lambda > 1e8;
            if (!converged) break;
        }
        if (!converged) evaluate(p, &jac);
    }
    if (!converged) throw NumericError("fit_gaussian_1d: no convergence");
    GaussianFit1D out;
    out.amplitude = p[0];
    out.center = p[1];
    out.sigma = p[2];
    out.offset = p[3];
    out.residual_rms = std::sqrt(sse / n);
    return out;
}

// ---------------------------------------------------------------------------
// Per-spot FWHM report in the lateral (xy) or axial (xz) plane
// ---------------------------------------------------------------------------

enum class FwhmPlane { lateral, axial };

struct SpotFwhm {
    Spot spot;
    bool ok = false;
    GaussianFit2D fit;
    double fwhm_row_um = 0;  // lateral: y, axial: z
    double fwhm_col_um = 0;  // x in both planes
    double fwhm_um = 0;      // scalar summary (lateral: mean of axes; axial: z)
};

struct FwhmReport {
    FwhmPlane plane = FwhmPlane::lateral;
    std::vector<SpotFwhm> per_spot;
    int n_ok = 0;
    double mean_um = 0, median_um = 0, stddev_um = 0;
    double mean_row_um = 0, mean_col_um = 0;
};

template <class T>
std::optional<ImageT<double>> spot_patch(const VolumeT<T>& v, const Spot& s, FwhmPlane plane,
                                         int half_rows, int half_cols) {
    ImageT<double> patch(2 * half_rows + 1, 2 * half_cols + 1);
    if (plane == FwhmPlane::lateral) {
        if (s.y - half_rows < 0 || s.y + half_rows >= v.ny || s.x - half_cols < 0 ||
            s.x + half_cols >= v.nx)
            return std::nullopt;
        for (int r = -half_rows; r <= half_rows; ++r)
            for (int c = -half_cols; c <= half_cols; ++c)
                patch.at(r + half_rows, c + half_cols) = v.at(s.z, s.y + r, s.x + c);
    } else {
        if (s.z - half_rows < 0 || s.z + half_rows >= v.nz || s.x - half_cols < 0 ||
            s.x + half_cols >= v.nx)
            return std::nullopt;
        for (int r = -half_rows; r <= half_rows; ++r)
            for (int c = -half_cols; c <= half_cols; ++c)
                patch.at(r + half_rows, c + half_cols) = v.at(s.z + r, s.y, s.x + c);
    }
    return patch;
}

// Patch side defaults to 4x the expected FWHM (in voxels), capped at 33.
inline int fwhm_patch_half(double expected_fwhm_voxels) {
    const int side = std::min(33, int(std::ceil(4.0 * expected_fwhm_voxels)) | 1);
    return std::max(side, 9) / 2;
}

template <class T>
FwhmReport fwhm_report(const VolumeT<T>& v, const SpotSet& spots, FwhmPlane plane,
                       double expected_fwhm_voxels = 5.0) {
    if (spots.spots.empty()) throw ConfigError("fwhm_report: no spots");
    const int half_c = fwhm_patch_half(expected_fwhm_voxels);
    const double anis = plane == FwhmPlane::axial ? v.voxel.z / v.voxel.x : 1.0;
    const int half_r =
        plane == FwhmPlane::axial ? fwhm_patch_half(expected_fwhm_voxels * std::max(1.0, anis))
                                  : half_c;
    FwhmReport rep;
    rep.plane = plane;
    std::vector<double> values;
    for (const Spot& s : spots.spots) {
        SpotFwhm sf;
        sf.spot = s;
        auto patch = spot_patch(v, s, plane, half_r, half_c);
        if (patch) {
            try {
                sf.fit = fit_gaussian_2d(*patch);
                const double row_voxel = plane == FwhmPlane::lateral ? v.voxel.y : v.voxel.z;
                sf.fwhm_row_um = sf.fit.fwhm_y() * row_voxel;
                sf.fwhm_col_um = sf.fit.fwhm_x() * v.voxel.x;
                sf.fwhm_um = plane == FwhmPlane::lateral
                                 ? 0.5 * (sf.fwhm_row_um + sf.fwhm_col_um)
                                 : sf.fwhm_row_um;
                sf.ok = true;
            } catch (const NumericError&) {
                sf.ok = false;
            }
        }
        if (sf.ok) {
            values.push_back(sf.fwhm_um);
            rep.mean_row_um += sf.fwhm_row_um;
            rep.mean_col_um += sf.fwhm_col_um;
            ++rep.n_ok;
        }
        rep.per_spot.push_back(sf);
    }
    if (rep.n_ok == 0) throw NumericError("fwhm_report: all fits failed");
    rep.mean_row_um /= rep.n_ok;
    rep.mean_col_um /= rep.n_ok;
    for (double u : values) rep.mean_um += u;
    rep.mean_um /= rep.n_ok;
    std::sort(values.begin(), values.end());
    rep.median_um = values[values.size() / 2];
    double var = 0;
    for (double u : values) var += (u - rep.mean_um) * (u - rep.mean_um);
    rep.stddev_um = rep.n_ok > 1 ? std::sqrt(var / (rep.n_ok - 1)) : 0.0;
    return rep;
}

// ---------------------------------------------------------------------------
// Line intensity profile with width averaging + 1D Gaussian fit
// ---------------------------------------------------------------------------

struct LineProfile {
    std::vector<double> position_um;
    std::vector<double> intensity;
    GaussianFit1D fit;
    double fwhm_um = 0;
};

template <class T>
double sample_trilinear(const VolumeT<T>& v, double z, double y, double x) {
    z = std::clamp(z, 0.0, double(v.nz - 1));
    y = std::clamp(y, 0.0, double(v.ny - 1));
    x = std::clamp(x, 0.0, double(v.nx - 1));
    const int z0 = std::min(int(z), std::max(v.nz - 2, 0));
    const int y0 = std::min(int(y), std::max(v.ny - 2, 0));
    const int x0 = std::min(int(x), std::max(v.nx - 2, 0));
    const double fz = z - z0, fy = y - y0, fx = x - x0;
    const int z1 = std::min(z0 + 1, v.nz - 1), y1 = std::min(y0 + 1, v.ny - 1),
              x1 = std::min(x0 + 1, v.nx - 1);
    const double c00 = v.at(z0, y0, x0) * (1 - fx) + v.at(z0, y0, x1) * fx;
    const double c01 = v.at(z0, y1, x0) * (1 - fx) + v.at(z0, y1, x1) * fx;
    const double c10 = v.at(z1, y0, x0) * (1 - fx) + v.at(z1, y0, x1) * fx;
    const double c11 = v.at(z1, y1, x0) * (1 - fx) + v.at(z1, y1, x1) * fx;
    return (c00 * (1 - fy) + c01 * fy) * (1 - fz) + (c10 * (1 - fy) + c11 * fy) * fz;
}

template <class T>
LineProfile line_profile(const VolumeT<T>& v, std::array<double, 3> p0, std::array<double, 3> p1,
                         int width = 1) {
    if (width < 1) throw ConfigError("line_profile: width must be >= 1");
    auto inside = [&](const std::array<double, 3>& p) {
        return p[0] >= 0 && p[0] <= v.nz - 1 && p[1] >= 0 && p[1] <= v.ny - 1 && p[2] >= 0 &&
               p[2] <= v.nx - 1;
    };
    if (!inside(p0) || !inside(p1)) throw ConfigError("line_profile: endpoints outside volume");

    const double d[3] = {p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]};
    const double len_vox = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    if (len_vox < 1) throw ConfigError("line_profile: degenerate segment");
    const int steps = int(std::ceil(len_vox)) + 1;
    const double u[3] = {d[0] / len_vox, d[1] / len_vox, d[2] / len_vox};

    // width is averaged along `w1`, the unit vector most orthogonal to the line
    int least = 0;
    for (int a = 1; a < 3; ++a)
        if (std::abs(u[a]) < std::abs(u[least])) least = a;
    double e[3] = {0, 0, 0};
    e[least] = 1;
    double w1[3] = {u[1] * e[2] - u[2] * e[1], u[2] * e[0] - u[0] * e[2],
                    u[0] * e[1] - u[1] * e[0]};
    const double w1n = std::sqrt(w1[0] * w1[0] + w1[1] * w1[1] + w1[2] * w1[2]);
    for (double& c : w1) c /= w1n;

    const double phys[3] = {d[0] * v.voxel.z, d[1] * v.voxel.y, d[2] * v.voxel.x};
    const double len_um = std::sqrt(phys[0] * phys[0] + phys[1] * phys[1] + phys[2] * phys[2]);

    LineProfile lp;
    for (int i = 0; i < steps; ++i) {
        const double t = double(i) / (steps - 1);
        double acc = 0;
        for (int j = 0; j < width; ++j) {
            const double off = j - (width - 1) / 2.0;
            acc += sample_trilinear(v, p0[0] + t * d[0] + off * w1[0],
                                    p0[1] + t * d[1] + off * w1[1],
                                    p0[2] + t * d[2] + off * w1[2]);
        }
        lp.position_um.push_back(t * len_um);
        lp.intensity.push_back(acc / width);
    }
    lp.fit = fit_gaussian_1d(lp.position_um, lp.intensity);
    lp.fwhm_um = lp.fit.fwhm();
    return lp;
}

// ---------------------------------------------------------------------------
// Maximum intensity projection over a slab of slices
// ---------------------------------------------------------------------------

template <class T>
ImageT<T> mip(const VolumeT<T>& v, Plane plane, int start, int thickness) {
    const int extent = plane == Plane::xy ? v.nz : plane == Plane::xz ? v.ny : v.nx;
    if (thickness < 1) throw ConfigError("mip: empty slab");
    if (start < 0 || start + thickness > extent) throw ConfigError("mip: slab out of bounds");
    auto slices = slice_stack(v, plane);
    ImageT<T> out = slices[start];
    for (int i = start + 1; i < start + thickness; ++i)
        for (size_t j = 0; j < out.data.size(); ++j)
            out.data[j] = std::max(out.data[j], slices[i].data[j]);
    return out;
}

// ---------------------------------------------------------------------------
// Fourier spectrum analysis: centred log-magnitude plus folded per-axis band
// profiles, and a mean-absolute band-profile distance between two images.
// ---------------------------------------------------------------------------

struct BandProfiles {
    std::vector<double> row_bands;  // |row frequency| 0 .. h/2
    std::vector<double> col_bands;  // |col frequency| 0 .. w/2
};

struct Spectrum {
    int h = 0, w = 0;
    std::vector<double> log_mag;  // centred (DC at h/2, w/2)
    BandProfiles bands;
};

namespace fourierdetail {

// separable DFT by explicit twiddle sums; image sizes here stay small
inline void dft_axis(std::vector<std::complex<double>>& m, int rows, int cols, bool along_rows) {
    const int n = along_rows ? rows : cols;
    std::vector<std::complex<double>> tw(size_t(n) * n);
    for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j) {
            const double a = -2.0 * M_PI * double(k) * double(j) / double(n);
            tw[size_t(k) * n + j] = {std::cos(a), std::sin(a)};
        }
    std::vector<std::complex<double>> line(n), res(n);
    const int other = along_rows ? cols : rows;
    for (int o = 0; o < other; ++o) {
        for (int i = 0; i < n; ++i) line[i] = along_rows ? m[size_t(i) * cols + o] : m[size_t(o) * cols + i];
        for (int k = 0; k < n; ++k) {
            std::complex<double> s = 0;
            const std::complex<double>* t = &tw[size_t(k) * n];
            for (int j = 0; j < n; ++j) s += t[j] * line[j];
            res[k] = s;
        }
        for (int i = 0; i < n; ++i)
            (along_rows ? m[size_t(i) * cols + o] : m[size_t(o) * cols + i]) = res[i];
    }
}

}  // namespace fourierdetail

template <class T>
Spectrum fourier_profile(const ImageT<T>& img) {
    const int h = img.h, w = img.w;
    std::vector<std::complex<double>> f(size_t(h) * w);
    for (size_t i = 0; i < f.size(); ++i) f[i] = double(img.data[i]);
    fourierdetail::dft_axis(f, h, w, true);
    fourierdetail::dft_axis(f, h, w, false);

    Spectrum sp;
    sp.h = h;
    sp.w = w;
    sp.log_mag.resize(f.size());
    sp.bands.row_bands.assign(size_t(h / 2) + 1, 0.0);
    sp.bands.col_bands.assign(size_t(w / 2) + 1, 0.0);
    std::vector<double> row_n(h / 2 + 1, 0), col_n(w / 2 + 1, 0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double lm = std::log10(std::abs(f[size_t(r) * w + c]) + 1e-20);
            sp.log_mag[size_t((r + h / 2) % h) * w + (c + w / 2) % w] = lm;
            const int fr = std::min(r, h - r), fc = std::min(c, w - c);
            sp.bands.row_bands[fr] += lm;
            row_n[fr] += 1;
            sp.bands.col_bands[fc] += lm;
            col_n[fc] += 1;
        }
    for (size_t i = 0; i < sp.bands.row_bands.size(); ++i) sp.bands.row_bands[i] /= row_n[i];
    for (size_t i = 0; i < sp.bands.col_bands.size(); ++i) sp.bands.col_bands[i] /= col_n[i];
    return sp;
}

inline BandProfiles mean_band_profiles(const std::vector<BandProfiles>& profiles) {
    if (profiles.empty()) throw ConfigError("mean_band_profiles: empty set");
    BandProfiles m = profiles[0];
    for (size_t i = 1; i < profiles.size(); ++i) {
        if (profiles[i].row_bands.size() != m.row_bands.size() ||
            profiles[i].col_bands.size() != m.col_bands.size())
            throw ConfigError("mean_band_profiles: size mismatch");
        for (size_t j = 0; j < m.row_bands.size(); ++j) m.row_bands[j] += profiles[i].row_bands[j];
        for (size_t j = 0; j < m.col_bands.size(); ++j) m.col_bands[j] += profiles[i].col_bands[j];
    }
    for (double& v : m.row_bands) v /= double(profiles.size());
    for (double& v : m.col_bands) v /= double(profiles.size());
    return m;
}

inline double spectral_distance(const BandProfiles& a, const BandProfiles& b) {
    if (a.row_bands.size() != b.row_bands.size() || a.col_bands.size() != b.col_bands.size())
        throw ConfigError("spectral_distance: band count mismatch");
    double s = 0;
    for (size_t i = 0; i < a.row_bands.size(); ++i) s += std::abs(a.row_bands[i] - b.row_bands[i]);
    for (size_t i = 0; i < a.col_bands.size(); ++i) s += std::abs(a.col_bands[i] - b.col_bands[i]);
    return s / double(a.row_bands.size() + a.col_bands.size());
}

// ---------------------------------------------------------------------------
// Richardson-Lucy deconvolution, reflective boundaries, guarded division
// ---------------------------------------------------------------------------

namespace rldetail {

template <class T>
VolumeT<T> convolve_reflect(const VolumeT<T>& v, const VolumeT<T>& kernel, bool flipped) {
    const int cz = kernel.nz / 2, cy = kernel.ny / 2, cx = kernel.nx / 2;
    struct Tap {
        int dz, dy, dx;
        double w;
    };
    std::vector<Tap> taps;
    taps.reserve(kernel.size());
    for (int z = 0; z < kernel.nz; ++z)
        for (int y = 0; y < kernel.ny; ++y)
            for (int x = 0; x < kernel.nx; ++x) {
                const double w = kernel.at(z, y, x);
                if (w == 0) continue;
                if (flipped)
                    taps.push_back({cz - z, cy - y, cx - x, w});
                else
                    taps.push_back({z - cz, y - cy, x - cx, w});
            }
    VolumeT<T> out(v.nz, v.ny, v.nx, v.voxel);
    out.domain = v.domain;
#pragma omp parallel for schedule(static)
    for (int z = 0; z < v.nz; ++z) {
        std::vector<double> row(v.nx);
        for (int y = 0; y < v.ny; ++y) {
            std::fill(row.begin(), row.end(), 0.0);
            for (const Tap& t : taps) {
                const int zz = reflect_index(z + t.dz, v.nz);
                const int yy = reflect_index(y + t.dy, v.ny);
                const T* src = &v.at(zz, yy, 0);
                const int lo = std::max(0, -t.dx), hi = std::min(v.nx, v.nx - t.dx);
                for (int x = lo; x < hi; ++x) row[x] += t.w * double(src[x + t.dx]);
                for (int x = 0; x < lo; ++x) row[x] += t.w * double(src[reflect_index(x + t.dx, v.nx)]);
                for (int x = hi; x < v.nx; ++x) row[x] += t.w * double(src[reflect_index(x + t.dx, v.nx)]);
            }
            for (int x = 0; x < v.nx; ++x) out.at(z, y, x) = T(row[x]);
        }
    }
    return out;
}

}  // namespace rldetail

// u <- u * (h_flipped (x) (d / (u (x) h))), starting from u = d.
template <class T>
VolumeT<T> rl_deconvolve(const VolumeT<T>& v, const VolumeT<T>& psf, int iterations = 10) {
    if (iterations < 1) throw ConfigError("rl_deconvolve: iterations must be >= 1");
    for (const T& x : v.data)
        if (x < 0) throw NumericError("rl_deconvolve: negative input values");
    double psum = 0;
    for (const T& x : psf.data) psum += double(x);
    if (psum <= 0) throw NumericError("rl_deconvolve: zero PSF");
    VolumeT<T> kernel = psf;
    if (std::abs(psum - 1.0) > 1e-12)
        for (T& x : kernel.data) x = T(double(x) / psum);

    const double vmax = double(v.min_max().second);
    if (vmax <= 0) return v;  // all-zero data is a fixed point
    const double eps = 1e-12 * vmax;

    VolumeT<T> u = v;
    VolumeT<T> ratio(v.nz, v.ny, v.nx, v.voxel);
    for (int it = 0; it < iterations; ++it) {
        VolumeT<T> blurred = rldetail::convolve_reflect(u, kernel, false);
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < (long long)v.size(); ++i)
            ratio.data[i] = T(double(v.data[i]) / std::max(double(blurred.data[i]), eps));
        VolumeT<T> corr = rldetail::convolve_reflect(ratio, kernel, true);
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < (long long)v.size(); ++i)
            u.data[i] = T(double(u.data[i]) * double(corr.data[i]));
    }
    return u;
}

// Poisson data-fidelity sum(d*log(blur(u)) - blur(u)); RL ascends this.
template <class T>
double rl_poisson_likelihood(const VolumeT<T>& data, const VolumeT<T>& estimate,
                             const VolumeT<T>& psf) {
    VolumeT<T> blurred = rldetail::convolve_reflect(estimate, psf, false);
    double s = 0;
    for (size_t i = 0; i < data.size(); ++i) {
        const double c = std::max(double(blurred.data[i]), 1e-300);
        s += double(data.data[i]) * std::log(c) - c;
    }
    return s;
}

}  // namespace isore
