#pragma once

#include <algorithm>
#include <cmath>

#include "isore/volume.hpp"

namespace isore {

struct NormalizationRecord {
    double low_clip = 0, high_clip = 0;  // raw intensities mapped to -1 / +1
    double low_pct = 0, high_pct = 100;
};

// Linear-interpolated empirical percentile over all voxels.
template <class T>
double percentile(std::vector<T> values, double pct) {
    if (values.empty()) throw Error("percentile of empty data");
    if (pct < 0 || pct > 100) throw ConfigError("percentile out of [0,100]");
    const size_t n = values.size();
    const double q = pct / 100.0 * double(n - 1);
    const size_t lo = size_t(std::floor(q));
    std::nth_element(values.begin(), values.begin() + lo, values.end());
    const double vlo = values[lo];
    if (lo + 1 >= n) return vlo;
    const double vhi = *std::min_element(values.begin() + lo + 1, values.end());
    return vlo + (q - double(lo)) * (vhi - vlo);
}

// Per-lateral-slice 2D median over a Chebyshev window, reflective edges.
// Camera noise is per-frame, so the filter never mixes z-planes.
template <class T>
VolumeT<T> median_filter(const VolumeT<T>& v, int radius) {
    if (radius < 1) throw ConfigError("median radius must be >= 1");
    if (radius >= std::min(v.ny, v.nx))
        throw ConfigError("median radius must be smaller than the lateral dimensions");
    VolumeT<T> out(v.nz, v.ny, v.nx, v.voxel);
    out.domain = v.domain;
    const int side = 2 * radius + 1;
    std::vector<T> window(size_t(side) * side);
#pragma omp parallel for schedule(static) firstprivate(window)
    for (int z = 0; z < v.nz; ++z) {
        for (int y = 0; y < v.ny; ++y)
            for (int x = 0; x < v.nx; ++x) {
                size_t k = 0;
                for (int dy = -radius; dy <= radius; ++dy) {
                    const int yy = reflect_index(y + dy, v.ny);
                    for (int dx = -radius; dx <= radius; ++dx)
                        window[k++] = v.at(z, yy, reflect_index(x + dx, v.nx));
                }
                auto mid = window.begin() + window.size() / 2;
                std::nth_element(window.begin(), mid, window.end());
                out.at(z, y, x) = *mid;
            }
    }
    return out;
}

// Clip at the given percentiles of the whole volume, then map affinely onto [-1,1].
template <class T>
std::pair<VolumeT<T>, NormalizationRecord> normalize_percentile(const VolumeT<T>& v,
                                                                double low_pct = 0.03,
                                                                double high_pct = 99.97) {
    if (v.domain != IntensityDomain::raw) throw ConfigError("input is already normalized");
    if (!(low_pct < high_pct)) throw ConfigError("low_pct must be < high_pct");
    NormalizationRecord rec;
    rec.low_pct = low_pct;
    rec.high_pct = high_pct;
    rec.low_clip = percentile(v.data, low_pct);
    rec.high_clip = percentile(v.data, high_pct);
    if (!(rec.low_clip < rec.high_clip))
        throw NumericError("degenerate intensity range: percentiles coincide");

    VolumeT<T> out(v.nz, v.ny, v.nx, v.voxel);
    out.domain = IntensityDomain::normalized;
    const double range = rec.high_clip - rec.low_clip;
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < (long long)v.size(); ++i) {
        const double c = std::clamp(double(v.data[i]), rec.low_clip, rec.high_clip);
        out.data[i] = T((c - rec.low_clip) / range * 2.0 - 1.0);
    }
    return {std::move(out), rec};
}

template <class T>
VolumeT<T> denormalize(const VolumeT<T>& v, const NormalizationRecord& rec) {
    if (v.domain != IntensityDomain::normalized)
        throw ConfigError("denormalize expects a normalized volume");
    if (!(rec.low_clip < rec.high_clip)) throw ConfigError("invalid normalization record");
    VolumeT<T> out(v.nz, v.ny, v.nx, v.voxel);
    out.domain = IntensityDomain::raw;
    const double half = (rec.high_clip - rec.low_clip) / 2.0;
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < (long long)v.size(); ++i)
        out.data[i] = T(rec.low_clip + (double(v.data[i]) + 1.0) * half);
    return out;
}

namespace detail {

// One separable linear-interpolation pass along the given axis (0=z,1=y,2=x).
// Voxel-centre convention: output centre i maps to input coordinate
// (i + 0.5) * ratio - 0.5 with ratio = target / source spacing.
template <class T>
VolumeT<T> resample_axis(const VolumeT<T>& v, int axis, int n_out, double ratio) {
    int dims[3] = {v.nz, v.ny, v.nx};
    const int n_in = dims[axis];
    dims[axis] = n_out;
    VolumeT<T> out(dims[0], dims[1], dims[2], v.voxel);
    out.domain = v.domain;
    std::vector<int> i0(n_out), i1(n_out);
    std::vector<double> fr(n_out);
    for (int i = 0; i < n_out; ++i) {
        double s = (i + 0.5) * ratio - 0.5;
        s = std::clamp(s, 0.0, double(n_in - 1));
        i0[i] = int(std::floor(s));
        i1[i] = std::min(i0[i] + 1, n_in - 1);
        fr[i] = s - i0[i];
    }
#pragma omp parallel for collapse(2) schedule(static)
    for (int z = 0; z < out.nz; ++z)
        for (int y = 0; y < out.ny; ++y)
            for (int x = 0; x < out.nx; ++x) {
                int a0[3] = {z, y, x}, a1[3] = {z, y, x};
                const int i = a0[axis];
                a0[axis] = i0[i];
                a1[axis] = i1[i];
                const double lo = v.at(a0[0], a0[1], a0[2]);
                const double hi = v.at(a1[0], a1[1], a1[2]);
                out.at(z, y, x) = T(lo + fr[i] * (hi - lo));
            }
    return out;
}

}  // namespace detail

// Resample onto an isotropic grid of spacing `target` (µm), same physical extent,
// separable linear interpolation. Output dims are round(extent/target), min 1.
template <class T>
VolumeT<T> resample_isotropic(const VolumeT<T>& v, double target) {
    if (target <= 0) throw ConfigError("target voxel size must be > 0");
    const double src[3] = {v.voxel.z, v.voxel.y, v.voxel.x};
    const int n_in[3] = {v.nz, v.ny, v.nx};
    int n_out[3];
    for (int a = 0; a < 3; ++a) {
        const double extent = n_in[a] * src[a];
        if (target > extent)
            throw ConfigError("target voxel size exceeds the volume extent on an axis");
        n_out[a] = std::max(1, int(std::llround(extent / target)));
    }
    VolumeT<T> out = v;
    for (int a = 0; a < 3; ++a) {
        if (n_out[a] == n_in[a] && src[a] == target) continue;
        out = detail::resample_axis(out, a, n_out[a], target / src[a]);
    }
    out.voxel = {target, target, target};
    return out;
}

template <class T>
T background_fill(const VolumeT<T>& v) {
    return v.domain == IntensityDomain::normalized ? T(-1) : T(0);
}

// Affine shear y' = y + factor*z with linear interpolation; the canvas grows so
// nothing is clipped, and vacated voxels take the domain background value.
template <class T>
VolumeT<T> shear_yz(const VolumeT<T>& v, double factor) {
    if (!std::isfinite(factor)) throw ConfigError("shear factor must be finite");
    const double span = factor * double(v.nz - 1);
    const int grow = int(std::ceil(std::abs(span)));
    const double offset = span < 0 ? -span : 0.0;
    const T fill = background_fill(v);
    VolumeT<T> out(v.nz, v.ny + grow, v.nx, v.voxel, fill);
    out.domain = v.domain;
#pragma omp parallel for schedule(static)
    for (int z = 0; z < v.nz; ++z) {
        const double shift = factor * z + offset;
        for (int y = 0; y < out.ny; ++y) {
            const double sy = y - shift;
            if (sy < -(1.0 - 1e-12) || sy > v.ny - 1e-12) continue;
            const int y0 = int(std::floor(sy));
            const double f = sy - y0;
            for (int x = 0; x < v.nx; ++x) {
                const double lo = (y0 >= 0) ? v.at(z, y0, x) : fill;
                const double hi = (y0 + 1 <= v.ny - 1) ? v.at(z, y0 + 1, x) : fill;
                out.at(z, y, x) = T(lo + f * (hi - lo));
            }
        }
    }
    return out;
}

// Rotate every lateral slice by `angle` (radians, CCW) about the slice centre.
// Canvas is preserved; out-of-frame samples take the background value.
template <class T>
VolumeT<T> rotate_z(const VolumeT<T>& v, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    const double cy = (v.ny - 1) / 2.0, cx = (v.nx - 1) / 2.0;
    const T fill = background_fill(v);
    VolumeT<T> out(v.nz, v.ny, v.nx, v.voxel, fill);
    out.domain = v.domain;
#pragma omp parallel for schedule(static)
    for (int z = 0; z < v.nz; ++z)
        for (int y = 0; y < v.ny; ++y)
            for (int x = 0; x < v.nx; ++x) {
                // inverse mapping
                const double dy = y - cy, dx = x - cx;
                const double sy = c * dy + s * dx + cy;
                const double sx = -s * dy + c * dx + cx;
                if (sy < 0 || sy > v.ny - 1 || sx < 0 || sx > v.nx - 1) continue;
                const int y0 = std::min(int(sy), v.ny - 2 < 0 ? 0 : v.ny - 2);
                const int x0 = std::min(int(sx), v.nx - 2 < 0 ? 0 : v.nx - 2);
                const double fy = sy - y0, fx = sx - x0;
                const double v00 = v.at(z, y0, x0), v01 = v.at(z, y0, std::min(x0 + 1, v.nx - 1));
                const double v10 = v.at(z, std::min(y0 + 1, v.ny - 1), x0);
                const double v11 = v.at(z, std::min(y0 + 1, v.ny - 1), std::min(x0 + 1, v.nx - 1));
                out.at(z, y, x) =
                    T((1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11));
            }
    return out;
}

}  // namespace isore
