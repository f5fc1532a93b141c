#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <vector>

#include "isore/common.hpp"

namespace isore {

enum class IntensityDomain { raw, normalized };

struct VoxelSize {
    double z = 1.0, y = 1.0, x = 1.0;  // micrometres
    bool operator==(const VoxelSize&) const = default;
};

// 2D section of a volume; rows/cols meaning depends on the slicing plane.
template <class T>
struct ImageT {
    int h = 0, w = 0;
    std::vector<T> data;

    ImageT() = default;
    ImageT(int h_, int w_, T fill = T(0)) : h(h_), w(w_), data(size_t(h_) * w_, fill) {
        if (h_ < 1 || w_ < 1) throw Error("image dimensions must be >= 1");
    }
    T& at(int r, int c) { return data[size_t(r) * w + c]; }
    const T& at(int r, int c) const { return data[size_t(r) * w + c]; }
};

using Image = ImageT<float>;

// Dense 3D scalar grid, z-major storage, with physical voxel size in micrometres.
template <class T>
struct VolumeT {
    int nz = 0, ny = 0, nx = 0;
    VoxelSize voxel;
    IntensityDomain domain = IntensityDomain::raw;
    std::vector<T> data;

    VolumeT() = default;
    VolumeT(int nz_, int ny_, int nx_, VoxelSize vs = {}, T fill = T(0))
        : nz(nz_), ny(ny_), nx(nx_), voxel(vs), data(size_t(nz_) * ny_ * nx_, fill) {
        if (nz_ < 1 || ny_ < 1 || nx_ < 1) throw Error("volume dimensions must be >= 1");
        if (vs.z <= 0 || vs.y <= 0 || vs.x <= 0) throw Error("voxel size must be > 0");
    }

    size_t size() const { return data.size(); }
    size_t index(int z, int y, int x) const { return (size_t(z) * ny + y) * nx + x; }
    T& at(int z, int y, int x) { return data[index(z, y, x)]; }
    const T& at(int z, int y, int x) const { return data[index(z, y, x)]; }

    bool same_dims(const VolumeT& o) const { return nz == o.nz && ny == o.ny && nx == o.nx; }

    std::pair<T, T> min_max() const {
        auto [lo, hi] = std::minmax_element(data.begin(), data.end());
        return {*lo, *hi};
    }
};

using Volume = VolumeT<float>;

enum class Plane { xy, xz, yz };

// reflect-101 index mirroring (no edge duplication)
inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * (n - 1) - i;
    }
    return i;
}

inline const char* plane_name(Plane p) {
    switch (p) {
        case Plane::xy: return "xy";
        case Plane::xz: return "xz";
        default: return "yz";
    }
}

// All 2D sections orthogonal to the chosen plane's normal, in index order.
// xy: one image per z (rows=y, cols=x); xz: per y (rows=z, cols=x); yz: per x (rows=z, cols=y).
template <class T>
std::vector<ImageT<T>> slice_stack(const VolumeT<T>& v, Plane plane) {
    std::vector<ImageT<T>> out;
    switch (plane) {
        case Plane::xy:
            out.reserve(v.nz);
            for (int z = 0; z < v.nz; ++z) {
                ImageT<T> img(v.ny, v.nx);
                std::copy_n(&v.data[v.index(z, 0, 0)], size_t(v.ny) * v.nx, img.data.begin());
                out.push_back(std::move(img));
            }
            break;
        case Plane::xz:
            out.reserve(v.ny);
            for (int y = 0; y < v.ny; ++y) {
                ImageT<T> img(v.nz, v.nx);
                for (int z = 0; z < v.nz; ++z)
                    std::copy_n(&v.data[v.index(z, y, 0)], v.nx, &img.at(z, 0));
                out.push_back(std::move(img));
            }
            break;
        case Plane::yz:
            out.reserve(v.nx);
            for (int x = 0; x < v.nx; ++x) {
                ImageT<T> img(v.nz, v.ny);
                for (int z = 0; z < v.nz; ++z)
                    for (int y = 0; y < v.ny; ++y) img.at(z, y) = v.at(z, y, x);
                out.push_back(std::move(img));
            }
            break;
    }
    return out;
}

// Exact inverse of slice_stack for the same plane.
template <class T>
VolumeT<T> restack(const std::vector<ImageT<T>>& slices, Plane plane, VoxelSize vs = {},
                   IntensityDomain domain = IntensityDomain::raw) {
    if (slices.empty()) throw Error("restack: no slices");
    const int h = slices[0].h, w = slices[0].w, n = int(slices.size());
    for (const auto& s : slices)
        if (s.h != h || s.w != w) throw Error("restack: inconsistent slice shapes");
    VolumeT<T> v;
    switch (plane) {
        case Plane::xy:
            v = VolumeT<T>(n, h, w, vs);
            for (int z = 0; z < n; ++z)
                std::copy_n(slices[z].data.begin(), size_t(h) * w, &v.data[v.index(z, 0, 0)]);
            break;
        case Plane::xz:
            v = VolumeT<T>(h, n, w, vs);
            for (int y = 0; y < n; ++y)
                for (int z = 0; z < h; ++z)
                    std::copy_n(&slices[y].at(z, 0), w, &v.data[v.index(z, y, 0)]);
            break;
        case Plane::yz:
            v = VolumeT<T>(h, w, n, vs);
            for (int x = 0; x < n; ++x)
                for (int z = 0; z < h; ++z)
                    for (int y = 0; y < w; ++y) v.at(z, y, x) = slices[x].at(z, y);
            break;
    }
    v.domain = domain;
    return v;
}

}  // namespace isore
