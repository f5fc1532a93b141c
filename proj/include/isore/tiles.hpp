#pragma once

#include <array>
#include <fstream>
#include <numeric>
#include <sstream>

#include "isore/volume.hpp"

namespace isore {

using Origin = std::array<int, 3>;  // z, y, x

// Deterministic plan of overlapping cubic tiles covering a volume, with the
// stitch-time border crop baked in so coverage can be validated up front.
struct TileGrid {
    std::array<int, 3> dims{0, 0, 0};
    int tile = 0;
    int overlap = 0;
    int border_crop = 0;
    std::array<std::vector<int>, 3> axis_origins;
    std::vector<Origin> origins;  // z-major cartesian product of axis_origins

    size_t tile_count() const { return origins.size(); }
};

namespace detail {

inline std::vector<int> axis_starts(int dim, int tile, int stride) {
    std::vector<int> s;
    for (int o = 0;; o += stride) {
        if (o + tile >= dim) {
            s.push_back(dim - tile);
            break;
        }
        s.push_back(o);
    }
    return s;
}

}  // namespace detail

// Origins advance by stride = min(tile - overlap, tile - 2*border_crop): the
// second bound keeps retained regions overlapping once borders are trimmed,
// which the nominal overlap alone does not guarantee. The run of each axis ends
// with an origin clamped to dim - tile.
inline TileGrid plan_tiles(std::array<int, 3> dims, int tile, int overlap, int border_crop) {
    if (tile < 1) throw ConfigError("tile must be >= 1");
    if (overlap < 0 || overlap >= tile) throw ConfigError("overlap must be in [0, tile)");
    if (border_crop < 0) throw ConfigError("border_crop must be >= 0");
    if (tile - 2 * border_crop <= 0) throw ConfigError("border_crop leaves no retained region");
    for (int a = 0; a < 3; ++a)
        if (tile > dims[a]) throw ConfigError("tile exceeds volume dimension");

    TileGrid g;
    g.dims = dims;
    g.tile = tile;
    g.overlap = overlap;
    g.border_crop = border_crop;
    const int stride = std::max(1, std::min(tile - overlap, tile - 2 * border_crop));
    for (int a = 0; a < 3; ++a) g.axis_origins[a] = detail::axis_starts(dims[a], tile, stride);
    g.origins.reserve(g.axis_origins[0].size() * g.axis_origins[1].size() *
                      g.axis_origins[2].size());
    for (int z : g.axis_origins[0])
        for (int y : g.axis_origins[1])
            for (int x : g.axis_origins[2]) g.origins.push_back({z, y, x});
    return g;
}

template <class T>
VolumeT<T> extract(const VolumeT<T>& v, Origin origin, int tile) {
    const int dims[3] = {v.nz, v.ny, v.nx};
    for (int a = 0; a < 3; ++a)
        if (origin[a] < 0 || origin[a] + tile > dims[a])
            throw ConfigError("tile extraction out of bounds");
    VolumeT<T> out(tile, tile, tile, v.voxel);
    out.domain = v.domain;
    for (int z = 0; z < tile; ++z)
        for (int y = 0; y < tile; ++y)
            std::copy_n(&v.at(origin[0] + z, origin[1] + y, origin[2]), tile, &out.at(z, y, 0));
    return out;
}

// Half-open retained range of a tile along one axis: border_crop trimmed on
// interior faces, kept on faces that touch the volume boundary.
inline std::pair<int, int> retained_range(int origin, int tile, int dim, int border_crop) {
    const int lo = origin == 0 ? 0 : border_crop;
    const int hi = origin + tile == dim ? tile : tile - border_crop;
    return {lo, hi};
}

// Reassemble tiles: trimmed regions accumulate into sum/count buffers and
// overlaps average. Tiles are visited in grid-origin order whatever order the
// caller supplies, so the result is independent of tile scheduling.
template <class T>
VolumeT<T> stitch(const std::vector<std::pair<Origin, VolumeT<T>>>& tiles, const TileGrid& grid) {
    VolumeT<T> out(grid.dims[0], grid.dims[1], grid.dims[2]);
    std::vector<double> sum(out.size(), 0.0);
    std::vector<uint16_t> count(out.size(), 0);

    std::vector<const VolumeT<T>*> by_origin(grid.origins.size(), nullptr);
    for (const auto& [origin, tv] : tiles) {
        auto it = std::find(grid.origins.begin(), grid.origins.end(), origin);
        if (it == grid.origins.end()) throw ConfigError("tile origin not in grid");
        if (tv.nz != grid.tile || tv.ny != grid.tile || tv.nx != grid.tile)
            throw ConfigError("tile volume does not match grid tile size");
        by_origin[size_t(it - grid.origins.begin())] = &tv;
    }

    for (size_t t = 0; t < grid.origins.size(); ++t) {
        if (!by_origin[t]) throw ConfigError("missing tile for grid origin");
        const Origin& o = grid.origins[t];
        const VolumeT<T>& tv = *by_origin[t];
        const auto [z0, z1] = retained_range(o[0], grid.tile, grid.dims[0], grid.border_crop);
        const auto [y0, y1] = retained_range(o[1], grid.tile, grid.dims[1], grid.border_crop);
        const auto [x0, x1] = retained_range(o[2], grid.tile, grid.dims[2], grid.border_crop);
        for (int z = z0; z < z1; ++z)
            for (int y = y0; y < y1; ++y) {
                const size_t dst = out.index(o[0] + z, o[1] + y, o[2] + x0);
                const size_t src = tv.index(z, y, x0);
                for (int x = 0; x < x1 - x0; ++x) {
                    sum[dst + x] += double(tv.data[src + x]);
                    ++count[dst + x];
                }
            }
    }

    const auto& first = *by_origin[0];
    out.voxel = first.voxel;
    out.domain = first.domain;
    for (size_t i = 0; i < out.size(); ++i) {
        if (count[i] == 0) throw NumericError("stitch coverage hole");
        out.data[i] = T(sum[i] / double(count[i]));
    }
    return out;
}

// Per-voxel contribution counts; the grid invariant is every entry >= 1.
inline std::vector<uint16_t> coverage_map(const TileGrid& grid) {
    std::vector<uint16_t> count(size_t(grid.dims[0]) * grid.dims[1] * grid.dims[2], 0);
    const auto idx = [&](int z, int y, int x) {
        return (size_t(z) * grid.dims[1] + y) * grid.dims[2] + x;
    };
    for (const Origin& o : grid.origins) {
        const auto [z0, z1] = retained_range(o[0], grid.tile, grid.dims[0], grid.border_crop);
        const auto [y0, y1] = retained_range(o[1], grid.tile, grid.dims[1], grid.border_crop);
        const auto [x0, x1] = retained_range(o[2], grid.tile, grid.dims[2], grid.border_crop);
        for (int z = z0; z < z1; ++z)
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) ++count[idx(o[0] + z, o[1] + y, o[2] + x)];
    }
    return count;
}

// Text manifest so long inference runs can be resumed/audited.
inline void write_tile_manifest(const TileGrid& g, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write tile manifest: " + path);
    f << "dims: " << g.dims[0] << ' ' << g.dims[1] << ' ' << g.dims[2] << '\n'
      << "tile: " << g.tile << '\n'
      << "overlap: " << g.overlap << '\n'
      << "border_crop: " << g.border_crop << '\n'
      << "tiles: " << g.origins.size() << '\n';
    for (const auto& o : g.origins) f << o[0] << ' ' << o[1] << ' ' << o[2] << '\n';
    if (!f) throw IoError("tile manifest write failed: " + path);
}

inline TileGrid read_tile_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read tile manifest: " + path);
    TileGrid g;
    std::string key;
    size_t n = 0;
    while (f >> key) {
        if (key == "dims:")
            f >> g.dims[0] >> g.dims[1] >> g.dims[2];
        else if (key == "tile:")
            f >> g.tile;
        else if (key == "overlap:")
            f >> g.overlap;
        else if (key == "border_crop:")
            f >> g.border_crop;
        else if (key == "tiles:") {
            f >> n;
            break;
        }
    }
    if (f.fail()) throw IoError("malformed tile manifest: " + path);
    g.origins.resize(n);
    for (auto& o : g.origins)
        if (!(f >> o[0] >> o[1] >> o[2])) throw IoError("malformed tile manifest: " + path);
    for (const auto& o : g.origins)
        for (int a = 0; a < 3; ++a) {
            auto& ax = g.axis_origins[a];
            if (std::find(ax.begin(), ax.end(), o[a]) == ax.end()) ax.push_back(o[a]);
        }
    return g;
}

}  // namespace isore
