#pragma once

#include <functional>

#include "isore/nets.hpp"
#include "isore/preprocess.hpp"
#include "isore/tiles.hpp"

namespace isore {

// Overlap-tile inference plan; defaults follow the training-time inference
// rules (tile 120, overlap 30, border crop 20).
struct InferencePlan {
    int tile = 120;
    int overlap = 30;
    int border_crop = 20;

    void validate() const {
        if (tile % 4) throw ConfigError("inference tile must be divisible by 4");
        if (overlap < 0 || overlap >= tile) throw ConfigError("overlap must be in [0, tile)");
        if (border_crop < 0 || tile - 2 * border_crop <= 0)
            throw ConfigError("border_crop leaves no retained region");
    }
};

namespace restoredetail {

// Reflect-pad the tail of each axis up to at least `tile` voxels.
template <class T>
VolumeT<T> reflect_pad_to(const VolumeT<T>& v, int tile) {
    const int nz = std::max(v.nz, tile), ny = std::max(v.ny, tile), nx = std::max(v.nx, tile);
    if (nz == v.nz && ny == v.ny && nx == v.nx) return v;
    VolumeT<T> out(nz, ny, nx, v.voxel);
    out.domain = v.domain;
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x)
                out.at(z, y, x) =
                    v.at(reflect_index(z, v.nz), reflect_index(y, v.ny), reflect_index(x, v.nx));
    return out;
}

}  // namespace restoredetail

// Apply a per-tile transform over the whole volume: extract, transform, trim
// tile borders, stitch with averaging. Output dims match the input, and the
// result is independent of tile scheduling (grid-ordered accumulation).
template <class U, class TileFn>
VolumeT<U> restore_volume_with(const TileFn& apply_tile, const VolumeT<U>& v,
                               const InferencePlan& plan,
                               const std::function<void(size_t, size_t)>& progress = {}) {
    plan.validate();
    if (v.domain != IntensityDomain::normalized)
        throw ConfigError("restore_volume: volume must be normalized");

    VolumeT<U> padded = restoredetail::reflect_pad_to(v, plan.tile);
    TileGrid grid = plan_tiles({padded.nz, padded.ny, padded.nx}, plan.tile, plan.overlap,
                               plan.border_crop);

    std::vector<std::pair<Origin, VolumeT<U>>> outputs;
    outputs.reserve(grid.tile_count());
    for (size_t i = 0; i < grid.origins.size(); ++i) {
        VolumeT<U> tile_in = extract(padded, grid.origins[i], plan.tile);
        VolumeT<U> tile_out = apply_tile(tile_in);
        if (tile_out.nz != plan.tile || tile_out.ny != plan.tile || tile_out.nx != plan.tile)
            throw NumericError("restore_volume: tile transform changed the tile shape");
        outputs.emplace_back(grid.origins[i], std::move(tile_out));
        if (progress) progress(i + 1, grid.tile_count());
    }
    VolumeT<U> stitched = stitch(outputs, grid);

    if (stitched.same_dims(v)) return stitched;
    VolumeT<U> out(v.nz, v.ny, v.nx, v.voxel);
    out.domain = v.domain;
    for (int z = 0; z < v.nz; ++z)
        for (int y = 0; y < v.ny; ++y)
            std::copy_n(&stitched.at(z, y, 0), v.nx, &out.at(z, y, 0));
    return out;
}

// Trained-generator entry point; deterministic for a fixed checkpoint.
template <class T, class U>
VolumeT<U> restore_volume(Generator<T>& g, const VolumeT<U>& v, const InferencePlan& plan,
                          const std::function<void(size_t, size_t)>& progress = {}) {
    VolumeT<U> out = restore_volume_with(
        [&](const VolumeT<U>& tile) { return generator_apply(g, tile, false); }, v, plan,
        progress);
    g.drop_cache();
    return out;
}

}  // namespace isore
