#pragma once

#include <fstream>

#include "isore/preprocess.hpp"
#include "isore/volume.hpp"

namespace isore {

struct BeadRecord {
    std::array<double, 3> center_um{};  // z, y, x
    double radius_um = 0;
    double amplitude = 0;
};

struct FilamentRecord {
    std::vector<std::array<double, 3>> points_um;  // polyline control points
    double tube_radius_um = 0;
    double amplitude = 0;
};

// Isotropic ground-truth volume with the object list that generated it.
struct PhantomTruth {
    Volume volume;
    std::vector<BeadRecord> beads;
    std::vector<FilamentRecord> filaments;
    uint64_t seed = 0;
};

struct NoiseModel {
    double poisson_scale = 0;  // photons per intensity unit; 0 disables shot noise
    double gaussian_sigma = 0; // read noise, intensity units; 0 disables
};

struct DegradationModel {
    std::array<double, 3> psf_sigma_um{2.0, 1.0, 1.0};  // z, y, x
    double axial_step_um = 1.0;  // spacing of retained z-planes
    NoiseModel noise;
    uint64_t seed = 1;
};

// ---------------------------------------------------------------------------
// Bead phantoms
// ---------------------------------------------------------------------------

struct BeadSpec {
    std::array<int, 3> dims{64, 64, 64};  // z, y, x
    double voxel_um = 0.5;
    int count = 1;
    double radius_um = 0.25;
    double amplitude = 1000.0;
    double min_separation_um = 0;  // 0 -> 4 * radius
    double edge_margin_um = 0;     // 0 -> radius + 2 voxels
    uint64_t seed = 1;
};

namespace phantomdetail {

// Partial-volume occupancy of a voxel against a sphere, 3x3x3 supersampled.
inline double sphere_occupancy(int z, int y, int x, const std::array<double, 3>& c_vox,
                               double r_vox) {
    int inside = 0;
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
            for (int d = 0; d < 3; ++d) {
                const double pz = z + (a + 0.5) / 3.0 - 0.5;
                const double py = y + (b + 0.5) / 3.0 - 0.5;
                const double px = x + (d + 0.5) / 3.0 - 0.5;
                const double dz = pz - c_vox[0], dy = py - c_vox[1], dx = px - c_vox[2];
                if (dz * dz + dy * dy + dx * dx <= r_vox * r_vox) ++inside;
            }
    return inside / 27.0;
}

inline void render_bead(Volume& v, const BeadRecord& bead) {
    const double vox = v.voxel.x;  // truth grids are isotropic
    const std::array<double, 3> c{bead.center_um[0] / vox, bead.center_um[1] / vox,
                                  bead.center_um[2] / vox};
    const double r = bead.radius_um / vox;
    const int reach = int(std::ceil(r)) + 1;
    const int z0 = std::max(0, int(c[0]) - reach), z1 = std::min(v.nz - 1, int(c[0]) + reach);
    const int y0 = std::max(0, int(c[1]) - reach), y1 = std::min(v.ny - 1, int(c[1]) + reach);
    const int x0 = std::max(0, int(c[2]) - reach), x1 = std::min(v.nx - 1, int(c[2]) + reach);
    for (int z = z0; z <= z1; ++z)
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const double frac = sphere_occupancy(z, y, x, c, r);
                if (frac > 0) v.at(z, y, x) += float(bead.amplitude * frac);
            }
}

}  // namespace phantomdetail

inline void render_bead(Volume& v, const BeadRecord& bead) {
    phantomdetail::render_bead(v, bead);
}

inline PhantomTruth make_beads(const BeadSpec& spec) {
    if (spec.count < 1) throw ConfigError("make_beads: count must be >= 1");
    if (spec.radius_um < spec.voxel_um / 2)
        throw ConfigError("make_beads: radius must be >= half a voxel");
    if (spec.amplitude <= 0) throw ConfigError("make_beads: amplitude must be > 0");

    const double min_sep =
        spec.min_separation_um > 0 ? spec.min_separation_um : 4.0 * spec.radius_um;
    const double margin =
        spec.edge_margin_um > 0 ? spec.edge_margin_um : spec.radius_um + 2.0 * spec.voxel_um;
    PhantomTruth ph;
    ph.seed = spec.seed;
    ph.volume = Volume(spec.dims[0], spec.dims[1], spec.dims[2],
                       {spec.voxel_um, spec.voxel_um, spec.voxel_um});
    const double ext[3] = {spec.dims[0] * spec.voxel_um, spec.dims[1] * spec.voxel_um,
                           spec.dims[2] * spec.voxel_um};
    for (double e : ext)
        if (2 * margin >= e) throw ConfigError("make_beads: volume too small for the margin");

    Rng rng(spec.seed);
    const long max_attempts = 2000L * spec.count;
    for (long attempt = 0; int(ph.beads.size()) < spec.count; ++attempt) {
        if (attempt >= max_attempts)
            throw NumericError("make_beads: cannot place beads at the requested separation");
        std::array<double, 3> c;
        for (int a = 0; a < 3; ++a) c[a] = rng.uniform(margin, ext[a] - margin);
        bool ok = true;
        for (const auto& b : ph.beads) {
            const double dz = c[0] - b.center_um[0], dy = c[1] - b.center_um[1],
                         dx = c[2] - b.center_um[2];
            if (dz * dz + dy * dy + dx * dx < min_sep * min_sep) {
                ok = false;
                break;
            }
        }
        if (ok) ph.beads.push_back({c, spec.radius_um, spec.amplitude});
    }
    for (const auto& b : ph.beads) phantomdetail::render_bead(ph.volume, b);
    return ph;
}

// ---------------------------------------------------------------------------
// Filament phantoms: momentum random walks dilated to antialiased tubes
// ---------------------------------------------------------------------------

struct FilamentSpec {
    std::array<int, 3> dims{64, 64, 64};
    double voxel_um = 0.5;
    int n_paths = 1;
    double tube_radius_um = 0.5;
    double amplitude = 1000.0;
    double step_um = 0;  // 0 -> 2 voxels
    uint64_t seed = 1;
};

namespace phantomdetail {

inline void render_tube_segment(Volume& v, const std::array<double, 3>& a_um,
                                const std::array<double, 3>& b_um, double r_um,
                                double amplitude) {
    const double vox = v.voxel.x;
    const double a[3] = {a_um[0] / vox, a_um[1] / vox, a_um[2] / vox};
    const double b[3] = {b_um[0] / vox, b_um[1] / vox, b_um[2] / vox};
    const double r = r_um / vox;
    const int reach = int(std::ceil(r)) + 1;
    int lo[3], hi[3];
    const int dims[3] = {v.nz, v.ny, v.nx};
    for (int i = 0; i < 3; ++i) {
        lo[i] = std::max(0, int(std::floor(std::min(a[i], b[i]))) - reach);
        hi[i] = std::min(dims[i] - 1, int(std::ceil(std::max(a[i], b[i]))) + reach);
    }
    const double d[3] = {b[0] - a[0], b[1] - a[1], b[2] - a[2]};
    const double len2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    for (int z = lo[0]; z <= hi[0]; ++z)
        for (int y = lo[1]; y <= hi[1]; ++y)
            for (int x = lo[2]; x <= hi[2]; ++x) {
                const double p[3] = {double(z), double(y), double(x)};
                double t = 0;
                if (len2 > 0) {
                    t = ((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1] + (p[2] - a[2]) * d[2]) / len2;
                    t = std::clamp(t, 0.0, 1.0);
                }
                double dist2 = 0;
                for (int i = 0; i < 3; ++i) {
                    const double q = a[i] + t * d[i] - p[i];
                    dist2 += q * q;
                }
                if (dist2 > (r + 1) * (r + 1)) continue;
                // 3x3x3 supersampled occupancy against the tube surface
                int inside = 0;
                for (int sa = 0; sa < 3; ++sa)
                    for (int sb = 0; sb < 3; ++sb)
                        for (int sc = 0; sc < 3; ++sc) {
                            const double q[3] = {z + (sa + 0.5) / 3.0 - 0.5,
                                                 y + (sb + 0.5) / 3.0 - 0.5,
                                                 x + (sc + 0.5) / 3.0 - 0.5};
                            double tt = 0;
                            if (len2 > 0) {
                                tt = ((q[0] - a[0]) * d[0] + (q[1] - a[1]) * d[1] +
                                      (q[2] - a[2]) * d[2]) /
                                     len2;
                                tt = std::clamp(tt, 0.0, 1.0);
                            }
                            double dd = 0;
                            for (int i = 0; i < 3; ++i) {
                                const double e = a[i] + tt * d[i] - q[i];
                                dd += e * e;
                            }
                            if (dd <= r * r) ++inside;
                        }
                if (inside > 0) {
                    float& cell = v.at(z, y, x);
                    cell = std::max(cell, float(amplitude * inside / 27.0));
                }
            }
}

}  // namespace phantomdetail

inline void render_filament(Volume& v, const FilamentRecord& fil) {
    for (size_t s = 1; s < fil.points_um.size(); ++s)
        phantomdetail::render_tube_segment(v, fil.points_um[s - 1], fil.points_um[s],
                                           fil.tube_radius_um, fil.amplitude);
}

inline PhantomTruth make_filaments(const FilamentSpec& spec) {
    if (spec.n_paths < 0) throw ConfigError("make_filaments: n_paths must be >= 0");
    if (spec.tube_radius_um < spec.voxel_um / 2)
        throw ConfigError("make_filaments: tube radius must be >= half a voxel");
    PhantomTruth ph;
    ph.seed = spec.seed;
    ph.volume = Volume(spec.dims[0], spec.dims[1], spec.dims[2],
                       {spec.voxel_um, spec.voxel_um, spec.voxel_um});
    const double ext[3] = {spec.dims[0] * spec.voxel_um, spec.dims[1] * spec.voxel_um,
                           spec.dims[2] * spec.voxel_um};
    const double margin = spec.tube_radius_um + 2 * spec.voxel_um;
    const double step = spec.step_um > 0 ? spec.step_um : 2 * spec.voxel_um;
    Rng rng(spec.seed);
    for (int path = 0; path < spec.n_paths; ++path) {
        FilamentRecord fil;
        fil.tube_radius_um = spec.tube_radius_um;
        fil.amplitude = spec.amplitude;
        std::array<double, 3> p;
        for (int a = 0; a < 3; ++a) p[a] = rng.uniform(margin, ext[a] - margin);
        double dir[3] = {rng.normal(), rng.normal(), rng.normal()};
        double nrm = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
        for (double& c : dir) c /= nrm;
        const int n_steps = int(0.6 * (*std::max_element(ext, ext + 3)) / step);
        fil.points_um.push_back(p);
        for (int s = 0; s < n_steps; ++s) {
            for (int a = 0; a < 3; ++a) dir[a] += 0.35 * rng.normal();
            nrm = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
            for (double& c : dir) c /= nrm;
            std::array<double, 3> q = p;
            for (int a = 0; a < 3; ++a) {
                q[a] += step * dir[a];
                if (q[a] < margin || q[a] > ext[a] - margin) {
                    dir[a] = -dir[a];
                    q[a] = std::clamp(q[a], margin, ext[a] - margin);
                }
            }
            fil.points_um.push_back(q);
            p = q;
        }
        for (size_t s = 1; s < fil.points_um.size(); ++s)
            phantomdetail::render_tube_segment(ph.volume, fil.points_um[s - 1], fil.points_um[s],
                                               spec.tube_radius_um, spec.amplitude);
        ph.filaments.push_back(std::move(fil));
    }
    return ph;
}

// ---------------------------------------------------------------------------
// Analytic anisotropic Gaussian PSF and the forward degradation
// ---------------------------------------------------------------------------

namespace phantomdetail {

inline std::vector<double> gaussian_taps(double sigma_um, double voxel_um, double truncate) {
    const int half = std::max(1, int(std::ceil(truncate * sigma_um / voxel_um)));
    std::vector<double> taps(2 * half + 1);
    for (int i = -half; i <= half; ++i) {
        const double d = i * voxel_um;
        taps[i + half] = std::exp(-0.5 * d * d / (sigma_um * sigma_um));
    }
    return taps;  // unnormalized
}

}  // namespace phantomdetail

// Separable Gaussian kernel sampled at voxel centres, odd dims, sum exactly 1.
inline Volume gaussian_psf(std::array<double, 3> sigma_um, double voxel_um,
                           double truncate = 4.0) {
    for (double s : sigma_um)
        if (!(s > 0)) throw ConfigError("gaussian_psf: sigma must be > 0");
    if (truncate < 3) throw ConfigError("gaussian_psf: truncate must be >= 3");
    std::array<std::vector<double>, 3> taps;
    for (int a = 0; a < 3; ++a) taps[a] = phantomdetail::gaussian_taps(sigma_um[a], voxel_um, truncate);
    Volume k(int(taps[0].size()), int(taps[1].size()), int(taps[2].size()),
             {voxel_um, voxel_um, voxel_um});
    double sum = 0;
    for (int z = 0; z < k.nz; ++z)
        for (int y = 0; y < k.ny; ++y)
            for (int x = 0; x < k.nx; ++x) {
                const double w = taps[0][z] * taps[1][y] * taps[2][x];
                k.at(z, y, x) = float(w);
                sum += w;
            }
    for (float& w : k.data) w = float(double(w) / sum);
    return k;
}

// Separable Gaussian blur with reflective boundaries (same taps as gaussian_psf).
template <class T>
VolumeT<T> gaussian_blur(const VolumeT<T>& v, std::array<double, 3> sigma_um,
                         double truncate = 4.0) {
    VolumeT<T> cur = v;
    const double voxel[3] = {v.voxel.z, v.voxel.y, v.voxel.x};
    for (int axis = 0; axis < 3; ++axis) {
        auto taps = phantomdetail::gaussian_taps(sigma_um[axis], voxel[axis], truncate);
        double s = 0;
        for (double w : taps) s += w;
        for (double& w : taps) w /= s;
        const int half = int(taps.size()) / 2;
        VolumeT<T> next(cur.nz, cur.ny, cur.nx, cur.voxel);
        next.domain = cur.domain;
        const int dims[3] = {cur.nz, cur.ny, cur.nx};
#pragma omp parallel for collapse(2) schedule(static)
        for (int z = 0; z < cur.nz; ++z)
            for (int y = 0; y < cur.ny; ++y)
                for (int x = 0; x < cur.nx; ++x) {
                    int idx[3] = {z, y, x};
                    double acc = 0;
                    for (int t = -half; t <= half; ++t) {
                        int jdx[3] = {z, y, x};
                        jdx[axis] = reflect_index(idx[axis] + t, dims[axis]);
                        acc += taps[t + half] * double(cur.at(jdx[0], jdx[1], jdx[2]));
                    }
                    next.at(z, y, x) = T(acc);
                }
        cur = std::move(next);
    }
    return cur;
}

// Blur with the anisotropic PSF, retain every k-th z-plane, add shot+read
// noise, then linearly re-interpolate the missing planes on the truth grid.
inline Volume degrade(const PhantomTruth& truth, const DegradationModel& model) {
    const Volume& t = truth.volume;
    const double k_real = model.axial_step_um / t.voxel.z;
    const int k = int(std::llround(k_real));
    if (k < 1 || std::abs(k_real - k) > 1e-9)
        throw ConfigError("degrade: axial step must be an integer multiple of the z voxel");

    Volume blurred = gaussian_blur(t, model.psf_sigma_um);

    const int nz_u = (t.nz - 1) / k + 1;
    Volume sampled(nz_u, t.ny, t.nx, {t.voxel.z * k, t.voxel.y, t.voxel.x});
    for (int z = 0; z < nz_u; ++z)
        std::copy_n(&blurred.at(z * k, 0, 0), size_t(t.ny) * t.nx, &sampled.at(z, 0, 0));

    if (model.noise.poisson_scale > 0 || model.noise.gaussian_sigma > 0) {
        Rng rng(model.seed);
        for (float& vv : sampled.data) {
            double val = vv;
            if (model.noise.poisson_scale > 0)
                val = double(rng.poisson(std::max(val, 0.0) * model.noise.poisson_scale)) /
                      model.noise.poisson_scale;
            if (model.noise.gaussian_sigma > 0) val += rng.normal(0, model.noise.gaussian_sigma);
            vv = float(val);
        }
    }

    // retained planes sit at z = j*k on the truth grid; interpolate between them
    Volume out(t.nz, t.ny, t.nx, t.voxel);
    for (int z = 0; z < t.nz; ++z) {
        const int j = std::min(z / k, nz_u - 1);
        const int j1 = std::min(j + 1, nz_u - 1);
        const double f = double(z) / k - j;
        const float* lo = &sampled.at(j, 0, 0);
        const float* hi = &sampled.at(j1, 0, 0);
        float* dst = &out.at(z, 0, 0);
        for (size_t i = 0; i < size_t(t.ny) * t.nx; ++i)
            dst[i] = float(lo[i] + f * (double(hi[i]) - lo[i]));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Phantom manifest (object list + degradation parameters)
// ---------------------------------------------------------------------------

inline void write_phantom_manifest(const PhantomTruth& ph, const DegradationModel* model,
                                   const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write phantom manifest: " + path);
    f << "seed: " << ph.seed << '\n'
      << "voxel_size: " << ph.volume.voxel.z << ' ' << ph.volume.voxel.y << ' '
      << ph.volume.voxel.x << '\n';
    f << "beads: " << ph.beads.size() << '\n';
    for (const auto& b : ph.beads)
        f << b.center_um[0] << ' ' << b.center_um[1] << ' ' << b.center_um[2] << ' '
          << b.radius_um << ' ' << b.amplitude << '\n';
    f << "filaments: " << ph.filaments.size() << '\n';
    for (const auto& fil : ph.filaments) {
        f << fil.tube_radius_um << ' ' << fil.amplitude << ' ' << fil.points_um.size() << '\n';
        for (const auto& p : fil.points_um) f << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
    }
    if (model) {
        f << "psf_sigma: " << model->psf_sigma_um[0] << ' ' << model->psf_sigma_um[1] << ' '
          << model->psf_sigma_um[2] << '\n'
          << "axial_step: " << model->axial_step_um << '\n'
          << "noise_poisson_scale: " << model->noise.poisson_scale << '\n'
          << "noise_gaussian_sigma: " << model->noise.gaussian_sigma << '\n'
          << "noise_seed: " << model->seed << '\n';
    }
    if (!f) throw IoError("phantom manifest write failed: " + path);
}

}  // namespace isore
