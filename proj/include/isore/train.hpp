#pragma once

#include <chrono>
#include <fstream>
#include <functional>
#include <iomanip>

#include "isore/checkpoint.hpp"
#include "isore/preprocess.hpp"
#include "isore/tiles.hpp"

namespace isore {

// ---------------------------------------------------------------------------
// Least-squares adversarial losses on score maps
// ---------------------------------------------------------------------------

struct LossWeights {
    double lambda_cyc = 10.0;
    double gan_real_label = 1.0;
    double gan_fake_label = 0.0;
};

// mean over all map entries of (s - target)^2; gradient dL/ds = 2(s-target)/N
template <class T>
double lsgan_map_loss(const Tensor<T>& scores, double target, Tensor<T>* grad = nullptr) {
    if (scores.size() == 0) throw ConfigError("lsgan loss on empty score map");
    double acc = 0;
    if (grad) *grad = Tensor<T>(scores.shape[0], scores.shape[1], scores.shape[2], scores.shape[3]);
    const double inv_n = 1.0 / double(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) {
        const double d = double(scores.v[i]) - target;
        acc += d * d;
        if (grad) grad->v[i] = T(2.0 * d * inv_n);
    }
    return acc * inv_n;
}

// Discriminator objective: mean (D(real)-1)^2 + mean D(fake)^2. Fakes are
// constants here; no gradient reaches the generators through this loss.
template <class T>
double lsgan_d_loss(PatchDisc2d<T>& d, const Tensor<T>& real, const Tensor<T>& fake,
                    const LossWeights& w = {}, bool backprop = false) {
    Tensor<T> sr = d.forward(real, backprop);
    Tensor<T> gr;
    const double lr_ = lsgan_map_loss(sr, w.gan_real_label, backprop ? &gr : nullptr);
    if (backprop) d.backward(gr, /*need_input_grad=*/false);
    Tensor<T> sf = d.forward(fake, backprop);
    Tensor<T> gf;
    const double lf = lsgan_map_loss(sf, w.gan_fake_label, backprop ? &gf : nullptr);
    if (backprop) d.backward(gf, /*need_input_grad=*/false);
    return lr_ + lf;
}

// Generator-side adversarial loss: mean (D(fake)-1)^2.
// When `grad_wrt_fake` is given, the gradient is propagated through D back to
// the fake slices (D parameter grads incurred along the way are discarded by
// the caller via zero_grads).
template <class T>
double lsgan_g_loss(PatchDisc2d<T>& d, const Tensor<T>& fake, const LossWeights& w = {},
                    Tensor<T>* grad_wrt_fake = nullptr) {
    Tensor<T> s = d.forward(fake, grad_wrt_fake != nullptr);
    Tensor<T> gs;
    const double l = lsgan_map_loss(s, w.gan_real_label, grad_wrt_fake ? &gs : nullptr);
    if (grad_wrt_fake) *grad_wrt_fake = d.backward(gs);
    return l;
}

// Mean absolute difference; the lambda weighting is applied at the objective.
template <class T>
double cycle_loss(const Tensor<T>& y, const Tensor<T>& y_cyc, Tensor<T>* grad_wrt_ycyc = nullptr) {
    if (!y.same_shape(y_cyc)) throw ConfigError("cycle_loss: shape mismatch");
    double acc = 0;
    if (grad_wrt_ycyc)
        *grad_wrt_ycyc = Tensor<T>(y.shape[0], y.shape[1], y.shape[2], y.shape[3]);
    const double inv_n = 1.0 / double(y.size());
    for (size_t i = 0; i < y.size(); ++i) {
        const double d = double(y_cyc.v[i]) - double(y.v[i]);
        acc += std::abs(d);
        if (grad_wrt_ycyc) grad_wrt_ycyc->v[i] = T((d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) * inv_n);
    }
    return acc * inv_n;
}

// ---------------------------------------------------------------------------
// Crop sampling with augmentation
// ---------------------------------------------------------------------------

struct AugmentConfig {
    bool z_rotation = false;  // whole-volume rotation about z before cropping
    bool random_flip = true;  // one uniformly chosen axis per sample
};

enum class SamplingMode { whole_volume, diced };

template <class T>
VolumeT<T> flip_axis(const VolumeT<T>& v, int axis) {
    VolumeT<T> out(v.nz, v.ny, v.nx, v.voxel);
    out.domain = v.domain;
    for (int z = 0; z < v.nz; ++z)
        for (int y = 0; y < v.ny; ++y)
            for (int x = 0; x < v.nx; ++x)
                out.at(axis == 0 ? v.nz - 1 - z : z, axis == 1 ? v.ny - 1 - y : y,
                       axis == 2 ? v.nx - 1 - x : x) = v.at(z, y, x);
    return out;
}

// One training crop: optional z-rotation of the source view, a uniformly
// random origin, then an optional flip along one random axis.
template <class T>
VolumeT<T> sample_crop(const VolumeT<T>& v, int crop, const AugmentConfig& augment, Rng& rng) {
    if (v.nz < crop || v.ny < crop || v.nx < crop)
        throw ConfigError("sample_crop: volume smaller than the crop");
    if (v.domain != IntensityDomain::normalized)
        throw ConfigError("sample_crop: volume must be normalized");
    const VolumeT<T>* src = &v;
    VolumeT<T> rotated;
    if (augment.z_rotation) {
        rotated = rotate_z(v, rng.uniform(0.0, 2.0 * M_PI));
        src = &rotated;
    }
    const int oz = int(rng.uniform_index(uint64_t(src->nz - crop + 1)));
    const int oy = int(rng.uniform_index(uint64_t(src->ny - crop + 1)));
    const int ox = int(rng.uniform_index(uint64_t(src->nx - crop + 1)));
    VolumeT<T> out = extract(*src, {oz, oy, ox}, crop);
    if (augment.random_flip) out = flip_axis(out, int(rng.uniform_index(3)));
    return out;
}

// ---------------------------------------------------------------------------
// Training configuration and state
// ---------------------------------------------------------------------------

struct TrainConfig {
    int crop = 144;                     // divisible by 4
    long long iterations = 1000;
    double lr = 1e-4;
    double adam_beta1 = 0.5, adam_beta2 = 0.999;
    LossWeights weights;
    uint64_t seed = 1;
    AugmentConfig augment;
    SamplingMode sampling = SamplingMode::whole_volume;
    int dice_tile = 224, dice_overlap = 32;  // diced mode (paper: 200-250 / 20-50)
    long long checkpoint_every = 1000;
    int batch = 1;

    GeneratorConfig generator;           // G, the super-resolving path
    GeneratorConfig backward_generator;  // F, the re-blurring path
    DiscriminatorConfig discriminator;

    void validate() const {
        if (crop < 4 || crop % 4) throw ConfigError("crop must be positive and divisible by 4");
        if (iterations < 0) throw ConfigError("iterations must be >= 0");
        if (lr < 0) throw ConfigError("learning rate must be >= 0");
        if (batch != 1) throw ConfigError("batch size is fixed at 1 volume per iteration");
        if (weights.lambda_cyc <= 0) throw ConfigError("lambda_cyc must be > 0");
        generator.validate();
        backward_generator.validate();
        discriminator.validate();
    }
};

// One row of the loss log.
struct LossRecord {
    long long iteration = 0;
    double adv_g = 0, adv_f = 0, cyc = 0;
    double d_x[3] = {0, 0, 0};
    double d_y[3] = {0, 0, 0};
    double wall_s = 0;

    bool finite() const {
        for (double v : {adv_g, adv_f, cyc, d_x[0], d_x[1], d_x[2], d_y[0], d_y[1], d_y[2]})
            if (!std::isfinite(v)) return false;
        return true;
    }
};

template <class T>
struct TrainState {
    TrainConfig cfg;
    ModelBundle<T> bundle;
    Adam<T> adam_g, adam_f;
    std::array<Adam<T>, 3> adam_dx, adam_dy;
    Rng rng;
    long long iteration = 0;
    std::vector<LossRecord> loss_log;

    // audit counters for the plane-slicing contract
    long long slices_real_to_dx = 0, slices_fake_to_dx = 0;
    long long slices_real_to_dy = 0, slices_fake_to_dy = 0;

    explicit TrainState(const TrainConfig& c)
        : cfg(c),
          bundle(c.generator, c.backward_generator, c.discriminator, c.seed),
          adam_g(c.lr, c.adam_beta1, c.adam_beta2),
          adam_f(c.lr, c.adam_beta1, c.adam_beta2),
          rng(c.seed ^ 0x5eedf00dULL) {
        cfg.validate();
        for (auto& a : adam_dx) a = Adam<T>(c.lr, c.adam_beta1, c.adam_beta2);
        for (auto& a : adam_dy) a = Adam<T>(c.lr, c.adam_beta1, c.adam_beta2);
    }

    OptimizerBlob<T> optimizer_blob() {
        OptimizerBlob<T> b;
        b.adams = {&adam_g, &adam_f, &adam_dx[0], &adam_dx[1], &adam_dx[2],
                   &adam_dy[0], &adam_dy[1], &adam_dy[2]};
        return b;
    }
};

// [N,1,H,W] batch of all slices of one plane of a [1,D,H,W] map.
template <class T>
Tensor<T> plane_batch(const Tensor<T>& vol, Plane plane) {
    const int D = vol.shape[1], H = vol.shape[2], W = vol.shape[3];
    if (plane == Plane::xy) {
        Tensor<T> t(D, 1, H, W);
        std::copy(vol.v.begin(), vol.v.end(), t.v.begin());
        return t;
    }
    if (plane == Plane::xz) {
        Tensor<T> t(H, 1, D, W);
        for (int y = 0; y < H; ++y)
            for (int z = 0; z < D; ++z)
                std::copy_n(&vol.v[(size_t(z) * H + y) * W], W, &t.v[(size_t(y) * D + z) * W]);
        return t;
    }
    Tensor<T> t(W, 1, D, H);
    for (int x = 0; x < W; ++x)
        for (int z = 0; z < D; ++z)
            for (int y = 0; y < H; ++y)
                t.v[(size_t(x) * D + z) * H + y] = vol.v[(size_t(z) * H + y) * W + x];
    return t;
}

// scatter a plane-batch gradient back onto the volume gradient (accumulating)
template <class T>
void accumulate_plane_grad(Tensor<T>& gvol, const Tensor<T>& gbatch, Plane plane) {
    const int D = gvol.shape[1], H = gvol.shape[2], W = gvol.shape[3];
    if (plane == Plane::xy) {
        for (size_t i = 0; i < gvol.size(); ++i) gvol.v[i] += gbatch.v[i];
    } else if (plane == Plane::xz) {
        for (int y = 0; y < H; ++y)
            for (int z = 0; z < D; ++z)
                for (int x = 0; x < W; ++x)
                    gvol.v[(size_t(z) * H + y) * W + x] += gbatch.v[(size_t(y) * D + z) * W + x];
    } else {
        for (int x = 0; x < W; ++x)
            for (int z = 0; z < D; ++z)
                for (int y = 0; y < H; ++y)
                    gvol.v[(size_t(z) * H + y) * W + x] += gbatch.v[(size_t(x) * D + z) * H + y];
    }
}

// ---------------------------------------------------------------------------
// One full optimization step of the objective
//   L(G,F,DX,DY) = L_{X->Y}(F,DY) + L_{Y->X}(G,DX) + lambda * L_cyc(G,F)
// on a single normalized crop y. The imaginary isotropic samples required by
// the backward path are realized as x_hat = G(y), treated as constants for the
// D_Y update and for F's adversarial term.
// ---------------------------------------------------------------------------

template <class T>
LossRecord training_step(TrainState<T>& st, const VolumeT<T>& y_crop) {
    const auto t0 = std::chrono::steady_clock::now();
    if (y_crop.domain != IntensityDomain::normalized)
        throw ConfigError("training_step: crop must be normalized");
    const LossWeights& w = st.cfg.weights;
    const std::array<Plane, 3> planes{Plane::xy, Plane::xz, Plane::yz};
    LossRecord rec;
    rec.iteration = st.iteration + 1;

    Tensor<T> y = volume_to_tensor<T>(y_crop);

    // (1) forward super-resolving path, cached for the later generator update
    Tensor<T> x_hat = st.bundle.G.forward(y, true);

    const Tensor<T> y_xy = plane_batch(y, Plane::xy);
    std::array<Tensor<T>, 3> xhat_planes;
    for (int p = 0; p < 3; ++p) xhat_planes[p] = plane_batch(x_hat, planes[p]);

    // (2) D_X update: reals are lateral slices of y for every plane index
    st.slices_real_to_dx += y_xy.shape[0];  // one distinct real batch, shared by the three D_X
    for (int p = 0; p < 3; ++p) {
        zero_grads(st.bundle.DX[p].params());
        rec.d_x[p] = lsgan_d_loss(st.bundle.DX[p], y_xy, xhat_planes[p], w, true);
        st.adam_dx[p].step(st.bundle.DX[p].params());
        st.slices_fake_to_dx += xhat_planes[p].shape[0];
    }

    // (3) backward path on the detached x_hat, cached for F's update
    Tensor<T> y_hat = st.bundle.F.forward(x_hat, true);

    // (4) D_Y update: plane-matched reals and fakes
    std::array<Tensor<T>, 3> y_planes, yhat_planes;
    for (int p = 0; p < 3; ++p) {
        y_planes[p] = plane_batch(y, planes[p]);
        yhat_planes[p] = plane_batch(y_hat, planes[p]);
    }
    for (int p = 0; p < 3; ++p) {
        zero_grads(st.bundle.DY[p].params());
        rec.d_y[p] = lsgan_d_loss(st.bundle.DY[p], y_planes[p], yhat_planes[p], w, true);
        st.adam_dy[p].step(st.bundle.DY[p].params());
        st.slices_real_to_dy += y_planes[p].shape[0];
        st.slices_fake_to_dy += yhat_planes[p].shape[0];
    }

    // (5) joint generator update against the refreshed discriminators
    zero_grads(st.bundle.G.params());
    zero_grads(st.bundle.F.params());

    Tensor<T> g_xhat(x_hat.shape[0], x_hat.shape[1], x_hat.shape[2], x_hat.shape[3]);
    for (int p = 0; p < 3; ++p) {
        Tensor<T> g_fake;
        rec.adv_g += lsgan_g_loss(st.bundle.DX[p], xhat_planes[p], w, &g_fake);
        accumulate_plane_grad(g_xhat, g_fake, planes[p]);
        zero_grads(st.bundle.DX[p].params());  // D saw generator-loss gradients; discard
    }

    Tensor<T> g_yhat(y_hat.shape[0], y_hat.shape[1], y_hat.shape[2], y_hat.shape[3]);
    for (int p = 0; p < 3; ++p) {
        Tensor<T> g_fake;
        rec.adv_f += lsgan_g_loss(st.bundle.DY[p], yhat_planes[p], w, &g_fake);
        accumulate_plane_grad(g_yhat, g_fake, planes[p]);
        zero_grads(st.bundle.DY[p].params());
    }

    // F's adversarial gradients stop at the detached x_hat
    st.bundle.F.backward(g_yhat, /*need_input_grad=*/false);

    // cycle term F(G(y)) ~ y flows through F and onward into G
    Tensor<T> g_cycle;
    rec.cyc = cycle_loss(y, y_hat, &g_cycle);
    for (T& v : g_cycle.v) v = T(double(v) * w.lambda_cyc);
    Tensor<T> g_xhat_cycle = st.bundle.F.backward(g_cycle);
    for (size_t i = 0; i < g_xhat.size(); ++i) g_xhat.v[i] += g_xhat_cycle.v[i];

    st.bundle.G.backward(g_xhat, /*need_input_grad=*/false);
    st.adam_g.step(st.bundle.G.params());
    st.adam_f.step(st.bundle.F.params());

    rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!rec.finite()) {
        st.loss_log.push_back(rec);
        throw NumericError("training_step: non-finite loss at iteration " +
                           std::to_string(rec.iteration));
    }
    ++st.iteration;
    st.loss_log.push_back(rec);
    return rec;
}

// ---------------------------------------------------------------------------
// Loss log I/O (tab-separated; wall-clock excluded from reproducibility checks)
// ---------------------------------------------------------------------------

inline void write_loss_log_header(std::ostream& os) {
    os << "iteration\tadv_G\tadv_F\tcyc\td_x_xy\td_x_xz\td_x_yz\td_y_xy\td_y_xz\td_y_yz\twall_s\n";
}

inline void write_loss_record(std::ostream& os, const LossRecord& r) {
    os << r.iteration << std::setprecision(9);
    for (double v : {r.adv_g, r.adv_f, r.cyc, r.d_x[0], r.d_x[1], r.d_x[2], r.d_y[0], r.d_y[1],
                     r.d_y[2]})
        os << '\t' << v;
    os << '\t' << std::setprecision(3) << r.wall_s << '\n';
}

// ---------------------------------------------------------------------------
// Full training loop on one pre-processed volume
// ---------------------------------------------------------------------------

struct TrainCallbacks {
    std::function<void(const LossRecord&)> on_iteration;
    std::function<void(long long, const std::string&)> on_checkpoint;
};

// Resume training state (parameters, optimizer moments, iteration, sampler
// RNG) from a checkpoint written by train().
template <class T>
void resume_from(TrainState<T>& st, const std::string& checkpoint_path) {
    auto blob = st.optimizer_blob();
    CheckpointInfo info = load_checkpoint(checkpoint_path, &st.bundle, &blob);
    st.iteration = info.iteration;
    if (info.header.contains("extra") && info.header["extra"].contains("rng_state")) {
        const auto v = info.header["extra"]["rng_state"].get<std::vector<uint64_t>>();
        if (v.size() == 4) st.rng.set_state({v[0], v[1], v[2], v[3]});
    }
}

template <class T>
void train(TrainState<T>& st, const VolumeT<T>& volume, const std::string& checkpoint_dir,
           const TrainCallbacks& cb = {}) {
    if (volume.domain != IntensityDomain::normalized)
        throw ConfigError("train: volume must be normalized (run preprocess first)");

    // diced mode pre-cuts sub-regions and samples crops from a random one
    std::vector<VolumeT<T>> dice;
    if (st.cfg.sampling == SamplingMode::diced) {
        const int tile =
            std::min({st.cfg.dice_tile, volume.nz, volume.ny, volume.nx});
        if (tile < st.cfg.crop) throw ConfigError("train: dice tile smaller than crop");
        TileGrid grid = plan_tiles({volume.nz, volume.ny, volume.nx}, tile,
                                   std::min(st.cfg.dice_overlap, tile - 1), 0);
        for (const auto& o : grid.origins) dice.push_back(extract(volume, o, tile));
    }

    auto save = [&](const std::string& name) {
        if (checkpoint_dir.empty()) return std::string();
        const std::string path = checkpoint_dir + "/" + name;
        auto blob = st.optimizer_blob();
        nlohmann::json extra;
        const auto rs = st.rng.state();
        extra["rng_state"] = std::vector<uint64_t>(rs.begin(), rs.end());
        save_checkpoint(path, st.bundle, st.iteration, &blob, extra);
        return path;
    };

    if (st.iteration == 0) {
        const std::string p = save("checkpoint_initial.isore");
        if (cb.on_checkpoint && !p.empty()) cb.on_checkpoint(0, p);
    }

    const long long target = st.cfg.iterations;
    while (st.iteration < target) {
        const VolumeT<T>* src = &volume;
        if (!dice.empty()) src = &dice[st.rng.uniform_index(dice.size())];
        VolumeT<T> crop = sample_crop(*src, st.cfg.crop, st.cfg.augment, st.rng);
        LossRecord rec = training_step(st, crop);
        if (cb.on_iteration) cb.on_iteration(rec);
        if (st.cfg.checkpoint_every > 0 && st.iteration % st.cfg.checkpoint_every == 0 &&
            st.iteration < target) {
            const std::string p =
                save("checkpoint_" + std::to_string(st.iteration) + ".isore");
            if (cb.on_checkpoint && !p.empty()) cb.on_checkpoint(st.iteration, p);
        }
    }
    const std::string p = save("checkpoint_final.isore");
    if (cb.on_checkpoint && !p.empty()) cb.on_checkpoint(st.iteration, p);
    st.bundle.drop_caches();
}

}  // namespace isore
