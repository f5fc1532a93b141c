#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>

#include "isore/phantom.hpp"
#include "isore/train.hpp"

using namespace isore;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config(uint64_t seed = 7) {
    TrainConfig cfg;
    cfg.crop = 32;
    cfg.iterations = 3;
    cfg.lr = 1e-4;
    cfg.seed = seed;
    cfg.augment.z_rotation = false;
    cfg.augment.random_flip = true;
    cfg.checkpoint_every = 0;
    cfg.generator.kind = GeneratorKind::unet3d;
    cfg.generator.base_channels = 2;
    cfg.backward_generator.kind = GeneratorKind::dlg3d;
    cfg.backward_generator.dlg_channels = 2;
    cfg.discriminator.channels = {4, 4, 8, 8};
    return cfg;
}

Volume normalized_phantom(int n, uint64_t seed) {
    BeadSpec spec;
    spec.dims = {n, n, n};
    spec.voxel_um = 0.5;
    spec.count = 6;
    spec.radius_um = 0.5;
    spec.min_separation_um = 5.0;
    spec.edge_margin_um = 3.0;
    spec.seed = seed;
    PhantomTruth truth = make_beads(spec);
    Volume blurred = gaussian_blur(truth.volume, {1.5, 0.8, 0.8});
    auto [norm, rec] = normalize_percentile(blurred, 0.03, 99.97);
    return norm;
}

template <class T>
std::vector<T> snapshot(std::vector<ParamRef<T>> params) {
    std::vector<T> all;
    for (auto& p : params) all.insert(all.end(), p.value->begin(), p.value->end());
    return all;
}

}  // namespace

TEST_CASE("lsgan losses match their closed forms on constant maps") {
    auto constant_map = [](double v) { return Tensor<float>(2, 1, 5, 5, float(v)); };
    // discriminator side: mean (real-1)^2 + mean fake^2
    CHECK(lsgan_map_loss(constant_map(1.0), 1.0) + lsgan_map_loss(constant_map(0.0), 0.0) ==
          Catch::Approx(0.0));
    CHECK(lsgan_map_loss(constant_map(0.0), 1.0) + lsgan_map_loss(constant_map(0.0), 0.0) ==
          Catch::Approx(1.0));
    CHECK(lsgan_map_loss(constant_map(0.5), 1.0) + lsgan_map_loss(constant_map(0.5), 0.0) ==
          Catch::Approx(0.5));
    // generator side: mean (fake-1)^2
    CHECK(lsgan_map_loss(constant_map(1.0), 1.0) == Catch::Approx(0.0));
    CHECK(lsgan_map_loss(constant_map(0.0), 1.0) == Catch::Approx(1.0));
    CHECK(lsgan_map_loss(constant_map(-1.0), 1.0) == Catch::Approx(4.0));
}

TEST_CASE("lsgan losses equal brute-force evaluation on 5x5 maps") {
    Rng rng(17);
    Tensor<float> real(3, 1, 5, 5), fake(3, 1, 5, 5);
    for (auto& v : real.v) v = float(rng.uniform(-2.0, 2.0));
    for (auto& v : fake.v) v = float(rng.uniform(-2.0, 2.0));
    double dr = 0, df = 0;
    for (float v : real.v) dr += (v - 1.0) * (v - 1.0);
    for (float v : fake.v) df += double(v) * v;
    const double expected = dr / real.size() + df / fake.size();
    CHECK(lsgan_map_loss(real, 1.0) + lsgan_map_loss(fake, 0.0) ==
          Catch::Approx(expected).margin(1e-6));
    double gf = 0;
    for (float v : fake.v) gf += (v - 1.0) * (v - 1.0);
    CHECK(lsgan_map_loss(fake, 1.0) == Catch::Approx(gf / fake.size()).margin(1e-6));
}

TEST_CASE("lsgan through a zeroed discriminator scores the formula") {
    DiscriminatorConfig dc;
    dc.channels = {4, 4, 8, 8};
    PatchDisc2d<float> d(dc, 5);
    for (auto& p : d.params()) std::fill(p.value->begin(), p.value->end(), 0.f);
    Tensor<float> real(2, 1, 32, 32, 0.5f), fake(2, 1, 32, 32, -0.5f);
    // D == 0 everywhere -> (0-1)^2 + 0^2 = 1
    CHECK(lsgan_d_loss(d, real, fake) == Catch::Approx(1.0));
    CHECK(lsgan_g_loss(d, fake) == Catch::Approx(1.0));
}

TEST_CASE("cycle loss basics and brute force") {
    Tensor<float> y(1, 4, 4, 4);
    Rng rng(3);
    for (auto& v : y.v) v = float(rng.uniform(-1.0, 1.0));
    CHECK(cycle_loss(y, y) == Catch::Approx(0.0));

    Tensor<float> offset = y;
    for (auto& v : offset.v) v += 0.25f;
    CHECK(cycle_loss(y, offset) == Catch::Approx(0.25).margin(1e-6));

    Tensor<float> other(1, 4, 4, 4);
    for (auto& v : other.v) v = float(rng.uniform(-1.0, 1.0));
    double acc = 0;
    for (size_t i = 0; i < y.size(); ++i) acc += std::abs(double(other.v[i]) - y.v[i]);
    CHECK(cycle_loss(y, other) == Catch::Approx(acc / y.size()).margin(1e-6));

    Tensor<float> bad(1, 4, 4, 5);
    CHECK_THROWS_AS(cycle_loss(y, bad), ConfigError);
}

TEST_CASE("sample_crop returns the volume itself when dims equal the crop") {
    Volume v = normalized_phantom(32, 5);
    Rng rng(1);
    AugmentConfig aug;
    aug.random_flip = false;
    Volume crop = sample_crop(v, 32, aug, rng);
    CHECK(std::memcmp(crop.data.data(), v.data.data(), v.size() * 4) == 0);
    CHECK_THROWS_AS(sample_crop(v, 36, aug, rng), ConfigError);
}

TEST_CASE("axis flips are involutions") {
    Volume v = normalized_phantom(32, 6);
    for (int axis = 0; axis < 3; ++axis) {
        Volume twice = flip_axis(flip_axis(v, axis), axis);
        CHECK(std::memcmp(twice.data.data(), v.data.data(), v.size() * 4) == 0);
    }
}

TEST_CASE("sample_crop is deterministic under the rng seed") {
    Volume v = normalized_phantom(48, 7);
    AugmentConfig aug;
    aug.random_flip = true;
    Rng r1(9), r2(9);
    Volume a = sample_crop(v, 32, aug, r1);
    Volume b = sample_crop(v, 32, aug, r2);
    CHECK(std::memcmp(a.data.data(), b.data.data(), a.size() * 4) == 0);
}

TEST_CASE("one training step logs nine finite loss components") {
    TrainState<float> st(tiny_config());
    Volume crop = normalized_phantom(32, 11);
    LossRecord rec = training_step(st, crop);
    CHECK(st.iteration == 1);
    CHECK(rec.iteration == 1);
    CHECK(rec.finite());
    CHECK(st.loss_log.size() == 1);
    // slice audit: crop reals to D_X, 3*crop fakes; 3*crop reals and fakes to D_Y
    CHECK(st.slices_real_to_dx == 32);
    CHECK(st.slices_fake_to_dx == 3 * 32);
    CHECK(st.slices_real_to_dy == 3 * 32);
    CHECK(st.slices_fake_to_dy == 3 * 32);
}

TEST_CASE("zero learning rate leaves every parameter bitwise unchanged") {
    TrainConfig cfg = tiny_config();
    cfg.lr = 0.0;
    TrainState<float> st(cfg);
    auto before_g = snapshot(st.bundle.G.params());
    auto before_f = snapshot(st.bundle.F.params());
    auto before_d = snapshot(st.bundle.DX[0].params());
    training_step(st, normalized_phantom(32, 12));
    CHECK(snapshot(st.bundle.G.params()) == before_g);
    CHECK(snapshot(st.bundle.F.params()) == before_f);
    CHECK(snapshot(st.bundle.DX[0].params()) == before_d);
}

TEST_CASE("repeated discriminator evaluation on a fixed batch is identical") {
    TrainState<float> st(tiny_config());
    Volume crop = normalized_phantom(32, 13);
    Tensor<float> y = plane_batch(volume_to_tensor<float>(crop), Plane::xy);
    Tensor<float> fake = y;
    for (auto& v : fake.v) v *= 0.5f;
    const double a = lsgan_d_loss(st.bundle.DX[0], y, fake);
    const double b = lsgan_d_loss(st.bundle.DX[0], y, fake);
    CHECK(a == b);
}

TEST_CASE("discriminator updates never touch generator parameters and vice versa") {
    TrainState<float> st(tiny_config());
    Volume crop = normalized_phantom(32, 14);
    Tensor<float> vol = volume_to_tensor<float>(crop);
    Tensor<float> y = plane_batch(vol, Plane::xy);
    Tensor<float> x_hat_vol = st.bundle.G.forward(vol, true);
    Tensor<float> x_hat = plane_batch(x_hat_vol, Plane::xz);

    auto g_before = snapshot(st.bundle.G.params());
    auto f_before = snapshot(st.bundle.F.params());
    // a D-only update
    zero_grads(st.bundle.DX[0].params());
    lsgan_d_loss(st.bundle.DX[0], y, x_hat, {}, true);
    st.adam_dx[0].step(st.bundle.DX[0].params());
    CHECK(snapshot(st.bundle.G.params()) == g_before);
    CHECK(snapshot(st.bundle.F.params()) == f_before);

    // a generator-only update
    auto d_before = snapshot(st.bundle.DX[0].params());
    zero_grads(st.bundle.G.params());
    Tensor<float> g_fake;
    lsgan_g_loss(st.bundle.DX[0], x_hat, {}, &g_fake);
    zero_grads(st.bundle.DX[0].params());
    st.bundle.G.backward(g_fake);
    st.adam_g.step(st.bundle.G.params());
    CHECK(snapshot(st.bundle.DX[0].params()) == d_before);
    CHECK(snapshot(st.bundle.G.params()) != g_before);
}

TEST_CASE("training runs are reproducible under identical seeds") {
    Volume v = normalized_phantom(48, 15);
    TrainConfig cfg = tiny_config(21);
    cfg.iterations = 3;
    TrainState<float> s1(cfg), s2(cfg);
    train(s1, v, "");
    train(s2, v, "");
    REQUIRE(s1.loss_log.size() == 3);
    REQUIRE(s2.loss_log.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(s1.loss_log[i].adv_g == s2.loss_log[i].adv_g);
        CHECK(s1.loss_log[i].adv_f == s2.loss_log[i].adv_f);
        CHECK(s1.loss_log[i].cyc == s2.loss_log[i].cyc);
        for (int p = 0; p < 3; ++p) {
            CHECK(s1.loss_log[i].d_x[p] == s2.loss_log[i].d_x[p]);
            CHECK(s1.loss_log[i].d_y[p] == s2.loss_log[i].d_y[p]);
        }
    }
    CHECK(snapshot(s1.bundle.G.params()) == snapshot(s2.bundle.G.params()));
}

TEST_CASE("train writes loadable checkpoints and zero iterations keeps the initial one") {
    const auto dir = fs::temp_directory_path() / "isore_train_ckpt";
    fs::remove_all(dir);
    fs::create_directories(dir);
    Volume v = normalized_phantom(48, 16);

    TrainConfig cfg = tiny_config(31);
    cfg.iterations = 0;
    TrainState<float> st0(cfg);
    train(st0, v, dir.string());
    CHECK(fs::exists(dir / "checkpoint_initial.isore"));
    CHECK(fs::exists(dir / "checkpoint_final.isore"));

    cfg.iterations = 4;
    cfg.checkpoint_every = 2;
    TrainState<float> st(cfg);
    train(st, v, dir.string());
    CHECK(fs::exists(dir / "checkpoint_2.isore"));
    ModelBundle<float> loaded;
    CheckpointInfo info = load_checkpoint((dir / "checkpoint_final.isore").string(), &loaded);
    CHECK(info.iteration == 4);
    CHECK(info.has_optimizer);
}

TEST_CASE("resume continues the iteration count and the crop stream") {
    const auto dir = fs::temp_directory_path() / "isore_train_resume";
    fs::remove_all(dir);
    fs::create_directories(dir);
    Volume v = normalized_phantom(48, 17);

    // one continuous 6-iteration run
    TrainConfig cfg = tiny_config(77);
    cfg.iterations = 6;
    TrainState<float> full(cfg);
    train(full, v, "");

    // 3 iterations, checkpoint, then resume for 3 more
    cfg.iterations = 3;
    TrainState<float> part(cfg);
    train(part, v, dir.string());
    TrainConfig cfg2 = cfg;
    cfg2.iterations = 6;
    TrainState<float> resumed(cfg2);
    resume_from(resumed, (dir / "checkpoint_final.isore").string());
    CHECK(resumed.iteration == 3);
    train(resumed, v, "");
    CHECK(resumed.iteration == 6);
    CHECK(snapshot(resumed.bundle.G.params()) == snapshot(full.bundle.G.params()));
}

TEST_CASE("diced sampling trains on sub-regions") {
    Volume v = normalized_phantom(48, 18);
    TrainConfig cfg = tiny_config(5);
    cfg.sampling = SamplingMode::diced;
    cfg.dice_tile = 40;
    cfg.dice_overlap = 8;
    cfg.iterations = 2;
    TrainState<float> st(cfg);
    train(st, v, "");
    CHECK(st.iteration == 2);
    CHECK(st.loss_log.size() == 2);
}

TEST_CASE("loss log serialization round trips the numeric columns") {
    LossRecord r;
    r.iteration = 3;
    r.adv_g = 0.125;
    r.adv_f = 0.5;
    r.cyc = 1.0 / 3.0;
    r.d_x[1] = 2.0;
    r.d_y[2] = 4.5;
    r.wall_s = 0.77;
    std::ostringstream os;
    write_loss_log_header(os);
    write_loss_record(os, r);
    std::istringstream is(os.str());
    std::string header, line;
    std::getline(is, header);
    std::getline(is, line);
    CHECK(header.rfind("iteration\t", 0) == 0);
    std::istringstream ls(line);
    long long it;
    double vals[9];
    ls >> it;
    for (double& v : vals) ls >> v;
    CHECK(it == 3);
    CHECK(vals[0] == Catch::Approx(0.125));
    CHECK(vals[2] == Catch::Approx(1.0 / 3.0).epsilon(1e-9));
    CHECK(vals[8] == Catch::Approx(4.5));
}
