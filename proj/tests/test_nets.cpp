#include <catch2/catch_amalgamated.hpp>

#include <cstring>

#include "isore/checkpoint.hpp"
#include "isore/nets.hpp"

using namespace isore;

namespace {

GeneratorConfig tiny_unet_cfg(int base = 2) {
    GeneratorConfig c;
    c.kind = GeneratorKind::unet3d;
    c.base_channels = base;
    return c;
}

GeneratorConfig tiny_dlg_cfg(int width = 4) {
    GeneratorConfig c;
    c.kind = GeneratorKind::dlg3d;
    c.dlg_channels = width;
    return c;
}

DiscriminatorConfig tiny_disc_cfg() {
    DiscriminatorConfig c;
    c.channels = {4, 8, 8, 8};
    return c;
}

template <class T>
Tensor<T> random_input(int d, int h, int w, uint64_t seed) {
    Tensor<T> t(1, d, h, w);
    Rng rng(seed);
    for (T& v : t.v) v = T(rng.uniform(-1.0, 1.0));
    return t;
}

template <class T>
double checksum(std::vector<ParamRef<T>> params) {
    double s = 0;
    for (auto& p : params)
        for (T v : *p.value) s += double(v);
    return s;
}

}  // namespace

TEST_CASE("unet3d preserves shape and output range") {
    Generator<float> g(tiny_unet_cfg(), 1);
    for (int n : {12, 16, 20}) {
        Tensor<float> y = g.forward(random_input<float>(n, n, n, n), false);
        CHECK(y.shape == std::array<int, 4>{1, n, n, n});
        for (float v : y.v) {
            CHECK(std::isfinite(v));
            CHECK(v >= -1.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("unet3d output on an all-(-1) input stays bounded") {
    Generator<float> g(tiny_unet_cfg(), 5);
    Tensor<float> x(1, 16, 16, 16, -1.0f);
    Tensor<float> y = g.forward(x, false);
    for (float v : y.v) {
        CHECK(std::isfinite(v));
        CHECK(std::abs(v) <= 1.0f);
    }
}

TEST_CASE("unet3d rejects dims not divisible by 4") {
    Generator<float> g(tiny_unet_cfg(), 1);
    CHECK_THROWS_AS(g.forward(random_input<float>(10, 12, 12, 3), false), ConfigError);
    Volume v(12, 12, 14);  // nx % 4 != 0
    v.domain = IntensityDomain::normalized;
    CHECK_THROWS_AS(generator_apply(g, v), ConfigError);
    Volume raw(12, 12, 12);
    CHECK_THROWS_AS(generator_apply(g, raw), ConfigError);  // not normalized
}

TEST_CASE("builders are deterministic under the seed") {
    for (auto cfg : {tiny_unet_cfg(), tiny_dlg_cfg()}) {
        Generator<float> a(cfg, 99), b(cfg, 99), c(cfg, 100);
        auto pa = a.params(), pb = b.params(), pc = c.params();
        REQUIRE(pa.size() == pb.size());
        bool all_equal = true, any_diff_seed = false;
        for (size_t i = 0; i < pa.size(); ++i) {
            all_equal &= *pa[i].value == *pb[i].value;
            any_diff_seed |= *pa[i].value != *pc[i].value;
        }
        CHECK(all_equal);
        CHECK(any_diff_seed);
    }
    PatchDisc2d<float> d1(tiny_disc_cfg(), 7), d2(tiny_disc_cfg(), 7);
    CHECK(checksum(d1.params()) == checksum(d2.params()));
}

TEST_CASE("dlg receptive field is 13 voxels") {
    GeneratorConfig cfg = tiny_dlg_cfg();
    DeepLinearGen3d<float> dlg(cfg, 3);
    CHECK(dlg.receptive_field() == 13);

    // empirical audit: impulse response support along each axis
    Tensor<float> x(1, 27, 27, 27, 0.f);
    x.at(0, 13, 13, 13) = 1.f;
    Tensor<float> y0 = dlg.forward(Tensor<float>(1, 27, 27, 27, 0.f), false);
    Tensor<float> y = dlg.forward(x, false);
    int lo = 27, hi = -1;
    for (int z = 0; z < 27; ++z)
        if (std::abs(y.at(0, z, 13, 13) - y0.at(0, z, 13, 13)) > 1e-7f) {
            lo = std::min(lo, z);
            hi = std::max(hi, z);
        }
    CHECK(hi - lo + 1 == 13);
}

TEST_CASE("dlg is affine: F(a*u + (1-a)*w) = a*F(u) + (1-a)*F(w)") {
    Generator<double> f(tiny_dlg_cfg(), 17);
    Tensor<double> u = random_input<double>(32, 32, 32, 1);
    Tensor<double> w = random_input<double>(32, 32, 32, 2);
    for (double alpha : {0.0, 0.3, 0.7, 1.0}) {
        Tensor<double> mix(1, 32, 32, 32);
        for (size_t i = 0; i < mix.size(); ++i)
            mix.v[i] = alpha * u.v[i] + (1 - alpha) * w.v[i];
        Tensor<double> fu = f.forward(u, false);
        Tensor<double> fw = f.forward(w, false);
        Tensor<double> fm = f.forward(mix, false);
        double max_err = 0;
        for (size_t i = 0; i < fm.size(); ++i)
            max_err = std::max(max_err, std::abs(fm.v[i] - (alpha * fu.v[i] + (1 - alpha) * fw.v[i])));
        CHECK(max_err < 1e-4);
    }
}

TEST_CASE("discriminator map sizes follow the closed-form formula") {
    DiscriminatorConfig cfg;  // spec defaults: 4 blocks, k4 s2 p1, final k4 s1 p1
    cfg.channels = {4, 8, 8, 8};
    CHECK(discriminator_map_size(cfg, 132) == 7);
    CHECK(discriminator_map_size(cfg, 64) == 3);
    PatchDisc2d<float> d(cfg, 21);
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 32 + int(rng.uniform_index(120));
        std::vector<Image> batch(1, Image(n, n));
        for (auto& v : batch[0].data) v = float(rng.uniform(-1.0, 1.0));
        auto maps = discriminator_apply(d, batch);
        const int expect = discriminator_map_size(cfg, n);
        CHECK(maps[0].h == expect);
        CHECK(maps[0].w == expect);
    }
    CHECK_THROWS_AS(discriminator_map_size(cfg, 16), ConfigError);
    std::vector<Image> tiny(1, Image(16, 16, 0.f));
    CHECK_THROWS_AS(discriminator_apply(d, tiny), Error);
}

TEST_CASE("zeroed discriminator yields a zero map; batch order is preserved") {
    PatchDisc2d<float> d(tiny_disc_cfg(), 2);
    for (auto& p : d.params()) std::fill(p.value->begin(), p.value->end(), 0.f);
    std::vector<Image> batch(3, Image(40, 40));
    Rng rng(6);
    for (auto& img : batch)
        for (auto& v : img.data) v = float(rng.uniform(-1.0, 1.0));
    auto maps = discriminator_apply(d, batch);
    REQUIRE(maps.size() == 3);
    for (const auto& m : maps)
        for (float v : m.data) CHECK(v == 0.f);

    PatchDisc2d<float> dr(tiny_disc_cfg(), 3);
    auto fwd = discriminator_apply(dr, batch);
    std::vector<Image> swapped{batch[2], batch[0], batch[1]};
    auto swp = discriminator_apply(dr, swapped);
    CHECK(std::memcmp(fwd[0].data.data(), swp[1].data.data(), fwd[0].data.size() * 4) == 0);
    CHECK(std::memcmp(fwd[2].data.data(), swp[0].data.data(), fwd[2].data.size() * 4) == 0);
}

namespace {

// central finite differences against analytic gradients on sampled parameters
template <class Net, class MakeLoss>
void gradient_check(Net& net, std::vector<ParamRef<double>> params, const MakeLoss& loss_of,
                    const Tensor<double>& gsum_seed, int min_params, double tol) {
    // analytic pass
    for (auto& p : params) std::fill(p.grad->begin(), p.grad->end(), 0.0);
    net.forward(gsum_seed, true);
    Tensor<double> ones = loss_of();
    net.backward(ones);

    Rng rng(12345);
    int checked = 0, failures = 0;
    double worst = 0;
    while (checked < min_params) {
        auto& p = params[rng.uniform_index(params.size())];
        if (p.value->empty()) continue;
        const size_t j = rng.uniform_index(p.value->size());
        const double w0 = (*p.value)[j];
        const double h = 3e-6 * (1.0 + std::abs(w0));
        auto eval = [&](double wv) {
            (*p.value)[j] = wv;
            Tensor<double> y = net.forward(gsum_seed, false);
            double s = 0;
            for (double v : y.v) s += v;
            return s;
        };
        const double fplus = eval(w0 + h);
        const double fminus = eval(w0 - h);
        (*p.value)[j] = w0;
        const double fd = (fplus - fminus) / (2 * h);
        const double an = (*p.grad)[j];
        if (std::abs(fd) < 1e-8 && std::abs(an) < 1e-8) continue;  // dead unit, no signal
        const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
        worst = std::max(worst, rel);
        if (rel > tol) ++failures;
        ++checked;
    }
    INFO("worst relative gradient error " << worst);
    CHECK(failures == 0);
}

}  // namespace

TEST_CASE("unet3d analytic gradients match finite differences") {
    UNet3d<double> net(2, 31);
    Tensor<double> x = random_input<double>(8, 8, 8, 77);
    auto params = net.params();
    // loss = sum of outputs -> upstream gradient of ones
    gradient_check(
        net, params, [&] { return Tensor<double>(1, 8, 8, 8, 1.0); }, x, 120, 1e-3);
}

TEST_CASE("dlg analytic gradients match finite differences") {
    GeneratorConfig cfg = tiny_dlg_cfg(3);
    DeepLinearGen3d<double> net(cfg, 13);
    Tensor<double> x = random_input<double>(16, 16, 16, 55);
    gradient_check(
        net, net.params(), [&] { return Tensor<double>(1, 16, 16, 16, 1.0); }, x, 60, 1e-3);
}

TEST_CASE("discriminator analytic gradients match finite differences") {
    DiscriminatorConfig cfg;
    cfg.channels = {3, 4, 4, 4};
    PatchDisc2d<double> net(cfg, 301);
    Tensor<double> x(2, 1, 36, 36);
    Rng rng(8);
    for (double& v : x.v) v = rng.uniform(-1.0, 1.0);
    const int mh = discriminator_map_size(cfg, 36);
    gradient_check(
        net, net.params(), [&] { return Tensor<double>(2, 1, mh, mh, 1.0); }, x, 60, 1e-3);
}

TEST_CASE("checkpoint round trip reproduces forward outputs bitwise") {
    GeneratorConfig gc = tiny_unet_cfg(3);
    GeneratorConfig fc = tiny_dlg_cfg(4);
    DiscriminatorConfig dc = tiny_disc_cfg();
    ModelBundle<float> bundle(gc, fc, dc, 2024);

    Tensor<float> x = random_input<float>(16, 16, 16, 4);
    Tensor<float> y_ref = bundle.G.forward(x, false);
    Tensor<float> f_ref = bundle.F.forward(x, false);

    const auto path = (std::filesystem::temp_directory_path() / "isore_ckpt_test.isore").string();
    save_checkpoint(path, bundle, 42);

    ModelBundle<float> loaded;
    CheckpointInfo info = load_checkpoint(path, &loaded);
    CHECK(info.iteration == 42);
    CHECK(loaded.g_cfg.base_channels == 3);
    Tensor<float> y2 = loaded.G.forward(x, false);
    Tensor<float> f2 = loaded.F.forward(x, false);
    CHECK(std::memcmp(y2.v.data(), y_ref.v.data(), y_ref.size() * 4) == 0);
    CHECK(std::memcmp(f2.v.data(), f_ref.v.data(), f_ref.size() * 4) == 0);

    CHECK_THROWS_AS(load_checkpoint<float>("/nonexistent.isore", nullptr), IoError);
}

TEST_CASE("parameter counts are reported per component") {
    ModelBundle<float> bundle(tiny_unet_cfg(2), tiny_dlg_cfg(4), tiny_disc_cfg(), 5);
    CHECK(bundle.G.parameter_count() > 0);
    CHECK(bundle.F.parameter_count() > 0);
    CHECK(bundle.DX[0].parameter_count() == bundle.DY[0].parameter_count());
}

TEST_CASE("generator config validation") {
    GeneratorConfig bad = tiny_dlg_cfg();
    bad.dlg_pads = {3, 2, 1};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    GeneratorConfig bad2 = tiny_dlg_cfg();
    bad2.dlg_pads = {0, 0, 0, 0, 0, 0};  // not size-preserving
    CHECK_THROWS_AS(bad2.validate(), ConfigError);
    DiscriminatorConfig dbad;
    dbad.channels = {64};
    CHECK_THROWS_AS(dbad.validate(), ConfigError);
}
