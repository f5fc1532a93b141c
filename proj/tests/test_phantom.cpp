#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "isore/metrics.hpp"
#include "isore/phantom.hpp"

using namespace isore;

TEST_CASE("centred bead is isotropic and peaks at its centre") {
    Volume v(33, 33, 33, {0.5, 0.5, 0.5});
    BeadRecord bead{{8.0, 8.0, 8.0}, /*radius_um=*/1.0, /*amplitude=*/100.0};  // voxel 16
    render_bead(v, bead);
    const float peak = v.min_max().second;
    CHECK(v.at(16, 16, 16) == peak);  // centre voxel sits on the peak plateau
    for (int d = -4; d <= 4; ++d) {
        CHECK(v.at(16 + d, 16, 16) == Catch::Approx(v.at(16, 16 + d, 16)).margin(1e-6));
        CHECK(v.at(16 + d, 16, 16) == Catch::Approx(v.at(16, 16, 16 + d)).margin(1e-6));
    }
}

TEST_CASE("bead generation is deterministic under the seed") {
    BeadSpec spec;
    spec.dims = {40, 40, 40};
    spec.count = 5;
    spec.radius_um = 0.4;
    spec.min_separation_um = 4.0;
    spec.seed = 123;
    PhantomTruth a = make_beads(spec);
    PhantomTruth b = make_beads(spec);
    CHECK(std::memcmp(a.volume.data.data(), b.volume.data.data(), a.volume.size() * 4) == 0);
    spec.seed = 124;
    PhantomTruth c = make_beads(spec);
    CHECK(std::memcmp(a.volume.data.data(), c.volume.data.data(), a.volume.size() * 4) != 0);
}

TEST_CASE("bead placement failures are reported") {
    BeadSpec spec;
    spec.dims = {24, 24, 24};
    spec.count = 2000;  // cannot fit at the required separation
    spec.radius_um = 0.4;
    spec.min_separation_um = 4.0;
    CHECK_THROWS_AS(make_beads(spec), NumericError);
    BeadSpec zero = spec;
    zero.count = 0;
    CHECK_THROWS_AS(make_beads(zero), ConfigError);
}

TEST_CASE("300 beads in a 360^3 stack are all recovered by the detector") {
    BeadSpec spec;
    spec.dims = {360, 360, 360};
    spec.voxel_um = 0.5;
    spec.count = 300;
    spec.radius_um = 0.25;
    spec.min_separation_um = 3.0;  // separations chosen so fits stay clean
    spec.edge_margin_um = 2.0;
    spec.seed = 77;
    PhantomTruth ph = make_beads(spec);
    REQUIRE(ph.beads.size() == 300);
    SpotSet spots = detect_spots(ph.volume, spec.amplitude * 0.05, 2.0);
    int matched = 0;
    for (const auto& b : ph.beads) {
        const int bz = int(std::floor(b.center_um[0] / spec.voxel_um));
        const int by = int(std::floor(b.center_um[1] / spec.voxel_um));
        const int bx = int(std::floor(b.center_um[2] / spec.voxel_um));
        for (const auto& s : spots.spots)
            if (std::abs(s.z - bz) <= 1 && std::abs(s.y - by) <= 1 && std::abs(s.x - bx) <= 1) {
                ++matched;
                break;
            }
    }
    CHECK(matched >= 295);
}

TEST_CASE("straight axial tube has a circular cross-section of the right width") {
    Volume v(40, 33, 33, {0.5, 0.5, 0.5});
    FilamentRecord fil;
    fil.tube_radius_um = 0.4;
    fil.amplitude = 100.0;
    fil.points_um = {{2.0, 8.0, 8.0}, {18.0, 8.0, 8.0}};  // straight along z
    render_filament(v, fil);
    ImageT<double> patch(17, 17);
    for (int y = 0; y < 17; ++y)
        for (int x = 0; x < 17; ++x) patch.at(y, x) = v.at(20, 8 + y, 8 + x);
    GaussianFit2D fit = fit_gaussian_2d(patch);
    const double fwhm_um = 0.5 * 0.5 * (fit.fwhm_y() + fit.fwhm_x());
    CHECK(fwhm_um == Catch::Approx(2 * fil.tube_radius_um).epsilon(0.10));
    CHECK(fit.sigma_y == Catch::Approx(fit.sigma_x).epsilon(0.05));  // circular
}

TEST_CASE("zero filament paths give a zero volume; seeds reproduce") {
    FilamentSpec spec;
    spec.dims = {24, 24, 24};
    spec.n_paths = 0;
    PhantomTruth empty = make_filaments(spec);
    for (float x : empty.volume.data) CHECK(x == 0.f);

    spec.n_paths = 3;
    spec.seed = 31;
    PhantomTruth a = make_filaments(spec);
    PhantomTruth b = make_filaments(spec);
    CHECK(std::memcmp(a.volume.data.data(), b.volume.data.data(), a.volume.size() * 4) == 0);
    CHECK(a.filaments.size() == 3);
}

TEST_CASE("gaussian PSF kernel: normalization, symmetry, anisotropy ratio") {
    Volume k = gaussian_psf({2.0, 1.0, 1.0}, 1.0);
    CHECK(k.nz % 2 == 1);
    CHECK(k.ny % 2 == 1);
    CHECK(k.nx % 2 == 1);
    double sum = 0;
    for (float w : k.data) sum += w;
    CHECK(sum == Catch::Approx(1.0).margin(1e-9));

    // central xz section fits to a 2:1 FWHM ratio within 2%
    ImageT<double> xz(k.nz, k.nx);
    for (int z = 0; z < k.nz; ++z)
        for (int x = 0; x < k.nx; ++x) xz.at(z, x) = k.at(z, k.ny / 2, x);
    GaussianFit2D fit = fit_gaussian_2d(xz);
    CHECK(fit.fwhm_y() / fit.fwhm_x() == Catch::Approx(2.0).epsilon(0.02));

    // equal sigmas -> permutation symmetric kernel
    Volume iso = gaussian_psf({1.0, 1.0, 1.0}, 1.0);
    for (int z = 0; z < iso.nz; ++z)
        for (int y = 0; y < iso.ny; ++y)
            for (int x = 0; x < iso.nx; ++x) {
                CHECK(iso.at(z, y, x) == iso.at(y, z, x));
                CHECK(iso.at(z, y, x) == iso.at(x, y, z));
            }
    CHECK_THROWS_AS(gaussian_psf({0.0, 1.0, 1.0}, 1.0), ConfigError);
    CHECK_THROWS_AS(gaussian_psf({1.0, 1.0, 1.0}, 1.0, 2.0), ConfigError);
}

TEST_CASE("identity degradation reproduces the truth bitwise") {
    BeadSpec spec;
    spec.dims = {24, 24, 24};
    spec.count = 2;
    spec.radius_um = 0.4;
    spec.min_separation_um = 3.0;
    spec.seed = 3;
    PhantomTruth truth = make_beads(spec);
    DegradationModel model;
    model.psf_sigma_um = {1e-9, 1e-9, 1e-9};  // delta kernel limit
    model.axial_step_um = spec.voxel_um;
    model.noise = {};
    Volume out = degrade(truth, model);
    CHECK(std::memcmp(out.data.data(), truth.volume.data.data(), out.size() * 4) == 0);
}

TEST_CASE("degraded beads show the expected axial elongation") {
    BeadSpec spec;
    spec.dims = {96, 96, 96};
    spec.voxel_um = 0.5;
    spec.count = 12;
    spec.radius_um = 0.4;
    spec.amplitude = 2000.0;
    spec.min_separation_um = 10.0;
    spec.edge_margin_um = 10.0;
    spec.seed = 99;
    PhantomTruth truth = make_beads(spec);
    DegradationModel model;
    model.psf_sigma_um = {2.0, 1.0, 1.0};
    model.axial_step_um = 1.0;  // 2x undersampling
    model.seed = 7;
    Volume observed = degrade(truth, model);

    SpotSet spots = detect_spots(observed, 1.0, 8.0);
    REQUIRE(spots.count() >= 10);
    const double exp_fwhm_vox = kFwhmPerSigma * 2.0 / 0.5;
    FwhmReport axial = fwhm_report(observed, spots, FwhmPlane::axial, exp_fwhm_vox);
    FwhmReport lateral = fwhm_report(observed, spots, FwhmPlane::lateral, exp_fwhm_vox / 2);
    const double ratio = axial.mean_um / lateral.mean_um;
    CHECK(ratio > 1.7);
    CHECK(ratio < 2.3);
    CHECK(axial.mean_um > lateral.mean_um);  // sigma_z > sigma_x
}

TEST_CASE("gaussian blur conserves total intensity away from the boundary") {
    BeadSpec spec;
    spec.dims = {48, 48, 48};
    spec.count = 3;
    spec.radius_um = 0.4;
    spec.min_separation_um = 5.0;
    spec.edge_margin_um = 8.0;  // keep blur support inside the volume
    spec.seed = 11;
    PhantomTruth truth = make_beads(spec);
    Volume blurred = gaussian_blur(truth.volume, {1.5, 0.8, 0.8});
    double before = 0, after = 0;
    for (float x : truth.volume.data) before += x;
    for (float x : blurred.data) after += x;
    CHECK(after == Catch::Approx(before).epsilon(1e-4));
}

TEST_CASE("noise is reproducible under the model seed") {
    BeadSpec spec;
    spec.dims = {32, 32, 32};
    spec.count = 3;
    spec.radius_um = 0.4;
    spec.min_separation_um = 4.0;
    spec.seed = 21;
    PhantomTruth truth = make_beads(spec);
    DegradationModel model;
    model.psf_sigma_um = {1.0, 0.6, 0.6};
    model.axial_step_um = 0.5;
    model.noise.poisson_scale = 2.0;
    model.noise.gaussian_sigma = 1.0;
    model.seed = 42;
    Volume a = degrade(truth, model);
    Volume b = degrade(truth, model);
    CHECK(std::memcmp(a.data.data(), b.data.data(), a.size() * 4) == 0);
    model.seed = 43;
    Volume c = degrade(truth, model);
    CHECK(std::memcmp(a.data.data(), c.data.data(), a.size() * 4) != 0);
}

TEST_CASE("non-integer undersampling is rejected") {
    BeadSpec spec;
    spec.dims = {16, 16, 16};
    spec.count = 1;
    spec.radius_um = 0.4;
    PhantomTruth truth = make_beads(spec);
    DegradationModel model;
    model.axial_step_um = 0.75;  // 1.5 voxels
    CHECK_THROWS_AS(degrade(truth, model), ConfigError);
}

TEST_CASE("phantom manifest is written") {
    BeadSpec spec;
    spec.dims = {16, 16, 16};
    spec.count = 2;
    spec.radius_um = 0.4;
    spec.min_separation_um = 3.0;
    PhantomTruth truth = make_beads(spec);
    DegradationModel model;
    const auto path =
        (std::filesystem::temp_directory_path() / "isore_phantom_manifest.txt").string();
    write_phantom_manifest(truth, &model, path);
    std::ifstream f(path);
    REQUIRE(f.good());
    std::string first;
    std::getline(f, first);
    CHECK(first.rfind("seed:", 0) == 0);
}
