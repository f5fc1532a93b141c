#pragma once

#include <iostream>

#include "isore/config.hpp"
#include "isore/metrics.hpp"
#include "isore/phantom.hpp"
#include "isore/plot.hpp"
#include "isore/restore.hpp"
#include "isore/train.hpp"
#include "isore/volume_io.hpp"

namespace isore {

namespace pipedetail {

inline std::string out_path(const RunConfig& rc, const std::string& name) {
    std::filesystem::create_directories(rc.output_dir);
    return (std::filesystem::path(rc.output_dir) / name).string();
}

inline std::array<int, 3> dims_from(const json& j, const char* key,
                                    std::array<int, 3> dflt) {
    if (!j.contains(key)) return dflt;
    auto v = j.at(key).get<std::vector<int>>();
    if (v.size() != 3) throw ConfigError(std::string(key) + " must have 3 entries (z y x)");
    return {v[0], v[1], v[2]};
}

inline std::array<double, 3> triple_from(const json& j, const char* key,
                                         std::array<double, 3> dflt) {
    if (!j.contains(key)) return dflt;
    auto v = j.at(key).get<std::vector<double>>();
    if (v.size() != 3) throw ConfigError(std::string(key) + " must have 3 entries (z y x)");
    return {v[0], v[1], v[2]};
}

}  // namespace pipedetail

// ---------------------------------------------------------------------------
// phantom: synthetic truth (+ optional degraded observation) and manifest
// ---------------------------------------------------------------------------

inline int cmd_phantom(const RunConfig& rc) {
    using namespace pipedetail;
    json cfg = rc.section("phantom");
    check_keys(cfg,
               {"kind", "dims", "voxel_um", "count", "radius_um", "amplitude",
                "min_separation_um", "edge_margin_um", "n_paths", "tube_radius_um", "step_um",
                "degrade"},
               "phantom");
    const std::string kind = cfg.value("kind", std::string("beads"));

    PhantomTruth truth;
    if (kind == "beads") {
        BeadSpec spec;
        spec.dims = dims_from(cfg, "dims", {128, 128, 128});
        spec.voxel_um = cfg.value("voxel_um", 0.5);
        spec.count = cfg.value("count", 200);
        spec.radius_um = cfg.value("radius_um", 0.25);
        spec.amplitude = cfg.value("amplitude", 1000.0);
        spec.min_separation_um = cfg.value("min_separation_um", 0.0);
        spec.edge_margin_um = cfg.value("edge_margin_um", 0.0);
        spec.seed = rc.seed;
        truth = make_beads(spec);
    } else if (kind == "filaments") {
        FilamentSpec spec;
        spec.dims = dims_from(cfg, "dims", {128, 128, 128});
        spec.voxel_um = cfg.value("voxel_um", 0.5);
        spec.n_paths = cfg.value("n_paths", 10);
        spec.tube_radius_um = cfg.value("tube_radius_um", 0.5);
        spec.amplitude = cfg.value("amplitude", 1000.0);
        spec.step_um = cfg.value("step_um", 0.0);
        spec.seed = rc.seed;
        truth = make_filaments(spec);
    } else {
        throw ConfigError("phantom kind must be beads or filaments");
    }

    std::vector<std::string> outputs;
    const std::string truth_path = out_path(rc, "truth.tif");
    save_volume(truth.volume, truth_path);
    outputs.push_back(truth_path);

    DegradationModel model;
    bool degraded = false;
    if (cfg.contains("degrade")) {
        const json& dj = cfg.at("degrade");
        check_keys(dj, {"psf_sigma_um", "axial_step_um", "poisson_scale", "gaussian_sigma",
                        "noise_seed"},
                   "phantom.degrade");
        model.psf_sigma_um = triple_from(dj, "psf_sigma_um", {2.0, 1.0, 1.0});
        model.axial_step_um = dj.value("axial_step_um", truth.volume.voxel.z);
        model.noise.poisson_scale = dj.value("poisson_scale", 0.0);
        model.noise.gaussian_sigma = dj.value("gaussian_sigma", 0.0);
        model.seed = dj.value("noise_seed", rc.seed + 1);
        Volume observed = degrade(truth, model);
        const std::string dpath = out_path(rc, "degraded.tif");
        save_volume(observed, dpath);
        outputs.push_back(dpath);
        degraded = true;
    }

    const std::string man = out_path(rc, "phantom_objects.txt");
    write_phantom_manifest(truth, degraded ? &model : nullptr, man);
    outputs.push_back(man);
    write_command_manifest(rc, "phantom", cfg, {}, outputs);
    std::cout << "phantom: " << truth.beads.size() << " beads, " << truth.filaments.size()
              << " filaments -> " << rc.output_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// preprocess: median -> shear -> resample -> normalize, with presets
// ---------------------------------------------------------------------------

inline int cmd_preprocess(const RunConfig& rc) {
    using namespace pipedetail;
    json cfg = rc.section("preprocess");
    check_keys(cfg,
               {"input", "preset", "median_radius", "shear_factor", "target_voxel_um", "low_pct",
                "high_pct"},
               "preprocess");
    if (!cfg.contains("input")) throw ConfigError("preprocess.input is required");
    const std::string preset = cfg.value("preset", std::string(""));
    int median_radius = 0;
    double low_pct = 0.03, high_pct = 99.97;
    if (preset == "cfm") {
        // percentile saturation at 0.03%, no median filter, no shearing
    } else if (preset == "lsm") {
        median_radius = 2;
        low_pct = 3.0;
        high_pct = 97.0;
    } else if (!preset.empty()) {
        throw ConfigError("preprocess.preset must be cfm or lsm");
    }
    median_radius = cfg.value("median_radius", median_radius);
    low_pct = cfg.value("low_pct", low_pct);
    high_pct = cfg.value("high_pct", high_pct);
    const double shear_factor = cfg.value("shear_factor", 0.0);
    const double target_voxel = cfg.value("target_voxel_um", 0.0);

    const std::string input = cfg.at("input");
    Volume v = load_volume(input);
    if (v.domain == IntensityDomain::normalized)
        throw ConfigError("preprocess input is already normalized");

    if (median_radius > 0) v = median_filter(v, median_radius);
    if (shear_factor != 0.0) v = shear_yz(v, shear_factor);
    if (target_voxel > 0.0) v = resample_isotropic(v, target_voxel);
    auto [norm, rec] = normalize_percentile(v, low_pct, high_pct);

    const std::string vol_path = out_path(rc, "preprocessed.tif");
    save_volume(norm, vol_path);
    const std::string rec_path = out_path(rc, "normalization.json");
    save_normalization(rec, rec_path);

    json resolved = cfg;
    resolved["median_radius"] = median_radius;
    resolved["low_pct"] = low_pct;
    resolved["high_pct"] = high_pct;
    write_command_manifest(rc, "preprocess", resolved, {input}, {vol_path, rec_path});
    std::cout << "preprocess: " << norm.nz << "x" << norm.ny << "x" << norm.nx
              << " normalized volume -> " << vol_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

inline TrainConfig train_config_from_json(const json& cfg, uint64_t seed) {
    check_keys(cfg,
               {"input", "crop", "iterations", "lr", "adam_beta1", "adam_beta2", "lambda_cyc",
                "sampling", "dice_tile", "dice_overlap", "augment", "generator",
                "backward_generator", "discriminator", "checkpoint_every", "resume",
                "log_every"},
               "train");
    TrainConfig tc;
    tc.crop = cfg.value("crop", 144);
    tc.iterations = cfg.value("iterations", 1000ll);
    tc.lr = cfg.value("lr", 1e-4);
    tc.adam_beta1 = cfg.value("adam_beta1", 0.5);
    tc.adam_beta2 = cfg.value("adam_beta2", 0.999);
    tc.weights.lambda_cyc = cfg.value("lambda_cyc", 10.0);
    tc.seed = seed;
    const std::string sampling = cfg.value("sampling", std::string("whole"));
    if (sampling == "whole")
        tc.sampling = SamplingMode::whole_volume;
    else if (sampling == "diced")
        tc.sampling = SamplingMode::diced;
    else
        throw ConfigError("train.sampling must be whole or diced");
    tc.dice_tile = cfg.value("dice_tile", 224);
    tc.dice_overlap = cfg.value("dice_overlap", 32);
    if (cfg.contains("augment")) {
        const json& a = cfg.at("augment");
        check_keys(a, {"z_rotation", "random_flip"}, "train.augment");
        tc.augment.z_rotation = a.value("z_rotation", false);
        tc.augment.random_flip = a.value("random_flip", true);
    }
    tc.checkpoint_every = cfg.value("checkpoint_every", 1000ll);

    auto gen_cfg = [&](const char* key, GeneratorKind default_kind) {
        GeneratorConfig g;
        g.kind = default_kind;
        if (!cfg.contains(key)) return g;
        const json& j = cfg.at(key);
        check_keys(j, {"kind", "base_channels", "dlg_channels"}, std::string("train.") + key);
        const std::string kind = j.value("kind", default_kind == GeneratorKind::unet3d
                                                     ? std::string("unet3d")
                                                     : std::string("dlg3d"));
        if (kind == "unet3d")
            g.kind = GeneratorKind::unet3d;
        else if (kind == "dlg3d")
            g.kind = GeneratorKind::dlg3d;
        else
            throw ConfigError("generator kind must be unet3d or dlg3d");
        g.base_channels = j.value("base_channels", g.base_channels);
        g.dlg_channels = j.value("dlg_channels", g.dlg_channels);
        return g;
    };
    tc.generator = gen_cfg("generator", GeneratorKind::unet3d);
    if (tc.generator.kind != GeneratorKind::unet3d)
        throw ConfigError("the super-resolving generator must be a unet3d");
    tc.backward_generator = gen_cfg("backward_generator", GeneratorKind::dlg3d);
    if (cfg.contains("discriminator")) {
        const json& d = cfg.at("discriminator");
        check_keys(d, {"channels"}, "train.discriminator");
        tc.discriminator.channels =
            d.value("channels", std::vector<int>{64, 128, 256, 512});
    }
    tc.validate();
    return tc;
}

inline int cmd_train(const RunConfig& rc) {
    using namespace pipedetail;
    json cfg = rc.section("train");
    TrainConfig tc = train_config_from_json(cfg, rc.seed);
    if (!cfg.contains("input")) throw ConfigError("train.input is required");
    const std::string input = cfg.at("input");
    const long long log_every = cfg.value("log_every", 50ll);

    Volume v = load_volume(input);
    if (v.domain != IntensityDomain::normalized)
        throw ConfigError("train input must be a preprocessed (normalized) volume");

    const std::string ckpt_dir = out_path(rc, "checkpoints");
    std::filesystem::create_directories(ckpt_dir);
    TrainState<float> st(tc);
    const std::string resume = cfg.value("resume", std::string(""));
    const std::string log_path = out_path(rc, "loss_log.tsv");
    std::ofstream log;
    if (!resume.empty()) {
        resume_from(st, resume);
        log.open(log_path, std::ios::app);
    } else {
        log.open(log_path);
        write_loss_log_header(log);
    }
    if (!log) throw IoError("cannot write loss log: " + log_path);

    TrainCallbacks cb;
    cb.on_iteration = [&](const LossRecord& r) {
        write_loss_record(log, r);
        if (log_every > 0 && r.iteration % log_every == 0) {
            log.flush();
            std::cout << "iter " << r.iteration << "/" << tc.iterations << "  adv_G " << r.adv_g
                      << "  adv_F " << r.adv_f << "  cyc " << r.cyc << "\n";
        }
    };
    cb.on_checkpoint = [&](long long it, const std::string& path) {
        std::cout << "checkpoint @ " << it << " -> " << path << "\n";
    };
    train(st, v, ckpt_dir, cb);
    log.close();

    write_command_manifest(rc, "train", cfg, {input},
                           {log_path, ckpt_dir + "/checkpoint_final.isore"});
    std::cout << "train: " << st.iteration << " iterations complete\n";
    return 0;
}

// ---------------------------------------------------------------------------
// restore
// ---------------------------------------------------------------------------

inline int cmd_restore(const RunConfig& rc) {
    using namespace pipedetail;
    json cfg = rc.section("restore");
    check_keys(cfg, {"input", "checkpoint", "tile", "overlap", "border_crop", "normalization"},
               "restore");
    if (!cfg.contains("input") || !cfg.contains("checkpoint"))
        throw ConfigError("restore.input and restore.checkpoint are required");
    const std::string input = cfg.at("input");
    const std::string ckpt = cfg.at("checkpoint");

    InferencePlan plan;
    plan.tile = cfg.value("tile", 120);
    plan.overlap = cfg.value("overlap", 30);
    plan.border_crop = cfg.value("border_crop", 20);
    plan.validate();

    Volume v = load_volume(input);
    ModelBundle<float> bundle;
    load_checkpoint(ckpt, &bundle);

    Volume restored = restore_volume(bundle.G, v, plan, [](size_t i, size_t n) {
        if (i == 1 || i == n || i % 8 == 0) std::cout << "tile " << i << "/" << n << "\n";
    });

    std::vector<std::string> outputs;
    const std::string norm_path = out_path(rc, "restored_normalized.tif");
    save_volume(restored, norm_path);
    outputs.push_back(norm_path);

    if (cfg.contains("normalization")) {
        NormalizationRecord rec = load_normalization(cfg.at("normalization"));
        Volume raw = denormalize(restored, rec);
        const std::string raw_path = out_path(rc, "restored.tif");
        save_volume(raw, raw_path);
        outputs.push_back(raw_path);
    }

    const int pz = std::max(v.nz, plan.tile), py = std::max(v.ny, plan.tile),
              px = std::max(v.nx, plan.tile);
    TileGrid grid = plan_tiles({pz, py, px}, plan.tile, plan.overlap, plan.border_crop);
    const std::string grid_path = out_path(rc, "tile_plan.txt");
    write_tile_manifest(grid, grid_path);
    outputs.push_back(grid_path);

    write_command_manifest(rc, "restore", cfg, {input, ckpt}, outputs);
    std::cout << "restore: " << grid.tile_count() << " tiles -> " << norm_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// evaluate: spot FWHM tables, PSNR tables, spectra, plots
// ---------------------------------------------------------------------------

inline int cmd_evaluate(const RunConfig& rc) {
    using namespace pipedetail;
    json cfg = rc.section("evaluate");
    check_keys(cfg,
               {"truth", "degraded", "restored", "threshold_frac", "min_sep_voxels",
                "expected_fwhm_um", "roi_slices", "mid_slices"},
               "evaluate");
    for (const char* k : {"truth", "degraded", "restored"})
        if (!cfg.contains(k)) throw ConfigError(std::string("evaluate.") + k + " is required");
    const std::string truth_path = cfg.at("truth");
    const std::string degraded_path = cfg.at("degraded");
    const std::string restored_path = cfg.at("restored");
    Volume truth = load_volume(truth_path);
    Volume degraded = load_volume(degraded_path);
    Volume restored = load_volume(restored_path);
    if (!truth.same_dims(degraded) || !truth.same_dims(restored))
        throw ConfigError("evaluate: volume dimensions do not match");

    const double threshold_frac = cfg.value("threshold_frac", 0.25);
    const double min_sep = cfg.value("min_sep_voxels", 8.0);
    const double expected_fwhm_um = cfg.value("expected_fwhm_um", 4.0);
    const int roi_slices = cfg.value("roi_slices", 24);
    const int mid_slices = cfg.value("mid_slices", 9);
    const double exp_fwhm_vox = expected_fwhm_um / truth.voxel.x;

    std::vector<std::string> outputs;

    // 1) spots from the degraded volume, evaluated at the same locations everywhere
    const auto [dmin, dmax] = degraded.min_max();
    const double threshold = dmin + threshold_frac * (dmax - dmin);
    SpotSet spots = detect_spots(degraded, threshold, min_sep);

    json summary;
    summary["spots_detected"] = spots.count();
    const std::string spots_path = out_path(rc, "spots.tsv");
    {
        std::ofstream f(spots_path);
        f << "z\ty\tx\tvalue\n";
        for (const auto& s : spots.spots)
            f << s.z << '\t' << s.y << '\t' << s.x << '\t' << s.value << '\n';
        outputs.push_back(spots_path);
    }

    if (spots.count() == 0) {
        summary["note"] = "zero spots detected; FWHM analysis skipped";
    } else {
        struct Row {
            const char* name;
            Volume* vol;
        };
        std::array<Row, 3> vols{Row{"truth", &truth}, Row{"degraded", &degraded},
                                Row{"restored", &restored}};
        const std::string fwhm_path = out_path(rc, "fwhm.tsv");
        std::ofstream f(fwhm_path);
        f << "volume\tplane\tn_ok\tmean_um\tmedian_um\tstddev_um\tmean_row_um\tmean_col_um\n";
        std::vector<PlotSeries> hist;
        const std::array<std::array<uint8_t, 3>, 3> colors{
            {{40, 40, 40}, {200, 60, 60}, {60, 90, 200}}};
        for (size_t i = 0; i < vols.size(); ++i) {
            for (FwhmPlane plane : {FwhmPlane::lateral, FwhmPlane::axial}) {
                const double exp_vox =
                    plane == FwhmPlane::axial ? exp_fwhm_vox : exp_fwhm_vox / 2;
                FwhmReport rep = fwhm_report(*vols[i].vol, spots, plane, exp_vox);
                const char* pname = plane == FwhmPlane::lateral ? "lateral" : "axial";
                f << vols[i].name << '\t' << pname << '\t' << rep.n_ok << '\t' << rep.mean_um
                  << '\t' << rep.median_um << '\t' << rep.stddev_um << '\t' << rep.mean_row_um
                  << '\t' << rep.mean_col_um << '\n';
                summary[vols[i].name][pname] = rep.mean_um;
                if (plane == FwhmPlane::axial) {
                    PlotSeries s;
                    s.label = vols[i].name;
                    s.color = colors[i];
                    for (const auto& sf : rep.per_spot)
                        if (sf.ok) s.y.push_back(sf.fwhm_um);
                    hist.push_back(std::move(s));
                }
            }
        }
        outputs.push_back(fwhm_path);
        const std::string hist_path = out_path(rc, "fwhm_axial_hist.png");
        plot_histogram(hist, 24, hist_path);
        outputs.push_back(hist_path);
    }

    // 2) PSNR over non-overlapping axial (xz) ROI slices + lateral mid slices
    {
        const std::string psnr_path = out_path(rc, "psnr.tsv");
        std::ofstream f(psnr_path);
        f << "roi\taxis\tindex\tpsnr_degraded_dB\tpsnr_restored_dB\tgain_dB\n";

        // ROI slices are chosen where the truth actually has signal, mirroring
        // evaluation on regions with distinguishable structures.
        auto ranked_by_content = [](const std::vector<Image>& slices) {
            std::vector<std::pair<float, int>> scored;
            for (size_t i = 0; i < slices.size(); ++i) {
                const float peak = *std::max_element(slices[i].data.begin(), slices[i].data.end());
                if (peak > 0) scored.emplace_back(peak, int(i));
            }
            std::sort(scored.begin(), scored.end(), [](auto& a, auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return a.second < b.second;
            });
            return scored;
        };

        auto t_xz = slice_stack(truth, Plane::xz);
        auto d_xz = slice_stack(degraded, Plane::xz);
        auto r_xz = slice_stack(restored, Plane::xz);
        auto scored = ranked_by_content(t_xz);
        std::vector<int> rois;
        for (size_t i = 0; i < scored.size() && int(rois.size()) < roi_slices; ++i)
            rois.push_back(scored[i].second);
        std::sort(rois.begin(), rois.end());
        double mean_gain = 0;
        PlotSeries gain_series;
        gain_series.color = {60, 90, 200};
        for (size_t i = 0; i < rois.size(); ++i) {
            const int y = rois[i];
            const double pd = psnr(t_xz[y], d_xz[y]);
            const double pr = psnr(t_xz[y], r_xz[y]);
            f << i << "\txz\t" << y << '\t' << pd << '\t' << pr << '\t' << (pr - pd) << '\n';
            mean_gain += pr - pd;
            gain_series.x.push_back(y);
            gain_series.y.push_back(pr - pd);
        }
        summary["axial_rois"] = rois.size();
        summary["axial_psnr_gain_dB"] = rois.empty() ? 0.0 : mean_gain / double(rois.size());

        // lateral check: content-bearing xy slices nearest the mid-plane
        auto t_xy = slice_stack(truth, Plane::xy);
        auto d_xy = slice_stack(degraded, Plane::xy);
        auto r_xy = slice_stack(restored, Plane::xy);
        std::vector<int> mids;
        for (const auto& [peak, z] : ranked_by_content(t_xy)) mids.push_back(z);
        std::sort(mids.begin(), mids.end(), [&](int a, int b) {
            return std::abs(a - truth.nz / 2) < std::abs(b - truth.nz / 2);
        });
        mids.resize(std::min<size_t>(mids.size(), size_t(mid_slices)));
        std::sort(mids.begin(), mids.end());
        double lat_deg = 0, lat_res = 0;
        for (size_t i = 0; i < mids.size(); ++i) {
            const int z = mids[i];
            const double pd = psnr(t_xy[z], d_xy[z]);
            const double pr = psnr(t_xy[z], r_xy[z]);
            f << i << "\txy\t" << z << '\t' << pd << '\t' << pr << '\t' << (pr - pd) << '\n';
            lat_deg += pd;
            lat_res += pr;
        }
        const double nm = std::max<size_t>(mids.size(), 1);
        summary["lateral_psnr_degraded_dB"] = lat_deg / nm;
        summary["lateral_psnr_restored_dB"] = lat_res / nm;
        outputs.push_back(psnr_path);
        const std::string gain_path = out_path(rc, "psnr_axial_gain.png");
        plot_lines({gain_series}, gain_path);
        outputs.push_back(gain_path);
    }

    // 3) spectra: axial slices of each volume against the truth's lateral planes
    {
        auto mean_profile = [](const std::vector<Image>& slices, size_t stride) {
            std::vector<BandProfiles> ps;
            for (size_t i = 0; i < slices.size(); i += stride)
                ps.push_back(fourier_profile(slices[i]).bands);
            return mean_band_profiles(ps);
        };
        const size_t stride = std::max<size_t>(1, truth.ny / 16);
        BandProfiles truth_lat = mean_profile(slice_stack(truth, Plane::xy), stride);
        BandProfiles deg_ax = mean_profile(slice_stack(degraded, Plane::xz), stride);
        BandProfiles res_ax = mean_profile(slice_stack(restored, Plane::xz), stride);
        summary["spectral_distance_degraded"] = spectral_distance(deg_ax, truth_lat);
        summary["spectral_distance_restored"] = spectral_distance(res_ax, truth_lat);

        const std::string spec_path = out_path(rc, "spectra.tsv");
        std::ofstream f(spec_path);
        f << "band\ttruth_lateral\tdegraded_axial\trestored_axial\n";
        for (size_t b = 0; b < truth_lat.row_bands.size(); ++b)
            f << b << '\t' << truth_lat.row_bands[b] << '\t' << deg_ax.row_bands[b] << '\t'
              << res_ax.row_bands[b] << '\n';
        outputs.push_back(spec_path);

        std::vector<PlotSeries> lines(3);
        lines[0].color = {40, 40, 40};
        lines[1].color = {200, 60, 60};
        lines[2].color = {60, 90, 200};
        for (size_t b = 0; b < truth_lat.row_bands.size(); ++b) {
            lines[0].x.push_back(double(b));
            lines[0].y.push_back(truth_lat.row_bands[b]);
            lines[1].x.push_back(double(b));
            lines[1].y.push_back(deg_ax.row_bands[b]);
            lines[2].x.push_back(double(b));
            lines[2].y.push_back(res_ax.row_bands[b]);
        }
        const std::string png = out_path(rc, "spectra.png");
        plot_lines(lines, png);
        outputs.push_back(png);
    }

    const std::string summary_path = out_path(rc, "evaluation_summary.json");
    {
        std::ofstream f(summary_path);
        f << summary.dump(2) << '\n';
        outputs.push_back(summary_path);
    }
    write_command_manifest(rc, "evaluate", cfg, {truth_path, degraded_path, restored_path},
                           outputs);
    std::cout << "evaluate: " << spots.count() << " spots -> " << rc.output_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// rl: Richardson-Lucy deconvolution baseline
// ---------------------------------------------------------------------------

inline int cmd_rl(const RunConfig& rc) {
    using namespace pipedetail;
    json cfg = rc.section("rl");
    check_keys(cfg, {"input", "iterations", "psf", "clamp_negative"}, "rl");
    if (!cfg.contains("input")) throw ConfigError("rl.input is required");
    const std::string input = cfg.at("input");
    const int iterations = cfg.value("iterations", 10);

    Volume v = load_volume(input);
    if (cfg.value("clamp_negative", false))
        for (float& x : v.data) x = std::max(x, 0.f);

    Volume psf;
    std::vector<std::string> inputs{input};
    if (!cfg.contains("psf")) throw ConfigError("rl.psf is required");
    const json& pj = cfg.at("psf");
    if (pj.is_string()) {
        psf = load_volume(pj.get<std::string>());
        inputs.push_back(pj.get<std::string>());
    } else {
        check_keys(pj, {"sigma_um", "truncate"}, "rl.psf");
        const auto sigma = triple_from(pj, "sigma_um", {2.0, 1.0, 1.0});
        psf = gaussian_psf(sigma, v.voxel.x, pj.value("truncate", 4.0));
    }

    Volume out = rl_deconvolve(v, psf, iterations);
    const std::string out_path_ = out_path(rc, "rl.tif");
    save_volume(out, out_path_);

    json resolved = cfg;
    resolved["iterations"] = iterations;
    write_command_manifest(rc, "rl", resolved, inputs, {out_path_});
    std::cout << "rl: " << iterations << " iterations -> " << out_path_ << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// CLI dispatch
// ---------------------------------------------------------------------------

inline int dispatch_command(const std::string& command, const RunConfig& rc) {
    if (const char* dev = std::getenv("ISORE_DEVICE"); dev && std::string(dev) != "cpu")
        throw ConfigError("ISORE_DEVICE supports only 'cpu' in this build");
    if (command == "phantom") return cmd_phantom(rc);
    if (command == "preprocess") return cmd_preprocess(rc);
    if (command == "train") return cmd_train(rc);
    if (command == "restore") return cmd_restore(rc);
    if (command == "evaluate") return cmd_evaluate(rc);
    if (command == "rl") return cmd_rl(rc);
    throw ConfigError("unknown command: " + command);
}

inline int run_cli(const std::vector<std::string>& args) {
    try {
        if (args.empty() || args[0] == "-h" || args[0] == "--help") {
            std::cout << "usage: isore <phantom|preprocess|train|restore|evaluate|rl> "
                         "[--config FILE] [--seed N] [--output-dir DIR] [--set a.b=v ...]\n";
            return args.empty() ? 2 : 0;
        }
        const std::string command = args[0];
        std::string config_path;
        std::optional<uint64_t> seed;
        std::optional<std::string> outdir;
        std::vector<std::string> overrides;
        for (size_t i = 1; i < args.size(); ++i) {
            const std::string& a = args[i];
            auto need_value = [&](const char* flag) -> const std::string& {
                if (i + 1 >= args.size())
                    throw ConfigError(std::string(flag) + " needs a value");
                return args[++i];
            };
            if (a == "--config")
                config_path = need_value("--config");
            else if (a == "--seed")
                seed = std::stoull(need_value("--seed"));
            else if (a == "--output-dir")
                outdir = need_value("--output-dir");
            else if (a == "--set")
                overrides.push_back(need_value("--set"));
            else
                throw ConfigError("unknown flag: " + a);
        }
        RunConfig rc = load_run_config(config_path, overrides, seed, outdir);
        return dispatch_command(command, rc);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace isore
