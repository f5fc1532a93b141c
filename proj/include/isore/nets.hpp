#pragma once

#include <memory>

#include "isore/layers.hpp"

namespace isore {

// ---------------------------------------------------------------------------
// Configs
// ---------------------------------------------------------------------------

enum class GeneratorKind { unet3d, dlg3d };

struct GeneratorConfig {
    GeneratorKind kind = GeneratorKind::unet3d;
    int base_channels = 32;                     // unet width at full resolution
    int depth = 2;                              // down/up levels (fixed by the architecture)
    std::vector<int> dlg_kernels{7, 5, 3, 1, 1, 1};
    std::vector<int> dlg_pads{3, 2, 1, 0, 0, 0};
    int dlg_channels = 64;

    void validate() const {
        if (base_channels < 1) throw ConfigError("generator base_channels must be >= 1");
        if (depth != 2) throw ConfigError("unet3d is fixed at two down/up levels");
        if (dlg_kernels.size() != dlg_pads.size() || dlg_kernels.empty())
            throw ConfigError("dlg kernel/pad lists must be nonempty and equal length");
        for (size_t i = 0; i < dlg_kernels.size(); ++i) {
            if (dlg_kernels[i] < 1 || dlg_kernels[i] % 2 == 0)
                throw ConfigError("dlg kernels must be odd and >= 1");
            if (dlg_pads[i] != dlg_kernels[i] / 2)
                throw ConfigError("dlg pads must preserve the spatial size");
        }
        if (dlg_channels < 1) throw ConfigError("dlg_channels must be >= 1");
    }
};

struct DiscriminatorConfig {
    int blocks = 4;
    int kernel = 4;
    int stride = 2;
    int pad = 1;
    double leaky_slope = 0.2;
    std::vector<int> channels{64, 128, 256, 512};
    // final conv: kernel 4, stride 1, pad 1, one output channel

    void validate() const {
        if (blocks < 1) throw ConfigError("discriminator blocks must be >= 1");
        if (int(channels.size()) != blocks)
            throw ConfigError("discriminator channel schedule must list one width per block");
        if (leaky_slope <= 0 || leaky_slope >= 1)
            throw ConfigError("leaky_slope must be in (0,1)");
    }
};

// Spatial size of the score map; throws when the input is too small.
inline int discriminator_map_size(const DiscriminatorConfig& cfg, int n) {
    for (int b = 0; b < cfg.blocks; ++b) {
        n = conv_out_size(n, cfg.kernel, cfg.stride, cfg.pad);
        if (n < 1) throw ConfigError("discriminator input below the receptive footprint");
    }
    n = conv_out_size(n, cfg.kernel, 1, cfg.pad);
    if (n < 1) throw ConfigError("discriminator input below the receptive footprint");
    return n;
}

// ---------------------------------------------------------------------------
// 3D U-Net generator: two down blocks (conv-norm-relu x2 + maxpool), a
// three-conv bottleneck without normalization, two up blocks (transposed
// conv, skip concat, conv-norm-relu x2), two output convs and a sigmoid
// rescaled onto [-1,1].
// ---------------------------------------------------------------------------

template <class T>
struct ConvNormRelu3d {
    Conv3d<T> conv;
    InstanceNorm<T> norm;
    LeakyReLU<T> relu{0.0};

    ConvNormRelu3d() = default;
    ConvNormRelu3d(int cin, int cout) : conv(cin, cout, 3), norm(cout, false) {}
    Tensor<T> forward(const Tensor<T>& x, bool cache) {
        return relu.forward(norm.forward(conv.forward(x, cache), cache), cache);
    }
    Tensor<T> backward(const Tensor<T>& gy, bool need_input_grad = true) {
        return conv.backward(norm.backward(relu.backward(gy)), need_input_grad);
    }
    void init(Rng& rng) { conv.init(rng); }
    void params(std::vector<ParamRef<T>>& out, const std::string& p) {
        conv.params(out, p + ".conv");
        norm.params(out, p + ".norm");
    }
    void drop_cache() {
        conv.drop_cache();
        norm.drop_cache();
        relu.drop_cache();
    }
};

template <class T>
struct ConvRelu3d {
    Conv3d<T> conv;
    LeakyReLU<T> relu{0.0};

    ConvRelu3d() = default;
    ConvRelu3d(int cin, int cout) : conv(cin, cout, 3) {}
    Tensor<T> forward(const Tensor<T>& x, bool cache) {
        return relu.forward(conv.forward(x, cache), cache);
    }
    Tensor<T> backward(const Tensor<T>& gy) { return conv.backward(relu.backward(gy)); }
    void init(Rng& rng) { conv.init(rng); }
    void params(std::vector<ParamRef<T>>& out, const std::string& p) {
        conv.params(out, p + ".conv");
    }
    void drop_cache() {
        conv.drop_cache();
        relu.drop_cache();
    }
};

template <class T>
class UNet3d {
  public:
    UNet3d() = default;
    explicit UNet3d(int base, uint64_t seed) : base_(base) {
        const int b = base, b2 = 2 * base, b4 = 4 * base;
        d1a_ = {1, b};
        d1b_ = {b, b};
        d2a_ = {b, b2};
        d2b_ = {b2, b2};
        bn1_ = {b2, b4};
        bn2_ = {b4, b4};
        bn3_ = {b4, b4};
        up1_ = {b4, b2};
        u1a_ = {b4, b2};
        u1b_ = {b2, b2};
        up2_ = {b2, b};
        u2a_ = {b2, b};
        u2b_ = {b, b};
        out1_ = Conv3d<T>(b, b, 3);
        out2_ = Conv3d<T>(b, 1, 3);
        Rng rng(seed);
        d1a_.init(rng);
        d1b_.init(rng);
        d2a_.init(rng);
        d2b_.init(rng);
        bn1_.init(rng);
        bn2_.init(rng);
        bn3_.init(rng);
        up1_.init(rng);
        u1a_.init(rng);
        u1b_.init(rng);
        up2_.init(rng);
        u2a_.init(rng);
        u2b_.init(rng);
        out1_.init(rng);
        out2_.init(rng);
    }

    Tensor<T> forward(const Tensor<T>& x, bool cache) {
        if (x.shape[1] % 4 || x.shape[2] % 4 || x.shape[3] % 4)
            throw ConfigError("unet3d input dims must be divisible by 4");
        Tensor<T> f1p = d1b_.forward(d1a_.forward(x, cache), cache);
        Tensor<T> f1 = pool1_.forward(f1p, cache);
        Tensor<T> f2p = d2b_.forward(d2a_.forward(f1, cache), cache);
        Tensor<T> f2 = pool2_.forward(f2p, cache);
        Tensor<T> g0 = bn3_.forward(bn2_.forward(bn1_.forward(f2, cache), cache), cache);
        Tensor<T> u1 = up1_.forward(g0, cache);
        Tensor<T> g1 = u1b_.forward(u1a_.forward(concat_channels(u1, f2p), cache), cache);
        Tensor<T> u2 = up2_.forward(g1, cache);
        Tensor<T> g2 = u2b_.forward(u2a_.forward(concat_channels(u2, f1p), cache), cache);
        return act_.forward(out2_.forward(out1_.forward(g2, cache), cache), cache);
    }

    Tensor<T> backward(const Tensor<T>& gy, bool need_input_grad = true) {
        Tensor<T> g = out1_.backward(out2_.backward(act_.backward(gy)));
        g = u2a_.backward(u2b_.backward(g));
        auto [gu2, gf1p] = split_channels(g, base_);
        g = u1a_.backward(u1b_.backward(up2_.backward(gu2)));
        auto [gu1, gf2p] = split_channels(g, 2 * base_);
        g = bn1_.backward(bn2_.backward(bn3_.backward(up1_.backward(gu1))));
        g = pool2_.backward(g);
        for (size_t i = 0; i < g.size(); ++i) g.v[i] += gf2p.v[i];
        g = d2a_.backward(d2b_.backward(g));
        g = pool1_.backward(g);
        for (size_t i = 0; i < g.size(); ++i) g.v[i] += gf1p.v[i];
        return d1a_.backward(d1b_.backward(g), need_input_grad);
    }

    std::vector<ParamRef<T>> params() {
        std::vector<ParamRef<T>> out;
        d1a_.params(out, "d1a");
        d1b_.params(out, "d1b");
        d2a_.params(out, "d2a");
        d2b_.params(out, "d2b");
        bn1_.params(out, "bn1");
        bn2_.params(out, "bn2");
        bn3_.params(out, "bn3");
        up1_.params(out, "up1");
        u1a_.params(out, "u1a");
        u1b_.params(out, "u1b");
        up2_.params(out, "up2");
        u2a_.params(out, "u2a");
        u2b_.params(out, "u2b");
        out1_.params(out, "out1");
        out2_.params(out, "out2");
        return out;
    }

    void drop_cache() {
        d1a_.drop_cache();
        d1b_.drop_cache();
        d2a_.drop_cache();
        d2b_.drop_cache();
        bn1_.drop_cache();
        bn2_.drop_cache();
        bn3_.drop_cache();
        up1_.drop_cache();
        u1a_.drop_cache();
        u1b_.drop_cache();
        up2_.drop_cache();
        u2a_.drop_cache();
        u2b_.drop_cache();
        out1_.drop_cache();
        out2_.drop_cache();
        pool1_.drop_cache();
        pool2_.drop_cache();
        act_.drop_cache();
    }

  private:
    int base_ = 0;
    ConvNormRelu3d<T> d1a_, d1b_, d2a_, d2b_, u1a_, u1b_, u2a_, u2b_;
    ConvRelu3d<T> bn1_, bn2_, bn3_;
    ConvTranspose3d<T> up1_, up2_;
    MaxPool3d<T> pool1_, pool2_;
    Conv3d<T> out1_, out2_;
    SigmoidSymmetric<T> act_;
};

// ---------------------------------------------------------------------------
// Deep linear generator: six 3D convolutions, no nonlinearities, so the whole
// network is an affine map (a learned blur kernel with bias).
// ---------------------------------------------------------------------------

template <class T>
class DeepLinearGen3d {
  public:
    DeepLinearGen3d() = default;
    DeepLinearGen3d(const GeneratorConfig& cfg, uint64_t seed) {
        const int L = int(cfg.dlg_kernels.size());
        Rng rng(seed);
        for (int i = 0; i < L; ++i) {
            const int cin = i == 0 ? 1 : cfg.dlg_channels;
            const int cout = i == L - 1 ? 1 : cfg.dlg_channels;
            convs_.emplace_back(cin, cout, cfg.dlg_kernels[i]);
            convs_.back().init(rng);
        }
    }

    Tensor<T> forward(const Tensor<T>& x, bool cache) {
        Tensor<T> h = x;
        for (auto& c : convs_) h = c.forward(h, cache);
        return h;
    }
    Tensor<T> backward(const Tensor<T>& gy, bool need_input_grad = true) {
        Tensor<T> g = gy;
        for (size_t i = convs_.size(); i-- > 0;)
            g = convs_[i].backward(g, i > 0 || need_input_grad);
        return g;
    }
    std::vector<ParamRef<T>> params() {
        std::vector<ParamRef<T>> out;
        for (size_t i = 0; i < convs_.size(); ++i)
            convs_[i].params(out, "conv" + std::to_string(i));
        return out;
    }
    void drop_cache() {
        for (auto& c : convs_) c.drop_cache();
    }

    // nominal receptive field: 1 + sum(kernel - 1)
    int receptive_field() const {
        int rf = 1;
        for (const auto& c : convs_) rf += c.kernel() - 1;
        return rf;
    }

  private:
    std::vector<Conv3d<T>> convs_;
};

// ---------------------------------------------------------------------------
// Generator wrapper shared by both kinds
// ---------------------------------------------------------------------------

template <class T>
class Generator {
  public:
    Generator() = default;
    Generator(const GeneratorConfig& cfg, uint64_t seed) : cfg_(cfg) {
        cfg.validate();
        if (cfg.kind == GeneratorKind::unet3d)
            unet_ = std::make_unique<UNet3d<T>>(cfg.base_channels, seed);
        else
            dlg_ = std::make_unique<DeepLinearGen3d<T>>(cfg, seed);
    }

    const GeneratorConfig& config() const { return cfg_; }

    Tensor<T> forward(const Tensor<T>& x, bool cache) {
        return unet_ ? unet_->forward(x, cache) : dlg_->forward(x, cache);
    }
    Tensor<T> backward(const Tensor<T>& gy, bool need_input_grad = true) {
        return unet_ ? unet_->backward(gy, need_input_grad) : dlg_->backward(gy, need_input_grad);
    }
    std::vector<ParamRef<T>> params() { return unet_ ? unet_->params() : dlg_->params(); }
    void drop_cache() { unet_ ? unet_->drop_cache() : dlg_->drop_cache(); }

    size_t parameter_count() {
        size_t n = 0;
        for (auto& p : params()) n += p.value->size();
        return n;
    }

  private:
    GeneratorConfig cfg_;
    std::unique_ptr<UNet3d<T>> unet_;
    std::unique_ptr<DeepLinearGen3d<T>> dlg_;
};

template <class T>
Generator<T> build_generator(const GeneratorConfig& cfg, uint64_t seed) {
    return Generator<T>(cfg, seed);
}

// Volume-level forward pass; shape-preserving by construction.
template <class T, class U>
VolumeT<U> generator_apply(Generator<T>& g, const VolumeT<U>& v, bool cache = false) {
    if (v.domain != IntensityDomain::normalized)
        throw ConfigError("generator_apply: volume must be normalized");
    if (g.config().kind == GeneratorKind::unet3d && (v.nz % 4 || v.ny % 4 || v.nx % 4))
        throw ConfigError("generator_apply: unet3d needs dims divisible by 4");
    Tensor<T> y = g.forward(volume_to_tensor<T>(v), cache);
    return tensor_to_volume<U>(y, v.voxel, IntensityDomain::normalized);
}

// ---------------------------------------------------------------------------
// 2D PatchGAN discriminator on slice batches
// ---------------------------------------------------------------------------

template <class T>
class PatchDisc2d {
  public:
    PatchDisc2d() = default;
    PatchDisc2d(const DiscriminatorConfig& cfg, uint64_t seed) : cfg_(cfg) {
        cfg.validate();
        Rng rng(seed);
        int cin = 1;
        for (int bidx = 0; bidx < cfg.blocks; ++bidx) {
            const int cout = cfg.channels[bidx];
            convs_.emplace_back(cin, cout, cfg.kernel, cfg.stride, cfg.pad);
            convs_.back().init(rng);
            norms_.emplace_back(cout, true);
            acts_.emplace_back(cfg.leaky_slope);
            cin = cout;
        }
        final_ = Conv2d<T>(cin, 1, cfg.kernel, 1, cfg.pad);
        final_.init(rng);
    }

    const DiscriminatorConfig& config() const { return cfg_; }

    // [N,1,H,W] slices -> [N,1,h,w] real-valued score maps (no output
    // nonlinearity). Internally the stack runs channels-last; single-channel
    // input and output layouts coincide either way.
    Tensor<T> forward(const Tensor<T>& x, bool cache) {
        if (x.shape[1] != 1) throw Error("PatchDisc2d: expects single-channel slices");
        Tensor<T> h = x;
        h.shape = {x.shape[0], x.shape[2], x.shape[3], 1};
        for (size_t i = 0; i < convs_.size(); ++i) {
            h = convs_[i].forward(h, cache);
            h = norms_[i].forward(h, cache);
            h = acts_[i].forward(h, cache);
        }
        h = final_.forward(h, cache);
        h.shape = {h.shape[0], 1, h.shape[1], h.shape[2]};
        return h;
    }

    Tensor<T> backward(const Tensor<T>& gy, bool need_input_grad = true) {
        Tensor<T> g = gy;
        g.shape = {gy.shape[0], gy.shape[2], gy.shape[3], 1};
        g = final_.backward(g);
        for (int i = int(convs_.size()) - 1; i >= 0; --i) {
            g = acts_[i].backward(g);
            g = norms_[i].backward(g);
            g = convs_[i].backward(g, i > 0 || need_input_grad);
        }
        if (need_input_grad) g.shape = {g.shape[0], 1, g.shape[1], g.shape[2]};
        return g;
    }

    std::vector<ParamRef<T>> params() {
        std::vector<ParamRef<T>> out;
        for (size_t i = 0; i < convs_.size(); ++i) {
            convs_[i].params(out, "block" + std::to_string(i) + ".conv");
            norms_[i].params(out, "block" + std::to_string(i) + ".norm");
        }
        final_.params(out, "final");
        return out;
    }

    void drop_cache() {
        for (size_t i = 0; i < convs_.size(); ++i) {
            convs_[i].drop_cache();
            norms_[i].drop_cache();
            acts_[i].drop_cache();
        }
        final_.drop_cache();
    }

    size_t parameter_count() {
        size_t n = 0;
        for (auto& p : params()) n += p.value->size();
        return n;
    }

  private:
    DiscriminatorConfig cfg_;
    std::vector<Conv2d<T>> convs_;
    std::vector<InstanceNorm<T>> norms_;
    std::vector<LeakyReLU<T>> acts_;
    Conv2d<T> final_;
};

template <class T>
PatchDisc2d<T> build_discriminator(const DiscriminatorConfig& cfg, uint64_t seed) {
    return PatchDisc2d<T>(cfg, seed);
}

template <class T, class U>
std::vector<ImageT<U>> discriminator_apply(PatchDisc2d<T>& d, const std::vector<ImageT<U>>& imgs) {
    Tensor<T> maps = d.forward(images_to_tensor<T>(imgs), false);
    std::vector<ImageT<U>> out;
    for (int n = 0; n < maps.shape[0]; ++n) {
        ImageT<U> m(maps.shape[2], maps.shape[3]);
        for (int r = 0; r < m.h; ++r)
            for (int c = 0; c < m.w; ++c) m.at(r, c) = U(maps.at(n, 0, r, c));
        out.push_back(std::move(m));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Model bundle: G (super-resolving), F (re-blurring), and the two groups of
// three per-plane discriminators (indexed xy=0, xz=1, yz=2).
// ---------------------------------------------------------------------------

template <class T>
struct ModelBundle {
    GeneratorConfig g_cfg, f_cfg;
    DiscriminatorConfig d_cfg;
    Generator<T> G, F;
    std::array<PatchDisc2d<T>, 3> DX, DY;

    ModelBundle() = default;
    ModelBundle(const GeneratorConfig& gc, const GeneratorConfig& fc,
                const DiscriminatorConfig& dc, uint64_t seed)
        : g_cfg(gc), f_cfg(fc), d_cfg(dc) {
        Rng master(seed);
        G = Generator<T>(gc, master.next_u64());
        F = Generator<T>(fc, master.next_u64());
        for (auto& d : DX) d = PatchDisc2d<T>(dc, master.next_u64());
        for (auto& d : DY) d = PatchDisc2d<T>(dc, master.next_u64());
    }

    void drop_caches() {
        G.drop_cache();
        F.drop_cache();
        for (auto& d : DX) d.drop_cache();
        for (auto& d : DY) d.drop_cache();
    }
};

}  // namespace isore
