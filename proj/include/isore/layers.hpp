#pragma once

#include <string>

#include "isore/common.hpp"
#include "isore/tensor.hpp"

namespace isore {

template <class T>
struct ParamRef {
    std::string name;
    std::vector<T>* value = nullptr;
    std::vector<T>* grad = nullptr;
    std::vector<int> shape;
};

// He (Kaiming) normal initialization, std = sqrt(2 / fan_in); biases zero.
template <class T>
void kaiming_init(std::vector<T>& w, size_t fan_in, Rng& rng) {
    const double std_dev = std::sqrt(2.0 / double(fan_in));
    for (T& x : w) x = T(rng.normal(0.0, std_dev));
}

// ---------------------------------------------------------------------------
// 3D convolution, stride 1, "same" zero padding (pad = kernel/2).
// Input [Cin, D, H, W] -> output [Cout, D, H, W].
// ---------------------------------------------------------------------------

template <class T>
class Conv3d {
  public:
    Conv3d() = default;
    Conv3d(int cin, int cout, int k) : cin_(cin), cout_(cout), k_(k), pad_(k / 2) {
        w_.resize(size_t(cout) * cin * k * k * k);
        b_.assign(cout, T(0));
        gw_.assign(w_.size(), T(0));
        gb_.assign(cout, T(0));
    }

    void init(Rng& rng) {
        kaiming_init(w_, size_t(cin_) * k_ * k_ * k_, rng);
        std::fill(b_.begin(), b_.end(), T(0));
    }

    Tensor<T> forward(const Tensor<T>& x, bool cache) {
        if (x.shape[0] != cin_) throw Error("Conv3d: channel mismatch");
        if (cache) x_ = x;
        const int D = x.shape[1], H = x.shape[2], W = x.shape[3];
        Tensor<T> y(cout_, D, H, W);
#pragma omp parallel for schedule(static)
        for (int oc = 0; oc < cout_; ++oc) {
            T* ybase = &y.v[size_t(oc) * D * H * W];
            std::fill_n(ybase, size_t(D) * H * W, b_[oc]);
            for (int ic = 0; ic < cin_; ++ic) {
                const T* xbase = &x.v[size_t(ic) * D * H * W];
                for (int kz = 0; kz < k_; ++kz)
                    for (int ky = 0; ky < k_; ++ky)
                        for (int kx = 0; kx < k_; ++kx) {
                            const T wv =
                                w_[(((size_t(oc) * cin_ + ic) * k_ + kz) * k_ + ky) * k_ + kx];
                            const int dz = kz - pad_, dy = ky - pad_, dx = kx - pad_;
                            const int z0 = std::max(0, -dz), z1 = std::min(D, D - dz);
                            const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                            const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                            for (int z = z0; z < z1; ++z)
                                for (int yy = y0; yy < y1; ++yy) {
                                    T* dst = ybase + (size_t(z) * H + yy) * W;
                                    const T* src =
                                        xbase + (size_t(z + dz) * H + (yy + dy)) * W + dx;
                                    for (int xx = x0; xx < x1; ++xx) dst[xx] += wv * src[xx];
                                }
                        }
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy, bool need_input_grad = true) {
        const int D = gy.shape[1], H = gy.shape[2], W = gy.shape[3];
        // bias and weight gradients; rows accumulate in T (vectorizable) and
        // fold into doubles in a fixed order
#pragma omp parallel for schedule(static)
        for (int oc = 0; oc < cout_; ++oc) {
            const T* gbase = &gy.v[size_t(oc) * D * H * W];
            double acc = 0;
            for (size_t i = 0; i < size_t(D) * H * W; ++i) acc += double(gbase[i]);
            gb_[oc] += T(acc);
            for (int ic = 0; ic < cin_; ++ic) {
                const T* xbase = &x_.v[size_t(ic) * D * H * W];
                for (int kz = 0; kz < k_; ++kz)
                    for (int ky = 0; ky < k_; ++ky)
                        for (int kx = 0; kx < k_; ++kx) {
                            const int dz = kz - pad_, dy = ky - pad_, dx = kx - pad_;
                            const int z0 = std::max(0, -dz), z1 = std::min(D, D - dz);
                            const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                            const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                            double sum = 0;
                            for (int z = z0; z < z1; ++z)
                                for (int yy = y0; yy < y1; ++yy) {
                                    const T* g = gbase + (size_t(z) * H + yy) * W;
                                    const T* src =
                                        xbase + (size_t(z + dz) * H + (yy + dy)) * W + dx;
                                    T row = T(0);
                                    for (int xx = x0; xx < x1; ++xx) row += g[xx] * src[xx];
                                    sum += double(row);
                                }
                            gw_[(((size_t(oc) * cin_ + ic) * k_ + kz) * k_ + ky) * k_ + kx] +=
                                T(sum);
                        }
            }
        }
        if (!need_input_grad) return {};
        // input gradient: correlate gy with the flipped kernel
        Tensor<T> gx(cin_, D, H, W);
#pragma omp parallel for schedule(static)
        for (int ic = 0; ic < cin_; ++ic) {
            T* gxbase = &gx.v[size_t(ic) * D * H * W];
            for (int oc = 0; oc < cout_; ++oc) {
                const T* gbase = &gy.v[size_t(oc) * D * H * W];
                for (int kz = 0; kz < k_; ++kz)
                    for (int ky = 0; ky < k_; ++ky)
                        for (int kx = 0; kx < k_; ++kx) {
                            const T wv =
                                w_[(((size_t(oc) * cin_ + ic) * k_ + kz) * k_ + ky) * k_ + kx];
                            const int dz = pad_ - kz, dy = pad_ - ky, dx = pad_ - kx;
                            const int z0 = std::max(0, -dz), z1 = std::min(D, D - dz);
                            const int y0 = std::max(0, -dy), y1 = std::min(H, H - dy);
                            const int x0 = std::max(0, -dx), x1 = std::min(W, W - dx);
                            for (int z = z0; z < z1; ++z)
                                for (int yy = y0; yy < y1; ++yy) {
                                    T* dst = gxbase + (size_t(z) * H + yy) * W;
                                    const T* src =
                                        gbase + (size_t(z + dz) * H + (yy + dy)) * W + dx;
                                    for (int xx = x0; xx < x1; ++xx) dst[xx] += wv * src[xx];
                                }
                        }
            }
        }
        return gx;
    }

    void params(std::vector<ParamRef<T>>& out, const std::string& prefix) {
        out.push_back({prefix + ".w", &w_, &gw_, {cout_, cin_, k_, k_, k_}});
        out.push_back({prefix + ".b", &b_, &gb_, {cout_}});
    }
    void drop_cache() { x_ = {}; }

    int in_channels() const { return cin_; }
    int out_channels() const { return cout_; }
    int kernel() const { return k_; }

  private:
    int cin_ = 0, cout_ = 0, k_ = 0, pad_ = 0;
    std::vector<T> w_, b_, gw_, gb_;
    Tensor<T> x_;
};

// ---------------------------------------------------------------------------
// 3D transposed convolution, kernel 2, stride 2, no padding (doubles D/H/W).
// Weight layout [Cin, Cout, 2, 2, 2].
// ---------------------------------------------------------------------------

template <class T>
class ConvTranspose3d {
  public:
    ConvTranspose3d() = default;
    ConvTranspose3d(int cin, int cout) : cin_(cin), cout_(cout) {
        w_.resize(size_t(cin) * cout * 8);
        b_.assign(cout, T(0));
        gw_.assign(w_.size(), T(0));
        gb_.assign(cout, T(0));
    }

    void init(Rng& rng) {
        kaiming_init(w_, size_t(cin_) * 8, rng);
        std::fill(b_.begin(), b_.end(), T(0));
    }

    Tensor<T> forward(const Tensor<T>& x, bool cache) {
        if (x.shape[0] != cin_) throw Error("ConvTranspose3d: channel mismatch");
        if (cache) x_ = x;
        const int D = x.shape[1], H = x.shape[2], W = x.shape[3];
        Tensor<T> y(cout_, 2 * D, 2 * H, 2 * W);
#pragma omp parallel for schedule(static)
        for (int oc = 0; oc < cout_; ++oc) {
            std::fill_n(&y.v[size_t(oc) * 8 * D * H * W], size_t(8) * D * H * W, b_[oc]);
            for (int ic = 0; ic < cin_; ++ic)
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b)
                        for (int c = 0; c < 2; ++c) {
                            const T wv = w_[(((size_t(ic) * cout_ + oc) * 2 + a) * 2 + b) * 2 + c];
                            for (int z = 0; z < D; ++z)
                                for (int yy = 0; yy < H; ++yy) {
                                    const T* src = &x.v[((size_t(ic) * D + z) * H + yy) * W];
                                    T* dst = &y.at(oc, 2 * z + a, 2 * yy + b, c);
                                    for (int xx = 0; xx < W; ++xx) dst[2 * xx] += wv * src[xx];
                                }
                        }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy, bool need_input_grad = true) {
        const int D = x_.shape[1], H = x_.shape[2], W = x_.shape[3];
#pragma omp parallel for schedule(static)
        for (int oc = 0; oc < cout_; ++oc) {
            const T* gbase = &gy.v[size_t(oc) * 8 * D * H * W];
            double acc = 0;
            for (size_t i = 0; i < size_t(8) * D * H * W; ++i) acc += double(gbase[i]);
            gb_[oc] += T(acc);
            for (int ic = 0; ic < cin_; ++ic)
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b)
                        for (int c = 0; c < 2; ++c) {
                            double sum = 0;
                            for (int z = 0; z < D; ++z)
                                for (int yy = 0; yy < H; ++yy) {
                                    const T* src = &x_.v[((size_t(ic) * D + z) * H + yy) * W];
                                    const T* g = &gy.at(oc, 2 * z + a, 2 * yy + b, c);
                                    for (int xx = 0; xx < W; ++xx)
                                        sum += double(src[xx]) * double(g[2 * xx]);
                                }
                            gw_[(((size_t(ic) * cout_ + oc) * 2 + a) * 2 + b) * 2 + c] += T(sum);
                        }
        }
        if (!need_input_grad) return {};
        Tensor<T> gx(cin_, D, H, W);
#pragma omp parallel for schedule(static)
        for (int ic = 0; ic < cin_; ++ic)
            for (int oc = 0; oc < cout_; ++oc)
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b)
                        for (int c = 0; c < 2; ++c) {
                            const T wv = w_[(((size_t(ic) * cout_ + oc) * 2 + a) * 2 + b) * 2 + c];
                            for (int z = 0; z < D; ++z)
                                for (int yy = 0; yy < H; ++yy) {
                                    T* dst = &gx.v[((size_t(ic) * D + z) * H + yy) * W];
                                    const T* g = &gy.at(oc, 2 * z + a, 2 * yy + b, c);
                                    for (int xx = 0; xx < W; ++xx) dst[xx] += wv * g[2 * xx];
                                }
                        }
        return gx;
    }

    void params(std::vector<ParamRef<T>>& out, const std::string& prefix) {
        out.push_back({prefix + ".w", &w_, &gw_, {cin_, cout_, 2, 2, 2}});
        out.push_back({prefix + ".b", &b_, &gb_, {cout_}});
    }
    void drop_cache() { x_ = {}; }

  private:
    int cin_ = 0, cout_ = 0;
    std::vector<T> w_, b_, gw_, gb_;
    Tensor<T> x_;
};

// ---------------------------------------------------------------------------
// 2x2x2 max pooling, stride 2 (even spatial dims required)
// ---------------------------------------------------------------------------

template <class T>
class MaxPool3d {
  public:
    Tensor<T> forward(const Tensor<T>& x, bool cache) {
        const int C = x.shape[0], D = x.shape[1], H = x.shape[2], W = x.shape[3];
        if (D % 2 || H % 2 || W % 2) throw Error("MaxPool3d: odd spatial dims");
        in_shape_ = x.shape;
        Tensor<T> y(C, D / 2, H / 2, W / 2);
        if (cache) argmax_.assign(y.size(), 0);
#pragma omp parallel for schedule(static)
        for (int ch = 0; ch < C; ++ch)
            for (int z = 0; z < D / 2; ++z)
                for (int yy = 0; yy < H / 2; ++yy)
                    for (int xx = 0; xx < W / 2; ++xx) {
                        T best = -std::numeric_limits<T>::infinity();
                        size_t best_idx = 0;
                        for (int a = 0; a < 2; ++a)
                            for (int b = 0; b < 2; ++b)
                                for (int c = 0; c < 2; ++c) {
                                    const size_t i = x.idx(ch, 2 * z + a, 2 * yy + b, 2 * xx + c);
                                    if (x.v[i] > best) {
                                        best = x.v[i];
                                        best_idx = i;
                                    }
                                }
                        const size_t o = y.idx(ch, z, yy, xx);
                        y.v[o] = best;
                        if (cache) argmax_[o] = best_idx;
                    }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        Tensor<T> gx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
        for (size_t o = 0; o < gy.size(); ++o) gx.v[argmax_[o]] += gy.v[o];
        return gx;
    }
    void drop_cache() { argmax_.clear(); }

  private:
    std::array<int, 4> in_shape_{};
    std::vector<size_t> argmax_;
};

// ---------------------------------------------------------------------------
// Instance normalization over spatial dims, affine, eps 1e-5.
// channels_last=false: [C,D,H,W] single-sample maps, one instance per channel.
// channels_last=true:  [N,H,W,C] slice batches, statistics per (n, c).
// ---------------------------------------------------------------------------

template <class T>
class InstanceNorm {
  public:
    InstanceNorm() = default;
    explicit InstanceNorm(int channels, bool channels_last)
        : c_(channels), channels_last_(channels_last) {
        gamma_.assign(channels, T(1));
        beta_.assign(channels, T(0));
        gg_.assign(channels, T(0));
        gb_.assign(channels, T(0));
    }

    Tensor<T> forward(const Tensor<T>& x, bool cache) {
        Tensor<T> y(x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
        if (cache) xhat_ = Tensor<T>(x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
        if (!channels_last_) {
            const size_t spatial = size_t(x.shape[1]) * x.shape[2] * x.shape[3];
            if (cache) invstd_.assign(c_, T(0));
#pragma omp parallel for schedule(static)
            for (int ch = 0; ch < c_; ++ch) {
                const T* src = &x.v[size_t(ch) * spatial];
                T* dst = &y.v[size_t(ch) * spatial];
                double mean = 0;
                for (size_t j = 0; j < spatial; ++j) mean += double(src[j]);
                mean /= double(spatial);
                double var = 0;
                for (size_t j = 0; j < spatial; ++j) {
                    const double d = double(src[j]) - mean;
                    var += d * d;
                }
                const double inv = 1.0 / std::sqrt(var / double(spatial) + 1e-5);
                const double g = double(gamma_[ch]), b = double(beta_[ch]);
                for (size_t j = 0; j < spatial; ++j) {
                    const double h = (double(src[j]) - mean) * inv;
                    dst[j] = T(g * h + b);
                    if (cache) xhat_.v[size_t(ch) * spatial + j] = T(h);
                }
                if (cache) invstd_[ch] = T(inv);
            }
            return y;
        }
        const int N = x.shape[0];
        const size_t pixels = size_t(x.shape[1]) * x.shape[2];
        if (cache) invstd_.assign(size_t(N) * c_, T(0));
#pragma omp parallel for schedule(static)
        for (int n = 0; n < N; ++n) {
            const T* src = &x.v[size_t(n) * pixels * c_];
            T* dst = &y.v[size_t(n) * pixels * c_];
            std::vector<double> mean(c_, 0.0), var(c_, 0.0);
            for (size_t p = 0; p < pixels; ++p)
                for (int ch = 0; ch < c_; ++ch) mean[ch] += double(src[p * c_ + ch]);
            for (int ch = 0; ch < c_; ++ch) mean[ch] /= double(pixels);
            for (size_t p = 0; p < pixels; ++p)
                for (int ch = 0; ch < c_; ++ch) {
                    const double d = double(src[p * c_ + ch]) - mean[ch];
                    var[ch] += d * d;
                }
            std::vector<double> inv(c_), gsc(c_), bsc(c_);
            for (int ch = 0; ch < c_; ++ch) {
                inv[ch] = 1.0 / std::sqrt(var[ch] / double(pixels) + 1e-5);
                gsc[ch] = double(gamma_[ch]) * inv[ch];
                bsc[ch] = double(beta_[ch]) - gsc[ch] * mean[ch];
                if (cache) invstd_[size_t(n) * c_ + ch] = T(inv[ch]);
            }
            for (size_t p = 0; p < pixels; ++p)
                for (int ch = 0; ch < c_; ++ch) {
                    dst[p * c_ + ch] = T(gsc[ch] * double(src[p * c_ + ch]) + bsc[ch]);
                    if (cache)
                        xhat_.v[size_t(n) * pixels * c_ + p * c_ + ch] =
                            T((double(src[p * c_ + ch]) - mean[ch]) * inv[ch]);
                }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy) {
        Tensor<T> gx(gy.shape[0], gy.shape[1], gy.shape[2], gy.shape[3]);
        if (!channels_last_) {
            const size_t spatial = size_t(gy.shape[1]) * gy.shape[2] * gy.shape[3];
            for (int ch = 0; ch < c_; ++ch) {
                const T* g = &gy.v[size_t(ch) * spatial];
                const T* h = &xhat_.v[size_t(ch) * spatial];
                T* dst = &gx.v[size_t(ch) * spatial];
                double sum_g = 0, sum_gh = 0;
                for (size_t j = 0; j < spatial; ++j) {
                    sum_g += double(g[j]);
                    sum_gh += double(g[j]) * double(h[j]);
                }
                gb_[ch] += T(sum_g);
                gg_[ch] += T(sum_gh);
                const double mg = sum_g / double(spatial), mgh = sum_gh / double(spatial);
                const double scale = double(gamma_[ch]) * double(invstd_[ch]);
                for (size_t j = 0; j < spatial; ++j)
                    dst[j] = T(scale * (double(g[j]) - mg - double(h[j]) * mgh));
            }
            return gx;
        }
        const int N = gy.shape[0];
        const size_t pixels = size_t(gy.shape[1]) * gy.shape[2];
        std::vector<double> gg(c_, 0.0), gb(c_, 0.0);
        for (int n = 0; n < N; ++n) {
            const T* g = &gy.v[size_t(n) * pixels * c_];
            const T* h = &xhat_.v[size_t(n) * pixels * c_];
            T* dst = &gx.v[size_t(n) * pixels * c_];
            std::vector<double> sum_g(c_, 0.0), sum_gh(c_, 0.0);
            for (size_t p = 0; p < pixels; ++p)
                for (int ch = 0; ch < c_; ++ch) {
                    sum_g[ch] += double(g[p * c_ + ch]);
                    sum_gh[ch] += double(g[p * c_ + ch]) * double(h[p * c_ + ch]);
                }
            std::vector<double> mg(c_), mgh(c_), scale(c_);
            for (int ch = 0; ch < c_; ++ch) {
                gb[ch] += sum_g[ch];
                gg[ch] += sum_gh[ch];
                mg[ch] = sum_g[ch] / double(pixels);
                mgh[ch] = sum_gh[ch] / double(pixels);
                scale[ch] = double(gamma_[ch]) * double(invstd_[size_t(n) * c_ + ch]);
            }
            for (size_t p = 0; p < pixels; ++p)
                for (int ch = 0; ch < c_; ++ch)
                    dst[p * c_ + ch] = T(scale[ch] * (double(g[p * c_ + ch]) - mg[ch] -
                                                      double(h[p * c_ + ch]) * mgh[ch]));
        }
        for (int ch = 0; ch < c_; ++ch) {
            gg_[ch] += T(gg[ch]);
            gb_[ch] += T(gb[ch]);
        }
        return gx;
    }

    void params(std::vector<ParamRef<T>>& out, const std::string& prefix) {
        out.push_back({prefix + ".gamma", &gamma_, &gg_, {c_}});
        out.push_back({prefix + ".beta", &beta_, &gb_, {c_}});
    }
    void drop_cache() {
        xhat_ = {};
        invstd_.clear();
    }

  private:
    int c_ = 0;
    bool channels_last_ = false;
    std::vector<T> gamma_, beta_, gg_, gb_;
    Tensor<T> xhat_;
    std::vector<T> invstd_;
};

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <class T>
class LeakyReLU {
  public:
    explicit LeakyReLU(double slope = 0.0) : slope_(T(slope)) {}

    Tensor<T> forward(const Tensor<T>& x, bool cache) {
        Tensor<T> y = x;
        for (T& v : y.v) v = v > T(0) ? v : slope_ * v;
        if (cache) x_ = x;
        return y;
    }
    Tensor<T> backward(const Tensor<T>& gy) {
        Tensor<T> gx = gy;
        for (size_t i = 0; i < gx.size(); ++i)
            if (x_.v[i] <= T(0)) gx.v[i] *= slope_;
        return gx;
    }
    void drop_cache() { x_ = {}; }

  private:
    T slope_;
    Tensor<T> x_;
};

// Sigmoid rescaled onto [-1, 1]: y = 2*sigmoid(x) - 1.
template <class T>
class SigmoidSymmetric {
  public:
    Tensor<T> forward(const Tensor<T>& x, bool cache) {
        Tensor<T> y = x;
        for (T& v : y.v) {
            const double s = 1.0 / (1.0 + std::exp(-double(v)));
            v = T(2.0 * s - 1.0);
        }
        if (cache) y_ = y;
        return y;
    }
    Tensor<T> backward(const Tensor<T>& gy) {
        Tensor<T> gx = gy;
        for (size_t i = 0; i < gx.size(); ++i) {
            const double s = (double(y_.v[i]) + 1.0) / 2.0;
            gx.v[i] *= T(2.0 * s * (1.0 - s));
        }
        return gx;
    }
    void drop_cache() { y_ = {}; }

  private:
    Tensor<T> y_;
};

// ---------------------------------------------------------------------------
// 2D convolution on channels-last slice batches [N, H, W, C]. The channel
// axis is contiguous, so the inner products vectorize even when the spatial
// extent collapses deep in the discriminator.
// ---------------------------------------------------------------------------

inline int conv_out_size(int n, int k, int s, int p) { return (n + 2 * p - k) / s + 1; }

template <class T>
class Conv2d {
  public:
    Conv2d() = default;
    Conv2d(int cin, int cout, int k, int stride, int pad)
        : cin_(cin), cout_(cout), k_(k), stride_(stride), pad_(pad) {
        w_.resize(size_t(k) * k * cin * cout);  // [ky][kx][ic][oc]
        b_.assign(cout, T(0));
        gw_.assign(w_.size(), T(0));
        gb_.assign(cout, T(0));
    }

    void init(Rng& rng) {
        kaiming_init(w_, size_t(cin_) * k_ * k_, rng);
        std::fill(b_.begin(), b_.end(), T(0));
    }

    // valid output range [lo, hi) for one kernel offset along an axis
    static std::pair<int, int> tap_range(int in, int out, int stride, int off) {
        int lo = off < 0 ? (-off + stride - 1) / stride : 0;
        int hi = std::min(out, (in - off + stride - 1) / stride);
        return {std::min(lo, out), std::max(hi, 0)};
    }

    Tensor<T> forward(const Tensor<T>& x, bool cache) {
        if (x.shape[3] != cin_) throw Error("Conv2d: channel mismatch");
        const int N = x.shape[0], H = x.shape[1], W = x.shape[2];
        const int Ho = conv_out_size(H, k_, stride_, pad_);
        const int Wo = conv_out_size(W, k_, stride_, pad_);
        if (Ho < 1 || Wo < 1) throw Error("Conv2d: input smaller than the receptive footprint");
        if (cache) x_ = x;
        Tensor<T> y(N, Ho, Wo, cout_);
#pragma omp parallel for schedule(static)
        for (int n = 0; n < N; ++n) {
            T* obase = &y.v[size_t(n) * Ho * Wo * cout_];
            for (int i = 0; i < Ho * Wo; ++i)
                std::copy(b_.begin(), b_.end(), obase + size_t(i) * cout_);
            const T* xbase = &x.v[size_t(n) * H * W * cin_];
            for (int ky = 0; ky < k_; ++ky) {
                const auto [oy0, oy1] = tap_range(H, Ho, stride_, ky - pad_);
                for (int kx = 0; kx < k_; ++kx) {
                    const auto [ox0, ox1] = tap_range(W, Wo, stride_, kx - pad_);
                    const T* wtap = &w_[(size_t(ky) * k_ + kx) * cin_ * cout_];
                    for (int oy = oy0; oy < oy1; ++oy) {
                        const int iy = oy * stride_ + ky - pad_;
                        for (int ox = ox0; ox < ox1; ++ox) {
                            const int ix = ox * stride_ + kx - pad_;
                            const T* xp = xbase + (size_t(iy) * W + ix) * cin_;
                            T* op = obase + (size_t(oy) * Wo + ox) * cout_;
                            for (int ic = 0; ic < cin_; ++ic) {
                                const T xv = xp[ic];
                                const T* wr = wtap + size_t(ic) * cout_;
                                for (int oc = 0; oc < cout_; ++oc) op[oc] += xv * wr[oc];
                            }
                        }
                    }
                }
            }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy, bool need_input_grad = true) {
        const int N = x_.shape[0], H = x_.shape[1], W = x_.shape[2];
        const int Ho = gy.shape[1], Wo = gy.shape[2];
        {
            std::vector<double> bsum(cout_, 0.0);
            for (size_t i = 0; i < gy.size(); i += cout_)
                for (int oc = 0; oc < cout_; ++oc) bsum[oc] += double(gy.v[i + oc]);
            for (int oc = 0; oc < cout_; ++oc) gb_[oc] += T(bsum[oc]);
        }
        // weight gradients: each thread owns one (ky,kx) tap slice of gw
#pragma omp parallel for collapse(2) schedule(static)
        for (int ky = 0; ky < k_; ++ky)
            for (int kx = 0; kx < k_; ++kx) {
                const auto [oy0, oy1] = tap_range(H, Ho, stride_, ky - pad_);
                const auto [ox0, ox1] = tap_range(W, Wo, stride_, kx - pad_);
                T* gtap = &gw_[(size_t(ky) * k_ + kx) * cin_ * cout_];
                for (int n = 0; n < N; ++n) {
                    const T* xbase = &x_.v[size_t(n) * H * W * cin_];
                    const T* gbase = &gy.v[size_t(n) * Ho * Wo * cout_];
                    for (int oy = oy0; oy < oy1; ++oy) {
                        const int iy = oy * stride_ + ky - pad_;
                        for (int ox = ox0; ox < ox1; ++ox) {
                            const int ix = ox * stride_ + kx - pad_;
                            const T* xp = xbase + (size_t(iy) * W + ix) * cin_;
                            const T* gp = gbase + (size_t(oy) * Wo + ox) * cout_;
                            for (int ic = 0; ic < cin_; ++ic) {
                                const T xv = xp[ic];
                                T* gr = gtap + size_t(ic) * cout_;
                                for (int oc = 0; oc < cout_; ++oc) gr[oc] += xv * gp[oc];
                            }
                        }
                    }
                }
            }
        if (!need_input_grad) return {};
        Tensor<T> gx(N, H, W, cin_);
#pragma omp parallel for schedule(static)
        for (int n = 0; n < N; ++n) {
            T* gxbase = &gx.v[size_t(n) * H * W * cin_];
            const T* gbase = &gy.v[size_t(n) * Ho * Wo * cout_];
            for (int ky = 0; ky < k_; ++ky) {
                const auto [oy0, oy1] = tap_range(H, Ho, stride_, ky - pad_);
                for (int kx = 0; kx < k_; ++kx) {
                    const auto [ox0, ox1] = tap_range(W, Wo, stride_, kx - pad_);
                    const T* wtap = &w_[(size_t(ky) * k_ + kx) * cin_ * cout_];
                    for (int oy = oy0; oy < oy1; ++oy) {
                        const int iy = oy * stride_ + ky - pad_;
                        for (int ox = ox0; ox < ox1; ++ox) {
                            const int ix = ox * stride_ + kx - pad_;
                            T* gp = gxbase + (size_t(iy) * W + ix) * cin_;
                            const T* go = gbase + (size_t(oy) * Wo + ox) * cout_;
                            for (int ic = 0; ic < cin_; ++ic) {
                                const T* wr = wtap + size_t(ic) * cout_;
                                T acc = T(0);
                                for (int oc = 0; oc < cout_; ++oc) acc += wr[oc] * go[oc];
                                gp[ic] += acc;
                            }
                        }
                    }
                }
            }
        }
        return gx;
    }

    void params(std::vector<ParamRef<T>>& out, const std::string& prefix) {
        out.push_back({prefix + ".w", &w_, &gw_, {k_, k_, cin_, cout_}});
        out.push_back({prefix + ".b", &b_, &gb_, {cout_}});
    }
    void drop_cache() { x_ = {}; }

  private:
    int cin_ = 0, cout_ = 0, k_ = 0, stride_ = 1, pad_ = 0;
    std::vector<T> w_, b_, gw_, gb_;
    Tensor<T> x_;
};

}  // namespace isore
