#pragma once

#include <array>
#include <numeric>
#include <vector>

#include "isore/volume.hpp"

namespace isore {

// Dense 4D tensor. Axis semantics are by convention: 3D feature maps use
// [C, D, H, W] (batch of one, per the training scheme), 2D slice batches use
// [N, C, H, W].
template <class T>
struct Tensor {
    std::array<int, 4> shape{0, 0, 0, 0};
    std::vector<T> v;

    Tensor() = default;
    Tensor(int a, int b, int c, int d, T fill = T(0))
        : shape{a, b, c, d}, v(size_t(a) * b * c * d, fill) {}

    size_t size() const { return v.size(); }
    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    size_t idx(int a, int b, int c, int d) const {
        return ((size_t(a) * shape[1] + b) * shape[2] + c) * shape[3] + d;
    }
    T& at(int a, int b, int c, int d) { return v[idx(a, b, c, d)]; }
    const T& at(int a, int b, int c, int d) const { return v[idx(a, b, c, d)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

// [1, D, H, W] view of a volume, as fed to the 3D generators.
template <class T, class U>
Tensor<T> volume_to_tensor(const VolumeT<U>& v) {
    Tensor<T> t(1, v.nz, v.ny, v.nx);
    for (size_t i = 0; i < v.size(); ++i) t.v[i] = T(v.data[i]);
    return t;
}

template <class U, class T>
VolumeT<U> tensor_to_volume(const Tensor<T>& t, VoxelSize voxel, IntensityDomain domain) {
    if (t.shape[0] != 1) throw Error("tensor_to_volume expects a single channel");
    VolumeT<U> v(t.shape[1], t.shape[2], t.shape[3], voxel);
    v.domain = domain;
    for (size_t i = 0; i < v.size(); ++i) v.data[i] = U(t.v[i]);
    return v;
}

// Batch of same-sized 2D slices as [N, 1, H, W], the discriminator input.
template <class T, class U>
Tensor<T> images_to_tensor(const std::vector<ImageT<U>>& imgs) {
    if (imgs.empty()) throw Error("images_to_tensor: empty batch");
    const int h = imgs[0].h, w = imgs[0].w;
    Tensor<T> t(int(imgs.size()), 1, h, w);
    for (size_t n = 0; n < imgs.size(); ++n) {
        if (imgs[n].h != h || imgs[n].w != w) throw Error("images_to_tensor: shape mismatch");
        for (size_t i = 0; i < imgs[n].data.size(); ++i)
            t.v[n * size_t(h) * w + i] = T(imgs[n].data[i]);
    }
    return t;
}

// Channel concatenation for [C, D, H, W] maps (skip connections).
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape[1] != b.shape[1] || a.shape[2] != b.shape[2] || a.shape[3] != b.shape[3])
        throw Error("concat_channels: spatial shape mismatch");
    Tensor<T> out(a.shape[0] + b.shape[0], a.shape[1], a.shape[2], a.shape[3]);
    std::copy(a.v.begin(), a.v.end(), out.v.begin());
    std::copy(b.v.begin(), b.v.end(), out.v.begin() + a.v.size());
    return out;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t, int first_channels) {
    Tensor<T> a(first_channels, t.shape[1], t.shape[2], t.shape[3]);
    Tensor<T> b(t.shape[0] - first_channels, t.shape[1], t.shape[2], t.shape[3]);
    std::copy(t.v.begin(), t.v.begin() + a.v.size(), a.v.begin());
    std::copy(t.v.begin() + a.v.size(), t.v.end(), b.v.begin());
    return {std::move(a), std::move(b)};
}

}  // namespace isore
