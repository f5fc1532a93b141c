#pragma once

#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "isore/volume.hpp"

namespace isore {

static_assert(std::endian::native == std::endian::little,
              "volume_io assumes a little-endian host");

// ---------------------------------------------------------------------------
// Sidecar metadata (plain text, `key: value` per line)
// ---------------------------------------------------------------------------

struct Sidecar {
    std::array<int, 3> dims{0, 0, 0};  // z y x; 0 = unknown (TIFF carries its own dims)
    VoxelSize voxel;
    std::string dtype = "float32";
    std::string byte_order = "little";
    IntensityDomain domain = IntensityDomain::raw;
};

inline std::string sidecar_path(const std::string& data_path) { return data_path + ".meta"; }

inline void write_sidecar(const std::string& path, const Sidecar& sc) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write sidecar: " + path);
    f << "dims: " << sc.dims[0] << ' ' << sc.dims[1] << ' ' << sc.dims[2] << '\n'
      << "voxel_size: " << sc.voxel.z << ' ' << sc.voxel.y << ' ' << sc.voxel.x << '\n'
      << "dtype: " << sc.dtype << '\n'
      << "byte_order: " << sc.byte_order << '\n'
      << "intensity_domain: " << (sc.domain == IntensityDomain::normalized ? "normalized" : "raw")
      << '\n';
    if (!f) throw IoError("write failed: " + path);
}

inline Sidecar read_sidecar(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read sidecar: " + path);
    Sidecar sc;
    std::string line;
    while (std::getline(f, line)) {
        const auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        const std::string key = line.substr(0, colon);
        std::istringstream val(line.substr(colon + 1));
        if (key == "dims")
            val >> sc.dims[0] >> sc.dims[1] >> sc.dims[2];
        else if (key == "voxel_size")
            val >> sc.voxel.z >> sc.voxel.y >> sc.voxel.x;
        else if (key == "dtype")
            val >> sc.dtype;
        else if (key == "byte_order")
            val >> sc.byte_order;
        else if (key == "intensity_domain") {
            std::string d;
            val >> d;
            sc.domain = (d == "normalized") ? IntensityDomain::normalized : IntensityDomain::raw;
        }
        if (val.fail()) throw IoError("malformed sidecar line '" + line + "' in " + path);
    }
    return sc;
}

// ---------------------------------------------------------------------------
// Minimal baseline TIFF: multi-page, grayscale, uncompressed, strip-based.
// Reads 8/16-bit unsigned and 32-bit float, either byte order.
// Writes 32-bit float, little-endian, one strip per page.
// ---------------------------------------------------------------------------

namespace tiffdetail {

struct Reader {
    std::vector<unsigned char> buf;
    bool swap = false;

    uint16_t u16(size_t off) const {
        if (off + 2 > buf.size()) throw IoError("TIFF truncated");
        uint16_t v;
        std::memcpy(&v, &buf[off], 2);
        if (swap) v = uint16_t((v >> 8) | (v << 8));
        return v;
    }
    uint32_t u32(size_t off) const {
        if (off + 4 > buf.size()) throw IoError("TIFF truncated");
        uint32_t v;
        std::memcpy(&v, &buf[off], 4);
        if (swap) v = __builtin_bswap32(v);
        return v;
    }
};

struct Tag {
    uint16_t type = 0;
    uint32_t count = 0;
    size_t value_off = 0;  // offset of the value bytes within the file
};

inline size_t type_size(uint16_t t) {
    switch (t) {
        case 1: case 2: case 6: case 7: return 1;
        case 3: case 8: return 2;
        case 4: case 9: case 11: return 4;
        case 5: case 10: case 12: return 8;
        default: return 0;
    }
}

inline uint32_t tag_scalar(const Reader& r, const Tag& t, uint32_t idx = 0) {
    const size_t ts = type_size(t.type);
    const size_t off = t.value_off + idx * ts;
    if (t.type == 3) return r.u16(off);
    if (t.type == 4) return r.u32(off);
    if (t.type == 1) return r.buf.at(off);
    throw IoError("unsupported TIFF tag type " + std::to_string(t.type));
}

}  // namespace tiffdetail

inline Volume load_tiff(const std::string& path) {
    using namespace tiffdetail;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open TIFF: " + path);
    Reader r;
    r.buf.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    if (r.buf.size() < 8) throw IoError("not a TIFF file: " + path);
    if (r.buf[0] == 'I' && r.buf[1] == 'I')
        r.swap = false;
    else if (r.buf[0] == 'M' && r.buf[1] == 'M')
        r.swap = true;
    else
        throw IoError("not a TIFF file: " + path);
    if (r.u16(2) != 42) throw IoError("not a baseline TIFF: " + path);

    std::vector<Image> pages;
    uint32_t ifd_off = r.u32(4);
    int bits = 0, sample_format = 1;
    while (ifd_off != 0) {
        const uint16_t n_entries = r.u16(ifd_off);
        std::map<uint16_t, Tag> tags;
        for (uint16_t i = 0; i < n_entries; ++i) {
            const size_t e = ifd_off + 2 + size_t(i) * 12;
            Tag t;
            const uint16_t id = r.u16(e);
            t.type = r.u16(e + 2);
            t.count = r.u32(e + 4);
            const size_t nbytes = type_size(t.type) * t.count;
            t.value_off = nbytes <= 4 ? e + 8 : r.u32(e + 8);
            tags[id] = t;
        }
        auto get = [&](uint16_t id, std::optional<uint32_t> dflt = {}) -> uint32_t {
            auto it = tags.find(id);
            if (it == tags.end()) {
                if (dflt) return *dflt;
                throw IoError("TIFF missing required tag " + std::to_string(id));
            }
            return tag_scalar(r, it->second);
        };

        if (tags.count(322) || tags.count(323)) throw IoError("tiled TIFF not supported");
        if (get(259, 1u) != 1) throw IoError("compressed TIFF not supported");
        const uint32_t photometric = get(262, 1u);
        if (photometric > 1) throw IoError("non-grayscale TIFF not supported");
        if (get(277, 1u) != 1) throw IoError("multi-channel TIFF not supported");

        const int w = int(get(256));
        const int h = int(get(257));
        bits = int(get(258, 1u));
        sample_format = int(get(339, 1u));
        if (!((bits == 8 || bits == 16) && sample_format == 1) && !(bits == 32 && sample_format == 3))
            throw IoError("unsupported TIFF pixel type: " + std::to_string(bits) + "-bit, format " +
                          std::to_string(sample_format));

        const auto& so = tags.at(273);
        auto bc = tags.find(279);
        const uint32_t rows_per_strip = get(278, 0xffffffffu);
        const size_t bpp = size_t(bits) / 8;

        std::vector<unsigned char> raw(size_t(w) * h * bpp);
        size_t filled = 0;
        for (uint32_t s = 0; s < so.count; ++s) {
            const uint32_t off = tag_scalar(r, so, s);
            const uint32_t rows = std::min<uint32_t>(rows_per_strip, uint32_t(h) - s * rows_per_strip);
            size_t nbytes = size_t(rows) * w * bpp;
            if (bc != tags.end()) nbytes = tag_scalar(r, bc->second, s);
            if (off + nbytes > r.buf.size() || filled + nbytes > raw.size())
                throw IoError("TIFF strip out of bounds");
            std::memcpy(raw.data() + filled, &r.buf[off], nbytes);
            filled += nbytes;
        }
        if (filled != raw.size()) throw IoError("TIFF strips do not cover the page");

        Image img(h, w);
        for (size_t i = 0; i < img.data.size(); ++i) {
            if (bits == 8) {
                img.data[i] = float(raw[i]);
            } else if (bits == 16) {
                uint16_t v;
                std::memcpy(&v, &raw[2 * i], 2);
                if (r.swap) v = uint16_t((v >> 8) | (v << 8));
                img.data[i] = float(v);
            } else {
                uint32_t v;
                std::memcpy(&v, &raw[4 * i], 4);
                if (r.swap) v = __builtin_bswap32(v);
                float fv;
                std::memcpy(&fv, &v, 4);
                img.data[i] = fv;
            }
        }
        pages.push_back(std::move(img));
        ifd_off = r.u32(ifd_off + 2 + size_t(n_entries) * 12);
    }
    if (pages.empty()) throw IoError("TIFF has no pages: " + path);
    return restack(pages, Plane::xy);
}

inline void save_tiff(const Volume& v, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot create TIFF: " + path);

    auto put16 = [&](uint16_t x) { f.write(reinterpret_cast<const char*>(&x), 2); };
    auto put32 = [&](uint32_t x) { f.write(reinterpret_cast<const char*>(&x), 4); };

    f.write("II", 2);
    put16(42);
    const size_t page_bytes = size_t(v.ny) * v.nx * 4;
    const uint16_t n_tags = 10;
    const size_t ifd_bytes = 2 + size_t(n_tags) * 12 + 4;
    // Layout per page: [pixel strip][IFD]; header points at the first IFD.
    put32(uint32_t(8 + page_bytes));

    auto tag = [&](uint16_t id, uint16_t type, uint32_t count, uint32_t value) {
        put16(id);
        put16(type);
        put32(count);
        put32(value);
    };

    for (int z = 0; z < v.nz; ++z) {
        const size_t strip_off = 8 + size_t(z) * (page_bytes + ifd_bytes);
        f.write(reinterpret_cast<const char*>(&v.data[v.index(z, 0, 0)]), page_bytes);
        put16(n_tags);
        tag(256, 4, 1, uint32_t(v.nx));                       // ImageWidth
        tag(257, 4, 1, uint32_t(v.ny));                       // ImageLength
        tag(258, 3, 1, 32);                                   // BitsPerSample
        tag(259, 3, 1, 1);                                    // Compression: none
        tag(262, 3, 1, 1);                                    // Photometric: BlackIsZero
        tag(273, 4, 1, uint32_t(strip_off));                  // StripOffsets
        tag(277, 3, 1, 1);                                    // SamplesPerPixel
        tag(278, 4, 1, uint32_t(v.ny));                       // RowsPerStrip
        tag(279, 4, 1, uint32_t(page_bytes));                 // StripByteCounts
        tag(339, 3, 1, 3);                                    // SampleFormat: IEEE float
        const bool last = z + 1 == v.nz;
        // next IFD sits after the next page's pixel strip
        put32(last ? 0u : uint32_t(strip_off + 2 * page_bytes + ifd_bytes));
    }
    if (!f) throw IoError("TIFF write failed: " + path);
}

// ---------------------------------------------------------------------------
// Raw float32 + sidecar (bit-exact path for stacks TIFF readers disagree on)
// ---------------------------------------------------------------------------

inline Volume load_raw(const std::string& path) {
    const Sidecar sc = read_sidecar(sidecar_path(path));
    if (sc.dtype != "float32") throw IoError("raw loader supports float32 only");
    if (sc.byte_order != "little") throw IoError("raw loader supports little-endian only");
    if (sc.dims[0] < 1 || sc.dims[1] < 1 || sc.dims[2] < 1)
        throw IoError("sidecar missing dims for raw volume: " + path);
    Volume v(sc.dims[0], sc.dims[1], sc.dims[2], sc.voxel);
    v.domain = sc.domain;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open raw volume: " + path);
    f.read(reinterpret_cast<char*>(v.data.data()), std::streamsize(v.size() * 4));
    if (f.gcount() != std::streamsize(v.size() * 4))
        throw IoError("raw volume size does not match sidecar dims: " + path);
    char probe;
    if (f.read(&probe, 1)) throw IoError("raw volume larger than sidecar dims: " + path);
    return v;
}

inline bool has_extension(const std::string& path, const char* ext) {
    auto e = std::filesystem::path(path).extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
    return e == ext;
}

// Loads a multi-page TIFF or raw+sidecar volume. The sidecar's voxel size is
// used when present; an explicit argument overrides it.
inline Volume load_volume(const std::string& path, std::optional<VoxelSize> voxel = {}) {
    if (path.empty()) throw IoError("empty volume path");
    Volume v = has_extension(path, ".raw") ? load_raw(path) : load_tiff(path);
    if (!has_extension(path, ".raw") && std::filesystem::exists(sidecar_path(path))) {
        const Sidecar sc = read_sidecar(sidecar_path(path));
        v.voxel = sc.voxel;
        v.domain = sc.domain;
    }
    if (voxel) v.voxel = *voxel;
    return v;
}

inline void save_volume(const Volume& v, const std::string& path) {
    if (path.empty()) throw IoError("empty volume path");
    Sidecar sc;
    sc.dims = {v.nz, v.ny, v.nx};
    sc.voxel = v.voxel;
    sc.domain = v.domain;
    if (has_extension(path, ".raw")) {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot create raw volume: " + path);
        f.write(reinterpret_cast<const char*>(v.data.data()), std::streamsize(v.size() * 4));
        if (!f) throw IoError("raw volume write failed: " + path);
    } else {
        save_tiff(v, path);
    }
    write_sidecar(sidecar_path(path), sc);
}

}  // namespace isore
