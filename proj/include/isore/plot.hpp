#pragma once

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "isore/volume.hpp"

namespace isore {

// Tiny raster canvas + PNG writer for the evaluation figures. Deliberately
// minimal: line charts and histograms on a white background.
class Canvas {
  public:
    Canvas(int w, int h) : w_(w), h_(h), px_(size_t(w) * h * 3, 255) {}

    int width() const { return w_; }
    int height() const { return h_; }

    void set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
        if (x < 0 || x >= w_ || y < 0 || y >= h_) return;
        uint8_t* p = &px_[(size_t(y) * w_ + x) * 3];
        p[0] = r;
        p[1] = g;
        p[2] = b;
    }

    void line(int x0, int y0, int x1, int y1, uint8_t r, uint8_t g, uint8_t b) {
        const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        for (;;) {
            set(x0, y0, r, g, b);
            if (x0 == x1 && y0 == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }

    void fill_rect(int x0, int y0, int x1, int y1, uint8_t r, uint8_t g, uint8_t b) {
        for (int y = std::max(0, y0); y <= std::min(h_ - 1, y1); ++y)
            for (int x = std::max(0, x0); x <= std::min(w_ - 1, x1); ++x) set(x, y, r, g, b);
    }

    void save_png(const std::string& path) const {
        // filter byte 0 per scanline, then one zlib stream
        std::vector<unsigned char> raw;
        raw.reserve(size_t(h_) * (size_t(w_) * 3 + 1));
        for (int y = 0; y < h_; ++y) {
            raw.push_back(0);
            raw.insert(raw.end(), &px_[size_t(y) * w_ * 3], &px_[(size_t(y) + 1) * w_ * 3]);
        }
        uLongf comp_len = compressBound(uLong(raw.size()));
        std::vector<unsigned char> comp(comp_len);
        if (compress2(comp.data(), &comp_len, raw.data(), uLong(raw.size()), 6) != Z_OK)
            throw IoError("png deflate failed");
        comp.resize(comp_len);

        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot create png: " + path);
        static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
        f.write(reinterpret_cast<const char*>(sig), 8);
        auto chunk = [&](const char* type, const unsigned char* data, uint32_t len) {
            const uint32_t be_len = __builtin_bswap32(len);
            f.write(reinterpret_cast<const char*>(&be_len), 4);
            f.write(type, 4);
            if (len) f.write(reinterpret_cast<const char*>(data), len);
            uLong crc = crc32(0, reinterpret_cast<const Bytef*>(type), 4);
            if (len) crc = crc32(crc, data, len);
            const uint32_t be_crc = __builtin_bswap32(uint32_t(crc));
            f.write(reinterpret_cast<const char*>(&be_crc), 4);
        };
        unsigned char ihdr[13];
        const uint32_t bw = __builtin_bswap32(uint32_t(w_)), bh = __builtin_bswap32(uint32_t(h_));
        std::memcpy(ihdr, &bw, 4);
        std::memcpy(ihdr + 4, &bh, 4);
        ihdr[8] = 8;   // bit depth
        ihdr[9] = 2;   // truecolor
        ihdr[10] = ihdr[11] = ihdr[12] = 0;
        chunk("IHDR", ihdr, 13);
        chunk("IDAT", comp.data(), uint32_t(comp.size()));
        chunk("IEND", nullptr, 0);
        if (!f) throw IoError("png write failed: " + path);
    }

  private:
    int w_, h_;
    std::vector<uint8_t> px_;
};

struct PlotSeries {
    std::string label;
    std::vector<double> x, y;
    std::array<uint8_t, 3> color{0, 0, 0};
};

// Simple multi-series line chart with axes; ranges are auto-scaled.
inline void plot_lines(const std::vector<PlotSeries>& series, const std::string& path,
                       int w = 640, int h = 420) {
    Canvas c(w, h);
    const int ml = 50, mr = 15, mt = 15, mb = 35;
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto& s : series)
        for (size_t i = 0; i < s.x.size(); ++i) {
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    if (!(x1 > x0)) x1 = x0 + 1;
    if (!(y1 > y0)) y1 = y0 + 1;
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    auto px = [&](double x) { return ml + int((x - x0) / (x1 - x0) * (w - ml - mr)); };
    auto py = [&](double y) { return h - mb - int((y - y0) / (y1 - y0) * (h - mt - mb)); };
    c.line(ml, mt, ml, h - mb, 0, 0, 0);
    c.line(ml, h - mb, w - mr, h - mb, 0, 0, 0);
    for (const auto& s : series)
        for (size_t i = 1; i < s.x.size(); ++i)
            c.line(px(s.x[i - 1]), py(s.y[i - 1]), px(s.x[i]), py(s.y[i]), s.color[0], s.color[1],
                   s.color[2]);
    c.save_png(path);
}

// Overlaid histograms (one bar chart per series, alpha-free side-by-side bins).
inline void plot_histogram(const std::vector<PlotSeries>& series, int bins,
                           const std::string& path, int w = 640, int h = 420) {
    double lo = 1e300, hi = -1e300;
    for (const auto& s : series)
        for (double v : s.y) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (!(hi > lo)) hi = lo + 1;
    std::vector<std::vector<int>> counts(series.size(), std::vector<int>(bins, 0));
    int peak = 1;
    for (size_t si = 0; si < series.size(); ++si)
        for (double v : series[si].y) {
            int b = int((v - lo) / (hi - lo) * bins);
            b = std::clamp(b, 0, bins - 1);
            peak = std::max(peak, ++counts[si][b]);
        }
    Canvas c(w, h);
    const int ml = 50, mr = 15, mt = 15, mb = 35;
    const double bw = double(w - ml - mr) / bins;
    c.line(ml, mt, ml, h - mb, 0, 0, 0);
    c.line(ml, h - mb, w - mr, h - mb, 0, 0, 0);
    const int sub = std::max(1, int(bw / std::max<size_t>(1, series.size())) - 1);
    for (size_t si = 0; si < series.size(); ++si)
        for (int b = 0; b < bins; ++b) {
            if (!counts[si][b]) continue;
            const int x = ml + int(b * bw) + int(si) * (sub + 1);
            const int top = h - mb - int(double(counts[si][b]) / peak * (h - mt - mb));
            c.fill_rect(x, top, x + sub, h - mb - 1, series[si].color[0], series[si].color[1],
                        series[si].color[2]);
        }
    c.save_png(path);
}

}  // namespace isore
