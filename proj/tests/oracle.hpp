#pragma once

// Naive pixel-set reference implementations used as test oracles. These stay
// independent of the run-length encoded production path.

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include "maskmeta/geometry.hpp"

namespace oracle {

using Pixel = std::pair<int, int>;
using PixelSet = std::set<Pixel>;

inline PixelSet to_set(const maskmeta::PixelMask& m) {
    PixelSet s;
    m.for_each_pixel([&](int r, int c) { s.insert({r, c}); });
    return s;
}

inline double iou(const PixelSet& a, const PixelSet& b) {
    std::size_t inter = 0;
    for (const Pixel& p : a) inter += b.count(p);
    std::size_t uni = a.size() + b.size() - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline std::pair<double, double> center(const PixelSet& a) {
    double sv = 0.0, sh = 0.0;
    for (const Pixel& p : a) {
        sv += p.first;
        sh += p.second;
    }
    return {sv / static_cast<double>(a.size()), sh / static_cast<double>(a.size())};
}

// Boundary under 8-neighborhood with the frame border exterior.
inline std::pair<PixelSet, PixelSet> split_inner_boundary(const PixelSet& a, int height,
                                                          int width) {
    PixelSet inner, boundary;
    for (const Pixel& p : a) {
        bool is_inner = true;
        for (int dr = -1; dr <= 1 && is_inner; ++dr) {
            for (int dc = -1; dc <= 1 && is_inner; ++dc) {
                int r = p.first + dr;
                int c = p.second + dc;
                if (r < 0 || r >= height || c < 0 || c >= width || !a.count({r, c})) {
                    is_inner = false;
                }
            }
        }
        (is_inner ? inner : boundary).insert(p);
    }
    return {inner, boundary};
}

// Random blobby mask: union of a few random rectangles, non-empty.
inline maskmeta::PixelMask random_mask(std::mt19937_64& rng, maskmeta::FrameDims dims) {
    std::uniform_int_distribution<int> nrect(1, 4);
    std::vector<Pixel> pixels;
    int rects = nrect(rng);
    for (int k = 0; k < rects; ++k) {
        std::uniform_int_distribution<int> rd(0, dims.height - 1);
        std::uniform_int_distribution<int> cd(0, dims.width - 1);
        int r0 = rd(rng), c0 = cd(rng);
        std::uniform_int_distribution<int> hd(1, std::min(8, dims.height - r0));
        std::uniform_int_distribution<int> wd(1, std::min(8, dims.width - c0));
        int h = hd(rng), w = wd(rng);
        for (int r = r0; r < r0 + h; ++r) {
            for (int c = c0; c < c0 + w; ++c) pixels.push_back({r, c});
        }
    }
    return maskmeta::PixelMask::from_pixels(dims, std::move(pixels));
}

}  // namespace oracle
