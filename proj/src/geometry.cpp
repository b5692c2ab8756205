#include "maskmeta/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace maskmeta {

namespace {

// Half-open column interval [first, second).
using Ival = std::pair<int, int>;

std::vector<Ival> intersect_ivals(const std::vector<Ival>& a, const std::vector<Ival>& b) {
    std::vector<Ival> out;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        int lo = std::max(a[i].first, b[j].first);
        int hi = std::min(a[i].second, b[j].second);
        if (lo < hi) out.emplace_back(lo, hi);
        if (a[i].second < b[j].second) {
            ++i;
        } else {
            ++j;
        }
    }
    return out;
}

std::vector<Ival> subtract_ivals(const std::vector<Ival>& a, const std::vector<Ival>& b) {
    std::vector<Ival> out;
    std::size_t j = 0;
    for (const auto& [s, e] : a) {
        int cur = s;
        while (j < b.size() && b[j].second <= cur) ++j;
        std::size_t k = j;
        while (k < b.size() && b[k].first < e) {
            if (b[k].first > cur) out.emplace_back(cur, b[k].first);
            cur = std::max(cur, b[k].second);
            ++k;
        }
        if (cur < e) out.emplace_back(cur, e);
    }
    return out;
}

// Columns c with [c-1, c+1] fully inside the interval set.
std::vector<Ival> erode_ivals(const std::vector<Ival>& a) {
    std::vector<Ival> out;
    for (const auto& [s, e] : a) {
        if (s + 1 < e - 1) out.emplace_back(s + 1, e - 1);
    }
    return out;
}

}  // namespace

double center_distance(const Center& a, const Center& b) {
    return std::hypot(a.v - b.v, a.h - b.h);
}

PixelMask::PixelMask(FrameDims dims, std::vector<Run> runs) : dims_(dims) {
    if (!dims.valid()) {
        throw std::invalid_argument(
            fmt::format("invalid frame dims {}x{}", dims.height, dims.width));
    }
    for (const Run& r : runs) {
        if (r.len < 1 || r.row < 0 || r.row >= dims.height || r.col_start < 0 ||
            r.col_start + r.len > dims.width) {
            throw std::invalid_argument(fmt::format(
                "run (row={}, col={}, len={}) outside {}x{} frame", r.row, r.col_start, r.len,
                dims.height, dims.width));
        }
    }
    std::sort(runs.begin(), runs.end(), [](const Run& a, const Run& b) {
        return std::tie(a.row, a.col_start) < std::tie(b.row, b.col_start);
    });
    // Merge touching or overlapping runs into canonical maximal runs.
    for (const Run& r : runs) {
        if (!runs_.empty() && runs_.back().row == r.row &&
            runs_.back().col_start + runs_.back().len >= r.col_start) {
            int end = std::max(runs_.back().col_start + runs_.back().len, r.col_start + r.len);
            runs_.back().len = end - runs_.back().col_start;
        } else {
            runs_.push_back(r);
        }
    }
    for (const Run& r : runs_) area_ += r.len;
}

PixelMask PixelMask::from_pixels(FrameDims dims, std::vector<std::pair<int, int>> pixels) {
    std::sort(pixels.begin(), pixels.end());
    pixels.erase(std::unique(pixels.begin(), pixels.end()), pixels.end());
    std::vector<Run> runs;
    for (const auto& [r, c] : pixels) {
        if (!runs.empty() && runs.back().row == r && runs.back().col_start + runs.back().len == c) {
            ++runs.back().len;
        } else {
            runs.push_back({r, c, 1});
        }
    }
    return PixelMask(dims, std::move(runs));
}

bool PixelMask::contains(int row, int col) const {
    auto it = std::upper_bound(runs_.begin(), runs_.end(), std::make_pair(row, col),
                               [](const std::pair<int, int>& p, const Run& r) {
                                   return std::tie(p.first, p.second) <
                                          std::tie(r.row, r.col_start);
                               });
    if (it == runs_.begin()) return false;
    --it;
    return it->row == row && col >= it->col_start && col < it->col_start + it->len;
}

std::vector<std::pair<int, int>> PixelMask::pixels() const {
    std::vector<std::pair<int, int>> out;
    out.reserve(static_cast<std::size_t>(area_));
    for_each_pixel([&](int r, int c) { out.emplace_back(r, c); });
    return out;
}

std::int64_t intersection_area(const PixelMask& a, const PixelMask& b) {
    if (!(a.dims() == b.dims())) {
        throw std::invalid_argument(
            fmt::format("mask dimension mismatch: {}x{} vs {}x{}", a.dims().height,
                        a.dims().width, b.dims().height, b.dims().width));
    }
    const auto& ra = a.runs();
    const auto& rb = b.runs();
    std::int64_t inter = 0;
    std::size_t i = 0, j = 0;
    while (i < ra.size() && j < rb.size()) {
        if (ra[i].row < rb[j].row) {
            ++i;
        } else if (rb[j].row < ra[i].row) {
            ++j;
        } else {
            int lo = std::max(ra[i].col_start, rb[j].col_start);
            int hi = std::min(ra[i].col_start + ra[i].len, rb[j].col_start + rb[j].len);
            if (lo < hi) inter += hi - lo;
            int ea = ra[i].col_start + ra[i].len;
            int eb = rb[j].col_start + rb[j].len;
            if (ea < eb) {
                ++i;
            } else if (eb < ea) {
                ++j;
            } else {
                ++i;
                ++j;
            }
        }
    }
    return inter;
}

double overlap(const PixelMask& a, const PixelMask& b) {
    std::int64_t inter = intersection_area(a, b);
    std::int64_t uni = a.area() + b.area() - inter;
    if (uni == 0) return 0.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

Center geometric_center(const PixelMask& m) {
    if (m.empty()) throw std::invalid_argument("geometric_center: empty mask");
    std::int64_t sum_v = 0;
    std::int64_t sum_h = 0;
    for (const Run& r : m.runs()) {
        sum_v += static_cast<std::int64_t>(r.row) * r.len;
        // col_start + ... + (col_start + len - 1)
        sum_h += static_cast<std::int64_t>(r.len) * r.col_start +
                 static_cast<std::int64_t>(r.len) * (r.len - 1) / 2;
    }
    double n = static_cast<double>(m.area());
    return {static_cast<double>(sum_v) / n, static_cast<double>(sum_h) / n};
}

std::optional<PixelMask> shift(const PixelMask& m, double dv, double dh) {
    if (m.empty()) throw std::invalid_argument("shift: empty mask");
    // llround rounds halfway cases away from zero on both axes.
    const int iv = static_cast<int>(std::llround(dv));
    const int ih = static_cast<int>(std::llround(dh));
    const int H = m.dims().height;
    const int W = m.dims().width;
    std::vector<Run> runs;
    for (const Run& r : m.runs()) {
        int row = r.row + iv;
        if (row < 0 || row >= H) continue;
        int s = std::max(0, r.col_start + ih);
        int e = std::min(W, r.col_start + r.len + ih);
        if (s < e) runs.push_back({row, s, e - s});
    }
    if (runs.empty()) return std::nullopt;
    return PixelMask(m.dims(), std::move(runs));
}

MaskSplit split_inner_boundary(const PixelMask& m) {
    if (m.empty()) throw std::invalid_argument("split_inner_boundary: empty mask");
    const auto& runs = m.runs();
    const int H = m.dims().height;

    // Row index -> position of that row's runs in the canonical run list.
    std::vector<std::pair<int, std::pair<std::size_t, std::size_t>>> row_spans;
    for (std::size_t i = 0; i < runs.size();) {
        std::size_t j = i;
        while (j < runs.size() && runs[j].row == runs[i].row) ++j;
        row_spans.push_back({runs[i].row, {i, j}});
        i = j;
    }
    auto coverage = [&](int row) -> std::vector<Ival> {
        auto it = std::lower_bound(row_spans.begin(), row_spans.end(), row,
                                   [](const auto& s, int r) { return s.first < r; });
        std::vector<Ival> out;
        if (it == row_spans.end() || it->first != row) return out;
        for (std::size_t i = it->second.first; i < it->second.second; ++i) {
            out.emplace_back(runs[i].col_start, runs[i].col_start + runs[i].len);
        }
        return out;
    };

    std::vector<Run> inner_runs;
    std::vector<Run> boundary_runs;
    for (const auto& [row, span] : row_spans) {
        std::vector<Ival> cov;
        for (std::size_t i = span.first; i < span.second; ++i) {
            cov.emplace_back(runs[i].col_start, runs[i].col_start + runs[i].len);
        }
        std::vector<Ival> inner;
        if (row > 0 && row < H - 1) {
            inner = intersect_ivals(erode_ivals(cov), erode_ivals(coverage(row - 1)));
            inner = intersect_ivals(inner, erode_ivals(coverage(row + 1)));
        }
        for (const auto& [s, e] : inner) inner_runs.push_back({row, s, e - s});
        for (const auto& [s, e] : subtract_ivals(cov, inner)) {
            boundary_runs.push_back({row, s, e - s});
        }
    }
    return {PixelMask(m.dims(), std::move(inner_runs)),
            PixelMask(m.dims(), std::move(boundary_runs))};
}

BoundingBox bounding_box(const PixelMask& m) {
    if (m.empty()) throw std::invalid_argument("bounding_box: empty mask");
    BoundingBox bb{m.runs().front().row, m.runs().back().row, m.dims().width, -1};
    for (const Run& r : m.runs()) {
        bb.col_min = std::min(bb.col_min, r.col_start);
        bb.col_max = std::max(bb.col_max, r.col_start + r.len - 1);
    }
    return bb;
}

Extent bounding_extent(const PixelMask& m) {
    BoundingBox bb = bounding_box(m);
    return {bb.row_max - bb.row_min + 1, bb.col_max - bb.col_min + 1};
}

}  // namespace maskmeta
