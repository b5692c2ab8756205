#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace maskmeta {

struct FrameDims {
    int height = 0;
    int width = 0;

    bool operator==(const FrameDims&) const = default;
    bool valid() const { return height >= 1 && width >= 1; }
};

/// Fractional pixel coordinate; v runs down rows, h runs across columns.
struct Center {
    double v = 0.0;
    double h = 0.0;
};

double center_distance(const Center& a, const Center& b);

/// One horizontal run of set pixels: row, first column, length.
struct Run {
    int row = 0;
    int col_start = 0;
    int len = 0;

    bool operator==(const Run&) const = default;
};

/// Binary pixel mask in row-major run-length encoding.
///
/// Runs are kept canonical: sorted by (row, col_start), disjoint, maximal
/// (touching runs merged) and clipped inside `dims`, so two masks compare
/// equal iff their pixel sets are equal.
class PixelMask {
public:
    PixelMask() = default;
    PixelMask(FrameDims dims, std::vector<Run> runs);

    static PixelMask from_pixels(FrameDims dims, std::vector<std::pair<int, int>> pixels);

    const FrameDims& dims() const { return dims_; }
    const std::vector<Run>& runs() const { return runs_; }
    std::int64_t area() const { return area_; }
    bool empty() const { return runs_.empty(); }

    bool contains(int row, int col) const;
    std::vector<std::pair<int, int>> pixels() const;

    template <typename Fn>
    void for_each_pixel(Fn&& fn) const {
        for (const Run& r : runs_) {
            for (int c = r.col_start; c < r.col_start + r.len; ++c) {
                fn(r.row, c);
            }
        }
    }

    bool operator==(const PixelMask&) const = default;

private:
    FrameDims dims_;
    std::vector<Run> runs_;
    std::int64_t area_ = 0;
};

/// |a ∩ b| for same-dims masks.
std::int64_t intersection_area(const PixelMask& a, const PixelMask& b);

/// Intersection over union |a∩b| / |a∪b|; 0 when both masks are empty.
double overlap(const PixelMask& a, const PixelMask& b);

/// Arithmetic mean of all pixel coordinates. Throws on an empty mask.
Center geometric_center(const PixelMask& m);

/// Translate by (dv, dh) rounded to the nearest integer, ties away from zero.
/// Pixels leaving the frame are clipped; nullopt when nothing survives.
std::optional<PixelMask> shift(const PixelMask& m, double dv, double dh);

struct MaskSplit {
    PixelMask inner;
    PixelMask boundary;
};

/// Boundary = pixels with an 8-neighbor outside the mask (the frame border
/// counts as outside); inner = the rest. The two parts partition the mask.
MaskSplit split_inner_boundary(const PixelMask& m);

struct Extent {
    int height = 0;
    int width = 0;
};

/// Tight axis-aligned bounding-box extents. Throws on an empty mask.
Extent bounding_extent(const PixelMask& m);

struct BoundingBox {
    int row_min = 0;
    int row_max = 0;  // inclusive
    int col_min = 0;
    int col_max = 0;  // inclusive

    Center center() const { return {0.5 * (row_min + row_max), 0.5 * (col_min + col_max)}; }
};

BoundingBox bounding_box(const PixelMask& m);

}  // namespace maskmeta
