#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "maskmeta/io.hpp"

using namespace maskmeta;
namespace fs = std::filesystem;

namespace {

const FrameDims kDims{24, 32};

PixelMask block(int r0, int c0, int h, int w) {
    std::vector<std::pair<int, int>> px;
    for (int r = r0; r < r0 + h; ++r) {
        for (int c = c0; c < c0 + w; ++c) px.push_back({r, c});
    }
    return PixelMask::from_pixels(kDims, px);
}

ProbMap flat_prob(int channels) {
    ProbMap pm{kDims.height, kDims.width, channels, {}};
    pm.data.assign(static_cast<std::size_t>(kDims.height) * kDims.width * channels,
                   1.0f / static_cast<float>(channels));
    return pm;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

LoadedSequence sample_sequence() {
    LoadedSequence data;
    data.pred.id = "sample";
    GroundTruthSequence gt;
    gt.id = "sample";
    for (int t = 1; t <= 3; ++t) {
        Frame f;
        f.index = t;
        f.dims = kDims;
        f.instances.push_back({1, 0, 0.875, block(2, 2 + t, 5, 6)});
        f.instances.push_back({2, 1, 0.25, block(14, 20, 4, 4)});
        f.prob_map = flat_prob(3);
        data.pred.frames.push_back(std::move(f));

        GroundTruthFrame g;
        g.index = t;
        g.instances.push_back({7, 0, block(2, 2 + t, 5, 6)});
        if (t == 2) g.ignore_mask = block(18, 0, 4, 8);
        gt.frames.push_back(std::move(g));
    }
    data.gt = std::move(gt);
    return data;
}

}  // namespace

TEST_CASE("sequence save then load round trip") {
    TempDir dir("maskmeta_io_roundtrip");
    LoadedSequence data = sample_sequence();
    save_sequence(dir.path.string(), data.pred, &*data.gt);

    LoadedSequence loaded = load_sequence(dir.path.string());
    REQUIRE(loaded.pred.frames.size() == 3);
    REQUIRE(loaded.gt.has_value());
    for (int i = 0; i < 3; ++i) {
        const Frame& a = data.pred.frames[static_cast<std::size_t>(i)];
        const Frame& b = loaded.pred.frames[static_cast<std::size_t>(i)];
        REQUIRE(a.instances.size() == b.instances.size());
        for (std::size_t j = 0; j < a.instances.size(); ++j) {
            CHECK(a.instances[j].local_id == b.instances[j].local_id);
            CHECK(a.instances[j].class_label == b.instances[j].class_label);
            CHECK(a.instances[j].score == b.instances[j].score);
            CHECK(a.instances[j].mask == b.instances[j].mask);
        }
        REQUIRE(b.prob_map.has_value());
        CHECK(b.prob_map->data == a.prob_map->data);

        const GroundTruthFrame& ga = data.gt->frames[static_cast<std::size_t>(i)];
        const GroundTruthFrame& gb = loaded.gt->frames[static_cast<std::size_t>(i)];
        REQUIRE(ga.instances.size() == gb.instances.size());
        CHECK(ga.instances[0].mask == gb.instances[0].mask);
        CHECK(ga.ignore_mask.has_value() == gb.ignore_mask.has_value());
        if (ga.ignore_mask) CHECK(*ga.ignore_mask == *gb.ignore_mask);
    }

    // Saving the loaded copy reproduces identical files.
    TempDir dir2("maskmeta_io_roundtrip2");
    save_sequence(dir2.path.string(), loaded.pred, &*loaded.gt);
    for (const auto& entry : fs::recursive_directory_iterator(dir.path)) {
        if (!entry.is_regular_file()) continue;
        fs::path rel = fs::relative(entry.path(), dir.path);
        std::ifstream a(entry.path(), std::ios::binary);
        std::ifstream b(dir2.path / rel, std::ios::binary);
        std::string sa((std::istreambuf_iterator<char>(a)), {});
        std::string sb((std::istreambuf_iterator<char>(b)), {});
        CHECK(sa == sb);
    }
}

TEST_CASE("missing frame files are reported with the frame index") {
    TempDir dir("maskmeta_io_missing");
    LoadedSequence data = sample_sequence();
    save_sequence(dir.path.string(), data.pred, nullptr);

    SUBCASE("missing metadata json") {
        fs::remove(dir.path / "pred" / "frame_000002.json");
        CHECK_THROWS_WITH_AS(load_sequence(dir.path.string()), doctest::Contains("frame 2"),
                             std::runtime_error);
    }
    SUBCASE("hole in the frame numbering") {
        fs::remove(dir.path / "pred" / "frame_000002.png");
        CHECK_THROWS_WITH_AS(load_sequence(dir.path.string()),
                             doctest::Contains("frame_000002"), std::runtime_error);
    }
}

TEST_CASE("corrupted probability rows name the pixel and frame") {
    TempDir dir("maskmeta_io_badprob");
    LoadedSequence data = sample_sequence();
    // Break one pixel's distribution in frame 2: sums to 0.8.
    ProbMap& pm = *data.pred.frames[1].prob_map;
    pm.at(5, 6, 0) = 0.2f;
    pm.at(5, 6, 1) = 0.3f;
    pm.at(5, 6, 2) = 0.3f;
    CHECK_THROWS_AS(save_sequence(dir.path.string(), data.pred, nullptr), std::runtime_error);

    // Write the corrupted file directly to exercise the load-side validator.
    LoadedSequence good = sample_sequence();
    save_sequence(dir.path.string(), good.pred, nullptr);
    write_prob_map((dir.path / "pred" / "frame_000002.prob").string(), pm);
    CHECK_THROWS_WITH_AS(load_sequence(dir.path.string()), doctest::Contains("(5,6)"),
                         std::runtime_error);
}

TEST_CASE("id map round trip and mask extraction") {
    IdMap map{4, 5, std::vector<std::uint16_t>(20, 0)};
    map.at(1, 1) = 3;
    map.at(1, 2) = 3;
    map.at(2, 4) = 9;
    map.at(0, 0) = 65535;

    auto masks = masks_from_id_map(map);
    REQUIRE(masks.size() == 3);
    CHECK(masks[0].first == 3);
    CHECK(masks[0].second.area() == 2);
    CHECK(masks[2].first == 65535);

    auto skipped = masks_from_id_map(map, 65535);
    CHECK(skipped.size() == 2);

    TempDir dir("maskmeta_io_idmap");
    std::string path = (dir.path / "map.png").string();
    write_id_map(path, map);
    IdMap loaded = read_id_map(path);
    CHECK(loaded.values == map.values);
}

TEST_CASE("filters") {
    Frame frame;
    frame.index = 1;
    frame.dims = kDims;
    frame.instances.push_back({1, 0, 0.9, block(0, 0, 10, 10)});   // 100 px
    frame.instances.push_back({2, 0, 0.4, block(12, 12, 5, 5)});

    SUBCASE("ignore threshold is >= 80 percent") {
        GroundTruthFrame gt;
        gt.index = 1;

        // 79 of 100 pixels inside: kept.
        std::vector<std::pair<int, int>> px;
        for (int r = 0; r < 10; ++r) {
            for (int c = 0; c < 10; ++c) {
                if (r * 10 + c < 79) px.push_back({r, c});
            }
        }
        gt.ignore_mask = PixelMask::from_pixels(kDims, px);
        Frame kept = filter_ignored(frame, gt);
        CHECK(kept.instances.size() == 2);

        // Exactly 80 of 100: removed.
        px.clear();
        for (int r = 0; r < 10; ++r) {
            for (int c = 0; c < 10; ++c) {
                if (r * 10 + c < 80) px.push_back({r, c});
            }
        }
        gt.ignore_mask = PixelMask::from_pixels(kDims, px);
        Frame removed = filter_ignored(frame, gt);
        REQUIRE(removed.instances.size() == 1);
        CHECK(removed.instances[0].local_id == 2);
        // Surviving masks are untouched.
        CHECK(removed.instances[0].mask == frame.instances[1].mask);

        // Fully inside: removed; no ignore mask: identity.
        GroundTruthFrame no_ignore;
        no_ignore.index = 1;
        CHECK(filter_ignored(frame, no_ignore).instances.size() == 2);
    }

    SUBCASE("score pre-filter") {
        CHECK(filter_score(frame, 0.0).instances.size() == 2);
        CHECK(filter_score(frame, 0.5).instances.size() == 1);
        CHECK(filter_score(frame, 0.95).instances.empty());
    }
}
