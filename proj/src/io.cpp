#include "maskmeta/io.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace maskmeta {

namespace {

constexpr char kProbMagic[4] = {'M', 'M', 'P', 'R'};

std::string frame_stem(int index) { return fmt::format("frame_{:06}", index); }

json read_json_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error(fmt::format("invalid json in '{}': {}", path.string(), e.what()));
    }
    return j;
}

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(fmt::format("cannot open '{}' for writing", path.string()));
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error(fmt::format("write failure on '{}'", path.string()));
}

int count_frames(const fs::path& dir) {
    int count = 0;
    while (fs::exists(dir / (frame_stem(count + 1) + ".png"))) ++count;
    if (count == 0) {
        throw std::runtime_error(
            fmt::format("no '{}' found under '{}'", frame_stem(1) + ".png", dir.string()));
    }
    // Detect holes beyond the contiguous prefix.
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() == 16 && name.starts_with("frame_") && name.ends_with(".png")) {
            int idx = std::stoi(name.substr(6, 6));
            if (idx > count) {
                throw std::runtime_error(fmt::format(
                    "missing frame file {} in '{}' (found frame {})",
                    frame_stem(count + 1) + ".png", dir.string(), idx));
            }
        }
    }
    return count;
}

IdMap render_id_map(FrameDims dims,
                    const std::vector<std::pair<std::uint16_t, const PixelMask*>>& masks) {
    IdMap map{dims.height, dims.width,
              std::vector<std::uint16_t>(static_cast<std::size_t>(dims.height) * dims.width, 0)};
    for (const auto& [id, mask] : masks) {
        std::uint16_t value = id;
        mask->for_each_pixel([&](int r, int c) { map.at(r, c) = value; });
    }
    return map;
}

}  // namespace

IdMap read_id_map(const std::string& path) {
    cv::Mat img = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (img.empty()) throw std::runtime_error(fmt::format("cannot read image '{}'", path));
    if (img.type() != CV_16UC1) {
        throw std::runtime_error(
            fmt::format("'{}' is not a 16-bit single-channel image", path));
    }
    IdMap map{img.rows, img.cols, {}};
    map.values.resize(static_cast<std::size_t>(img.rows) * img.cols);
    for (int r = 0; r < img.rows; ++r) {
        const auto* row = img.ptr<std::uint16_t>(r);
        std::copy(row, row + img.cols, map.values.begin() + static_cast<std::size_t>(r) * img.cols);
    }
    return map;
}

void write_id_map(const std::string& path, const IdMap& map) {
    cv::Mat img(map.height, map.width, CV_16UC1);
    for (int r = 0; r < map.height; ++r) {
        auto* row = img.ptr<std::uint16_t>(r);
        std::copy(map.values.begin() + static_cast<std::size_t>(r) * map.width,
                  map.values.begin() + static_cast<std::size_t>(r + 1) * map.width, row);
    }
    if (!cv::imwrite(path, img)) {
        throw std::runtime_error(fmt::format("cannot write image '{}'", path));
    }
}

ProbMap read_prob_map(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path));
    char magic[4];
    std::uint32_t shape[3];
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(shape), sizeof(shape));
    if (!in || !std::equal(magic, magic + 4, kProbMagic)) {
        throw std::runtime_error(fmt::format("'{}' is not a prob-map file", path));
    }
    ProbMap pm;
    pm.height = static_cast<int>(shape[0]);
    pm.width = static_cast<int>(shape[1]);
    pm.channels = static_cast<int>(shape[2]);
    if (pm.height < 1 || pm.width < 1 || pm.channels < 2) {
        throw std::runtime_error(fmt::format("'{}': bad prob-map shape {}x{}x{}", path, pm.height,
                                             pm.width, pm.channels));
    }
    std::size_t n = static_cast<std::size_t>(pm.height) * pm.width * pm.channels;
    pm.data.resize(n);
    in.read(reinterpret_cast<char*>(pm.data.data()), static_cast<std::streamsize>(n * 4));
    if (!in) throw std::runtime_error(fmt::format("'{}': truncated prob-map data", path));
    return pm;
}

void write_prob_map(const std::string& path, const ProbMap& pm) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(fmt::format("cannot open '{}' for writing", path));
    std::uint32_t shape[3] = {static_cast<std::uint32_t>(pm.height),
                              static_cast<std::uint32_t>(pm.width),
                              static_cast<std::uint32_t>(pm.channels)};
    out.write(kProbMagic, 4);
    out.write(reinterpret_cast<const char*>(shape), sizeof(shape));
    out.write(reinterpret_cast<const char*>(pm.data.data()),
              static_cast<std::streamsize>(pm.data.size() * 4));
    if (!out) throw std::runtime_error(fmt::format("write failure on '{}'", path));
}

std::vector<std::pair<std::uint16_t, PixelMask>> masks_from_id_map(const IdMap& map, int skip_id) {
    std::map<std::uint16_t, std::vector<Run>> runs;
    for (int r = 0; r < map.height; ++r) {
        int c = 0;
        while (c < map.width) {
            std::uint16_t id = map.at(r, c);
            int start = c;
            while (c < map.width && map.at(r, c) == id) ++c;
            if (id != 0 && static_cast<int>(id) != skip_id) {
                runs[id].push_back({r, start, c - start});
            }
        }
    }
    std::vector<std::pair<std::uint16_t, PixelMask>> out;
    out.reserve(runs.size());
    for (auto& [id, rl] : runs) {
        out.emplace_back(id, PixelMask({map.height, map.width}, std::move(rl)));
    }
    return out;
}

namespace {

GroundTruthSequence load_gt_tree(const fs::path& gt_dir, int frame_count,
                                 const std::string& id) {
    GroundTruthSequence gt;
    gt.id = id;
    for (int t = 1; t <= frame_count; ++t) {
        const std::string stem = frame_stem(t);
        fs::path png_path = gt_dir / (stem + ".png");
        if (!fs::exists(png_path)) {
            throw std::runtime_error(
                fmt::format("ground truth frame {}: missing '{}'", t, png_path.string()));
        }
        IdMap map = read_id_map(png_path.string());
        GroundTruthFrame frame;
        frame.index = t;

        json meta = read_json_file(gt_dir / (stem + ".json"));
        std::map<int, int> class_by_track;
        for (const auto& e : meta.at("instances")) {
            class_by_track[e.at("track").get<int>()] = e.at("class").get<int>();
        }
        std::vector<Run> ignore_runs;
        for (auto& [map_id, mask] : masks_from_id_map(map)) {
            if (map_id == kIgnoreRegionId) {
                ignore_runs = mask.runs();
                continue;
            }
            auto it = class_by_track.find(map_id);
            if (it == class_by_track.end()) {
                throw std::runtime_error(
                    fmt::format("ground truth frame {}: track {} missing from json", t, map_id));
            }
            frame.instances.push_back({map_id, it->second, std::move(mask)});
        }
        if (!ignore_runs.empty()) {
            frame.ignore_mask = PixelMask({map.height, map.width}, std::move(ignore_runs));
        }
        gt.frames.push_back(std::move(frame));
    }
    return gt;
}

}  // namespace

LoadedSequence load_sequence(const std::string& directory) {
    fs::path dir(directory);
    fs::path pred_dir = dir / "pred";
    if (!fs::is_directory(pred_dir)) {
        throw std::runtime_error(
            fmt::format("sequence directory '{}' has no pred/ subdirectory", directory));
    }
    LoadedSequence result;
    result.pred.id = dir.filename().string();
    if (result.pred.id.empty()) result.pred.id = dir.parent_path().filename().string();

    const int frame_count = count_frames(pred_dir);
    for (int t = 1; t <= frame_count; ++t) {
        const std::string stem = frame_stem(t);
        fs::path json_path = pred_dir / (stem + ".json");
        if (!fs::exists(json_path)) {
            throw std::runtime_error(
                fmt::format("frame {}: missing metadata file '{}'", t, json_path.string()));
        }
        IdMap map = read_id_map((pred_dir / (stem + ".png")).string());
        Frame frame;
        frame.index = t;
        frame.dims = {map.height, map.width};

        json meta = read_json_file(json_path);
        std::map<int, std::pair<int, double>> by_id;  // id -> (class, score)
        for (const auto& e : meta.at("instances")) {
            int id = e.at("id").get<int>();
            if (by_id.count(id)) {
                throw std::runtime_error(fmt::format("frame {}: duplicate instance id {}", t, id));
            }
            by_id[id] = {e.at("class").get<int>(), e.at("score").get<double>()};
        }
        auto masks = masks_from_id_map(map);
        for (auto& [id, mask] : masks) {
            auto it = by_id.find(id);
            if (it == by_id.end()) {
                throw std::runtime_error(
                    fmt::format("frame {}: id {} present in id map but not in json", t, id));
            }
            frame.instances.push_back({id, it->second.first, it->second.second, std::move(mask)});
        }
        if (masks.size() != by_id.size()) {
            for (const auto& [id, meta_entry] : by_id) {
                if (std::none_of(frame.instances.begin(), frame.instances.end(),
                                 [id = id](const Instance& inst) { return inst.local_id == id; })) {
                    throw std::runtime_error(fmt::format(
                        "frame {}: id {} listed in json but absent from id map", t, id));
                }
            }
        }
        fs::path prob_path = pred_dir / (stem + ".prob");
        if (fs::exists(prob_path)) frame.prob_map = read_prob_map(prob_path.string());

        try {
            validate_frame(frame);
        } catch (const std::exception& e) {
            throw std::runtime_error(fmt::format("'{}': {}", directory, e.what()));
        }
        result.pred.frames.push_back(std::move(frame));
    }
    validate_sequence(result.pred);

    fs::path gt_dir = dir / "gt";
    if (fs::is_directory(gt_dir)) {
        GroundTruthSequence gt = load_gt_tree(gt_dir, frame_count, result.pred.id);
        validate_ground_truth(gt, result.pred.dims(), frame_count);
        result.gt = std::move(gt);
    }
    return result;
}

GroundTruthSequence load_ground_truth(const std::string& directory) {
    fs::path dir(directory);
    if (fs::is_directory(dir / "gt")) dir /= "gt";
    if (!fs::is_directory(dir)) {
        throw std::runtime_error(fmt::format("no ground-truth directory at '{}'", directory));
    }
    const int frame_count = count_frames(dir);
    std::string id = dir.parent_path().filename().string();
    GroundTruthSequence gt = load_gt_tree(dir, frame_count, id);
    return gt;
}


void save_sequence(const std::string& directory, const Sequence& pred,
                   const GroundTruthSequence* gt) {
    validate_sequence(pred);
    fs::path dir(directory);
    fs::create_directories(dir / "pred");
    if (gt) fs::create_directories(dir / "gt");

    for (const Frame& frame : pred.frames) {
        const std::string stem = frame_stem(frame.index);
        std::vector<std::pair<std::uint16_t, const PixelMask*>> masks;
        json instances = json::array();
        for (const Instance& inst : frame.instances) {
            masks.emplace_back(static_cast<std::uint16_t>(inst.local_id), &inst.mask);
            instances.push_back(
                {{"id", inst.local_id}, {"class", inst.class_label}, {"score", inst.score}});
        }
        write_id_map((dir / "pred" / (stem + ".png")).string(), render_id_map(frame.dims, masks));
        write_json_file(dir / "pred" / (stem + ".json"), json{{"instances", instances}});
        if (frame.prob_map) {
            write_prob_map((dir / "pred" / (stem + ".prob")).string(), *frame.prob_map);
        }
    }
    if (gt) {
        validate_ground_truth(*gt, pred.dims(), pred.length());
        for (const GroundTruthFrame& frame : gt->frames) {
            const std::string stem = frame_stem(frame.index);
            std::vector<std::pair<std::uint16_t, const PixelMask*>> masks;
            if (frame.ignore_mask) masks.emplace_back(kIgnoreRegionId, &*frame.ignore_mask);
            json instances = json::array();
            for (const GroundTruthInstance& inst : frame.instances) {
                masks.emplace_back(static_cast<std::uint16_t>(inst.track_id), &inst.mask);
                instances.push_back({{"track", inst.track_id}, {"class", inst.class_label}});
            }
            write_id_map((dir / "gt" / (stem + ".png")).string(), render_id_map(pred.dims(), masks));
            write_json_file(dir / "gt" / (stem + ".json"), json{{"instances", instances}});
        }
    }
}

}  // namespace maskmeta
