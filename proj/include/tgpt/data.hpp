#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "tgpt/glyph.hpp"
#include "tgpt/io.hpp"
#include "tgpt/numerics/rng.hpp"
#include "tgpt/supervision.hpp"

namespace tgpt {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline constexpr std::size_t kImageSize = 32;
inline constexpr std::size_t kImageValues = kImageSize * kImageSize * 3;
inline constexpr double kPixelNoise = 0.02;

struct DatasetConfig {
    std::size_t n_colors = 4;
    std::size_t n_shapes = 4;
    std::size_t per_class = 80;
    std::uint64_t seed = 0;

    [[nodiscard]] std::size_t n_classes() const { return n_colors * n_shapes; }

    void validate() const {
        if (n_colors == 0 || n_shapes == 0 || n_colors > kColorNames.size() || n_shapes > kShapeNames.size()) {
            throw std::invalid_argument("build_dataset: class grid " + std::to_string(n_colors) + "x" +
                                        std::to_string(n_shapes) + " must fit within 4x4");
        }
        if (per_class == 0) throw std::invalid_argument("build_dataset: per_class must be positive");
    }
};

struct GlyphSample {
    std::size_t id = 0;
    std::int32_t class_id = 0;
    GlyphAttributes attributes;
    std::vector<float> image;  // 32x32x3, row-major, values in [0, 1]
    std::string content;
};

struct GlyphDataset {
    DatasetConfig config;
    std::vector<GlyphSample> samples;

    [[nodiscard]] std::size_t n_classes() const { return config.n_classes(); }

    [[nodiscard]] std::vector<std::string> class_names(bool opaque = false) const {
        std::vector<std::string> out;
        for (std::size_t c = 0; c < n_classes(); ++c) {
            out.push_back(opaque ? opaque_class_name(c) : compositional_class_name(c, config.n_shapes));
        }
        return out;
    }
};

namespace detail {

inline bool inside_shape(int shape, double dx, double dy, double r) {
    switch (shape) {
        case 0: return dx * dx + dy * dy <= r * r;
        case 1: return std::abs(dx) <= 0.8 * r && std::abs(dy) <= 0.8 * r;
        case 2: {
            // Upward triangle, apex at (0, -r), base at y = 0.75 r.
            if (dy > 0.75 * r || dy < -r) return false;
            const double half = 0.9 * r * (dy + r) / (1.75 * r);
            return std::abs(dx) <= half;
        }
        case 3: return std::abs(dx) + std::abs(dy) <= r;
        default: throw std::invalid_argument("unknown shape index");
    }
}

inline constexpr std::array<std::array<float, 3>, 4> kPalette{{
    {0.90F, 0.15F, 0.15F},  // red
    {0.15F, 0.80F, 0.20F},  // green
    {0.20F, 0.30F, 0.95F},  // blue
    {0.95F, 0.90F, 0.15F},  // yellow
}};

// Composites one glyph with 4x4 supersampled coverage.
inline void draw_glyph(std::vector<float>& img, int shape, int color, double cx, double cy, double r) {
    constexpr int kSub = 4;
    const auto& rgb = kPalette.at(static_cast<std::size_t>(color));
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r - 1)));
    const int x1 = std::min<int>(kImageSize - 1, static_cast<int>(std::ceil(cx + r + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r - 1)));
    const int y1 = std::min<int>(kImageSize - 1, static_cast<int>(std::ceil(cy + r + 1)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            int hits = 0;
            for (int sy = 0; sy < kSub; ++sy) {
                for (int sx = 0; sx < kSub; ++sx) {
                    const double px = x + (sx + 0.5) / kSub, py = y + (sy + 0.5) / kSub;
                    hits += inside_shape(shape, px - cx, py - cy, r);
                }
            }
            if (!hits) continue;
            const float cov = static_cast<float>(hits) / (kSub * kSub);
            float* p = img.data() + (static_cast<std::size_t>(y) * kImageSize + static_cast<std::size_t>(x)) * 3;
            for (int ch = 0; ch < 3; ++ch) p[ch] = p[ch] * (1.0F - cov) + rgb[static_cast<std::size_t>(ch)] * cov;
        }
    }
}

}  // namespace detail

/// Draws attributes for sample `id` from its own stream of the dataset seed.
inline GlyphAttributes sample_attributes(std::size_t class_id, std::size_t id, const DatasetConfig& cfg) {
    Rng rng = Rng(cfg.seed).split(id);
    GlyphAttributes a;
    a.color = static_cast<int>(class_id / cfg.n_shapes);
    a.shape = static_cast<int>(class_id % cfg.n_shapes);
    a.position = static_cast<int>(rng.below(kPositionNames.size()));
    a.jitter_x = rng.uniform(-1.5, 1.5);
    a.jitter_y = rng.uniform(-1.5, 1.5);
    a.size = rng.uniform(5.5, 7.5);
    a.distractor_count = static_cast<int>(rng.below(kMaxDistractors));
    a.distractor_shape = static_cast<int>(rng.below(kShapeNames.size()));
    a.distractor_color = static_cast<int>(rng.below(kColorNames.size()));
    a.noise_seed = rng.next_u64();
    return a;
}

/// Deterministic rendering of one sample from its attributes.
inline std::vector<float> render_glyph(const GlyphAttributes& a) {
    Rng rng(a.noise_seed);
    std::vector<float> img(kImageValues);
    const float bg = static_cast<float>(rng.uniform(0.05, 0.25));
    std::fill(img.begin(), img.end(), bg);
    for (int k = 0; k < a.distractor_count; ++k) {
        const double cx = rng.uniform(3.0, 29.0), cy = rng.uniform(3.0, 29.0), r = rng.uniform(2.0, 3.0);
        detail::draw_glyph(img, a.distractor_shape, a.distractor_color, cx, cy, r);
    }
    const double cx = 16.0 + (a.position % 3 - 1) * 8.5 + a.jitter_x;
    const double cy = 16.0 + (a.position / 3 - 1) * 8.5 + a.jitter_y;
    detail::draw_glyph(img, a.shape, a.color, cx, cy, a.size);
    for (auto& p : img) p = static_cast<float>(std::clamp(p + kPixelNoise * rng.normal(), 0.0, 1.0));
    return img;
}

inline std::size_t generation_threads() {
    if (const char* env = std::getenv("TGPT_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n > 0) return static_cast<std::size_t>(n);
    }
    return 1;
}

/// Renders `per_class` samples for every (color, shape) class. Sample ids are
/// class-major: id = class * per_class + j.
inline GlyphDataset build_dataset(const DatasetConfig& cfg, std::size_t threads = 1) {
    cfg.validate();
    GlyphDataset ds{cfg, {}};
    ds.samples.resize(cfg.n_classes() * cfg.per_class);
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t id = begin; id < end; ++id) {
            auto& s = ds.samples[id];
            const std::size_t c = id / cfg.per_class;
            s.id = id;
            s.class_id = static_cast<std::int32_t>(c);
            s.attributes = sample_attributes(c, id, cfg);
            s.image = render_glyph(s.attributes);
            s.content = content_description(s.attributes);
        }
    };
    const std::size_t n = ds.samples.size();
    threads = std::clamp<std::size_t>(threads, 1, n);
    if (threads == 1) {
        work(0, n);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, n * t / threads, n * (t + 1) / threads);
        for (auto& th : pool) th.join();
    }
    return ds;
}

inline constexpr std::array<std::size_t, 5> kShotSettings{1, 2, 4, 8, 16};
// Per class, the first kFewShotPool ids feed train/val; the remainder is test.
inline constexpr std::size_t kFewShotPool = 20;
inline constexpr std::size_t kMinTestPerClass = 50;

struct FewShotSplit {
    std::size_t n_shots = 0;
    std::vector<std::size_t> train, val, test;
};

/// Few-shot protocol: n train and min(n, 4) val images per class, sampled
/// without replacement from the class pool; the test set is the fixed
/// held-out remainder, identical for every shot count and split seed.
inline FewShotSplit sample_few_shot(const GlyphDataset& ds, std::size_t n_shots, std::uint64_t seed) {
    if (std::find(kShotSettings.begin(), kShotSettings.end(), n_shots) == kShotSettings.end()) {
        throw std::invalid_argument("sample_few_shot: shots must be one of 1,2,4,8,16");
    }
    const std::size_t per = ds.config.per_class;
    const std::size_t n_val = std::min<std::size_t>(n_shots, 4);
    if (per < kFewShotPool + kMinTestPerClass) {
        throw std::invalid_argument("sample_few_shot: insufficient pool (" + std::to_string(per) +
                                    " per class, need " + std::to_string(kFewShotPool + kMinTestPerClass) + ")");
    }
    FewShotSplit split{n_shots, {}, {}, {}};
    const Rng root(seed);
    for (std::size_t c = 0; c < ds.n_classes(); ++c) {
        std::vector<std::size_t> pool(kFewShotPool);
        for (std::size_t j = 0; j < kFewShotPool; ++j) pool[j] = c * per + j;
        Rng rng = root.split(c);
        rng.shuffle(pool);
        split.train.insert(split.train.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_shots));
        split.val.insert(split.val.end(), pool.begin() + static_cast<std::ptrdiff_t>(n_shots),
                         pool.begin() + static_cast<std::ptrdiff_t>(n_shots + n_val));
        for (std::size_t j = kFewShotPool; j < per; ++j) split.test.push_back(c * per + j);
    }
    return split;
}

// ---------------------------------------------------------------------------
// On-disk layout of a dataset directory:
//   images.bin        float32 little-endian, samples x 32 x 32 x 3
//   index.tsv         sample_id, class_id, attribute record, byte offset
//   descriptions.tsv  sample_id, class_id, content sentence
//   classes.txt / classes_opaque.txt   one class name per line
//   templates.txt     class-agnostic category templates
//   meta.txt          key=value dataset config
// ---------------------------------------------------------------------------

inline void save_dataset(const GlyphDataset& ds, const std::filesystem::path& dir,
                         const std::vector<std::string>& templates) {
    std::filesystem::create_directories(dir);
    std::string bin(ds.samples.size() * kImageValues * sizeof(float), '\0');
    std::ostringstream index, desc;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const auto& s = ds.samples[i];
        const std::size_t offset = i * kImageValues * sizeof(float);
        std::memcpy(bin.data() + offset, s.image.data(), kImageValues * sizeof(float));
        index << s.id << '\t' << s.class_id << '\t' << s.attributes.encode() << '\t' << offset << '\n';
        desc << s.id << '\t' << s.class_id << '\t' << s.content << '\n';
    }
    io::write_atomic(dir / "images.bin", bin);
    io::write_text_atomic(dir / "index.tsv", index.str());
    io::write_text_atomic(dir / "descriptions.tsv", desc.str());
    std::string names, opaque;
    for (const auto& n : ds.class_names(false)) names += n + "\n";
    for (const auto& n : ds.class_names(true)) opaque += n + "\n";
    io::write_text_atomic(dir / "classes.txt", names);
    io::write_text_atomic(dir / "classes_opaque.txt", opaque);
    io::write_text_atomic(dir / "templates.txt", templates_file_text(templates));
    std::ostringstream meta;
    meta << "n_colors=" << ds.config.n_colors << "\nn_shapes=" << ds.config.n_shapes
         << "\nper_class=" << ds.config.per_class << "\nseed=" << ds.config.seed << "\n";
    io::write_text_atomic(dir / "meta.txt", meta.str());
}

/// Loads images, labels and attributes; never touches any text file besides
/// the index and meta.
inline GlyphDataset load_dataset_images(const std::filesystem::path& dir) {
    GlyphDataset ds;
    {
        std::istringstream meta(io::read_text(dir / "meta.txt"));
        std::map<std::string, std::string> kv;
        std::string line;
        while (std::getline(meta, line)) {
            const auto eq = line.find('=');
            if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
        }
        try {
            ds.config.n_colors = std::stoul(kv.at("n_colors"));
            ds.config.n_shapes = std::stoul(kv.at("n_shapes"));
            ds.config.per_class = std::stoul(kv.at("per_class"));
            ds.config.seed = std::stoull(kv.at("seed"));
        } catch (const std::exception&) {
            throw std::runtime_error("dataset meta file in " + dir.string() + " is malformed");
        }
    }
    const std::string bin = io::read_binary(dir / "images.bin");
    std::istringstream index(io::read_text(dir / "index.tsv"));
    std::string line;
    while (std::getline(index, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        GlyphSample s;
        std::string attrs;
        std::size_t offset = 0;
        row >> s.id >> s.class_id >> attrs >> offset;
        if (!row || offset + kImageValues * sizeof(float) > bin.size()) {
            throw std::runtime_error("dataset index row '" + line + "' is malformed");
        }
        s.attributes = GlyphAttributes::decode(attrs);
        s.image.resize(kImageValues);
        std::memcpy(s.image.data(), bin.data() + offset, kImageValues * sizeof(float));
        ds.samples.push_back(std::move(s));
    }
    if (ds.samples.size() != ds.config.n_classes() * ds.config.per_class) {
        throw std::runtime_error("dataset in " + dir.string() + " has " + std::to_string(ds.samples.size()) +
                                 " samples, meta expects " + std::to_string(ds.config.n_classes() * ds.config.per_class));
    }
    return ds;
}

/// Attaches content sentences from the descriptions file.
inline void load_descriptions(GlyphDataset& ds, const std::filesystem::path& dir) {
    std::istringstream in(io::read_text(dir / "descriptions.tsv"));
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto t1 = line.find('\t'), t2 = line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos) {
            throw std::runtime_error("descriptions row '" + line + "' is malformed");
        }
        const std::size_t id = std::stoul(line.substr(0, t1));
        if (id >= ds.samples.size()) throw std::runtime_error("descriptions row has unknown sample id");
        ds.samples[id].content = line.substr(t2 + 1);
        ++n;
    }
    if (n != ds.samples.size()) throw std::runtime_error("descriptions file does not cover every sample");
}

inline std::vector<std::string> load_class_names(const std::filesystem::path& dir, bool opaque) {
    std::istringstream in(io::read_text(dir / (opaque ? "classes_opaque.txt" : "classes.txt")));
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) out.push_back(line);
    }
    return out;
}

inline std::string split_file_stem(std::size_t shots, std::uint64_t seed) {
    return "shots" + std::to_string(shots) + "_seed" + std::to_string(seed);
}

inline void save_split(const FewShotSplit& split, const std::filesystem::path& dir, std::uint64_t seed) {
    auto write_ids = [&](const std::vector<std::size_t>& ids, const std::string& part) {
        std::string s;
        for (auto id : ids) s += std::to_string(id) + "\n";
        io::write_text_atomic(dir / (split_file_stem(split.n_shots, seed) + "." + part + ".txt"), s);
    };
    write_ids(split.train, "train");
    write_ids(split.val, "val");
    write_ids(split.test, "test");
}

inline FewShotSplit load_split(const std::filesystem::path& dir, std::size_t shots, std::uint64_t seed) {
    auto read_ids = [&](const std::string& part) {
        std::istringstream in(io::read_text(dir / (split_file_stem(shots, seed) + "." + part + ".txt")));
        std::vector<std::size_t> ids;
        std::size_t id;
        while (in >> id) ids.push_back(id);
        return ids;
    };
    return {shots, read_ids("train"), read_ids("val"), read_ids("test")};
}

/// Gathers the images of `ids` into one contiguous batch buffer.
inline std::vector<float> gather_images(const GlyphDataset& ds, std::span<const std::size_t> ids) {
    std::vector<float> out;
    out.reserve(ids.size() * kImageValues);
    for (auto id : ids) {
        const auto& img = ds.samples.at(id).image;
        out.insert(out.end(), img.begin(), img.end());
    }
    return out;
}

}  // namespace tgpt
