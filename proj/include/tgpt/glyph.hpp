#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tgpt {

inline constexpr std::array<std::string_view, 4> kColorNames{"red", "green", "blue", "yellow"};
inline constexpr std::array<std::string_view, 4> kShapeNames{"circle", "square", "triangle", "diamond"};
inline constexpr std::array<std::string_view, 9> kPositionNames{
    "top left", "top", "top right", "left", "center", "right", "bottom left", "bottom", "bottom right"};
inline constexpr std::array<std::string_view, 4> kCountWords{"no", "one", "two", "three"};
inline constexpr std::size_t kMaxDistractors = 3;

/// Everything needed to re-render one glyph image.
struct GlyphAttributes {
    int shape = 0;
    int color = 0;
    int position = 4;  // 3x3 grid bucket, row-major
    double jitter_x = 0.0;
    double jitter_y = 0.0;
    double size = 7.0;  // main glyph radius in pixels
    int distractor_count = 0;
    int distractor_shape = 0;
    int distractor_color = 0;
    std::uint64_t noise_seed = 0;

    /// Whitespace-free record used in the dataset index.
    [[nodiscard]] std::string encode() const {
        std::ostringstream os;
        os.precision(17);
        os << shape << ',' << color << ',' << position << ',' << jitter_x << ',' << jitter_y << ',' << size << ','
           << distractor_count << ',' << distractor_shape << ',' << distractor_color << ',' << noise_seed;
        return os.str();
    }

    static GlyphAttributes decode(const std::string& s) {
        GlyphAttributes a;
        std::istringstream is(s);
        char c1, c2, c3, c4, c5, c6, c7, c8, c9;
        is >> a.shape >> c1 >> a.color >> c2 >> a.position >> c3 >> a.jitter_x >> c4 >> a.jitter_y >> c5 >>
            a.size >> c6 >> a.distractor_count >> c7 >> a.distractor_shape >> c8 >> a.distractor_color >> c9 >>
            a.noise_seed;
        if (!is || c1 != ',' || c9 != ',') throw std::runtime_error("malformed attribute record '" + s + "'");
        return a;
    }

    bool operator==(const GlyphAttributes&) const = default;
};

/// "red triangle" style name of a (color, shape) class.
inline std::string compositional_class_name(std::size_t class_id, std::size_t n_shapes = kShapeNames.size()) {
    return std::string(kColorNames.at(class_id / n_shapes)) + " " + std::string(kShapeNames.at(class_id % n_shapes));
}

/// Opaque code name ("g-07") that carries no visual meaning.
inline std::string opaque_class_name(std::size_t class_id) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "g-%02zu", class_id);
    return buf;
}

}  // namespace tgpt
