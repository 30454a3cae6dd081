#pragma once

#include <cstdint>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tgpt/encoders.hpp"
#include "tgpt/glyph.hpp"
#include "tgpt/io.hpp"
#include "tgpt/numerics/kernels.hpp"
#include "tgpt/tokenizer.hpp"

namespace tgpt {

inline constexpr const char* kGlyphTemplate = "a photo of a {class}, a type of glyph.";

/// The seven multi-template prompts used for the largest benchmark.
inline std::vector<std::string> seven_templates() {
    return {"itap of a {class}.",          "a bad photo of the {class}.", "a origami {class}.",
            "a photo of the large {class}.", "a {class} in a video game.",  "art of the {class}.",
            "a photo of the small {class}."};
}

inline std::string fill_template(const std::string& tmpl, const std::string& class_name) {
    const auto at = tmpl.find("{class}");
    if (at == std::string::npos) throw std::invalid_argument("template '" + tmpl + "' has no {class} slot");
    return tmpl.substr(0, at) + class_name + tmpl.substr(at + 7);
}

/// Per-class category templates with a {class} slot.
class TemplateRegistry {
public:
    TemplateRegistry() = default;

    /// Every class shares the same class-agnostic template list.
    TemplateRegistry(std::vector<std::string> class_names, const std::vector<std::string>& templates)
        : names_(std::move(class_names)), templates_(names_.size(), templates) {
        if (templates.empty()) throw std::invalid_argument("template registry: no templates");
        for (const auto& t : templates) (void)fill_template(t, "x");
    }

    [[nodiscard]] std::size_t n_classes() const { return names_.size(); }
    [[nodiscard]] const std::string& class_name(std::size_t c) const { return names_.at(c); }
    [[nodiscard]] const std::vector<std::string>& class_names() const { return names_; }

    [[nodiscard]] const std::vector<std::string>& templates(std::size_t class_id) const {
        if (class_id >= templates_.size()) {
            throw std::out_of_range("category_description: unknown class " + std::to_string(class_id));
        }
        return templates_[class_id];
    }

    /// Fills one template of `class_id`, chosen uniformly when several exist.
    [[nodiscard]] std::string category_description(std::size_t class_id, Rng& rng) const {
        const auto& ts = templates(class_id);
        const std::size_t pick = ts.size() == 1 ? 0 : static_cast<std::size_t>(rng.below(ts.size()));
        return fill_template(ts[pick], names_[class_id]);
    }

    /// Every (class, template) sentence, class-major.
    [[nodiscard]] std::vector<std::string> all_descriptions() const {
        std::vector<std::string> out;
        for (std::size_t c = 0; c < names_.size(); ++c) {
            for (const auto& t : templates_[c]) out.push_back(fill_template(t, names_[c]));
        }
        return out;
    }

private:
    std::vector<std::string> names_;
    std::vector<std::vector<std::string>> templates_;
};

/// One deterministic sentence describing a rendered glyph sample: main glyph,
/// its position bucket, and the distractors.
inline std::string content_description(const GlyphAttributes& a) {
    std::string s = "a " + std::string(kColorNames.at(static_cast<std::size_t>(a.color))) + " " +
                    std::string(kShapeNames.at(static_cast<std::size_t>(a.shape))) + " near the " +
                    std::string(kPositionNames.at(static_cast<std::size_t>(a.position)));
    if (a.distractor_count > 0) {
        s += " with " + std::string(kCountWords.at(static_cast<std::size_t>(a.distractor_count))) + " " +
             std::string(kColorNames.at(static_cast<std::size_t>(a.distractor_color))) + " " +
             std::string(kShapeNames.at(static_cast<std::size_t>(a.distractor_shape)));
        if (a.distractor_count > 1) s += "s";
    }
    return s;
}

/// Vocabulary-space supervision: logits = P W_E^T ([B*K, d_V]) and masked
/// cross-entropy against K target tokens per item. `target` holds B*K ids.
template <class T>
Tensor<T> text_supervision_loss(const Tensor<T>& prompts, std::span<const std::int32_t> target_ids,
                                std::span<const std::uint8_t> target_mask, const Tensor<T>& token_embedding) {
    if (prompts.rank() != 3 || target_ids.size() != prompts.dim(0) * prompts.dim(1) ||
        target_mask.size() != target_ids.size()) {
        throw ShapeError("text_supervision_loss: prompts " + shape_str(prompts.shape()) + " vs " +
                         std::to_string(target_ids.size()) + " target tokens");
    }
    const std::size_t rows = prompts.dim(0) * prompts.dim(1);
    auto logits = reshape(linear(prompts, token_embedding), {rows, token_embedding.dim(0)});
    return cross_entropy(logits, target_ids, target_mask);
}

enum class SupervisionSpace { vocabulary, embedding, latent };

inline const char* to_string(SupervisionSpace s) {
    switch (s) {
        case SupervisionSpace::vocabulary: return "vocabulary";
        case SupervisionSpace::embedding: return "embedding";
        case SupervisionSpace::latent: return "latent";
    }
    return "?";
}

inline SupervisionSpace parse_supervision_space(const std::string& s) {
    if (s == "vocabulary") return SupervisionSpace::vocabulary;
    if (s == "embedding") return SupervisionSpace::embedding;
    if (s == "latent") return SupervisionSpace::latent;
    throw std::invalid_argument("unknown supervision space '" + s + "'");
}

/// Supervision loss in the chosen space:
///  vocabulary - masked CE of P W_E^T against the target ids;
///  embedding  - masked MSE between P and the embedded target sequence;
///  latent     - 1 - cos(T(P), T(target)), averaged over the batch.
template <class T>
Tensor<T> supervision_loss(SupervisionSpace space, const Tensor<T>& prompts, std::span<const std::int32_t> ids,
                           std::span<const std::uint8_t> mask, const TextEncoder<T>& text) {
    switch (space) {
        case SupervisionSpace::vocabulary:
            return text_supervision_loss(prompts, ids, mask, text.token_embedding());
        case SupervisionSpace::embedding: {
            auto target = embedding<T>(ids, {prompts.dim(0), prompts.dim(1)}, text.token_embedding());
            return mse(prompts, target, mask);
        }
        case SupervisionSpace::latent: {
            auto tp = text.encode_prompts(prompts);
            auto tt = text.encode_ids(ids, mask, prompts.dim(0));
            auto cos = sum(mul(tp, tt), -1);
            return sub(Tensor<T>::scalar(T(1)), mean_all(cos));
        }
    }
    throw std::invalid_argument("supervision_loss: invalid space");
}

inline std::string templates_file_text(const std::vector<std::string>& templates) {
    std::string s;
    for (const auto& t : templates) s += t + "\n";
    return s;
}

inline std::vector<std::string> load_templates(const std::filesystem::path& path) {
    std::istringstream is(io::read_text(path));
    std::vector<std::string> out;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty()) out.push_back(line);
    }
    if (out.empty()) throw std::runtime_error("templates file " + path.string() + " is empty");
    return out;
}

}  // namespace tgpt
