#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tgpt/bonder.hpp"
#include "tgpt/encoders.hpp"
#include "tgpt/io.hpp"
#include "tgpt/lora.hpp"
#include "tgpt/supervision.hpp"

namespace tgpt {

enum class LossTerms { both, category_only, content_only, none };

inline const char* to_string(LossTerms t) {
    switch (t) {
        case LossTerms::both: return "both";
        case LossTerms::category_only: return "category_only";
        case LossTerms::content_only: return "content_only";
        case LossTerms::none: return "none";
    }
    return "?";
}

inline LossTerms parse_loss_terms(const std::string& s) {
    for (auto t : {LossTerms::both, LossTerms::category_only, LossTerms::content_only, LossTerms::none}) {
        if (s == to_string(t)) return t;
    }
    throw std::invalid_argument("unknown loss_terms '" + s + "'");
}

inline bool uses_category(LossTerms t) { return t == LossTerms::both || t == LossTerms::category_only; }
inline bool uses_content(LossTerms t) { return t == LossTerms::both || t == LossTerms::content_only; }

/// Every knob of the pipeline. The config file is flat `key=value` text whose
/// keys are exactly these field names; list-valued keys are comma-separated.
struct TrainConfig {
    // dataset
    std::size_t n_colors = 4;
    std::size_t n_shapes = 4;
    std::size_t per_class = 80;
    std::uint64_t dataset_seed = 0;
    std::size_t pretrain_per_class = 80;
    std::uint64_t pretrain_dataset_seed = 1;
    std::string class_names = "compositional";  // or "opaque"
    std::string category_templates = "glyph";    // or "seven"

    // encoders
    std::size_t d = 64;
    std::size_t patch_size = 8;
    std::size_t image_depth = 2;
    std::size_t text_depth = 2;
    std::size_t heads = 4;
    std::size_t max_len = 64;
    std::string prompt_pooling = "last";  // or "mean"

    // contrastive pretraining
    std::size_t pretrain_iterations = 1500;
    std::size_t pretrain_batch_size = 32;
    double pretrain_lr = 1e-3;
    double pretrain_weight_decay = 1e-4;
    double pretrain_tau = 0.07;

    // prompt tuning
    std::size_t iterations = 2000;
    std::size_t batch_size = 8;
    double lr = 3e-4;  // 5e-5 suits 12800 steps; the 2000-step toy run needs more
    double weight_decay = 1e-4;
    std::uint64_t seed = 0;
    std::size_t shots = 16;
    std::size_t k_ctg = 32;
    std::size_t k_con = 64;
    std::string bonder_structure = "cross_attention";
    std::size_t bonder_depth = 1;
    bool share_bonder = false;
    std::string supervision_space = "vocabulary";
    std::string loss_terms = "both";
    std::string lora_policy = "none";
    std::size_t lora_rank = 4;
    std::size_t eval_every = 100;
    double tau = 0.01;

    // linear-probe baseline
    std::size_t probe_iterations = 300;
    double probe_lr = 1e-2;
    double probe_l2 = 1e-4;

    // cost model grid
    std::string cost_classes = "10,100,1000";
    std::string cost_batch_sizes = "1,8";

    // ablation grid (empty = keep the base value)
    std::string grid_loss_terms;
    std::string grid_supervision_space;
    std::string grid_bonder_structure;
    std::string grid_bonder_depth;
    std::string grid_lora_policy;
    std::string grid_lora_rank;
    std::string grid_class_names;
    std::string grid_seeds = "0,1,2";
    std::string grid_shots = "16";

    [[nodiscard]] ImageEncoderConfig image_config() const {
        return {32, patch_size, d, image_depth, heads};
    }
    [[nodiscard]] TextEncoderConfig text_config(std::size_t vocab_size) const {
        return {d, text_depth, heads, max_len, vocab_size,
                prompt_pooling == "mean" ? PromptPooling::mean : PromptPooling::last_position};
    }
    [[nodiscard]] BranchPairConfig branch_config() const {
        return {{d, heads, bonder_depth, parse_bonder_structure(bonder_structure)}, k_ctg, k_con, share_bonder};
    }

    void validate() const;
    [[nodiscard]] std::string serialize() const;
    void set(const std::string& key, const std::string& value);
    static TrainConfig parse(const std::string& text);
    static TrainConfig load(const std::filesystem::path& path) { return parse(io::read_text(path)); }
};

namespace detail {

struct ConfigField {
    std::function<std::string(const TrainConfig&)> get;
    std::function<void(TrainConfig&, const std::string&)> set;
};

template <class M>
ConfigField make_field(M TrainConfig::*member) {
    ConfigField f;
    f.get = [member](const TrainConfig& c) {
        std::ostringstream os;
        if constexpr (std::is_same_v<M, bool>) {
            os << (c.*member ? "true" : "false");
        } else {
            os.precision(17);
            os << c.*member;
        }
        return os.str();
    };
    f.set = [member](TrainConfig& c, const std::string& v) {
        if constexpr (std::is_same_v<M, std::string>) {
            c.*member = v;
        } else if constexpr (std::is_same_v<M, bool>) {
            if (v == "true" || v == "1") c.*member = true;
            else if (v == "false" || v == "0") c.*member = false;
            else throw std::invalid_argument("expected true/false, got '" + v + "'");
        } else {
            std::istringstream is(v);
            M parsed{};
            is >> parsed;
            if (!is || !is.eof() || (std::is_unsigned_v<M> && !v.empty() && v[0] == '-')) {
                throw std::invalid_argument("cannot parse '" + v + "'");
            }
            c.*member = parsed;
        }
    };
    return f;
}

#define TGPT_FIELD(name) {#name, make_field(&TrainConfig::name)}

inline const std::vector<std::pair<std::string, ConfigField>>& config_fields() {
    static const std::vector<std::pair<std::string, ConfigField>> fields{
        TGPT_FIELD(n_colors),          TGPT_FIELD(n_shapes),
        TGPT_FIELD(per_class),         TGPT_FIELD(dataset_seed),
        TGPT_FIELD(pretrain_per_class), TGPT_FIELD(pretrain_dataset_seed),
        TGPT_FIELD(class_names),       TGPT_FIELD(category_templates),
        TGPT_FIELD(d),                 TGPT_FIELD(patch_size),
        TGPT_FIELD(image_depth),       TGPT_FIELD(text_depth),
        TGPT_FIELD(heads),             TGPT_FIELD(max_len),
        TGPT_FIELD(prompt_pooling),    TGPT_FIELD(pretrain_iterations),
        TGPT_FIELD(pretrain_batch_size), TGPT_FIELD(pretrain_lr),
        TGPT_FIELD(pretrain_weight_decay), TGPT_FIELD(pretrain_tau),
        TGPT_FIELD(iterations),        TGPT_FIELD(batch_size),
        TGPT_FIELD(lr),                TGPT_FIELD(weight_decay),
        TGPT_FIELD(seed),              TGPT_FIELD(shots),
        TGPT_FIELD(k_ctg),             TGPT_FIELD(k_con),
        TGPT_FIELD(bonder_structure),  TGPT_FIELD(bonder_depth),
        TGPT_FIELD(share_bonder),      TGPT_FIELD(supervision_space),
        TGPT_FIELD(loss_terms),        TGPT_FIELD(lora_policy),
        TGPT_FIELD(lora_rank),         TGPT_FIELD(eval_every),
        TGPT_FIELD(tau),               TGPT_FIELD(probe_iterations),
        TGPT_FIELD(probe_lr),          TGPT_FIELD(probe_l2),
        TGPT_FIELD(cost_classes),      TGPT_FIELD(cost_batch_sizes),
        TGPT_FIELD(grid_loss_terms),   TGPT_FIELD(grid_supervision_space),
        TGPT_FIELD(grid_bonder_structure), TGPT_FIELD(grid_bonder_depth),
        TGPT_FIELD(grid_lora_policy),  TGPT_FIELD(grid_lora_rank),
        TGPT_FIELD(grid_class_names),  TGPT_FIELD(grid_seeds),
        TGPT_FIELD(grid_shots),
    };
    return fields;
}

#undef TGPT_FIELD

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, ',')) {
        item = detail::trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline void TrainConfig::set(const std::string& key, const std::string& value) {
    for (const auto& [name, field] : detail::config_fields()) {
        if (name == key) {
            try {
                field.set(*this, value);
            } catch (const std::invalid_argument& e) {
                throw std::invalid_argument("config key '" + key + "': " + e.what());
            }
            return;
        }
    }
    throw std::invalid_argument("unknown config key '" + key + "'");
}

inline std::string TrainConfig::serialize() const {
    std::string out;
    for (const auto& [name, field] : detail::config_fields()) out += name + "=" + field.get(*this) + "\n";
    return out;
}

inline TrainConfig TrainConfig::parse(const std::string& text) {
    TrainConfig c;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        line = detail::trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value");
        }
        c.set(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    c.validate();
    return c;
}

inline void TrainConfig::validate() const {
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0) throw std::invalid_argument(std::string("config: ") + name + " must be positive");
    };
    positive(iterations, "iterations");
    positive(batch_size, "batch_size");
    positive(k_ctg, "k_ctg");
    positive(k_con, "k_con");
    positive(eval_every, "eval_every");
    positive(d, "d");
    positive(lora_rank, "lora_rank");
    if (!(lr > 0) || !(weight_decay >= 0) || !(tau > 0) || !(pretrain_tau > 0)) {
        throw std::invalid_argument("config: learning rates and temperatures must be positive");
    }
    if (k_ctg > max_len || k_con > max_len) throw std::invalid_argument("config: query count exceeds max_len");
    if (class_names != "compositional" && class_names != "opaque") {
        throw std::invalid_argument("config: class_names must be compositional or opaque");
    }
    if (category_templates != "glyph" && category_templates != "seven") {
        throw std::invalid_argument("config: category_templates must be glyph or seven");
    }
    if (prompt_pooling != "last" && prompt_pooling != "mean") {
        throw std::invalid_argument("config: prompt_pooling must be last or mean");
    }
    (void)parse_bonder_structure(bonder_structure);
    (void)parse_supervision_space(supervision_space);
    (void)parse_loss_terms(loss_terms);
    (void)parse_lora_policy(lora_policy);
    branch_config().bonder.validate();
    image_config().validate();
}

inline std::vector<std::string> category_template_list(const TrainConfig& cfg) {
    return cfg.category_templates == "seven" ? seven_templates() : std::vector<std::string>{kGlyphTemplate};
}

}  // namespace tgpt
