#pragma once

#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tgpt/config.hpp"
#include "tgpt/data.hpp"
#include "tgpt/trainer.hpp"

namespace tgpt {

/// Config keys a grid may vary, in CSV column order.
inline const std::vector<std::string>& ablation_keys() {
    static const std::vector<std::string> keys{"loss_terms",  "supervision_space", "bonder_structure", "bonder_depth",
                                               "lora_policy", "lora_rank",         "class_names"};
    return keys;
}

struct AblationGrid {
    std::vector<std::pair<std::string, std::vector<std::string>>> axes;  // only the varied keys
    std::vector<std::uint64_t> seeds;
    std::vector<std::size_t> shots;

    /// Every combination of axis values, first axis slowest.
    [[nodiscard]] std::vector<std::map<std::string, std::string>> combinations() const {
        std::vector<std::map<std::string, std::string>> out{{}};
        for (const auto& [key, values] : axes) {
            std::vector<std::map<std::string, std::string>> next;
            for (const auto& partial : out) {
                for (const auto& v : values) {
                    auto m = partial;
                    m[key] = v;
                    next.push_back(std::move(m));
                }
            }
            out = std::move(next);
        }
        return out;
    }
};

/// Reads the grid_* keys of `cfg`; every value is validated against a copy
/// of the base config so typos fail before any training starts.
inline AblationGrid ablation_grid(const TrainConfig& cfg) {
    const std::map<std::string, const std::string*> lists{
        {"loss_terms", &cfg.grid_loss_terms},     {"supervision_space", &cfg.grid_supervision_space},
        {"bonder_structure", &cfg.grid_bonder_structure}, {"bonder_depth", &cfg.grid_bonder_depth},
        {"lora_policy", &cfg.grid_lora_policy},   {"lora_rank", &cfg.grid_lora_rank},
        {"class_names", &cfg.grid_class_names}};
    AblationGrid g;
    for (const auto& key : ablation_keys()) {
        auto values = split_list(*lists.at(key));
        for (const auto& v : values) {
            TrainConfig probe = cfg;
            try {
                probe.set(key, v);
                probe.validate();
            } catch (const std::exception& e) {
                throw std::invalid_argument("invalid grid value " + key + "=" + v + ": " + e.what());
            }
        }
        if (!values.empty()) g.axes.emplace_back(key, std::move(values));
    }
    for (const auto& s : split_list(cfg.grid_seeds)) {
        TrainConfig probe = cfg;
        probe.set("seed", s);
        g.seeds.push_back(probe.seed);
    }
    for (const auto& s : split_list(cfg.grid_shots)) {
        TrainConfig probe = cfg;
        probe.set("shots", s);
        if (std::find(kShotSettings.begin(), kShotSettings.end(), probe.shots) == kShotSettings.end()) {
            throw std::invalid_argument("invalid grid value shots=" + s);
        }
        g.shots.push_back(probe.shots);
    }
    if (g.seeds.empty() || g.shots.empty()) throw std::invalid_argument("ablation grid needs seeds and shots");
    return g;
}

struct AblationRow {
    std::map<std::string, std::string> values;  // every ablation key
    std::string seed;                           // seed, or "mean"
    std::size_t shots = 0;
    double test_acc = 0.0;
};

/// Inputs shared by every run of a grid.
struct AblationContext {
    const GlyphDataset* dataset = nullptr;  // with content sentences
    const Vocabulary* vocab = nullptr;
    const DualEncoder<float>* encoders = nullptr;
    const FeatureCache* cache = nullptr;
};

/// One row per (combination, shots, seed), then one mean row per
/// (combination, shots).
inline std::vector<AblationRow> run_ablation(const AblationContext& ctx, const TrainConfig& base,
                                             const AblationGrid& grid,
                                             const std::function<void(const AblationRow&)>& log = {}) {
    std::vector<AblationRow> rows, means;
    for (const auto& combo : grid.combinations()) {
        TrainConfig cfg = base;
        for (const auto& [k, v] : combo) cfg.set(k, v);
        cfg.validate();
        std::map<std::string, std::string> values;
        const auto kv = Checkpoint{cfg.serialize(), {}}.config_map();
        for (const auto& key : ablation_keys()) values[key] = kv.at(key);
        for (auto shots : grid.shots) {
            double total = 0.0;
            for (auto seed : grid.seeds) {
                cfg.seed = seed;
                cfg.shots = shots;
                const auto split = sample_few_shot(*ctx.dataset, shots, seed);
                const auto text = training_text(*ctx.vocab, *ctx.dataset, cfg);
                const auto run = train_tgpt(*ctx.encoders, *ctx.dataset, split, text, cfg, ctx.cache);
                const double acc = evaluate_model(run.model, *ctx.dataset, split.test, ctx.cache).accuracy;
                rows.push_back({values, std::to_string(seed), shots, acc});
                if (log) log(rows.back());
                total += acc;
            }
            means.push_back({values, "mean", shots, total / static_cast<double>(grid.seeds.size())});
        }
    }
    rows.insert(rows.end(), means.begin(), means.end());
    return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string s;
    for (const auto& k : ablation_keys()) s += k + ",";
    s += "seed,shots,test_acc\n";
    char buf[64];
    for (const auto& r : rows) {
        for (const auto& k : ablation_keys()) s += r.values.at(k) + ",";
        std::snprintf(buf, sizeof buf, "%s,%zu,%.6f\n", r.seed.c_str(), r.shots, r.test_acc);
        s += buf;
    }
    return s;
}

}  // namespace tgpt
