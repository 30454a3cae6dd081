#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "tgpt/encoders.hpp"
#include "tgpt/nn.hpp"

namespace tgpt {

enum class LoraPolicy { none, mlp_both, mlp_visual, mlp_text, mlp_and_attention_both };

inline const char* to_string(LoraPolicy p) {
    switch (p) {
        case LoraPolicy::none: return "none";
        case LoraPolicy::mlp_both: return "mlp_both";
        case LoraPolicy::mlp_visual: return "mlp_visual";
        case LoraPolicy::mlp_text: return "mlp_text";
        case LoraPolicy::mlp_and_attention_both: return "mlp_and_attention_both";
    }
    return "?";
}

inline LoraPolicy parse_lora_policy(const std::string& s) {
    for (auto p : {LoraPolicy::none, LoraPolicy::mlp_both, LoraPolicy::mlp_visual, LoraPolicy::mlp_text,
                   LoraPolicy::mlp_and_attention_both}) {
        if (s == to_string(p)) return p;
    }
    throw std::invalid_argument("unknown lora policy '" + s + "'");
}

inline constexpr std::array<std::size_t, 6> kLoraRankSweep{1, 2, 4, 8, 16, 32};

struct LoraReport {
    std::size_t adapters = 0;
    std::size_t trainable = 0;
    std::size_t backbone = 0;

    [[nodiscard]] double ratio() const {
        return backbone ? static_cast<double>(trainable) / static_cast<double>(backbone) : 0.0;
    }
};

namespace detail {

template <class T>
std::vector<std::pair<std::string, Linear<T>*>> lora_targets(DualEncoder<T>& enc, LoraPolicy policy) {
    const bool visual = policy == LoraPolicy::mlp_both || policy == LoraPolicy::mlp_visual ||
                        policy == LoraPolicy::mlp_and_attention_both;
    const bool text = policy == LoraPolicy::mlp_both || policy == LoraPolicy::mlp_text ||
                      policy == LoraPolicy::mlp_and_attention_both;
    const bool attn = policy == LoraPolicy::mlp_and_attention_both;
    std::vector<std::pair<std::string, Linear<T>*>> out;
    auto visit = [&](std::vector<TransformerBlock<T>>& blocks, const std::string& prefix) {
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            for (auto& [role, lin] : blocks[i].linears()) {
                const bool is_mlp = role.rfind("ffn.", 0) == 0;
                if (is_mlp || attn) out.emplace_back(prefix + ".block" + std::to_string(i) + "." + role, lin);
            }
        }
    };
    if (visual) visit(enc.image.blocks(), "image");
    if (text) visit(enc.text.blocks(), "text");
    return out;
}

}  // namespace detail

/// Attaches rank-`rank` adapters to the linear maps selected by `policy`.
template <class T>
LoraReport apply_lora_placement(DualEncoder<T>& enc, LoraPolicy policy, std::size_t rank, Rng& rng) {
    LoraReport rep;
    rep.backbone = count_values(enc.parameters());
    if (policy == LoraPolicy::none) return rep;
    if (rank == 0) throw std::invalid_argument("lora: rank must be positive");
    for (auto& [name, lin] : detail::lora_targets(enc, policy)) {
        if (rank >= std::min(lin->in_features(), lin->out_features())) {
            throw std::invalid_argument("lora: rank " + std::to_string(rank) + " too large for " + name);
        }
        lin->attach_lora(rank, rng);
        ++rep.adapters;
        rep.trainable += lin->lora->parameter_count();
    }
    return rep;
}

/// Adapter tensors (A, B) of every adapted map, named "<map>.lora_A/B".
template <class T>
NamedTensors<T> lora_parameters(const DualEncoder<T>& enc) {
    NamedTensors<T> out;
    auto visit = [&](const std::vector<TransformerBlock<T>>& blocks, const std::string& prefix) {
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            for (const auto& [role, lin] : blocks[i].linears()) lin->collect_lora(out, prefix + ".block" + std::to_string(i) + "." + role);
        }
    };
    visit(enc.image.blocks(), "image");
    visit(enc.text.blocks(), "text");
    return out;
}

template <class T>
void merge_all_lora(DualEncoder<T>& enc) {
    for (auto* blocks : {&enc.image.blocks(), &enc.text.blocks()}) {
        for (auto& blk : *blocks) {
            for (auto& [role, lin] : blk.linears()) {
                if (lin->lora) lin->merge();
            }
        }
    }
}

}  // namespace tgpt
