#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tgpt/encoders.hpp"
#include "tgpt/nn.hpp"

namespace tgpt {

enum class BonderStructure { cross_attention, self_attention, meta_net };

inline const char* to_string(BonderStructure s) {
    switch (s) {
        case BonderStructure::cross_attention: return "cross_attention";
        case BonderStructure::self_attention: return "self_attention";
        case BonderStructure::meta_net: return "meta_net";
    }
    return "?";
}

inline BonderStructure parse_bonder_structure(const std::string& s) {
    if (s == "cross_attention") return BonderStructure::cross_attention;
    if (s == "self_attention") return BonderStructure::self_attention;
    if (s == "meta_net") return BonderStructure::meta_net;
    throw std::invalid_argument("unknown bonder structure '" + s + "'");
}

inline constexpr std::size_t kMaxBonderDepth = 8;

struct BonderConfig {
    std::size_t d = 64;
    std::size_t heads = 4;
    std::size_t depth = 1;
    BonderStructure structure = BonderStructure::cross_attention;

    void validate() const {
        if (depth == 0 || depth > kMaxBonderDepth) {
            throw std::invalid_argument("bonder: depth must be in [1, " + std::to_string(kMaxBonderDepth) + "]");
        }
        if (heads == 0 || d % heads != 0) throw std::invalid_argument("bonder: heads must divide d");
    }
};

/// One pre-LN prompt-generation block:
///   Q_S = Q + SelfAttn(LN(Q))
///   Q_C = Q_S + CrossAttn(LN(Q_S), LN([v; X]))
///   P   = Q_C + FFN(LN(Q_C))
/// In the self-attention variant the cross step is dropped and the first step
/// attends jointly over [LN(Q); LN([v; X])].
template <class T>
struct BonderBlock {
    LayerNorm<T> ln_self, ln_cross, ln_visual, ln_ffn;
    MultiHeadAttention<T> self_attn, cross_attn;
    FeedForward<T> ffn;

    static BonderBlock init(std::size_t d, std::size_t heads, Rng& rng) {
        BonderBlock b;
        b.ln_self = LayerNorm<T>::init(d);
        b.ln_cross = LayerNorm<T>::init(d);
        b.ln_visual = LayerNorm<T>::init(d);
        b.ln_ffn = LayerNorm<T>::init(d);
        b.self_attn = MultiHeadAttention<T>::init(d, heads, rng);
        b.cross_attn = MultiHeadAttention<T>::init(d, heads, rng);
        b.ffn = FeedForward<T>::init(d, rng);
        return b;
    }

    Tensor<T> forward(const Tensor<T>& q, const Tensor<T>& visual, BonderStructure s) const {
        Tensor<T> qc;
        if (s == BonderStructure::self_attention) {
            auto qn = ln_self(q);
            qc = add(q, self_attn(qn, concat<T>({qn, ln_visual(visual)}, 1)));
        } else {
            auto qn = ln_self(q);
            auto qs = add(q, self_attn(qn, qn));
            qc = add(qs, cross_attn(ln_cross(qs), ln_visual(visual)));
        }
        return add(qc, ffn(ln_ffn(qc)));
    }

    void collect(NamedTensors<T>& out, const std::string& p, BonderStructure s) const {
        ln_self.collect(out, p + ".ln_self");
        self_attn.collect(out, p + ".self_attn");
        if (s == BonderStructure::cross_attention) {
            ln_cross.collect(out, p + ".ln_cross");
            cross_attn.collect(out, p + ".cross_attn");
        }
        ln_visual.collect(out, p + ".ln_visual");
        ln_ffn.collect(out, p + ".ln_ffn");
        ffn.collect(out, p + ".ffn");
    }
};

/// Visual-conditioned prompt generator. Maps learnable queries Q [K, d] and
/// visual tokens [B, 1+n, d] to prompts P [B, K, d].
template <class T>
class Bonder {
public:
    Bonder() = default;
    Bonder(const BonderConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        if (cfg.structure == BonderStructure::meta_net) {
            // Linear-ReLU-Linear bottleneck on v, broadcast-added to every query.
            const std::size_t hidden = std::max<std::size_t>(1, cfg.d / 4);
            meta_fc1_ = Linear<T>::init(cfg.d, hidden, rng);
            meta_fc2_ = Linear<T>::init(hidden, cfg.d, rng);
        } else {
            for (std::size_t i = 0; i < cfg.depth; ++i) blocks_.push_back(BonderBlock<T>::init(cfg.d, cfg.heads, rng));
        }
    }

    [[nodiscard]] const BonderConfig& config() const { return cfg_; }

    Tensor<T> forward(const Tensor<T>& queries, const VisualFeatures<T>& visual) const {
        if (queries.rank() != 2 || queries.dim(1) != cfg_.d || visual.v.dim(1) != cfg_.d) {
            throw ShapeError("bonder: queries " + shape_str(queries.shape()) + ", visual " +
                             shape_str(visual.v.shape()) + ", width " + std::to_string(cfg_.d));
        }
        const std::size_t B = visual.v.dim(0), K = queries.dim(0), d = cfg_.d;
        auto q = expand(reshape(queries, {1, K, d}), 0, B);
        if (cfg_.structure == BonderStructure::meta_net) {
            auto shift = meta_fc2_(relu(meta_fc1_(visual.v)));
            return add(q, expand(reshape(shift, {B, 1, d}), 1, K));
        }
        const auto tokens = visual.tokens();
        for (const auto& blk : blocks_) q = blk.forward(q, tokens, cfg_.structure);
        return q;
    }

    void collect(NamedTensors<T>& out, const std::string& prefix) const {
        if (cfg_.structure == BonderStructure::meta_net) {
            meta_fc1_.collect(out, prefix + ".meta_fc1");
            meta_fc2_.collect(out, prefix + ".meta_fc2");
            return;
        }
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            blocks_[i].collect(out, prefix + ".block" + std::to_string(i), cfg_.structure);
        }
    }

    std::vector<BonderBlock<T>>& blocks() { return blocks_; }

private:
    BonderConfig cfg_;
    std::vector<BonderBlock<T>> blocks_;
    Linear<T> meta_fc1_, meta_fc2_;
};

/// One supervision branch: its own queries and a (possibly shared) Bonder.
template <class T>
struct PromptBranch {
    Tensor<T> queries;  // [K, d], N(0, 0.02^2)
    std::shared_ptr<Bonder<T>> bonder;

    [[nodiscard]] std::size_t k() const { return queries.dim(0); }

    Tensor<T> forward(const VisualFeatures<T>& visual) const { return bonder->forward(queries, visual); }
};

struct BranchPairConfig {
    BonderConfig bonder;
    std::size_t k_ctg = 32;
    std::size_t k_con = 64;
    bool share_bonder = false;
};

template <class T>
struct BranchPair {
    PromptBranch<T> category;
    PromptBranch<T> content;
    bool shared = false;

    [[nodiscard]] NamedTensors<T> parameters() const {
        NamedTensors<T> out;
        out.emplace_back("bonder_ctg.queries", category.queries);
        out.emplace_back("bonder_con.queries", content.queries);
        category.bonder->collect(out, shared ? "bonder_shared" : "bonder_ctg");
        if (!shared) content.bonder->collect(out, "bonder_con");
        return out;
    }
};

template <class T>
BranchPair<T> make_branch_pair(const BranchPairConfig& cfg, Rng& rng) {
    if (cfg.k_ctg == 0 || cfg.k_con == 0) throw std::invalid_argument("bonder: query count must be positive");
    BranchPair<T> pair;
    pair.shared = cfg.share_bonder;
    auto ctg = std::make_shared<Bonder<T>>(cfg.bonder, rng);
    auto con = cfg.share_bonder ? ctg : std::make_shared<Bonder<T>>(cfg.bonder, rng);
    pair.category = {Tensor<T>::randn({cfg.k_ctg, cfg.bonder.d}, rng, kInitStd, true), ctg};
    pair.content = {Tensor<T>::randn({cfg.k_con, cfg.bonder.d}, rng, kInitStd, true), con};
    return pair;
}

}  // namespace tgpt
