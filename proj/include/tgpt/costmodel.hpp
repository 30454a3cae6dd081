#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace tgpt {

enum class Paradigm { tgpt, coop, cocoop };

inline const char* to_string(Paradigm p) {
    switch (p) {
        case Paradigm::tgpt: return "tgpt";
        case Paradigm::coop: return "coop";
        case Paradigm::cocoop: return "cocoop";
    }
    return "?";
}

inline Paradigm parse_paradigm(const std::string& s) {
    for (auto p : {Paradigm::tgpt, Paradigm::coop, Paradigm::cocoop}) {
        if (s == to_string(p)) return p;
    }
    throw std::invalid_argument("unknown paradigm '" + s + "'");
}

/// Text-encoder input sequences kept alive for backprop in one step:
/// two prompt sets per image, one prompt per class shared by the batch, or
/// one prompt per class per image.
inline std::uint64_t sequences_for(Paradigm p, std::uint64_t n_classes, std::uint64_t batch_size) {
    switch (p) {
        case Paradigm::tgpt: return 2 * batch_size;
        case Paradigm::coop: return n_classes;
        case Paradigm::cocoop: return n_classes * batch_size;
    }
    throw std::invalid_argument("sequences_for: unknown paradigm");
}

struct CostInputs {
    Paradigm paradigm = Paradigm::tgpt;
    std::uint64_t n_classes = 1;
    std::uint64_t batch_size = 1;
    std::uint64_t seq_len = 64;
    std::uint64_t d = 64;
    std::uint64_t depth = 2;
    std::uint64_t heads = 4;

    void validate() const {
        if (!n_classes || !batch_size || !seq_len || !d || !depth || !heads) {
            throw std::invalid_argument("cost model: all inputs must be positive");
        }
    }
};

// Retained values per sequence per block: one L x L map per head, six L x d
// tensors around attention (two LN outputs, q, k, v, context) and ten around
// the FFN (4d hidden before and after GELU, plus the two residual streams).
inline constexpr std::uint64_t kProjectionTensors = 6;
inline constexpr std::uint64_t kFfnTensors = 10;

struct CostReport {
    std::uint64_t sequences = 0;
    std::uint64_t attention_maps = 0;
    std::uint64_t projections = 0;
    std::uint64_t ffn = 0;
    std::uint64_t activation_elements = 0;
};

inline CostReport activation_elements(const CostInputs& in) {
    in.validate();
    CostReport r;
    r.sequences = sequences_for(in.paradigm, in.n_classes, in.batch_size);
    const std::uint64_t per = r.sequences * in.depth;
    r.attention_maps = per * in.seq_len * in.seq_len * in.heads;
    r.projections = per * kProjectionTensors * in.seq_len * in.d;
    r.ffn = per * kFfnTensors * in.seq_len * in.d;
    r.activation_elements = r.attention_maps + r.projections + r.ffn;
    return r;
}

struct ScalingRow {
    Paradigm paradigm;
    std::uint64_t n_classes, batch_size;
    CostReport report;
};

struct ScalingTable {
    std::vector<ScalingRow> rows;
    bool tgpt_constant_in_n = true;
    bool coop_increasing_in_n = true;
    bool cocoop_is_bs_times_coop = true;

    [[nodiscard]] const ScalingRow& find(Paradigm p, std::uint64_t n, std::uint64_t bs) const {
        for (const auto& r : rows) {
            if (r.paradigm == p && r.n_classes == n && r.batch_size == bs) return r;
        }
        throw std::out_of_range("scaling table: no such row");
    }

    [[nodiscard]] std::string csv() const {
        std::string s = "paradigm,N,bs,sequences,activation_elements\n";
        char buf[160];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof buf, "%s,%llu,%llu,%llu,%llu\n", to_string(r.paradigm),
                          static_cast<unsigned long long>(r.n_classes), static_cast<unsigned long long>(r.batch_size),
                          static_cast<unsigned long long>(r.report.sequences),
                          static_cast<unsigned long long>(r.report.activation_elements));
            s += buf;
        }
        return s;
    }
};

/// Cross product of paradigms x batch sizes x class counts, plus the
/// monotonicity flags over it. `shape` supplies L, d, depth and heads.
inline ScalingTable scaling_table(const std::vector<std::uint64_t>& ns, const std::vector<std::uint64_t>& bss,
                                  CostInputs shape = {}) {
    if (ns.empty() || bss.empty()) throw std::invalid_argument("scaling_table: empty grid");
    ScalingTable t;
    for (auto p : {Paradigm::tgpt, Paradigm::coop, Paradigm::cocoop}) {
        for (auto bs : bss) {
            for (auto n : ns) {
                shape.paradigm = p;
                shape.n_classes = n;
                shape.batch_size = bs;
                t.rows.push_back({p, n, bs, activation_elements(shape)});
            }
        }
    }
    for (auto bs : bss) {
        for (std::size_t i = 0; i < ns.size(); ++i) {
            const auto& tg = t.find(Paradigm::tgpt, ns[i], bs);
            const auto& co = t.find(Paradigm::coop, ns[i], bs);
            const auto& cc = t.find(Paradigm::cocoop, ns[i], bs);
            if (tg.report.activation_elements != t.find(Paradigm::tgpt, ns[0], bs).report.activation_elements) {
                t.tgpt_constant_in_n = false;
            }
            if (cc.report.sequences != bs * co.report.sequences) t.cocoop_is_bs_times_coop = false;
            for (std::size_t j = 0; j < ns.size(); ++j) {
                const auto& other = t.find(Paradigm::coop, ns[j], bs);
                if (ns[j] > ns[i] && !(other.report.activation_elements > co.report.activation_elements)) {
                    t.coop_increasing_in_n = false;
                }
            }
        }
    }
    return t;
}

}  // namespace tgpt
