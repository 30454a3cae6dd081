#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tgpt/bonder.hpp"
#include "tgpt/checkpoint.hpp"
#include "tgpt/config.hpp"
#include "tgpt/data.hpp"
#include "tgpt/encoders.hpp"
#include "tgpt/head.hpp"
#include "tgpt/lora.hpp"
#include "tgpt/numerics/adamw.hpp"
#include "tgpt/supervision.hpp"
#include "tgpt/tokenizer.hpp"

namespace tgpt {

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// Row-concatenated token ids and masks for a batch of sentences.
struct TokenBatch {
    std::vector<std::int32_t> ids;
    std::vector<std::uint8_t> mask;

    void append(const TokenizedText& t) {
        ids.insert(ids.end(), t.ids.begin(), t.ids.end());
        mask.insert(mask.end(), t.mask.begin(), t.mask.end());
    }
};

/// Shortest length that fits every sentence of `corpus` without truncation.
inline std::size_t fitted_length(const std::vector<std::string>& corpus, std::size_t max_len) {
    std::size_t len = 2;
    for (const auto& s : corpus) len = std::max(len, split_words(s).size() + 2);
    return std::min(len, max_len);
}

/// Every sentence the text side may ever see: content sentences, and category
/// sentences for both name sets under both template lists.
inline std::vector<std::string> vocabulary_corpus(const std::vector<const GlyphDataset*>& datasets) {
    std::vector<std::string> corpus;
    for (const auto* ds : datasets) {
        for (const auto& s : ds->samples) corpus.push_back(s.content);
    }
    const auto& ds = *datasets.front();
    for (bool opaque : {false, true}) {
        for (const auto& tmpl : {std::vector<std::string>{kGlyphTemplate}, seven_templates()}) {
            auto all = TemplateRegistry(ds.class_names(opaque), tmpl).all_descriptions();
            corpus.insert(corpus.end(), all.begin(), all.end());
        }
    }
    return corpus;
}

template <class T>
DualEncoder<T> make_encoders(const TrainConfig& cfg, std::size_t vocab_size, Rng& rng) {
    Rng ri = rng.split(1), rt = rng.split(2);
    return {ImageEncoder<T>(cfg.image_config(), ri), TextEncoder<T>(cfg.text_config(vocab_size), rt)};
}

inline std::string with_meta(const TrainConfig& cfg, const std::map<std::string, std::string>& meta) {
    std::string s = cfg.serialize();
    for (const auto& [k, v] : meta) s += "meta." + k + "=" + v + "\n";
    return s;
}

/// Splits a checkpoint config block into the training config and its meta keys.
inline TrainConfig config_from_checkpoint(const Checkpoint& ck, std::map<std::string, std::string>* meta = nullptr) {
    std::istringstream is(ck.config);
    std::string line, plain;
    while (std::getline(is, line)) {
        if (line.rfind("meta.", 0) == 0) {
            if (meta) {
                const auto eq = line.find('=');
                (*meta)[line.substr(5, eq - 5)] = line.substr(eq + 1);
            }
        } else {
            plain += line + "\n";
        }
    }
    return TrainConfig::parse(plain);
}

// ---------------------------------------------------------------------------
// Contrastive pretraining of the dual encoder
// ---------------------------------------------------------------------------

/// Fraction of pretraining pairs whose caption is the class sentence rather
/// than the content sentence.
inline constexpr double kCategoryCaptionRate = 0.25;

struct PretrainResult {
    DualEncoder<float> encoders;
    std::vector<float> losses;
};

/// Symmetric InfoNCE over in-batch pairs: the image->text and text->image
/// cross-entropies of cos/tau, averaged.
template <class T>
Tensor<T> info_nce(const Tensor<T>& img, const Tensor<T>& txt, T tau) {
    const std::size_t B = img.dim(0);
    std::vector<std::int32_t> diag(B);
    for (std::size_t i = 0; i < B; ++i) diag[i] = static_cast<std::int32_t>(i);
    auto logits = scale(linear(img, txt), T(1) / tau);
    return scale(add(cross_entropy(logits, diag), cross_entropy(transpose(logits), diag)), T(0.5));
}

inline PretrainResult pretrain_contrastive(const GlyphDataset& ds, const Vocabulary& vocab, const TrainConfig& cfg,
                                           const std::function<void(std::size_t, float)>& log = {}) {
    if (cfg.pretrain_batch_size < 2) throw std::invalid_argument("pretrain: batch size must be at least 2");
    if (ds.samples.size() < cfg.pretrain_batch_size) throw std::invalid_argument("pretrain: dataset smaller than a batch");
    Rng root(cfg.seed);
    Rng init = root.split(11);
    PretrainResult res{make_encoders<float>(cfg, vocab.size(), init), {}};
    const TemplateRegistry registry(ds.class_names(false), {kGlyphTemplate});

    std::vector<std::string> captions;
    for (const auto& s : ds.samples) captions.push_back(s.content);
    for (const auto& c : registry.all_descriptions()) captions.push_back(c);
    const std::size_t len = fitted_length(captions, cfg.max_len);

    NamedTensors<float> params = res.encoders.parameters();
    std::vector<Tensor<float>> plist;
    for (const auto& [n, t] : params) plist.push_back(t);
    AdamW<float> opt(plist, {cfg.pretrain_lr, 0.9, 0.999, 1e-8, cfg.pretrain_weight_decay});

    Rng order = root.split(12), caption_rng = root.split(13);
    std::vector<std::size_t> perm(ds.samples.size());
    std::size_t cursor = perm.size();
    const std::size_t B = cfg.pretrain_batch_size;
    for (std::size_t it = 0; it < cfg.pretrain_iterations; ++it) {
        std::vector<std::size_t> batch;
        while (batch.size() < B) {
            if (cursor == perm.size()) {
                for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
                order.shuffle(perm);
                cursor = 0;
            }
            batch.push_back(perm[cursor++]);
        }
        TokenBatch text;
        for (auto id : batch) {
            const auto& s = ds.samples[id];
            const bool category = caption_rng.uniform() < kCategoryCaptionRate;
            const std::string caption =
                category ? registry.category_description(static_cast<std::size_t>(s.class_id), caption_rng) : s.content;
            text.append(vocab.tokenize(caption, len));
        }
        const auto images = gather_images(ds, batch);
        opt.zero_grad();
        auto v = res.encoders.image.encode(images, B).v;
        auto t = res.encoders.text.encode_ids(text.ids, text.mask, B);
        auto loss = info_nce(v, t, static_cast<float>(cfg.pretrain_tau));
        backward(loss);
        opt.step();
        res.losses.push_back(loss.item());
        if (log) log(it + 1, loss.item());
    }
    opt.zero_grad();
    res.encoders.freeze();
    return res;
}

inline Checkpoint encoder_checkpoint(const DualEncoder<float>& enc, const TrainConfig& cfg, std::size_t vocab_size) {
    return {with_meta(cfg, {{"kind", "encoders"}, {"vocab_size", std::to_string(vocab_size)}}),
            snapshot_records(enc.parameters())};
}

/// Rebuilds frozen encoders from a pretraining checkpoint; `cfg` must agree
/// with the stored architecture.
inline DualEncoder<float> load_encoders(const Checkpoint& ck, const TrainConfig& cfg) {
    std::map<std::string, std::string> meta;
    const TrainConfig stored = config_from_checkpoint(ck, &meta);
    if (meta["kind"] != "encoders") throw std::runtime_error("checkpoint does not hold pretrained encoders");
    if (stored.d != cfg.d || stored.patch_size != cfg.patch_size || stored.image_depth != cfg.image_depth ||
        stored.text_depth != cfg.text_depth || stored.heads != cfg.heads || stored.max_len != cfg.max_len) {
        throw std::invalid_argument("config/encoder width mismatch: checkpoint d=" + std::to_string(stored.d) +
                                    " depth=" + std::to_string(stored.image_depth) + "/" +
                                    std::to_string(stored.text_depth) + ", config d=" + std::to_string(cfg.d) +
                                    " depth=" + std::to_string(cfg.image_depth) + "/" + std::to_string(cfg.text_depth));
    }
    Rng dummy(0);
    auto enc = make_encoders<float>(cfg, std::stoul(meta.at("vocab_size")), dummy);
    assign_by_name(enc.parameters(), ck.record_map());
    enc.freeze();
    return enc;
}

// ---------------------------------------------------------------------------
// Visual feature cache (frozen image encoder)
// ---------------------------------------------------------------------------

/// [v, X] of every dataset sample under a fixed image encoder.
struct FeatureCache {
    std::size_t d = 0, n_tokens = 0;
    std::vector<float> v, X;

    [[nodiscard]] bool empty() const { return v.empty(); }

    [[nodiscard]] VisualFeatures<float> gather(std::span<const std::size_t> ids) const {
        std::vector<float> bv, bx;
        bv.reserve(ids.size() * d);
        bx.reserve(ids.size() * n_tokens * d);
        for (auto id : ids) {
            bv.insert(bv.end(), v.begin() + static_cast<std::ptrdiff_t>(id * d),
                      v.begin() + static_cast<std::ptrdiff_t>((id + 1) * d));
            bx.insert(bx.end(), X.begin() + static_cast<std::ptrdiff_t>(id * n_tokens * d),
                      X.begin() + static_cast<std::ptrdiff_t>((id + 1) * n_tokens * d));
        }
        return {Tensor<float>::from({ids.size(), d}, std::move(bv)),
                Tensor<float>::from({ids.size(), n_tokens, d}, std::move(bx))};
    }
};

inline constexpr std::size_t kEncodeChunk = 64;

inline FeatureCache build_feature_cache(const ImageEncoder<float>& enc, const GlyphDataset& ds) {
    FeatureCache cache{enc.config().d, enc.config().n_patches(), {}, {}};
    std::vector<std::size_t> ids;
    for (std::size_t start = 0; start < ds.samples.size(); start += kEncodeChunk) {
        ids.clear();
        for (std::size_t i = start; i < std::min(ds.samples.size(), start + kEncodeChunk); ++i) ids.push_back(i);
        const auto f = enc.encode(gather_images(ds, ids), ids.size());
        cache.v.insert(cache.v.end(), f.v.values().begin(), f.v.values().end());
        cache.X.insert(cache.X.end(), f.X.values().begin(), f.X.values().end());
    }
    return cache;
}

// ---------------------------------------------------------------------------
// Zero-shot baseline
// ---------------------------------------------------------------------------

/// Class text features from the category sentences, averaged over templates.
inline Tensor<float> class_text_features(const TextEncoder<float>& text, const Vocabulary& vocab,
                                         const TemplateRegistry& registry) {
    const std::size_t N = registry.n_classes(), M = registry.templates(0).size();
    auto sentences = registry.all_descriptions();
    const std::size_t len = fitted_length(sentences, text.config().max_len);
    TokenBatch batch;
    for (const auto& s : sentences) batch.append(vocab.tokenize(s, len));
    auto t = text.encode_ids(batch.ids, batch.mask, sentences.size());
    if (M == 1) return t.detach();
    return l2_normalize(mean(reshape(t, {N, M, t.dim(1)}), 1)).detach();
}

inline std::vector<std::int32_t> zero_shot_classify(const FeatureCache& cache, std::span<const std::size_t> ids,
                                                    const Tensor<float>& class_text) {
    std::vector<std::int32_t> pred;
    for (std::size_t start = 0; start < ids.size(); start += kEncodeChunk) {
        const auto chunk = ids.subspan(start, std::min(kEncodeChunk, ids.size() - start));
        const auto p = argmax_rows(zero_shot_predict(cache.gather(chunk).v, class_text));
        pred.insert(pred.end(), p.begin(), p.end());
    }
    return pred;
}

inline std::vector<std::int32_t> labels_of(const GlyphDataset& ds, std::span<const std::size_t> ids) {
    std::vector<std::int32_t> y;
    for (auto id : ids) y.push_back(ds.samples.at(id).class_id);
    return y;
}

// ---------------------------------------------------------------------------
// Prompt-tuned model
// ---------------------------------------------------------------------------

template <class T>
struct TgptModel {
    DualEncoder<T> encoders;
    BranchPair<T> branches;
    Projector<T> projector;
    LoraPolicy lora_policy = LoraPolicy::none;

    /// Everything the optimizer may move.
    [[nodiscard]] NamedTensors<T> trainable_parameters() const {
        NamedTensors<T> out = branches.parameters();
        projector.collect(out);
        for (auto& p : lora_parameters(encoders)) out.push_back(p);
        return out;
    }

    [[nodiscard]] NamedTensors<T> all_parameters() const {
        NamedTensors<T> out = encoders.parameters();
        for (auto& p : trainable_parameters()) out.push_back(p);
        return out;
    }

    [[nodiscard]] bool image_adapted() const {
        return lora_policy == LoraPolicy::mlp_both || lora_policy == LoraPolicy::mlp_visual ||
               lora_policy == LoraPolicy::mlp_and_attention_both;
    }
};

/// Wraps frozen encoders with fresh branches, projector and (optionally)
/// adapters. Initialization draws from the run seed only.
template <class T>
TgptModel<T> make_tgpt_model(DualEncoder<T> encoders, const TrainConfig& cfg, std::size_t n_classes) {
    cfg.validate();
    if (encoders.text.config().d != cfg.d) throw std::invalid_argument("config/encoder width mismatch");
    encoders.freeze();
    encoders.text.set_prompt_pooling(cfg.prompt_pooling == "mean" ? PromptPooling::mean : PromptPooling::last_position);
    const Rng root(cfg.seed);
    Rng rb = root.split(1), rp = root.split(2), rl = root.split(3);
    TgptModel<T> m{std::move(encoders), make_branch_pair<T>(cfg.branch_config(), rb),
                   Projector<T>::init(cfg.d, n_classes, rp), parse_lora_policy(cfg.lora_policy)};
    apply_lora_placement(m.encoders, m.lora_policy, cfg.lora_rank, rl);
    return m;
}

template <class T>
struct TgptForward {
    Tensor<T> P_ctg, P_con;  // [B, K, d]
    Tensor<T> t_ctg, t_con;  // [B, d]
    FusedOutput<T> fused;
};

/// Prompts from both branches, their text features, and the fused logits.
/// Needs images only.
template <class T>
TgptForward<T> tgpt_forward(const TgptModel<T>& m, const VisualFeatures<T>& vis) {
    TgptForward<T> f;
    f.P_ctg = m.branches.category.forward(vis);
    f.P_con = m.branches.content.forward(vis);
    f.t_ctg = m.encoders.text.encode_prompts(f.P_ctg);
    f.t_con = m.encoders.text.encode_prompts(f.P_con);
    f.fused = fuse_and_project(vis.v, f.t_con, f.t_ctg, m.projector);
    return f;
}

/// Per-batch training targets: labels plus K-length content and category
/// token windows, row-concatenated.
struct BatchTargets {
    std::vector<std::int32_t> labels;
    TokenBatch content;
    TokenBatch category;
};

template <class T>
struct TgptLosses {
    Tensor<T> cls, con, ctg, total;
    TgptForward<T> forward;
};

/// L_total = L_cls + L_con + L_ctg; toggled-off terms are skipped and count as 0.
template <class T>
TgptLosses<T> tgpt_losses(const TgptModel<T>& m, const VisualFeatures<T>& vis, const BatchTargets& tg,
                          LossTerms terms, SupervisionSpace space) {
    TgptLosses<T> L;
    L.forward = tgpt_forward(m, vis);
    L.cls = classification_loss(L.forward.fused.logits, tg.labels);
    L.total = L.cls;
    if (uses_content(terms)) {
        L.con = supervision_loss(space, L.forward.P_con, tg.content.ids, tg.content.mask, m.encoders.text);
        L.total = add(L.total, L.con);
    }
    if (uses_category(terms)) {
        L.ctg = supervision_loss(space, L.forward.P_ctg, tg.category.ids, tg.category.mask, m.encoders.text);
        L.total = add(L.total, L.ctg);
    }
    return L;
}

struct LossBreakdown {
    float L_cls = 0.0F, L_con = 0.0F, L_ctg = 0.0F, L_total = 0.0F;
};

template <class T>
LossBreakdown breakdown_of(const TgptLosses<T>& L) {
    auto val = [](const Tensor<T>& t) { return t.defined() ? static_cast<float>(t.item()) : 0.0F; };
    return {val(L.cls), val(L.con), val(L.ctg), val(L.total)};
}

/// Visual features for a batch: cached when the image tower is frozen,
/// recomputed (with gradients into adapters) otherwise.
template <class T>
VisualFeatures<T> batch_visual(const TgptModel<T>& m, const GlyphDataset& ds, const FeatureCache* cache,
                               std::span<const std::size_t> ids) {
    if constexpr (std::is_same_v<T, float>) {
        if (cache && !cache->empty() && !m.image_adapted()) return cache->gather(ids);
    }
    return m.encoders.image.encode(gather_images(ds, ids), ids.size());
}

struct EvalResult {
    double accuracy = 0.0;
    std::vector<std::int32_t> labels, predictions;
    std::vector<float> features;  // [M, 2d] fused projector inputs
    std::size_t feature_dim = 0;

    [[nodiscard]] std::vector<std::pair<std::size_t, std::size_t>> per_class(std::size_t n_classes) const {
        std::vector<std::pair<std::size_t, std::size_t>> out(n_classes, {0, 0});
        for (std::size_t i = 0; i < labels.size(); ++i) {
            auto& [hit, total] = out.at(static_cast<std::size_t>(labels[i]));
            ++total;
            hit += predictions[i] == labels[i];
        }
        return out;
    }
};

/// Image-only inference over `ids`, in fixed-size chunks.
inline EvalResult evaluate_model(const TgptModel<float>& m, const GlyphDataset& ds, std::span<const std::size_t> ids,
                                 const FeatureCache* cache = nullptr, bool keep_features = false) {
    EvalResult r;
    r.labels = labels_of(ds, ids);
    for (std::size_t start = 0; start < ids.size(); start += kEncodeChunk) {
        const auto chunk = ids.subspan(start, std::min(kEncodeChunk, ids.size() - start));
        const auto f = tgpt_forward(m, batch_visual(m, ds, cache, chunk));
        const auto p = argmax_rows(f.fused.logits);
        r.predictions.insert(r.predictions.end(), p.begin(), p.end());
        if (keep_features) {
            r.feature_dim = f.fused.features.dim(1);
            r.features.insert(r.features.end(), f.fused.features.values().begin(), f.fused.features.values().end());
        }
    }
    r.accuracy = accuracy(r.predictions, r.labels);
    return r;
}

struct MetricsRow {
    std::size_t iter = 0;
    LossBreakdown loss;
    double val_acc = 0.0;
};

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::string s = "iter,L_cls,L_con,L_ctg,L_total,val_acc\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.6f\n", r.iter, static_cast<double>(r.loss.L_cls),
                      static_cast<double>(r.loss.L_con), static_cast<double>(r.loss.L_ctg),
                      static_cast<double>(r.loss.L_total), r.val_acc);
        s += buf;
    }
    return s;
}

struct TrainResult {
    TgptModel<float> model;
    std::vector<MetricsRow> metrics;
    std::vector<LossBreakdown> history;  // every iteration
    double best_val = -1.0;
    std::size_t best_iter = 0;
};

/// Text inputs a training run needs; inference never uses them.
struct TrainingText {
    const Vocabulary* vocab = nullptr;
    TemplateRegistry registry;
};

inline TrainingText training_text(const Vocabulary& vocab, std::vector<std::string> class_names,
                                  const std::vector<std::string>& templates) {
    return {&vocab, TemplateRegistry(std::move(class_names), templates)};
}

/// Class names and templates straight from the config, without files.
inline TrainingText training_text(const Vocabulary& vocab, const GlyphDataset& ds, const TrainConfig& cfg) {
    return training_text(vocab, ds.class_names(cfg.class_names == "opaque"), category_template_list(cfg));
}

/// Prompt tuning: per iteration sample a batch, generate both prompt sets,
/// score the supervision and classification losses, and step AdamW on the
/// trainable set. Validation every `eval_every` iterations keeps the best
/// model (ties go to the later one).
inline TrainResult train_tgpt(DualEncoder<float> encoders, const GlyphDataset& ds, const FewShotSplit& split,
                              const TrainingText& text, const TrainConfig& cfg, const FeatureCache* cache = nullptr,
                              const std::function<void(const MetricsRow&)>& log = {}) {
    if (split.train.empty()) throw std::invalid_argument("train_tgpt: empty train split");
    for (auto id : split.train) {
        if (id >= ds.samples.size() || ds.samples[id].content.empty()) {
            throw std::invalid_argument("train_tgpt: split references a sample without a content sentence");
        }
    }
    if (text.registry.n_classes() != ds.n_classes()) throw std::invalid_argument("train_tgpt: split/class mismatch");
    TrainResult res{make_tgpt_model(std::move(encoders), cfg, ds.n_classes()), {}, {}, -1.0, 0};
    auto& m = res.model;
    const LossTerms terms = parse_loss_terms(cfg.loss_terms);
    const SupervisionSpace space = parse_supervision_space(cfg.supervision_space);

    const Vocabulary& vocab = *text.vocab;
    std::map<std::size_t, TokenizedText> content_tokens;
    for (auto id : split.train) content_tokens.emplace(id, vocab.tokenize(ds.samples[id].content, cfg.k_con));

    const auto trainable = m.trainable_parameters();
    std::vector<Tensor<float>> plist;
    for (const auto& [n, t] : trainable) plist.push_back(t);
    AdamW<float> opt(plist, {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});

    const Rng root(cfg.seed);
    Rng order = root.split(4), template_rng = root.split(5);
    std::vector<std::size_t> perm(split.train);
    std::size_t cursor = perm.size();
    NamedTensors<float> best = snapshot_records(trainable);

    for (std::size_t it = 1; it <= cfg.iterations; ++it) {
        std::vector<std::size_t> batch;
        while (batch.size() < cfg.batch_size) {
            if (cursor == perm.size()) {
                perm = split.train;
                order.shuffle(perm);
                cursor = 0;
            }
            batch.push_back(perm[cursor++]);
        }
        BatchTargets tg;
        for (auto id : batch) {
            const auto c = static_cast<std::size_t>(ds.samples[id].class_id);
            tg.labels.push_back(static_cast<std::int32_t>(c));
            tg.content.append(content_tokens.at(id));
            tg.category.append(vocab.tokenize(text.registry.category_description(c, template_rng), cfg.k_ctg));
        }
        opt.zero_grad();
        auto losses = tgpt_losses(m, batch_visual(m, ds, cache, batch), tg, terms, space);
        backward(losses.total);
        opt.step();
        const LossBreakdown lb = breakdown_of(losses);
        res.history.push_back(lb);

        if (it % cfg.eval_every == 0 || it == cfg.iterations) {
            const double val = split.val.empty() ? 0.0 : evaluate_model(m, ds, split.val, cache).accuracy;
            if (val >= res.best_val) {
                res.best_val = val;
                res.best_iter = it;
                best = snapshot_records(trainable);
            }
            res.metrics.push_back({it, lb, val});
            if (log) log(res.metrics.back());
        }
    }
    opt.zero_grad();
    assign_by_name(trainable, to_map(best));
    return res;
}

inline Checkpoint model_checkpoint(const TgptModel<float>& m, const TrainConfig& cfg) {
    return {with_meta(cfg, {{"kind", "tgpt"}, {"n_classes", std::to_string(m.projector.n_classes())},
                            {"vocab_size", std::to_string(m.encoders.text.config().vocab_size)}}),
            snapshot_records(m.all_parameters())};
}

/// Rebuilds a trained model from its checkpoint alone.
inline TgptModel<float> load_tgpt_model(const Checkpoint& ck, TrainConfig* cfg_out = nullptr) {
    std::map<std::string, std::string> meta;
    const TrainConfig cfg = config_from_checkpoint(ck, &meta);
    if (meta["kind"] != "tgpt") throw std::runtime_error("checkpoint does not hold a prompt-tuned model");
    Rng dummy(0);
    auto m = make_tgpt_model(make_encoders<float>(cfg, std::stoul(meta.at("vocab_size")), dummy), cfg,
                             std::stoul(meta.at("n_classes")));
    assign_by_name(m.all_parameters(), ck.record_map());
    if (cfg_out) *cfg_out = cfg;
    return m;
}

inline std::string embedding_csv(const EvalResult& r, std::span<const std::size_t> ids) {
    std::string s = "id,label,pred";
    for (std::size_t j = 0; j < r.feature_dim; ++j) s += ",f" + std::to_string(j);
    s += "\n";
    char buf[32];
    for (std::size_t i = 0; i < ids.size(); ++i) {
        s += std::to_string(ids[i]) + "," + std::to_string(r.labels[i]) + "," + std::to_string(r.predictions[i]);
        for (std::size_t j = 0; j < r.feature_dim; ++j) {
            std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(r.features[i * r.feature_dim + j]));
            s += buf;
        }
        s += "\n";
    }
    return s;
}

inline std::string per_class_csv(const EvalResult& r, std::size_t n_classes) {
    std::string s = "class,correct,total,accuracy\n";
    char buf[96];
    const auto pc = r.per_class(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) {
        const auto [hit, total] = pc[c];
        std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.6f\n", c, hit, total,
                      total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0);
        s += buf;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Linear-probe baseline on the frozen global feature
// ---------------------------------------------------------------------------

inline double linear_probe_accuracy(const FeatureCache& cache, const GlyphDataset& ds, const FewShotSplit& split,
                                    const TrainConfig& cfg) {
    const auto train = cache.gather(split.train).v;
    const auto probe = linear_probe_fit(train, labels_of(ds, split.train), ds.n_classes(),
                                        {cfg.probe_iterations, cfg.probe_lr, cfg.probe_l2, cfg.seed});
    const auto pred = argmax_rows(probe(cache.gather(split.test).v));
    return accuracy(pred, labels_of(ds, split.test));
}

}  // namespace tgpt
