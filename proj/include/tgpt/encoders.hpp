#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tgpt/nn.hpp"
#include "tgpt/tokenizer.hpp"

namespace tgpt {

struct ImageEncoderConfig {
    std::size_t image_size = 32;
    std::size_t patch_size = 8;
    std::size_t d = 64;
    std::size_t depth = 2;
    std::size_t heads = 4;

    [[nodiscard]] std::size_t patches_per_side() const { return image_size / patch_size; }
    [[nodiscard]] std::size_t n_patches() const { return patches_per_side() * patches_per_side(); }
    [[nodiscard]] std::size_t patch_dim() const { return patch_size * patch_size * 3; }
    [[nodiscard]] std::size_t image_values() const { return image_size * image_size * 3; }

    void validate() const {
        if (patch_size == 0 || image_size % patch_size != 0) {
            throw std::invalid_argument("image encoder: patch_size must divide image_size");
        }
        if (heads == 0 || d % heads != 0) throw std::invalid_argument("image encoder: heads must divide d");
        if (depth == 0) throw std::invalid_argument("image encoder: depth must be positive");
    }
};

enum class PromptPooling { last_position, mean };

struct TextEncoderConfig {
    std::size_t d = 64;
    std::size_t depth = 2;
    std::size_t heads = 4;
    std::size_t max_len = 64;
    std::size_t vocab_size = 0;
    PromptPooling prompt_pooling = PromptPooling::last_position;

    void validate() const {
        if (heads == 0 || d % heads != 0) throw std::invalid_argument("text encoder: heads must divide d");
        if (depth == 0) throw std::invalid_argument("text encoder: depth must be positive");
        if (vocab_size < 5) throw std::invalid_argument("text encoder: vocabulary too small");
    }
};

/// Global feature v (L2-normalized, [B, d]) and patch tokens X ([B, n, d]).
template <class T>
struct VisualFeatures {
    Tensor<T> v;
    Tensor<T> X;

    /// [v; X] as one [B, 1+n, d] sequence.
    [[nodiscard]] Tensor<T> tokens() const {
        return concat<T>({reshape(v, {v.dim(0), 1, v.dim(1)}), X}, 1);
    }
};

/// Rearranges B images (H x W x 3, row-major) into [B, n_patches, p*p*3].
template <class T>
Tensor<T> patchify(std::span<const float> images, std::size_t batch, const ImageEncoderConfig& c) {
    if (images.size() != batch * c.image_values()) {
        throw ShapeError("encode_image: expected " + std::to_string(batch) + " images of " +
                         std::to_string(c.image_size) + "x" + std::to_string(c.image_size) + "x3, got " +
                         std::to_string(images.size()) + " values");
    }
    const std::size_t S = c.image_size, p = c.patch_size, g = c.patches_per_side(), pd = c.patch_dim();
    std::vector<T> out(batch * c.n_patches() * pd);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t py = 0; py < g; ++py) {
            for (std::size_t px = 0; px < g; ++px) {
                T* dst = out.data() + ((b * g + py) * g + px) * pd;
                for (std::size_t y = 0; y < p; ++y) {
                    const float* src = images.data() + ((b * S + py * p + y) * S + px * p) * 3;
                    for (std::size_t k = 0; k < p * 3; ++k) dst[y * p * 3 + k] = static_cast<T>(src[k]);
                }
            }
        }
    }
    return Tensor<T>::from({batch, c.n_patches(), pd}, std::move(out));
}

/// Patch transformer with a learned CLS token.
template <class T>
class ImageEncoder {
public:
    ImageEncoder() = default;
    ImageEncoder(const ImageEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        patch_embed_ = Linear<T>::init(cfg.patch_dim(), cfg.d, rng);
        cls_ = Tensor<T>::randn({cfg.d}, rng, kInitStd, true);
        pos_ = Tensor<T>::randn({cfg.n_patches() + 1, cfg.d}, rng, kInitStd, true);
        ln_pre_ = LayerNorm<T>::init(cfg.d);
        for (std::size_t i = 0; i < cfg.depth; ++i) blocks_.push_back(TransformerBlock<T>::init(cfg.d, cfg.heads, rng));
        ln_post_ = LayerNorm<T>::init(cfg.d);
        proj_ = Linear<T>::init(cfg.d, cfg.d, rng, false);
    }

    [[nodiscard]] const ImageEncoderConfig& config() const { return cfg_; }

    VisualFeatures<T> encode(std::span<const float> images, std::size_t batch) const {
        const std::size_t n = cfg_.n_patches(), d = cfg_.d;
        auto tokens = patch_embed_(patchify<T>(images, batch, cfg_));
        auto cls = expand(reshape(cls_, {1, 1, d}), 0, batch);
        auto h = add(concat<T>({cls, tokens}, 1), pos_);
        h = ln_pre_(h);
        for (const auto& blk : blocks_) h = blk(h);
        h = ln_post_(h);
        const std::vector<std::size_t> zero(batch, 0);
        return {l2_normalize(proj_(gather_positions<T>(h, zero))), slice(h, 1, 1, n)};
    }

    void collect(NamedTensors<T>& out, const std::string& prefix = "image") const {
        patch_embed_.collect(out, prefix + ".patch_embed");
        out.emplace_back(prefix + ".cls", cls_);
        out.emplace_back(prefix + ".pos", pos_);
        ln_pre_.collect(out, prefix + ".ln_pre");
        for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(out, prefix + ".block" + std::to_string(i));
        ln_post_.collect(out, prefix + ".ln_post");
        proj_.collect(out, prefix + ".proj");
    }

    std::vector<TransformerBlock<T>>& blocks() { return blocks_; }
    const std::vector<TransformerBlock<T>>& blocks() const { return blocks_; }

private:
    ImageEncoderConfig cfg_;
    Linear<T> patch_embed_;
    Tensor<T> cls_, pos_;
    LayerNorm<T> ln_pre_, ln_post_;
    std::vector<TransformerBlock<T>> blocks_;
    Linear<T> proj_;
};

/// Bidirectional transformer over token embeddings or pre-embedded prompts.
/// Owns the token embedding W_E used by the vocabulary-space losses.
template <class T>
class TextEncoder {
public:
    TextEncoder() = default;
    TextEncoder(const TextEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        embedding_ = Tensor<T>::randn({cfg.vocab_size, cfg.d}, rng, kInitStd, true);
        pos_ = Tensor<T>::randn({cfg.max_len, cfg.d}, rng, kInitStd, true);
        for (std::size_t i = 0; i < cfg.depth; ++i) blocks_.push_back(TransformerBlock<T>::init(cfg.d, cfg.heads, rng));
        ln_final_ = LayerNorm<T>::init(cfg.d);
        proj_ = Linear<T>::init(cfg.d, cfg.d, rng, false);
    }

    [[nodiscard]] const TextEncoderConfig& config() const { return cfg_; }
    [[nodiscard]] const Tensor<T>& token_embedding() const { return embedding_; }
    void set_prompt_pooling(PromptPooling p) { cfg_.prompt_pooling = p; }

    /// ids/mask hold B rows of `len` tokens each; pools at each row's EOS.
    Tensor<T> encode_ids(std::span<const std::int32_t> ids, std::span<const std::uint8_t> mask,
                         std::size_t batch) const {
        if (batch == 0 || ids.size() % batch != 0 || mask.size() != ids.size()) {
            throw ShapeError("encode_text_ids: " + std::to_string(ids.size()) + " ids for batch " +
                             std::to_string(batch));
        }
        const std::size_t len = ids.size() / batch;
        if (len > cfg_.max_len) {
            throw std::length_error("encode_text_ids: length " + std::to_string(len) + " exceeds max_len " +
                                    std::to_string(cfg_.max_len));
        }
        std::vector<std::size_t> eos(batch, 0);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t i = 0; i < len; ++i) {
                if (mask[b * len + i]) eos[b] = i;
            }
        }
        auto x = add(embedding<T>(ids, {batch, len}, embedding_), slice(pos_, 0, 0, len));
        for (const auto& blk : blocks_) x = blk(x, mask);
        x = ln_final_(x);
        return l2_normalize(proj_(gather_positions<T>(x, eos)));
    }

    /// Prompt sequences P [B, K, d] bypass the embedding lookup.
    Tensor<T> encode_prompts(const Tensor<T>& prompts) const {
        if (prompts.rank() != 3 || prompts.dim(2) != cfg_.d) {
            throw ShapeError("encode_prompts: prompts " + shape_str(prompts.shape()) + " vs width " +
                             std::to_string(cfg_.d));
        }
        const std::size_t B = prompts.dim(0), K = prompts.dim(1);
        if (K > cfg_.max_len) {
            throw std::length_error("encode_prompts: " + std::to_string(K) + " prompts exceed max_len " +
                                    std::to_string(cfg_.max_len));
        }
        auto x = add(prompts, slice(pos_, 0, 0, K));
        for (const auto& blk : blocks_) x = blk(x);
        x = ln_final_(x);
        Tensor<T> pooled;
        if (cfg_.prompt_pooling == PromptPooling::mean) {
            pooled = mean(x, 1);
        } else {
            const std::vector<std::size_t> last(B, K - 1);
            pooled = gather_positions<T>(x, last);
        }
        return l2_normalize(proj_(pooled));
    }

    void collect(NamedTensors<T>& out, const std::string& prefix = "text") const {
        out.emplace_back(prefix + ".token_embedding", embedding_);
        out.emplace_back(prefix + ".pos", pos_);
        for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(out, prefix + ".block" + std::to_string(i));
        ln_final_.collect(out, prefix + ".ln_final");
        proj_.collect(out, prefix + ".proj");
    }

    std::vector<TransformerBlock<T>>& blocks() { return blocks_; }
    const std::vector<TransformerBlock<T>>& blocks() const { return blocks_; }

private:
    TextEncoderConfig cfg_;
    Tensor<T> embedding_, pos_;
    std::vector<TransformerBlock<T>> blocks_;
    LayerNorm<T> ln_final_;
    Linear<T> proj_;
};

/// The pretrained image/text pair plus its vocabulary.
template <class T>
struct DualEncoder {
    ImageEncoder<T> image;
    TextEncoder<T> text;

    [[nodiscard]] NamedTensors<T> parameters() const {
        NamedTensors<T> out;
        image.collect(out);
        text.collect(out);
        return out;
    }

    void freeze() { set_requires_grad(parameters(), false); }
    void unfreeze() { set_requires_grad(parameters(), true); }
};

}  // namespace tgpt
