#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "tgpt/io.hpp"

namespace tgpt {

enum SpecialToken : std::int32_t { kPad = 0, kBos = 1, kEos = 2, kUnk = 3 };

inline std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::istringstream is(text);
    std::string w;
    while (is >> w) {
        std::transform(w.begin(), w.end(), w.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        words.push_back(std::move(w));
    }
    return words;
}

struct TokenizedText {
    std::vector<std::int32_t> ids;
    std::vector<std::uint8_t> mask;

    [[nodiscard]] std::size_t length() const {
        return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
    }
};

/// Word-level vocabulary. Ids 0..3 are [PAD], [BOS], [EOS], [UNK]; the rest
/// follow first occurrence in the build corpus.
class Vocabulary {
public:
    Vocabulary() : tokens_{"[PAD]", "[BOS]", "[EOS]", "[UNK]"} { reindex(); }

    static Vocabulary build(const std::vector<std::string>& corpus) {
        if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
        Vocabulary v;
        for (const auto& line : corpus) {
            for (auto& w : split_words(line)) {
                if (!v.index_.contains(w)) {
                    v.index_.emplace(w, static_cast<std::int32_t>(v.tokens_.size()));
                    v.tokens_.push_back(std::move(w));
                }
            }
        }
        return v;
    }

    [[nodiscard]] std::size_t size() const { return tokens_.size(); }
    [[nodiscard]] const std::vector<std::string>& tokens() const { return tokens_; }

    [[nodiscard]] std::int32_t id(const std::string& word) const {
        auto it = index_.find(word);
        return it == index_.end() ? kUnk : it->second;
    }

    [[nodiscard]] const std::string& token(std::int32_t id) const { return tokens_.at(static_cast<std::size_t>(id)); }

    /// [BOS] words... [EOS], truncated so EOS is the last kept position, then
    /// right-padded with [PAD] to exactly `max_len`.
    [[nodiscard]] TokenizedText tokenize(const std::string& text, std::size_t max_len) const {
        if (max_len < 2) throw std::invalid_argument("tokenize: max_len must be at least 2");
        const auto words = split_words(text);
        const std::size_t n = std::min(words.size(), max_len - 2);
        TokenizedText t;
        t.ids.assign(max_len, kPad);
        t.mask.assign(max_len, 0);
        t.ids[0] = kBos;
        for (std::size_t i = 0; i < n; ++i) t.ids[i + 1] = id(words[i]);
        t.ids[n + 1] = kEos;
        std::fill_n(t.mask.begin(), n + 2, std::uint8_t{1});
        return t;
    }

    /// Words between BOS and EOS, space-joined.
    [[nodiscard]] std::string detokenize(const std::vector<std::int32_t>& ids) const {
        std::string out;
        for (auto id : ids) {
            if (id == kBos || id == kPad) continue;
            if (id == kEos) break;
            if (!out.empty()) out += ' ';
            out += token(id);
        }
        return out;
    }

    void save(const std::filesystem::path& path) const {
        std::ostringstream os;
        for (const auto& t : tokens_) os << t << '\n';
        io::write_text_atomic(path, os.str());
    }

    static Vocabulary load(const std::filesystem::path& path) {
        std::istringstream is(io::read_text(path));
        Vocabulary v;
        v.tokens_.clear();
        std::string line;
        while (std::getline(is, line)) v.tokens_.push_back(line);
        if (v.tokens_.size() < 5 || v.tokens_[0] != "[PAD]" || v.tokens_[1] != "[BOS]" ||
            v.tokens_[2] != "[EOS]" || v.tokens_[3] != "[UNK]") {
            throw std::runtime_error("vocabulary file " + path.string() + " is malformed");
        }
        v.reindex();
        return v;
    }

private:
    void reindex() {
        index_.clear();
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            index_.emplace(tokens_[i], static_cast<std::int32_t>(i));
        }
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::int32_t> index_;
};

}  // namespace tgpt
