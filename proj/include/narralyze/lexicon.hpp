#pragma once

// Layer 1: dictionary-driven lexical profiling of unsegmented Chinese text.

#include "narralyze/error.hpp"
#include "narralyze/resources.hpp"
#include "narralyze/unicode.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace narralyze::lexicon {

enum class Category : std::uint8_t { i, negemo, certain, discrep, social, focuspast, death, negate };

inline constexpr std::size_t kCategoryCount = 8;

inline constexpr std::array<std::string_view, kCategoryCount> kCategoryNames = {
    "i", "negemo", "certain", "discrep", "social", "focuspast", "death", "negate"};

inline std::string_view name(Category c) { return kCategoryNames[static_cast<std::size_t>(c)]; }

inline std::optional<Category> parse_category(std::string_view s) {
    for (std::size_t k = 0; k < kCategoryCount; ++k)
        if (kCategoryNames[k] == s) return static_cast<Category>(k);
    return std::nullopt;
}

/// A dictionary entry: literal word, or prefix stem when written with a trailing "*".
struct Entry {
    std::string stem;
    bool wildcard = false;

    bool matches(std::string_view token) const {
        return wildcard ? token.starts_with(stem) : token == stem;
    }
    std::string spelling() const { return wildcard ? stem + "*" : stem; }
    friend bool operator==(const Entry&, const Entry&) = default;
};

/// Code-point trie used both for maximum-match segmentation and for
/// wildcard-stem lookup during profiling.
class Trie {
public:
    Trie() : nodes_(1) {}

    /// Returns the node index for the word, creating the path as needed.
    std::uint32_t insert(std::u32string_view word) {
        std::uint32_t at = 0;
        for (char32_t c : word) {
            auto it = nodes_[at].next.find(c);
            if (it == nodes_[at].next.end()) {
                const auto id = static_cast<std::uint32_t>(nodes_.size());
                nodes_[at].next.emplace(c, id);
                nodes_.emplace_back();
                at = id;
            } else {
                at = it->second;
            }
        }
        return at;
    }

    std::optional<std::uint32_t> child(std::uint32_t node, char32_t c) const {
        auto it = nodes_[node].next.find(c);
        if (it == nodes_[node].next.end()) return std::nullopt;
        return it->second;
    }

    struct Node {
        std::unordered_map<char32_t, std::uint32_t> next;
        bool word = false;           // end of a segmentation vocabulary item
        std::uint8_t stem_mask = 0;  // categories holding a wildcard entry with this stem
    };

    Node& node(std::uint32_t id) { return nodes_[id]; }
    const Node& node(std::uint32_t id) const { return nodes_[id]; }

private:
    std::vector<Node> nodes_;
};

/// Category dictionary. Immutable after construction; safe to share across threads.
class Dictionary {
public:
    Dictionary() = default;

    /// Parses the sectioned text format: "[category]" headers, one entry per
    /// line, "#" starts a comment.
    static Dictionary parse(std::string_view source, Warnings* warnings = nullptr,
                            std::string_view origin = "<dictionary>") {
        Dictionary dict;
        std::optional<Category> current;
        std::size_t line_no = 0;
        std::istringstream in{std::string(source)};
        std::string line;
        while (std::getline(in, line)) {
            ++line_no;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            const std::string text = trim(unicode::nfc(line));
            if (text.empty()) continue;
            const auto where = std::string(origin) + ":" + std::to_string(line_no);
            if (text.front() == '[') {
                if (text.back() != ']') throw ValidationError(where + ": unterminated section header");
                const auto cat_name = trim(text.substr(1, text.size() - 2));
                current = parse_category(cat_name);
                if (!current)
                    throw ValidationError(where + ": unknown category '" + cat_name +
                                          "' (expected one of i, negemo, certain, discrep, social, "
                                          "focuspast, death, negate)");
                continue;
            }
            if (!current) throw ValidationError(where + ": entry before any [category] header");
            const auto star = text.find('*');
            if (star != std::string::npos && star != text.size() - 1)
                throw ValidationError(where + ": wildcard '*' allowed only in final position: '" + text + "'");
            Entry entry{star == std::string::npos ? text : text.substr(0, star), star != std::string::npos};
            if (entry.stem.empty()) throw ValidationError(where + ": empty entry");
            auto& list = dict.entries_[static_cast<std::size_t>(*current)];
            if (std::find(list.begin(), list.end(), entry) != list.end()) {
                warn(warnings, where + ": duplicate entry '" + text + "' in [" +
                                   std::string(name(*current)) + "] ignored");
                continue;
            }
            list.push_back(std::move(entry));
        }
        dict.build_index();
        return dict;
    }

    static Dictionary load(const std::filesystem::path& path, Warnings* warnings = nullptr) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ValidationError("cannot open dictionary file: " + path.string());
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse(buf.str(), warnings, path.string());
    }

    /// The bundled demonstration dictionary.
    static const Dictionary& demo() {
        static const Dictionary dict = parse(resources::demo_dictionary, nullptr, "<demo dictionary>");
        return dict;
    }

    const std::vector<Entry>& entries(Category c) const { return entries_[static_cast<std::size_t>(c)]; }
    const Trie& trie() const { return trie_; }

    /// Categories matched by a token (bit k set = category k).
    std::uint8_t match_mask(std::string_view token) const {
        std::uint8_t mask = 0;
        if (auto it = literal_.find(std::string(token)); it != literal_.end()) mask |= it->second;
        std::uint32_t at = 0;
        mask |= trie_.node(at).stem_mask;
        for (const auto& cp : unicode::decode(token)) {
            auto next = trie_.child(at, cp.value);
            if (!next) break;
            at = *next;
            mask |= trie_.node(at).stem_mask;
        }
        return mask;
    }

private:
    static std::string trim(std::string_view s) {
        const auto ws = " \t\r\n\v\f";
        const auto b = s.find_first_not_of(ws);
        if (b == std::string_view::npos) return {};
        const auto e = s.find_last_not_of(ws);
        return std::string(s.substr(b, e - b + 1));
    }

    void build_index() {
        for (std::size_t k = 0; k < kCategoryCount; ++k) {
            const auto bit = static_cast<std::uint8_t>(1u << k);
            for (const auto& e : entries_[k]) {
                const auto node = trie_.insert(unicode::to_u32(e.stem));
                trie_.node(node).word = true;
                if (e.wildcard)
                    trie_.node(node).stem_mask |= bit;
                else
                    literal_[e.stem] |= bit;
            }
        }
    }

    std::array<std::vector<Entry>, kCategoryCount> entries_;
    std::unordered_map<std::string, std::uint8_t> literal_;
    Trie trie_;
};

struct Token {
    std::string text;
    std::size_t offset = 0;  // byte offset in the NFC-normalized input
    std::size_t length = 0;
};

/// Forward maximum matching over the dictionary vocabulary. Characters not
/// covered by any vocabulary item become single-character tokens;
/// whitespace and punctuation are skipped. Input is NFC-normalized first.
inline std::vector<Token> segment(std::string_view text, const Dictionary& dict) {
    const std::string normalized = unicode::nfc(text);
    const auto cps = unicode::decode(normalized);
    const auto& trie = dict.trie();
    std::vector<Token> tokens;
    std::size_t i = 0;
    while (i < cps.size()) {
        if (unicode::is_separator(cps[i].value)) {
            ++i;
            continue;
        }
        std::size_t best = 1;
        std::uint32_t at = 0;
        for (std::size_t j = i; j < cps.size(); ++j) {
            auto next = trie.child(at, cps[j].value);
            if (!next) break;
            at = *next;
            if (trie.node(at).word) best = j - i + 1;
        }
        const auto begin = cps[i].offset;
        const auto end = cps[i + best - 1].offset + cps[i + best - 1].length;
        tokens.push_back({normalized.substr(begin, end - begin), begin, end - begin});
        i += best;
    }
    return tokens;
}

struct LexicalProfile {
    std::size_t token_count = 0;
    std::array<std::size_t, kCategoryCount> hits{};
    std::array<double, kCategoryCount> frequency{};

    double operator[](Category c) const { return frequency[static_cast<std::size_t>(c)]; }
};

/// Per-category hit counts over tokens divided by the token count. A token
/// counts at most once per category but may count toward several categories.
inline LexicalProfile profile_tokens(const std::vector<Token>& tokens, const Dictionary& dict) {
    if (tokens.empty()) throw DegenerateInputError("lexical profile of a text with zero tokens");
    LexicalProfile p;
    p.token_count = tokens.size();
    for (const auto& t : tokens) {
        const auto mask = dict.match_mask(t.text);
        for (std::size_t k = 0; k < kCategoryCount; ++k)
            if (mask & (1u << k)) ++p.hits[k];
    }
    for (std::size_t k = 0; k < kCategoryCount; ++k)
        p.frequency[k] = static_cast<double>(p.hits[k]) / static_cast<double>(p.token_count);
    return p;
}

inline LexicalProfile profile(std::string_view text, const Dictionary& dict) {
    return profile_tokens(segment(text, dict), dict);
}

} // namespace narralyze::lexicon
