#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace s2d {

using TokenId = int32_t;

/// Ordered token alphabet with designated BOS/EOS entries.
class Vocabulary {
public:
    Vocabulary(std::vector<std::string> symbols, TokenId bos, TokenId eos);

    int size() const { return static_cast<int>(symbols_.size()); }
    TokenId bos() const { return bos_; }
    TokenId eos() const { return eos_; }
    const std::string& symbol(TokenId id) const;
    const std::vector<std::string>& symbols() const { return symbols_; }

    // -1 when the symbol is unknown.
    TokenId lookup(const std::string& symbol) const;

    // Maps each UTF-8 byte/char of `text` to a token; unknown chars are
    // skipped. Used for character-level prompts.
    std::vector<TokenId> encode_chars(const std::string& text) const;
    std::string decode(const std::vector<TokenId>& tokens) const;

    std::string to_json() const;
    static Vocabulary from_json(const std::string& json_text);

    // Character vocabulary over the distinct bytes of a corpus, plus
    // <bos>/<eos> sentinels.
    static Vocabulary from_corpus_chars(const std::string& text);

    bool operator==(const Vocabulary& other) const;

private:
    std::vector<std::string> symbols_;
    TokenId bos_;
    TokenId eos_;
};

}  // namespace s2d
