#include "s2d/vocab.hpp"

#include <algorithm>
#include <set>

#include <nlohmann/json.hpp>

#include "s2d/errors.hpp"

namespace s2d {

Vocabulary::Vocabulary(std::vector<std::string> symbols, TokenId bos, TokenId eos)
    : symbols_(std::move(symbols)), bos_(bos), eos_(eos) {
    if (symbols_.size() < 2) throw ValidationError("vocabulary needs at least 2 symbols");
    std::set<std::string> seen(symbols_.begin(), symbols_.end());
    if (seen.size() != symbols_.size()) throw ValidationError("vocabulary symbols must be unique");
    const int n = size();
    if (bos_ < 0 || bos_ >= n || eos_ < 0 || eos_ >= n)
        throw ValidationError("bos/eos out of range");
}

const std::string& Vocabulary::symbol(TokenId id) const {
    if (id < 0 || id >= size()) throw ValidationError("token id out of range");
    return symbols_[static_cast<size_t>(id)];
}

TokenId Vocabulary::lookup(const std::string& symbol) const {
    for (int i = 0; i < size(); ++i)
        if (symbols_[static_cast<size_t>(i)] == symbol) return i;
    return -1;
}

std::vector<TokenId> Vocabulary::encode_chars(const std::string& text) const {
    std::vector<TokenId> out;
    out.reserve(text.size());
    for (char ch : text) {
        TokenId id = lookup(std::string(1, ch));
        if (id >= 0) out.push_back(id);
    }
    return out;
}

std::string Vocabulary::decode(const std::vector<TokenId>& tokens) const {
    std::string out;
    for (TokenId t : tokens) {
        if (t == bos_ || t == eos_) continue;
        out += symbol(t);
    }
    return out;
}

std::string Vocabulary::to_json() const {
    nlohmann::json j;
    j["symbols"] = symbols_;
    j["bos"] = bos_;
    j["eos"] = eos_;
    return j.dump();
}

Vocabulary Vocabulary::from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    return Vocabulary(j.at("symbols").get<std::vector<std::string>>(),
                      j.at("bos").get<TokenId>(), j.at("eos").get<TokenId>());
}

Vocabulary Vocabulary::from_corpus_chars(const std::string& text) {
    std::set<char> chars(text.begin(), text.end());
    std::vector<std::string> symbols = {"<bos>", "<eos>"};
    for (char ch : chars) symbols.emplace_back(1, ch);
    return Vocabulary(std::move(symbols), 0, 1);
}

bool Vocabulary::operator==(const Vocabulary& other) const {
    return symbols_ == other.symbols_ && bos_ == other.bos_ && eos_ == other.eos_;
}

}  // namespace s2d
