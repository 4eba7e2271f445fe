#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace clinnum::numtok {

// One detected numeric span: possibly multiple components ("50-65", "8-8-8",
// "37+6") plus an attached unit ("123.7g/L" -> unit "g/L"). Byte offsets refer
// to the scanned text; `begin..end` covers components, delimiters and the
// attached unit, `literal_ranges` the bare numeric literals (one per value).
struct NumberMatch {
    size_t begin = 0;
    size_t end = 0;
    std::vector<double> values;
    std::vector<std::pair<size_t, size_t>> literal_ranges;
    std::string unit;
};

// Left-to-right maximal scan. Digits embedded in alphanumeric tokens
// ("G1P2") are not numbers. Decimal dot and decimal comma both accepted.
// Idempotent on substituted text (placeholders contain no digits at a
// valid start position).
std::vector<NumberMatch> detect_numbers(const std::string& text);

struct Substitution {
    std::string masked_text;                              // literals replaced by [NUM]
    std::vector<double> values;                           // left-to-right, one per placeholder
    std::vector<std::pair<size_t, size_t>> source_ranges; // original literal per placeholder
};

// Replaces every numeric literal with the placeholder surface form, keeping
// delimiters, units and all non-numeric bytes untouched.
Substitution substitute_placeholders(const std::string& text);

inline constexpr const char* kClsToken = "[CLS]";
inline constexpr const char* kMaskToken = "[MASK]";
inline constexpr const char* kPadToken = "[PAD]";
inline constexpr const char* kUnkToken = "[UNK]";
inline constexpr const char* kNumToken = "[NUM]";

// Whitespace + punctuation word tokenizer. Reserved surfaces are atomic;
// alphanumeric runs (including UTF-8 bytes >= 0x80) form words; every other
// byte is its own token.
std::vector<std::string> tokenize_words(const std::string& text);

class Vocab {
public:
    static constexpr int kClsId = 0;
    static constexpr int kMaskId = 1;
    static constexpr int kPadId = 2;
    static constexpr int kUnkId = 3;
    static constexpr int kNumId = 4;
    static constexpr int kNumReserved = 5;

    // Most-frequent tokens of the (already substituted) texts, up to `cap`
    // total entries including the reserved block. Ties break lexicographically.
    static Vocab build(const std::vector<std::string>& texts, size_t cap);

    static Vocab from_tokens(std::vector<std::string> tokens);  // reserved block required

    std::optional<int> lookup(const std::string& token) const;
    int id_or_unk(const std::string& token) const;
    const std::string& token(int id) const;  // throws on out-of-range id
    size_t size() const { return tokens_.size(); }

    void save(const std::string& path) const;
    static Vocab load(const std::string& path);
    const std::vector<std::string>& tokens() const { return tokens_; }
    uint64_t content_hash() const;

private:
    std::vector<std::string> tokens_;
    // flat map is enough at vocab scale; kept sorted for lookup
    std::vector<std::pair<std::string, int>> index_;
    void rebuild_index();
};

// Tokenized note. ids[0] is always [CLS]; values align 1:1 with ids and are
// 1.0 everywhere except unmasked [NUM] positions. y1/y2 hold the MLM targets
// for mask_positions after masking.
struct TokenSequence {
    std::vector<int> ids;
    std::vector<double> values;
    std::vector<int> mask_positions;
    std::vector<int> y1;
    std::vector<double> y2;

    size_t length() const { return ids.size(); }
};

TokenSequence encode(const std::string& text, const Vocab& vocab);
std::string decode(const std::vector<int>& ids, const Vocab& vocab);

// Independent Bernoulli(rate) masking of every non-[CLS]/[PAD] position.
// Masked ids become [MASK], their values reset to 1.0, originals saved to
// y1/y2. Deterministic in (seq, rate, seed).
TokenSequence mask_for_mlm(const TokenSequence& seq, double rate, uint64_t seed);

}  // namespace clinnum::numtok
