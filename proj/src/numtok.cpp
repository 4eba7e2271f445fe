#include "clinnum/numtok.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>

#include "clinnum/errors.hpp"
#include "clinnum/rng.hpp"

namespace clinnum::numtok {

namespace {

bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }
bool is_alpha(unsigned char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }
bool is_alnum(unsigned char c) { return is_digit(c) || is_alpha(c); }
// UTF-8 lead/continuation bytes count as word characters so accented French
// words stay in one piece.
bool is_word_byte(unsigned char c) { return is_alnum(c) || c >= 0x80; }

const char* kReserved[] = {kClsToken, kMaskToken, kPadToken, kUnkToken, kNumToken};

// Matches one reserved surface form at position i, returns its length or 0.
size_t match_reserved(const std::string& text, size_t i) {
    if (text[i] != '[') return 0;
    for (const char* r : kReserved) {
        size_t n = std::char_traits<char>::length(r);
        if (text.compare(i, n, r) == 0) return n;
    }
    return 0;
}

// Scans one numeric literal starting at a digit: digits, optionally a single
// '.' or ',' separator followed by digits. Returns one-past-the-end.
size_t scan_literal(const std::string& text, size_t i) {
    size_t j = i;
    while (j < text.size() && is_digit(static_cast<unsigned char>(text[j]))) ++j;
    if (j < text.size() && (text[j] == '.' || text[j] == ',') && j + 1 < text.size() &&
        is_digit(static_cast<unsigned char>(text[j + 1]))) {
        ++j;
        while (j < text.size() && is_digit(static_cast<unsigned char>(text[j]))) ++j;
    }
    return j;
}

double parse_literal(const std::string& text, size_t begin, size_t end) {
    std::string lit = text.substr(begin, end - begin);
    std::replace(lit.begin(), lit.end(), ',', '.');
    return std::strtod(lit.c_str(), nullptr);
}

// Attached unit: letters and '%', plus '/' when followed by a letter.
// Stops at anything else (in particular at digits: "21h30" keeps unit "h").
size_t scan_unit(const std::string& text, size_t i) {
    size_t j = i;
    while (j < text.size()) {
        unsigned char c = static_cast<unsigned char>(text[j]);
        if (is_alpha(c) || c == '%') {
            ++j;
        } else if (c == '/' && j + 1 < text.size() && is_alpha(static_cast<unsigned char>(text[j + 1]))) {
            ++j;
        } else {
            break;
        }
    }
    return j;
}

}  // namespace

std::vector<NumberMatch> detect_numbers(const std::string& text) {
    std::vector<NumberMatch> out;
    size_t i = 0;
    while (i < text.size()) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        if (!is_digit(c)) {
            ++i;
            continue;
        }
        // A digit preceded by a word character belongs to an alphanumeric
        // token (protocol codes like G1P2), not to a number.
        if (i > 0 && is_word_byte(static_cast<unsigned char>(text[i - 1]))) {
            ++i;
            continue;
        }
        NumberMatch m;
        m.begin = i;
        size_t j = scan_literal(text, i);
        m.literal_ranges.emplace_back(i, j);
        m.values.push_back(parse_literal(text, i, j));
        // compound continuation: "-" or "+" directly followed by a digit
        while (j < text.size() && (text[j] == '-' || text[j] == '+') && j + 1 < text.size() &&
               is_digit(static_cast<unsigned char>(text[j + 1]))) {
            size_t k = scan_literal(text, j + 1);
            m.literal_ranges.emplace_back(j + 1, k);
            m.values.push_back(parse_literal(text, j + 1, k));
            j = k;
        }
        size_t unit_end = scan_unit(text, j);
        if (unit_end > j) m.unit = text.substr(j, unit_end - j);
        m.end = unit_end;
        out.push_back(std::move(m));
        i = unit_end;
    }
    return out;
}

Substitution substitute_placeholders(const std::string& text) {
    Substitution sub;
    auto matches = detect_numbers(text);
    size_t cursor = 0;
    for (const NumberMatch& m : matches) {
        for (size_t k = 0; k < m.literal_ranges.size(); ++k) {
            const auto [b, e] = m.literal_ranges[k];
            sub.masked_text.append(text, cursor, b - cursor);
            sub.masked_text.append(kNumToken);
            sub.values.push_back(m.values[k]);
            sub.source_ranges.emplace_back(b, e);
            cursor = e;
        }
    }
    sub.masked_text.append(text, cursor, text.size() - cursor);
    return sub;
}

std::vector<std::string> tokenize_words(const std::string& text) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < text.size()) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
            ++i;
            continue;
        }
        if (size_t n = match_reserved(text, i); n > 0) {
            out.emplace_back(text, i, n);
            i += n;
            continue;
        }
        if (is_word_byte(c)) {
            size_t j = i + 1;
            while (j < text.size() && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
            out.emplace_back(text, i, j - i);
            i = j;
            continue;
        }
        out.emplace_back(1, text[i]);
        ++i;
    }
    return out;
}

Vocab Vocab::build(const std::vector<std::string>& texts, size_t cap) {
    if (texts.empty()) throw DataError("build_vocab: empty corpus");
    if (cap < kNumReserved)
        throw DataError("build_vocab: cap " + std::to_string(cap) + " smaller than reserved token count " +
                        std::to_string(kNumReserved));
    std::map<std::string, int64_t> counts;  // ordered: lexicographic tie-break for free
    for (const std::string& t : texts) {
        for (const std::string& w : tokenize_words(t)) {
            bool reserved = false;
            for (const char* r : kReserved) reserved |= (w == r);
            if (!reserved) ++counts[w];
        }
    }
    std::vector<std::pair<std::string, int64_t>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    std::vector<std::string> tokens(kReserved, kReserved + kNumReserved);
    for (const auto& [tok, cnt] : ranked) {
        if (tokens.size() >= cap) break;
        tokens.push_back(tok);
    }
    return from_tokens(std::move(tokens));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < kNumReserved) throw DataError("vocab: missing reserved tokens");
    for (int i = 0; i < kNumReserved; ++i)
        if (tokens[static_cast<size_t>(i)] != kReserved[i])
            throw DataError("vocab: reserved token mismatch at id " + std::to_string(i));
    Vocab v;
    v.tokens_ = std::move(tokens);
    v.rebuild_index();
    return v;
}

void Vocab::rebuild_index() {
    index_.clear();
    index_.reserve(tokens_.size());
    for (size_t i = 0; i < tokens_.size(); ++i) index_.emplace_back(tokens_[i], static_cast<int>(i));
    std::sort(index_.begin(), index_.end());
    for (size_t i = 1; i < index_.size(); ++i)
        if (index_[i].first == index_[i - 1].first) throw DataError("vocab: duplicate token '" + index_[i].first + "'");
}

std::optional<int> Vocab::lookup(const std::string& token) const {
    auto it = std::lower_bound(index_.begin(), index_.end(), token,
                               [](const auto& p, const std::string& t) { return p.first < t; });
    if (it != index_.end() && it->first == token) return it->second;
    return std::nullopt;
}

int Vocab::id_or_unk(const std::string& token) const { return lookup(token).value_or(kUnkId); }

const std::string& Vocab::token(int id) const {
    if (id < 0 || static_cast<size_t>(id) >= tokens_.size())
        throw DataError("vocab: id " + std::to_string(id) + " out of range (size " + std::to_string(tokens_.size()) + ")");
    return tokens_[static_cast<size_t>(id)];
}

void Vocab::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("vocab: cannot open " + path + " for writing");
    for (const std::string& t : tokens_) f << t << '\n';
    if (!f) throw DataError("vocab: write failed for " + path);
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("vocab: cannot open " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(f, line)) tokens.push_back(line);
    return from_tokens(std::move(tokens));
}

uint64_t Vocab::content_hash() const {
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (const std::string& t : tokens_) {
        for (char c : t) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        h ^= '\n';
        h *= 0x100000001b3ULL;
    }
    return h;
}

TokenSequence encode(const std::string& text, const Vocab& vocab) {
    Substitution sub = substitute_placeholders(text);
    TokenSequence seq;
    seq.ids.push_back(Vocab::kClsId);
    seq.values.push_back(1.0);
    size_t next_value = 0;
    for (const std::string& w : tokenize_words(sub.masked_text)) {
        if (w == kNumToken) {
            seq.ids.push_back(Vocab::kNumId);
            seq.values.push_back(sub.values[next_value++]);
        } else {
            seq.ids.push_back(vocab.id_or_unk(w));
            seq.values.push_back(1.0);
        }
    }
    return seq;
}

std::string decode(const std::vector<int>& ids, const Vocab& vocab) {
    std::string out;
    bool prev_word = false;
    bool space_pending = false;
    for (int id : ids) {
        const std::string& tok = vocab.token(id);
        if (tok == kClsToken) continue;
        bool word = is_word_byte(static_cast<unsigned char>(tok[0])) || tok[0] == '[';
        if (!out.empty() && ((prev_word && word) || space_pending)) out += ' ';
        out += tok;
        // sentence punctuation keeps a space on its right
        space_pending = (tok == "." || tok == "," || tok == ":" || tok == ";" || tok == "!" || tok == "?");
        prev_word = word;
    }
    return out;
}

TokenSequence mask_for_mlm(const TokenSequence& seq, double rate, uint64_t seed) {
    if (!(rate > 0.0 && rate < 1.0)) throw InvariantError("mask_for_mlm: rate must be in (0,1)");
    TokenSequence m = seq;
    m.mask_positions.clear();
    m.y1.clear();
    m.y2.clear();
    Rng rng(seed);
    for (size_t i = 1; i < m.ids.size(); ++i) {
        if (m.ids[i] == Vocab::kPadId) continue;
        if (rng.next_bool(rate)) {
            m.mask_positions.push_back(static_cast<int>(i));
            m.y1.push_back(m.ids[i]);
            m.y2.push_back(m.values[i]);
            m.ids[i] = Vocab::kMaskId;
            m.values[i] = 1.0;
        }
    }
    return m;
}

}  // namespace clinnum::numtok
