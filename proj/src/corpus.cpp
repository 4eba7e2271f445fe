#include "clinnum/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "clinnum/errors.hpp"
#include "clinnum/numtok.hpp"
#include "clinnum/rng.hpp"

namespace clinnum::corpus {

using nlohmann::json;

namespace {

const std::array<std::string, kNumClasses> kClassNames = {"O", "Cp", "FC", "D", "SO2", "AGPR", "G", "CIA_CIV"};

constexpr const char* kCorpusSchema = "clinnum.corpus";
constexpr int kCorpusVersion = 1;

int decimals_for_step(double step) {
    int dp = 0;
    double s = step;
    while (s < 0.9999 && dp < 6) {
        s *= 10.0;
        ++dp;
    }
    return dp;
}

std::string format_value(double v, int dp) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.*f", dp, v);
    return buf;
}

double draw_grid(Rng& rng, double lo, double hi, double step) {
    int64_t steps = static_cast<int64_t>(std::llround((hi - lo) / step));
    int64_t k = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(steps + 1)));
    return lo + static_cast<double>(k) * step;
}

void upper_ascii(std::string& s) {
    for (char& c : s)
        if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
}

}  // namespace

const std::string& class_name(ClassId c) { return kClassNames[static_cast<size_t>(c)]; }

ClassId class_from_name(const std::string& name) {
    for (size_t i = 0; i < kClassNames.size(); ++i)
        if (kClassNames[i] == name) return static_cast<ClassId>(i);
    throw DataError("unknown class label '" + name + "'");
}

std::array<ClassId, kNumClasses> all_classes() {
    std::array<ClassId, kNumClasses> out{};
    for (int i = 0; i < kNumClasses; ++i) out[static_cast<size_t>(i)] = static_cast<ClassId>(i);
    return out;
}

TemplateBank TemplateBank::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("template bank: cannot open " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw DataError("template bank: parse error in " + path + ": " + e.what());
    }
    TemplateBank bank;
    bank.schema_version = j.value("schema_version", 0);
    for (const auto& jc : j.at("classes")) {
        ClassInfo info;
        info.id = class_from_name(jc.at("id").get<std::string>());
        for (const auto& kw : jc.at("keywords")) info.keywords.push_back(kw.get<std::string>());
        bank.classes.push_back(std::move(info));
    }
    if (bank.classes.size() != kNumClasses)
        throw DataError("template bank: expected " + std::to_string(kNumClasses) + " classes, got " +
                        std::to_string(bank.classes.size()));
    std::set<ClassId> seen;
    for (const auto& c : bank.classes) {
        if (!seen.insert(c.id).second) throw DataError("template bank: duplicate class " + class_name(c.id));
        if (c.id != ClassId::O && c.keywords.size() < 2)
            throw DataError("template bank: class " + class_name(c.id) + " needs at least 2 keywords");
    }
    for (const auto& jt : j.at("templates")) {
        Template t;
        t.cls = class_from_name(jt.at("class").get<std::string>());
        t.text = jt.at("text").get<std::string>();
        t.kind = jt.at("kind").get<std::string>();
        t.lo = jt.at("lo").get<double>();
        t.hi = jt.at("hi").get<double>();
        t.step = jt.at("step").get<double>();
        t.lo2 = jt.value("lo2", 0.0);
        t.hi2 = jt.value("hi2", 0.0);
        t.step2 = jt.value("step2", 1.0);
        t.fragment = jt.value("fragment", false);
        t.weight = jt.value("weight", 1);
        if (t.kind != "single" && t.kind != "range" && t.kind != "triple" && t.kind != "plus")
            throw DataError("template bank: unknown kind '" + t.kind + "' in template \"" + t.text + "\"");
        size_t slots = 0;
        for (size_t p = t.text.find("{}"); p != std::string::npos; p = t.text.find("{}", p + 2)) ++slots;
        size_t expected = t.kind == "single" ? 1 : t.kind == "triple" ? 3 : 2;
        if (slots != expected)
            throw DataError("template bank: template \"" + t.text + "\" has " + std::to_string(slots) +
                            " slots, kind " + t.kind + " needs " + std::to_string(expected));
        if (!(t.lo < t.hi) || t.step <= 0)
            throw DataError("template bank: bad value grid in template \"" + t.text + "\"");
        bank.templates.push_back(std::move(t));
    }
    for (ClassId c : all_classes()) {
        if (bank.templates_for(c, true).empty() || bank.templates_for(c, false).empty())
            throw DataError("template bank: class " + class_name(c) + " needs both fragment and sentence templates");
    }
    return bank;
}

TemplateBank TemplateBank::load_default() {
    const char* env = std::getenv("CLINNUM_DATA_DIR");
    std::string dir = env ? env : CLINNUM_DATA_DIR;
    return load(dir + "/templates.json");
}

const ClassInfo& TemplateBank::info(ClassId c) const {
    for (const auto& ci : classes)
        if (ci.id == c) return ci;
    throw InvariantError("template bank: missing class info");
}

std::vector<const Template*> TemplateBank::templates_for(ClassId c, bool fragment) const {
    std::vector<const Template*> out;
    for (const auto& t : templates)
        if (t.cls == c && t.fragment == fragment) out.push_back(&t);
    return out;
}

CorpusSpec CorpusSpec::defaults(TemplateBank bank_in) {
    CorpusSpec spec;
    spec.bank = std::move(bank_in);
    for (ClassId c : all_classes()) spec.class_mix[c] = c == ClassId::O ? 0.65 : 0.05;
    // Overlapping ranges are intentional: context and magnitude must both
    // matter for disambiguation.
    spec.value_range[ClassId::O] = {1e-4, 1e5};
    spec.value_range[ClassId::Cp] = {10, 80};
    spec.value_range[ClassId::FC] = {60, 220};
    spec.value_range[ClassId::D] = {1e-4, 1e5};
    spec.value_range[ClassId::SO2] = {40, 100};
    spec.value_range[ClassId::AGPR] = {1, 10};
    spec.value_range[ClassId::G] = {2, 130};
    spec.value_range[ClassId::CIA_CIV] = {1, 40};
    return spec;
}

void CorpusSpec::validate() const {
    if (n_notes <= 0) throw DataError("corpus spec: n_notes must be positive");
    if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) throw DataError("corpus spec: noise_rate must be in [0,1]");
    double total = 0.0;
    for (ClassId c : all_classes()) {
        auto it = class_mix.find(c);
        if (it == class_mix.end()) throw DataError("corpus spec: class_mix missing class " + class_name(c));
        if (it->second < 0.0 || it->second > 1.0)
            throw DataError("corpus spec: class_mix[" + class_name(c) + "] outside [0,1]");
        total += it->second;
    }
    if (std::abs(total - 1.0) > 1e-9) throw DataError("corpus spec: class_mix does not sum to 1");
    for (ClassId c : all_classes()) {
        auto it = value_range.find(c);
        if (it == value_range.end()) throw DataError("corpus spec: value_range missing class " + class_name(c));
        auto [lo, hi] = it->second;
        if (!(lo < hi)) throw DataError("corpus spec: value_range[" + class_name(c) + "] needs lo < hi");
        if (lo < 1e-4 || hi > 1e5)
            throw DataError("corpus spec: value_range[" + class_name(c) + "] outside [1e-4, 1e5]");
    }
    for (const Template& t : bank.templates) {
        auto [lo, hi] = value_range.at(t.cls);
        double tlo = t.lo, thi = t.hi;
        if (t.kind == "range") thi = t.hi + t.hi2;
        if (t.kind == "plus") {
            tlo = std::min(t.lo, t.lo2);
            thi = std::max(t.hi, t.hi2);
        }
        if (tlo < lo - 1e-12 || thi > hi + 1e-12)
            throw DataError("corpus spec: template \"" + t.text + "\" grid exceeds value_range of class " +
                            class_name(t.cls));
    }
}

namespace {

struct RenderedClause {
    std::string text;
    ClassId cls;
    size_t slot_begin, slot_end;  // rendered compound, relative to clause text
};

RenderedClause render_clause(const CorpusSpec& spec, Rng& rng, ClassId cls, bool fragment) {
    auto candidates = spec.bank.templates_for(cls, fragment);
    if (candidates.empty()) candidates = spec.bank.templates_for(cls, !fragment);
    std::vector<double> weights;
    for (const Template* t : candidates) weights.push_back(static_cast<double>(t->weight));
    const Template& t = *candidates[rng.next_weighted(weights)];

    const int dp = decimals_for_step(t.step);
    const bool comma = dp > 0 && rng.next_bool(0.12);
    std::vector<std::string> pieces;
    if (t.kind == "single") {
        pieces.push_back(format_value(draw_grid(rng, t.lo, t.hi, t.step), dp));
    } else if (t.kind == "range") {
        double a = draw_grid(rng, t.lo, t.hi, t.step);
        double delta = draw_grid(rng, t.lo2, t.hi2, t.step2);
        pieces.push_back(format_value(a, dp));
        pieces.push_back(format_value(a + delta, dp));
    } else if (t.kind == "triple") {
        std::vector<double> vs = {draw_grid(rng, t.lo, t.hi, t.step), draw_grid(rng, t.lo, t.hi, t.step),
                                  draw_grid(rng, t.lo, t.hi, t.step)};
        std::sort(vs.begin(), vs.end());
        for (double v : vs) pieces.push_back(format_value(v, dp));
    } else {  // plus
        pieces.push_back(format_value(draw_grid(rng, t.lo, t.hi, t.step), dp));
        pieces.push_back(format_value(draw_grid(rng, t.lo2, t.hi2, t.step2), decimals_for_step(t.step2)));
    }
    if (comma)
        for (std::string& p : pieces) std::replace(p.begin(), p.end(), '.', ',');

    RenderedClause out;
    out.cls = cls;
    out.text = t.text;
    size_t cursor = 0;
    std::vector<size_t> slot_pos;
    for (const std::string& p : pieces) {
        size_t at = out.text.find("{}", cursor);
        out.text.replace(at, 2, p);
        slot_pos.push_back(at);
        cursor = at + p.size();
    }
    out.slot_begin = slot_pos.front();
    out.slot_end = cursor;
    if (t.kind == "triple" || t.kind == "plus" || t.kind == "range") {
        // slots are adjacent ("{}-{}"), the compound spans first..last
    }
    return out;
}

}  // namespace

AnnotatedNote generate_note(const CorpusSpec& spec, int note_index) {
    Rng rng(spec.seed, static_cast<uint64_t>(note_index));
    const bool fragment_note = rng.next_bool(spec.noise_rate);

    static const std::vector<double> kClauseCountWeights = {0.35, 0.35, 0.2, 0.1};
    const int n_clauses = 1 + static_cast<int>(rng.next_weighted(kClauseCountWeights));

    std::vector<double> mix;
    for (ClassId c : all_classes()) mix.push_back(spec.class_mix.at(c));

    AnnotatedNote note;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "note-%06d", note_index);
    note.id = idbuf;

    struct SlotRef {
        size_t begin, end;
        ClassId cls;
    };
    std::vector<SlotRef> slots;
    for (int k = 0; k < n_clauses; ++k) {
        ClassId cls = static_cast<ClassId>(rng.next_weighted(mix));
        RenderedClause clause = render_clause(spec, rng, cls, fragment_note);
        if (fragment_note && rng.next_bool(0.3)) upper_ascii(clause.text);
        if (!note.text.empty()) note.text += fragment_note ? " " : ". ";
        size_t base = note.text.size();
        note.text += clause.text;
        slots.push_back({base + clause.slot_begin, base + clause.slot_end, clause.cls});
    }
    if (!fragment_note) note.text += ".";

    // Annotate from the detector's view of the final text so that span values
    // are exactly what detect_numbers recovers.
    auto matches = numtok::detect_numbers(note.text);
    for (const auto& m : matches) {
        const SlotRef* owner = nullptr;
        for (const SlotRef& s : slots)
            if (m.begin >= s.begin && m.literal_ranges.back().second <= s.end) {
                owner = &s;
                break;
            }
        if (!owner)
            throw InvariantError("generate_note: detected number outside any slot in note '" + note.text + "'");
        NumberSpan span;
        span.char_start = m.begin;
        span.char_end = m.end;
        span.values = m.values;
        span.unit = m.unit;
        span.label = owner->cls;
        note.spans.push_back(std::move(span));
    }
    if (note.spans.size() < slots.size())
        throw InvariantError("generate_note: a slot rendered no detectable number in note '" + note.text + "'");
    return note;
}

Corpus generate_corpus(const CorpusSpec& spec) {
    spec.validate();
    Corpus corpus;
    corpus.reserve(static_cast<size_t>(spec.n_notes));
    for (int i = 0; i < spec.n_notes; ++i) corpus.push_back(generate_note(spec, i));
    return corpus;
}

std::map<ClassId, int64_t> span_counts(const Corpus& corpus) {
    std::map<ClassId, int64_t> counts;
    for (ClassId c : all_classes()) counts[c] = 0;
    for (const auto& note : corpus)
        for (const auto& s : note.spans) ++counts[s.label];
    return counts;
}

Split split_corpus(const Corpus& corpus, const std::array<double, 3>& ratios, uint64_t seed) {
    auto totals = span_counts(corpus);
    for (ClassId c : all_classes())
        if (totals[c] < 3)
            throw DataError("split_corpus: class " + class_name(c) + " has only " + std::to_string(totals[c]) +
                            " spans; stratification needs at least 3");

    const int n = static_cast<int>(corpus.size());
    // Exact note counts per split (largest remainder).
    std::array<int, 3> caps{};
    int assigned = 0;
    std::array<double, 3> rem{};
    for (int s = 0; s < 3; ++s) {
        double exact = ratios[static_cast<size_t>(s)] * n;
        caps[static_cast<size_t>(s)] = static_cast<int>(std::floor(exact));
        rem[static_cast<size_t>(s)] = exact - std::floor(exact);
        assigned += caps[static_cast<size_t>(s)];
    }
    while (assigned < n) {
        int best = 0;
        for (int s = 1; s < 3; ++s)
            if (rem[static_cast<size_t>(s)] > rem[static_cast<size_t>(best)]) best = s;
        ++caps[static_cast<size_t>(best)];
        rem[static_cast<size_t>(best)] = -1;
        ++assigned;
    }

    for (int attempt = 0; attempt < 50; ++attempt) {
        std::vector<int> order(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        Rng rng(seed, static_cast<uint64_t>(attempt));
        rng.shuffle(order);

        std::array<std::map<ClassId, int64_t>, 3> have;
        std::array<int, 3> used{};
        std::vector<int> assign(static_cast<size_t>(n), -1);
        for (int idx : order) {
            const auto& note = corpus[static_cast<size_t>(idx)];
            int best = -1;
            double best_score = -1e300;
            for (int s = 0; s < 3; ++s) {
                if (used[static_cast<size_t>(s)] >= caps[static_cast<size_t>(s)]) continue;
                double score = 0.0;
                for (const auto& sp : note.spans) {
                    double target = ratios[static_cast<size_t>(s)] * static_cast<double>(totals[sp.label]);
                    double deficit = target - static_cast<double>(have[static_cast<size_t>(s)][sp.label]);
                    score += deficit / std::max<double>(1.0, static_cast<double>(totals[sp.label]));
                }
                // Prefer emptier splits when span scores tie (keeps fill balanced).
                score += 1e-9 * (static_cast<double>(caps[static_cast<size_t>(s)] - used[static_cast<size_t>(s)]));
                if (score > best_score) {
                    best_score = score;
                    best = s;
                }
            }
            assign[static_cast<size_t>(idx)] = best;
            ++used[static_cast<size_t>(best)];
            for (const auto& sp : note.spans) ++have[static_cast<size_t>(best)][sp.label];
        }

        bool ok = true;
        for (ClassId c : all_classes())
            for (int s = 0; s < 3 && ok; ++s) {
                double frac = static_cast<double>(have[static_cast<size_t>(s)][c]) / static_cast<double>(totals[c]);
                if (std::abs(frac - ratios[static_cast<size_t>(s)]) > 0.03 + 1e-12) ok = false;
            }
        if (!ok) continue;

        Split split;
        for (int i = 0; i < n; ++i) {
            const auto& note = corpus[static_cast<size_t>(i)];
            if (assign[static_cast<size_t>(i)] == 0)
                split.train.push_back(note);
            else if (assign[static_cast<size_t>(i)] == 1)
                split.val.push_back(note);
            else
                split.test.push_back(note);
        }
        return split;
    }
    throw DataError("split_corpus: could not satisfy stratification within 3 percentage points");
}

std::map<ClassId, double> class_weights(const Corpus& train) {
    auto counts = span_counts(train);
    for (ClassId c : all_classes())
        if (counts[c] == 0) throw DataError("class_weights: class " + class_name(c) + " absent from train split");
    std::map<ClassId, double> w;
    double total = 0.0;
    for (ClassId c : all_classes()) {
        w[c] = 1.0 / static_cast<double>(counts[c]);
        total += w[c];
    }
    const double scale = static_cast<double>(kNumClasses) / total;  // mean weight = 1
    for (auto& [c, v] : w) v *= scale;
    return w;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("save_corpus: cannot open " + path + " for writing");
    json header = {{"schema", kCorpusSchema}, {"version", kCorpusVersion}};
    f << header.dump() << '\n';
    for (const auto& note : corpus) {
        json spans = json::array();
        for (const auto& s : note.spans) {
            spans.push_back({{"start", s.char_start},
                             {"end", s.char_end},
                             {"values", s.values},
                             {"unit", s.unit},
                             {"label", class_name(s.label)}});
        }
        json rec = {{"id", note.id}, {"text", note.text}, {"spans", spans}};
        f << rec.dump() << '\n';
    }
    if (!f) throw DataError("save_corpus: write failed for " + path);
}

Corpus load_corpus(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("load_corpus: cannot open " + path);
    Corpus corpus;
    std::string line;
    int line_no = 0;
    bool header_seen = false;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("load_corpus: line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!header_seen) {
            header_seen = true;
            if (j.contains("schema")) {
                if (j.at("schema") != kCorpusSchema || j.value("version", -1) != kCorpusVersion)
                    throw DataError("load_corpus: line 1: unsupported schema/version");
                continue;
            }
        }
        try {
            AnnotatedNote note;
            note.id = j.at("id").get<std::string>();
            note.text = j.at("text").get<std::string>();
            size_t prev_end = 0;
            for (const auto& js : j.at("spans")) {
                NumberSpan s;
                s.char_start = js.at("start").get<size_t>();
                s.char_end = js.at("end").get<size_t>();
                s.values = js.at("values").get<std::vector<double>>();
                s.unit = js.value("unit", "");
                s.label = class_from_name(js.at("label").get<std::string>());
                if (!(s.char_start < s.char_end) || s.char_end > note.text.size())
                    throw DataError("span offsets out of range");
                if (s.char_start < prev_end) throw DataError("spans overlap or are unsorted");
                if (s.values.empty()) throw DataError("span has no values");
                for (double v : s.values) {
                    if (!std::isfinite(v)) throw DataError("span value not finite");
                    if (v < 1e-4 || v > 1e5) throw DataError("span value outside [1e-4, 1e5]");
                }
                auto rescan = numtok::detect_numbers(note.text.substr(s.char_start, s.char_end - s.char_start));
                if (rescan.size() != 1 || rescan[0].values != s.values)
                    throw DataError("span substring does not re-parse to its values");
                prev_end = s.char_end;
                note.spans.push_back(std::move(s));
            }
            corpus.push_back(std::move(note));
        } catch (const json::exception& e) {
            throw DataError("load_corpus: line " + std::to_string(line_no) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError("load_corpus: line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return corpus;
}

}  // namespace clinnum::corpus
