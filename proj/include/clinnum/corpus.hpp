#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace clinnum::corpus {

// The eight annotation classes. O is the out-of-class bucket for numbers
// that belong to none of the seven physiological categories.
enum class ClassId : int { O = 0, Cp, FC, D, SO2, AGPR, G, CIA_CIV };
inline constexpr int kNumClasses = 8;

const std::string& class_name(ClassId c);
ClassId class_from_name(const std::string& name);  // throws DataError on unknown name
std::array<ClassId, kNumClasses> all_classes();

struct NumberSpan {
    size_t char_start = 0;
    size_t char_end = 0;
    std::vector<double> values;
    std::string unit;
    ClassId label = ClassId::O;

    bool operator==(const NumberSpan&) const = default;
};

struct AnnotatedNote {
    std::string id;
    std::string text;
    std::vector<NumberSpan> spans;  // non-overlapping, sorted by char_start

    bool operator==(const AnnotatedNote&) const = default;
};

using Corpus = std::vector<AnnotatedNote>;

// One generation pattern: `text` contains exactly one "{}" slot where the
// rendered number compound goes. Grids are lo + k*step; `lo2/hi2/step2`
// parameterize the second component (range delta, "+days", triple reuse
// the main grid).
struct Template {
    ClassId cls = ClassId::O;
    std::string text;
    std::string kind;  // single | range | triple | plus
    double lo = 0, hi = 0, step = 1;
    double lo2 = 0, hi2 = 0, step2 = 1;
    bool fragment = false;  // verbless clause, eligible for run-on notes
    int weight = 1;         // relative draw frequency within its class/style
};

struct ClassInfo {
    ClassId id = ClassId::O;
    std::vector<std::string> keywords;
};

// Authored clinical phrase bank (data/templates.json). Kept in a data file
// rather than code so tests can pin its contents.
struct TemplateBank {
    int schema_version = 0;
    std::vector<ClassInfo> classes;    // exactly 8, unique ids
    std::vector<Template> templates;

    static TemplateBank load(const std::string& path);
    static TemplateBank load_default();  // CLINNUM_DATA_DIR/templates.json

    const ClassInfo& info(ClassId c) const;
    std::vector<const Template*> templates_for(ClassId c, bool fragment) const;
};

struct CorpusSpec {
    int n_notes = 2000;
    uint64_t seed = 42;
    std::map<ClassId, double> class_mix;                        // must sum to 1
    std::map<ClassId, std::pair<double, double>> value_range;   // per-class [lo, hi]
    double noise_rate = 0.3;
    TemplateBank bank;

    static CorpusSpec defaults(TemplateBank bank);
    void validate() const;  // throws DataError naming the failing field
};

// Deterministic in (spec.seed): per-note randomness is derived from
// (seed, note index), so generation is pure and parallelizable per note.
Corpus generate_corpus(const CorpusSpec& spec);
AnnotatedNote generate_note(const CorpusSpec& spec, int note_index);

struct Split {
    Corpus train, val, test;
};

// Stratified 70/15/15 split: per-class span fractions track the ratios
// within +-3 percentage points; partitions are disjoint and exhaustive.
Split split_corpus(const Corpus& corpus, const std::array<double, 3>& ratios, uint64_t seed);

// Inverse-frequency class weights over train spans, normalized to mean 1.
std::map<ClassId, double> class_weights(const Corpus& train);

// Line-delimited UTF-8 records, one note per line, schema version header.
void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

// Span counts per class across a corpus.
std::map<ClassId, int64_t> span_counts(const Corpus& corpus);

}  // namespace clinnum::corpus
