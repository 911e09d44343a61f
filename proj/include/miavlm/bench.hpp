#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace miavlm {

// ---------------------------------------------------------------------------
// Benchmark domain types
// ---------------------------------------------------------------------------

struct AttributeTerm {
    std::string term;        // the attribute word as it appears in the caption
    std::size_t begin = 0;   // character span within the caption
    std::size_t end = 0;
    std::string category;    // selects the question template
};

struct AttributeRecord {
    std::string image_id;
    std::string caption;
    std::vector<AttributeTerm> attribute_terms;  // at least one
};

enum class Polarity { kPositive, kNegative };
enum class GoldAnswer { kYes, kNo };
enum class Answer { kYes, kNo, kUnparseable };

std::string to_string(Polarity p);
std::string to_string(GoldAnswer g);
std::string to_string(Answer a);

struct Question {
    std::string id;
    std::string image_id;
    std::string text;
    Polarity polarity = Polarity::kPositive;
    GoldAnswer gold = GoldAnswer::kYes;
    std::string source_attribute;
    std::string category;
    std::string replaced_with;  // set on negatives only

    void validate() const;  // polarity/gold/replacement consistency
};

struct Response {
    std::string id;
    std::string text;
};

/// Case-insensitive attribute -> opposites table. No term may map to itself.
class AntonymLexicon {
public:
    static AntonymLexicon builtin();
    static AntonymLexicon load(const std::string& path);
    void save(const std::string& path) const;

    void add(const std::string& term, std::vector<std::string> opposites);
    const std::vector<std::string>* find(const std::string& term) const;
    std::size_t size() const { return entries_.size(); }
    const std::map<std::string, std::vector<std::string>>& entries() const { return entries_; }

private:
    std::map<std::string, std::vector<std::string>> entries_;  // lowercase keys
};

/// Category -> question pattern with a "{}" placeholder for the attribute.
struct QuestionTemplates {
    std::map<std::string, std::string> by_category;
    static QuestionTemplates builtin();
};

struct EvalCounts {
    std::size_t total = 0;
    std::size_t positives = 0, negatives = 0;
    std::size_t positive_correct = 0, negative_correct = 0;
    std::size_t pos_yes = 0, pos_no = 0, pos_unparseable = 0;
    std::size_t neg_yes = 0, neg_no = 0, neg_unparseable = 0;
};

struct QuestionOutcome {
    std::string id;
    GoldAnswer gold = GoldAnswer::kYes;
    Answer parsed = Answer::kUnparseable;
    bool correct = false;
};

struct EvalReport {
    double positive_accuracy = 0.0;  // unparseable counts as wrong
    double negative_accuracy = 0.0;
    double hooa = 0.0;               // (positive_accuracy + negative_accuracy) / 2
    EvalCounts counts;
    std::vector<QuestionOutcome> per_question;
};

// ---------------------------------------------------------------------------
// Benchmark construction and scoring
// ---------------------------------------------------------------------------

/// One positive question per (record, attribute term); gold is always Yes.
/// A term whose category has no template is a generation error naming the
/// term.
std::vector<Question> gen_positive(const std::vector<AttributeRecord>& records,
                                   const QuestionTemplates& templates);

/// One negative per input question: the attribute word in the text is
/// replaced by a seeded-random opposite from the lexicon; gold becomes No.
/// Missing lexicon entries are an error naming the term (no silent skips).
std::vector<Question> gen_negative(const std::vector<Question>& questions,
                                   const AntonymLexicon& lexicon, std::uint64_t seed);

struct SplitResult {
    std::vector<Question> train, test;
};

/// Seeded 9:1 split grouped by image_id: all questions of one image land on
/// the same side, with the train side filled to floor(fraction * N).
SplitResult split_instructions(const std::vector<Question>& questions, std::uint64_t seed,
                               double train_fraction = 0.9);

/// Leading-token reading of a free-text answer: quotes and punctuation are
/// trimmed, the first word decides ("yes." -> Yes, "No, the..." -> No),
/// anything else is Unparseable.
Answer parse_answer(const std::string& response_text);

/// Joins responses to questions by id (missing or extra ids are an error
/// listing them) and computes per-polarity accuracies and their mean.
EvalReport score(const std::vector<Question>& questions, const std::vector<Response>& responses);

// ---------------------------------------------------------------------------
// Question tokenization for the Yes/No head
// ---------------------------------------------------------------------------

/// Lowercased alphanumeric words; punctuation separates tokens.
std::vector<std::string> tokenize_question(const std::string& text);

/// Closed vocabulary derived from the template wording plus every lexicon
/// term and opposite, so any question the harness can generate encodes
/// cleanly. Unknown words are an error naming the word.
class Vocabulary {
public:
    static Vocabulary from_benchmark(const QuestionTemplates& templates,
                                     const AntonymLexicon& lexicon);
    int id_of(const std::string& token) const;
    std::vector<int> encode(const std::string& question_text) const;
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::map<std::string, int> ids_;
};

// ---------------------------------------------------------------------------
// File formats (JSONL records, UTF-8; see README)
// ---------------------------------------------------------------------------

void save_records(const std::string& path, const std::vector<AttributeRecord>& records);
std::vector<AttributeRecord> load_records(const std::string& path);

void save_questions(const std::string& path, const std::vector<Question>& questions);
std::vector<Question> load_questions(const std::string& path);

void save_responses(const std::string& path, const std::vector<Response>& responses);
std::vector<Response> load_responses(const std::string& path);

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

}  // namespace miavlm
