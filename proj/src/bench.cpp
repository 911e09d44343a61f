#include "miavlm/bench.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "miavlm/rng.hpp"

namespace miavlm {

namespace {

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::string join_ids(const std::vector<std::string>& ids) {
    std::string out;
    for (const auto& id : ids) out += (out.empty() ? "" : ", ") + id;
    return out;
}

}  // namespace

std::string to_string(Polarity p) { return p == Polarity::kPositive ? "positive" : "negative"; }
std::string to_string(GoldAnswer g) { return g == GoldAnswer::kYes ? "Yes" : "No"; }
std::string to_string(Answer a) {
    switch (a) {
        case Answer::kYes: return "Yes";
        case Answer::kNo: return "No";
        default: return "Unparseable";
    }
}

void Question::validate() const {
    if (polarity == Polarity::kPositive) {
        if (gold != GoldAnswer::kYes)
            throw std::invalid_argument("question " + id + ": positive polarity requires gold Yes");
        if (!replaced_with.empty())
            throw std::invalid_argument("question " + id +
                                        ": positive question must not carry a replacement");
    } else {
        if (gold != GoldAnswer::kNo)
            throw std::invalid_argument("question " + id + ": negative polarity requires gold No");
        if (replaced_with.empty())
            throw std::invalid_argument("question " + id + ": negative question needs a replacement");
        if (lower(replaced_with) == lower(source_attribute))
            throw std::invalid_argument("question " + id +
                                        ": replacement equals the source attribute");
    }
}

// AntonymLexicon -------------------------------------------------------------

AntonymLexicon AntonymLexicon::builtin() {
    AntonymLexicon lex;
    const std::pair<const char*, const char*> pairs[] = {
        {"pointed", "rounded"}, {"long", "short"},  {"dark", "light"},
        {"large", "small"},     {"thick", "thin"},  {"narrow", "wide"},
    };
    for (const auto& [a, b] : pairs) {
        lex.add(a, {b});
        lex.add(b, {a});
    }
    return lex;
}

void AntonymLexicon::add(const std::string& term, std::vector<std::string> opposites) {
    const std::string key = lower(term);
    if (opposites.empty())
        throw std::invalid_argument("lexicon: term '" + term + "' has no opposites");
    for (const auto& o : opposites)
        if (lower(o) == key)
            throw std::invalid_argument("lexicon: term '" + term + "' maps to itself");
    entries_[key] = std::move(opposites);
}

const std::vector<std::string>* AntonymLexicon::find(const std::string& term) const {
    auto it = entries_.find(lower(term));
    return it == entries_.end() ? nullptr : &it->second;
}

AntonymLexicon AntonymLexicon::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("lexicon: cannot open " + path);
    nlohmann::json j;
    is >> j;
    AntonymLexicon lex;
    for (auto& [term, opposites] : j.items())
        lex.add(term, opposites.get<std::vector<std::string>>());
    return lex;
}

void AntonymLexicon::save(const std::string& path) const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [term, opposites] : entries_) j[term] = opposites;
    std::ofstream os(path);
    if (!os) throw std::runtime_error("lexicon: cannot open " + path + " for writing");
    os << j.dump(2) << "\n";
}

// QuestionTemplates ----------------------------------------------------------

QuestionTemplates QuestionTemplates::builtin() {
    QuestionTemplates t;
    t.by_category = {
        {"chin_shape", "Does this person have a {} chin?"},
        {"hair_length", "Does this person have {} hair?"},
        {"hair_shade", "Does this person have {} hair?"},
        {"eye_size", "Does this person have {} eyes?"},
        {"brow_weight", "Does this person have {} eyebrows?"},
        {"face_width", "Does this person have a {} face?"},
    };
    return t;
}

// Generation -----------------------------------------------------------------

std::vector<Question> gen_positive(const std::vector<AttributeRecord>& records,
                                   const QuestionTemplates& templates) {
    std::vector<Question> out;
    for (const auto& rec : records) {
        if (rec.attribute_terms.empty())
            throw std::invalid_argument("record " + rec.image_id + ": no attribute terms");
        for (const auto& term : rec.attribute_terms) {
            if (term.end > rec.caption.size() || term.begin >= term.end ||
                rec.caption.substr(term.begin, term.end - term.begin) != term.term)
                throw std::invalid_argument("record " + rec.image_id + ": span of term '" +
                                            term.term + "' does not index the caption");
            auto it = templates.by_category.find(term.category);
            if (it == templates.by_category.end())
                throw std::invalid_argument("gen_positive: no template for category '" +
                                            term.category + "' (term '" + term.term + "')");
            std::string text = it->second;
            const auto pos = text.find("{}");
            if (pos == std::string::npos)
                throw std::invalid_argument("gen_positive: template for '" + term.category +
                                            "' lacks a {} placeholder");
            text.replace(pos, 2, term.term);

            Question q;
            q.id = rec.image_id + ":" + term.category + ":" + term.term + ":pos";
            q.image_id = rec.image_id;
            q.text = std::move(text);
            q.polarity = Polarity::kPositive;
            q.gold = GoldAnswer::kYes;
            q.source_attribute = term.term;
            q.category = term.category;
            q.validate();
            out.push_back(std::move(q));
        }
    }
    return out;
}

std::vector<Question> gen_negative(const std::vector<Question>& questions,
                                   const AntonymLexicon& lexicon, std::uint64_t seed) {
    std::mt19937_64 rng(derive_seed(seed, "gen_negative"));
    std::vector<Question> out;
    out.reserve(questions.size());
    for (const auto& q : questions) {
        // For a negative input the word actually present in the text is the
        // previous replacement, so double application round-trips under a
        // symmetric lexicon.
        const std::string& present =
            q.polarity == Polarity::kNegative ? q.replaced_with : q.source_attribute;
        const auto* opposites = lexicon.find(present);
        if (opposites == nullptr)
            throw std::invalid_argument("gen_negative: no lexicon entry for term '" + present +
                                        "' (question " + q.id + ")");
        const std::string& replacement = (*opposites)[bounded(rng, opposites->size())];
        const auto pos = q.text.find(present);
        if (pos == std::string::npos)
            throw std::invalid_argument("gen_negative: term '" + present +
                                        "' not found in question text (question " + q.id + ")");

        Question neg;
        neg.id = q.id;
        const std::string pos_suffix = ":pos";
        if (neg.id.size() >= pos_suffix.size() &&
            neg.id.compare(neg.id.size() - pos_suffix.size(), pos_suffix.size(), pos_suffix) == 0)
            neg.id.replace(neg.id.size() - pos_suffix.size(), pos_suffix.size(), ":neg");
        else
            neg.id += ":neg";
        neg.image_id = q.image_id;
        neg.text = q.text;
        neg.text.replace(pos, present.size(), replacement);
        neg.polarity = Polarity::kNegative;
        neg.gold = GoldAnswer::kNo;
        neg.source_attribute = present;
        neg.category = q.category;
        neg.replaced_with = replacement;
        neg.validate();
        out.push_back(std::move(neg));
    }
    return out;
}

SplitResult split_instructions(const std::vector<Question>& questions, std::uint64_t seed,
                               double train_fraction) {
    if (questions.empty()) throw std::invalid_argument("split_instructions: empty question list");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw std::invalid_argument("split_instructions: fraction must lie in (0, 1)");

    std::vector<std::string> images;
    std::map<std::string, std::size_t> group_size;
    for (const auto& q : questions) {
        auto [it, inserted] = group_size.emplace(q.image_id, 0);
        if (inserted) images.push_back(q.image_id);
        ++it->second;
    }

    std::mt19937_64 rng(derive_seed(seed, "split"));
    shuffle_inplace(images, rng);

    const auto target =
        static_cast<std::size_t>(train_fraction * static_cast<double>(questions.size()));
    std::map<std::string, bool> in_train;
    std::size_t train_count = 0;
    for (const auto& img : images) {
        const bool train = train_count < target;
        in_train[img] = train;
        if (train) train_count += group_size[img];
    }

    SplitResult result;
    for (const auto& q : questions)
        (in_train[q.image_id] ? result.train : result.test).push_back(q);
    return result;
}

Answer parse_answer(const std::string& response_text) {
    std::size_t i = 0;
    const auto is_word_char = [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) != 0;
    };
    while (i < response_text.size() && !is_word_char(response_text[i])) ++i;
    std::string token;
    while (i < response_text.size() && is_word_char(response_text[i]))
        token += static_cast<char>(std::tolower(static_cast<unsigned char>(response_text[i++])));
    if (token == "yes") return Answer::kYes;
    if (token == "no") return Answer::kNo;
    return Answer::kUnparseable;
}

EvalReport score(const std::vector<Question>& questions, const std::vector<Response>& responses) {
    std::map<std::string, const Response*> by_id;
    std::vector<std::string> duplicate;
    for (const auto& r : responses)
        if (!by_id.emplace(r.id, &r).second) duplicate.push_back(r.id);
    if (!duplicate.empty())
        throw std::invalid_argument("score: duplicate response ids: " + join_ids(duplicate));

    std::vector<std::string> missing;
    EvalReport report;
    for (const auto& q : questions) {
        auto it = by_id.find(q.id);
        if (it == by_id.end()) {
            missing.push_back(q.id);
            continue;
        }
        const Answer parsed = parse_answer(it->second->text);
        by_id.erase(it);

        auto& c = report.counts;
        ++c.total;
        const bool correct = (q.gold == GoldAnswer::kYes && parsed == Answer::kYes) ||
                             (q.gold == GoldAnswer::kNo && parsed == Answer::kNo);
        if (q.polarity == Polarity::kPositive) {
            ++c.positives;
            if (parsed == Answer::kYes) ++c.pos_yes;
            else if (parsed == Answer::kNo) ++c.pos_no;
            else ++c.pos_unparseable;
            if (correct) ++c.positive_correct;
        } else {
            ++c.negatives;
            if (parsed == Answer::kYes) ++c.neg_yes;
            else if (parsed == Answer::kNo) ++c.neg_no;
            else ++c.neg_unparseable;
            if (correct) ++c.negative_correct;
        }
        report.per_question.push_back({q.id, q.gold, parsed, correct});
    }
    if (!missing.empty())
        throw std::invalid_argument("score: no response for question ids: " + join_ids(missing));
    if (!by_id.empty()) {
        std::vector<std::string> extra;
        for (const auto& [id, r] : by_id) extra.push_back(id);
        throw std::invalid_argument("score: responses with no matching question: " +
                                    join_ids(extra));
    }

    const auto& c = report.counts;
    report.positive_accuracy =
        c.positives == 0 ? 0.0
                         : static_cast<double>(c.positive_correct) / static_cast<double>(c.positives);
    report.negative_accuracy =
        c.negatives == 0 ? 0.0
                         : static_cast<double>(c.negative_correct) / static_cast<double>(c.negatives);
    report.hooa = (report.positive_accuracy + report.negative_accuracy) / 2.0;
    return report;
}

// Tokenization ----------------------------------------------------------------

std::vector<std::string> tokenize_question(const std::string& text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char ch : text) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            current += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

Vocabulary Vocabulary::from_benchmark(const QuestionTemplates& templates,
                                      const AntonymLexicon& lexicon) {
    std::vector<std::string> words;
    for (const auto& [category, pattern] : templates.by_category) {
        std::string stripped = pattern;
        const auto pos = stripped.find("{}");
        if (pos != std::string::npos) stripped.erase(pos, 2);
        for (auto& w : tokenize_question(stripped)) words.push_back(std::move(w));
    }
    for (const auto& [term, opposites] : lexicon.entries()) {
        words.push_back(lower(term));
        for (const auto& o : opposites) words.push_back(lower(o));
    }
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());

    Vocabulary v;
    v.tokens_ = std::move(words);
    for (std::size_t i = 0; i < v.tokens_.size(); ++i)
        v.ids_[v.tokens_[i]] = static_cast<int>(i);
    return v;
}

int Vocabulary::id_of(const std::string& token) const {
    auto it = ids_.find(token);
    if (it == ids_.end())
        throw std::invalid_argument("vocabulary: unknown word '" + token + "'");
    return it->second;
}

std::vector<int> Vocabulary::encode(const std::string& question_text) const {
    std::vector<int> out;
    for (const auto& tok : tokenize_question(question_text)) out.push_back(id_of(tok));
    if (out.empty()) throw std::invalid_argument("vocabulary: question has no tokens");
    return out;
}

// File formats ----------------------------------------------------------------

namespace {

std::vector<nlohmann::json> read_jsonl(const std::string& path, const char* what) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error(std::string(what) + ": cannot open " + path);
    std::vector<nlohmann::json> lines;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            lines.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(std::string(what) + ": parse error at " + path + ":" +
                                     std::to_string(lineno) + ": " + e.what());
        }
    }
    return lines;
}

std::ofstream open_out(const std::string& path, const char* what) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error(std::string(what) + ": cannot open " + path + " for writing");
    return os;
}

}  // namespace

void save_records(const std::string& path, const std::vector<AttributeRecord>& records) {
    auto os = open_out(path, "records");
    for (const auto& r : records) {
        nlohmann::json terms = nlohmann::json::array();
        for (const auto& t : r.attribute_terms)
            terms.push_back({{"term", t.term},
                             {"begin", t.begin},
                             {"end", t.end},
                             {"category", t.category}});
        os << nlohmann::json{{"image_id", r.image_id},
                             {"caption", r.caption},
                             {"attribute_terms", terms}}
                  .dump()
           << "\n";
    }
}

std::vector<AttributeRecord> load_records(const std::string& path) {
    std::vector<AttributeRecord> out;
    for (const auto& j : read_jsonl(path, "records")) {
        AttributeRecord r;
        r.image_id = j.at("image_id").get<std::string>();
        r.caption = j.at("caption").get<std::string>();
        for (const auto& t : j.at("attribute_terms")) {
            AttributeTerm term;
            term.term = t.at("term").get<std::string>();
            term.begin = t.at("begin").get<std::size_t>();
            term.end = t.at("end").get<std::size_t>();
            term.category = t.at("category").get<std::string>();
            r.attribute_terms.push_back(std::move(term));
        }
        out.push_back(std::move(r));
    }
    return out;
}

void save_questions(const std::string& path, const std::vector<Question>& questions) {
    auto os = open_out(path, "questions");
    for (const auto& q : questions) {
        nlohmann::json j{{"id", q.id},
                         {"image_id", q.image_id},
                         {"text", q.text},
                         {"polarity", to_string(q.polarity)},
                         {"gold", to_string(q.gold)},
                         {"source_attribute", q.source_attribute},
                         {"category", q.category}};
        if (!q.replaced_with.empty()) j["replaced_with"] = q.replaced_with;
        os << j.dump() << "\n";
    }
}

std::vector<Question> load_questions(const std::string& path) {
    std::vector<Question> out;
    for (const auto& j : read_jsonl(path, "questions")) {
        Question q;
        q.id = j.at("id").get<std::string>();
        q.image_id = j.at("image_id").get<std::string>();
        q.text = j.at("text").get<std::string>();
        q.polarity = j.at("polarity").get<std::string>() == "positive" ? Polarity::kPositive
                                                                       : Polarity::kNegative;
        q.gold = j.at("gold").get<std::string>() == "Yes" ? GoldAnswer::kYes : GoldAnswer::kNo;
        q.source_attribute = j.value("source_attribute", "");
        q.category = j.value("category", "");
        q.replaced_with = j.value("replaced_with", "");
        q.validate();
        out.push_back(std::move(q));
    }
    return out;
}

void save_responses(const std::string& path, const std::vector<Response>& responses) {
    auto os = open_out(path, "responses");
    for (const auto& r : responses)
        os << nlohmann::json{{"id", r.id}, {"response_text", r.text}}.dump() << "\n";
}

std::vector<Response> load_responses(const std::string& path) {
    std::vector<Response> out;
    for (const auto& j : read_jsonl(path, "responses"))
        out.push_back({j.at("id").get<std::string>(), j.at("response_text").get<std::string>()});
    return out;
}

nlohmann::json report_to_json(const EvalReport& report) {
    const auto& c = report.counts;
    nlohmann::json per_question = nlohmann::json::array();
    for (const auto& o : report.per_question)
        per_question.push_back({{"id", o.id},
                                {"gold", to_string(o.gold)},
                                {"parsed", to_string(o.parsed)},
                                {"correct", o.correct}});
    return {{"positive_accuracy", report.positive_accuracy},
            {"negative_accuracy", report.negative_accuracy},
            {"hooa", report.hooa},
            {"counts",
             {{"total", c.total},
              {"positives", c.positives},
              {"negatives", c.negatives},
              {"positive_correct", c.positive_correct},
              {"negative_correct", c.negative_correct},
              {"pos_yes", c.pos_yes},
              {"pos_no", c.pos_no},
              {"pos_unparseable", c.pos_unparseable},
              {"neg_yes", c.neg_yes},
              {"neg_no", c.neg_no},
              {"neg_unparseable", c.neg_unparseable}}},
            {"per_question", per_question}};
}

EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport report;
    report.positive_accuracy = j.at("positive_accuracy").get<double>();
    report.negative_accuracy = j.at("negative_accuracy").get<double>();
    report.hooa = j.at("hooa").get<double>();
    const auto& c = j.at("counts");
    report.counts.total = c.at("total").get<std::size_t>();
    report.counts.positives = c.at("positives").get<std::size_t>();
    report.counts.negatives = c.at("negatives").get<std::size_t>();
    report.counts.positive_correct = c.at("positive_correct").get<std::size_t>();
    report.counts.negative_correct = c.at("negative_correct").get<std::size_t>();
    report.counts.pos_yes = c.at("pos_yes").get<std::size_t>();
    report.counts.pos_no = c.at("pos_no").get<std::size_t>();
    report.counts.pos_unparseable = c.at("pos_unparseable").get<std::size_t>();
    report.counts.neg_yes = c.at("neg_yes").get<std::size_t>();
    report.counts.neg_no = c.at("neg_no").get<std::size_t>();
    report.counts.neg_unparseable = c.at("neg_unparseable").get<std::size_t>();
    for (const auto& o : j.at("per_question")) {
        QuestionOutcome outcome;
        outcome.id = o.at("id").get<std::string>();
        outcome.gold =
            o.at("gold").get<std::string>() == "Yes" ? GoldAnswer::kYes : GoldAnswer::kNo;
        const std::string parsed = o.at("parsed").get<std::string>();
        outcome.parsed = parsed == "Yes"   ? Answer::kYes
                         : parsed == "No"  ? Answer::kNo
                                           : Answer::kUnparseable;
        outcome.correct = o.at("correct").get<bool>();
        report.per_question.push_back(std::move(outcome));
    }
    return report;
}

}  // namespace miavlm
