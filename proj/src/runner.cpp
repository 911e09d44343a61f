#include "miavlm/runner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "miavlm/rng.hpp"
#include "miavlm/version.hpp"

namespace miavlm {

nlohmann::json run_config_to_json(const RunConfig& config) {
    const auto& m = config.map;
    return {{"map",
             {{"l", m.l},
              {"d", m.d},
              {"m", m.m},
              {"num_blocks", m.num_blocks},
              {"num_attn_heads", m.num_attn_heads},
              {"d_enc", m.d_enc},
              {"d_hidden_decomposer", m.d_hidden_decomposer},
              {"d_ff", m.d_ff},
              {"max_views", m.max_views},
              {"pre_norm", m.pre_norm},
              {"sampler_softmax", m.sampler_softmax},
              {"sampler_query",
               m.sampler_query == SamplerQuery::kPrompts ? "prompts" : "extractor"}}},
            {"epochs", config.epochs},
            {"lr", config.lr},
            {"min_lr", config.min_lr},
            {"batch_size", config.batch_size},
            {"seed", config.seed},
            {"include_negatives", config.include_negatives},
            {"scenes_path", config.scenes_path},
            {"questions_path", config.questions_path},
            {"out_dir", config.out_dir}};
}

// Model config file -----------------------------------------------------------

void write_map_config(const std::string& path, const MapConfig& config) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("config: cannot open " + path + " for writing");
    os << "# MAP model configuration\n";
    os << "l = " << config.l << "\n";
    os << "d = " << config.d << "\n";
    os << "m = " << config.m << "\n";
    os << "num_blocks = " << config.num_blocks << "\n";
    os << "num_attn_heads = " << config.num_attn_heads << "\n";
    os << "d_enc = " << config.d_enc << "\n";
    os << "d_hidden_decomposer = " << config.d_hidden_decomposer << "\n";
    os << "d_ff = " << config.d_ff << "\n";
    os << "max_views = " << config.max_views << "\n";
    os << "pre_norm = " << (config.pre_norm ? "true" : "false") << "\n";
    os << "sampler_softmax = " << (config.sampler_softmax ? "true" : "false") << "\n";
    os << "sampler_query = "
       << (config.sampler_query == SamplerQuery::kPrompts ? "prompts" : "extractor") << "\n";
}

MapConfig read_map_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    MapConfig config = MapConfig::desk_scale();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) continue;
        auto parse_size = [&](const std::string& v) -> std::size_t {
            try {
                return static_cast<std::size_t>(std::stoull(v));
            } catch (...) {
                throw std::runtime_error("config: bad value '" + v + "' for " + key + " at " +
                                         path + ":" + std::to_string(lineno));
            }
        };
        auto parse_bool = [&](const std::string& v) {
            if (v == "true" || v == "1") return true;
            if (v == "false" || v == "0") return false;
            throw std::runtime_error("config: bad boolean '" + v + "' for " + key + " at " + path +
                                     ":" + std::to_string(lineno));
        };
        if (key == "l") config.l = parse_size(value);
        else if (key == "d") config.d = parse_size(value);
        else if (key == "m") config.m = parse_size(value);
        else if (key == "num_blocks") config.num_blocks = parse_size(value);
        else if (key == "num_attn_heads") config.num_attn_heads = parse_size(value);
        else if (key == "d_enc") config.d_enc = parse_size(value);
        else if (key == "d_hidden_decomposer") config.d_hidden_decomposer = parse_size(value);
        else if (key == "d_ff") config.d_ff = parse_size(value);
        else if (key == "max_views") config.max_views = parse_size(value);
        else if (key == "pre_norm") config.pre_norm = parse_bool(value);
        else if (key == "sampler_softmax") config.sampler_softmax = parse_bool(value);
        else if (key == "sampler_query") {
            if (value == "prompts") config.sampler_query = SamplerQuery::kPrompts;
            else if (value == "extractor") config.sampler_query = SamplerQuery::kExtractorOutputs;
            else
                throw std::runtime_error("config: sampler_query must be 'prompts' or 'extractor', got '" +
                                         value + "'");
        } else {
            throw std::runtime_error("config: unknown key '" + key + "' at " + path + ":" +
                                     std::to_string(lineno));
        }
    }
    config.validate();
    return config;
}

// Model -----------------------------------------------------------------------

ModelParams init_model(const MapConfig& config, std::size_t vocab_size, std::uint64_t seed) {
    ModelParams model;
    model.map = init_map_params(config, seed);
    model.head = init_head_params(vocab_size, config, seed);
    // Baseline slot gains are intentionally sized so a random checkpoint
    // already shows order sensitivity.
    std::mt19937_64 rng(derive_seed(seed, "concat_pos"));
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> pos(config.max_views * config.d);
    for (auto& v : pos) v = dist(rng);
    model.concat_pos = Tensor::from_data({config.max_views, config.d}, std::move(pos), true);
    return model;
}

std::vector<NamedParam> named_params(const ModelParams& model) {
    auto out = named_params(model.map);
    for (auto& p : named_params(model.head)) out.push_back(p);
    out.push_back({"baseline.concat_pos", model.concat_pos});
    return out;
}

std::size_t worker_count() {
    const char* env = std::getenv("MIAVLM_WORKERS");
    if (env == nullptr) return 1;
    const long v = std::strtol(env, nullptr, 10);
    if (v < 1) return 1;
    return static_cast<std::size_t>(v);
}

// Forward helpers --------------------------------------------------------------

namespace {

std::vector<ImageEmbedding> project_scene(const SceneEmbeddings& scene, const MapParams& params,
                                          const MapConfig& config,
                                          const std::vector<std::size_t>* view_order) {
    std::vector<std::size_t> order;
    if (view_order != nullptr) {
        if (view_order->size() != scene.views.size())
            throw std::invalid_argument("scene " + scene.scene_id + ": ordering of size " +
                                        std::to_string(view_order->size()) + " for " +
                                        std::to_string(scene.views.size()) + " views");
        order = *view_order;
    } else {
        order.resize(scene.views.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    }

    std::vector<ImageEmbedding> out;
    out.reserve(order.size());
    for (std::size_t idx : order) {
        const RawView& raw = scene.views.at(idx);
        if (raw.d_enc != config.d_enc)
            throw std::invalid_argument("view " + raw.view_id + ": d_enc " +
                                        std::to_string(raw.d_enc) + " does not match config d_enc " +
                                        std::to_string(config.d_enc));
        out.push_back(project_embedding(
            raw.view_id, Tensor::from_data({raw.d_enc}, raw.cls),
            Tensor::from_data({raw.patch_count(), raw.d_enc}, raw.patches), params.proj_w,
            params.proj_b));
    }
    return out;
}

Tensor fuse_views(const std::vector<ImageEmbedding>& views, const ModelParams& model,
                  const MapConfig& config, FusionMode mode) {
    if (mode == FusionMode::kMap) return map_forward(views, model.map, config).fused_prompts;

    // Concatenation baseline: per-view outputs are stacked in arrival order,
    // each modulated by the gain of its slot. Multiplicative slot
    // conditioning keeps the result order-dependent even under the head's
    // mean pooling (an additive offset would cancel there, and attention
    // over a plain concatenation is itself permutation-invariant).
    if (views.size() > config.max_views)
        throw std::invalid_argument("concat baseline: " + std::to_string(views.size()) +
                                    " views exceed max_views " + std::to_string(config.max_views));
    const auto outputs =
        visual_extract_all(model.map.prompts, views, model.map.blocks, model.map.final_norm, config);
    const Tensor unit_gain = Tensor::full({config.d}, 1.0);
    std::vector<Tensor> parts;
    parts.reserve(outputs.size());
    for (std::size_t k = 0; k < outputs.size(); ++k) {
        const Tensor slot = reshape(slice_rows(model.concat_pos, k, k + 1), {config.d});
        parts.push_back(mul_rowwise(outputs[k], add(unit_gain, slot)));
    }
    return concat_rows(parts);
}

const SceneEmbeddings& scene_for(const std::map<std::string, const SceneEmbeddings*>& index,
                                 const Question& q) {
    auto it = index.find(q.image_id);
    if (it == index.end())
        throw std::invalid_argument("no scene with id '" + q.image_id + "' for question " + q.id);
    return *it->second;
}

std::map<std::string, const SceneEmbeddings*> index_scenes(
    const std::vector<SceneEmbeddings>& scenes) {
    std::map<std::string, const SceneEmbeddings*> index;
    for (const auto& s : scenes) index[s.scene_id] = &s;
    return index;
}

template <typename Fn>
void parallel_over(std::size_t count, Fn&& fn) {
    const std::size_t workers = std::min(worker_count(), count == 0 ? std::size_t{1} : count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < count; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace

// Training ----------------------------------------------------------------------

TrainLog train_model(ModelParams& model, const std::vector<SceneEmbeddings>& scenes,
                     const std::vector<Question>& questions, const Vocabulary& vocab,
                     const RunConfig& config) {
    if (config.epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
    if (config.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");

    struct Item {
        const Question* question;
        const SceneEmbeddings* scene;
        std::vector<int> tokens;
        std::size_t target;
    };
    const auto index = index_scenes(scenes);
    std::vector<Item> items;
    for (const auto& q : questions) {
        if (!config.include_negatives && q.polarity == Polarity::kNegative) continue;
        Item item;
        item.question = &q;
        item.scene = &scene_for(index, q);
        item.tokens = vocab.encode(q.text);
        item.target = q.gold == GoldAnswer::kYes ? kAnswerYes : kAnswerNo;
        items.push_back(std::move(item));
    }
    if (items.empty()) throw std::invalid_argument("train: no training items after filtering");

    std::vector<Tensor> trainable;
    for (auto& p : named_params(model)) trainable.push_back(p.tensor);
    AdamOptimizer optimizer(trainable, {config.lr});

    TrainLog log;
    if (config.epochs == 0) {
        log.lr_trace.push_back(config.lr);
    } else {
        const CosineSchedule schedule{config.lr, config.epochs, config.min_lr};
        for (int epoch = 0; epoch <= config.epochs; ++epoch)
            log.lr_trace.push_back(cosine_lr(schedule, epoch));
    }

    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const double lr = log.lr_trace[static_cast<std::size_t>(epoch)];
        optimizer.set_lr(lr);
        std::mt19937_64 shuffle_rng(
            derive_seed(config.seed, "epoch_shuffle", static_cast<std::uint64_t>(epoch)));
        shuffle_inplace(order, shuffle_rng);

        double epoch_loss = 0.0;
        std::size_t cursor = 0;
        while (cursor < order.size()) {
            const std::size_t batch_end =
                std::min(order.size(), cursor + static_cast<std::size_t>(config.batch_size));
            Tensor batch_sum;
            for (std::size_t b = cursor; b < batch_end; ++b) {
                const Item& item = items[order[b]];
                const auto views = project_scene(*item.scene, model.map, config.map, nullptr);
                const auto fused = map_forward(views, model.map, config.map).fused_prompts;
                const Tensor loss =
                    cross_entropy(yes_no_head(fused, item.tokens, model.head), item.target);
                batch_sum = batch_sum.defined() ? add(batch_sum, loss) : loss;
            }
            const double batch_total = batch_sum.value();
            if (!std::isfinite(batch_total))
                throw std::runtime_error("train: non-finite loss at epoch " +
                                         std::to_string(epoch) + ", item " +
                                         std::to_string(cursor) + "; aborting");
            epoch_loss += batch_total;
            Tensor batch_loss = scale(batch_sum, 1.0 / static_cast<double>(batch_end - cursor));
            optimizer.zero_grad();
            batch_loss.backward();
            optimizer.step();
            cursor = batch_end;
        }
        log.epoch_losses.push_back(epoch_loss / static_cast<double>(items.size()));
    }
    return log;
}

// Inference ---------------------------------------------------------------------

Answer decide_question(const ModelParams& model, const MapConfig& config, const Vocabulary& vocab,
                       const SceneEmbeddings& scene, const Question& question, FusionMode mode,
                       const std::vector<std::size_t>* view_order) {
    const auto views = project_scene(scene, model.map, config, view_order);
    const Tensor fused = fuse_views(views, model, config, mode);
    const Tensor logits = yes_no_head(fused, vocab.encode(question.text), model.head);
    return logits.at(kAnswerNo) > logits.at(kAnswerYes) ? Answer::kNo : Answer::kYes;
}

std::vector<Response> run_model(const ModelParams& model, const MapConfig& config,
                                const Vocabulary& vocab,
                                const std::vector<SceneEmbeddings>& scenes,
                                const std::vector<Question>& questions, FusionMode mode,
                                const std::vector<std::size_t>* view_order) {
    const auto index = index_scenes(scenes);
    // Resolve scenes up front so join errors surface before any work runs.
    std::vector<const SceneEmbeddings*> resolved;
    resolved.reserve(questions.size());
    for (const auto& q : questions) resolved.push_back(&scene_for(index, q));

    std::vector<Response> responses(questions.size());
    parallel_over(questions.size(), [&](std::size_t i) {
        const Answer a =
            decide_question(model, config, vocab, *resolved[i], questions[i], mode, view_order);
        responses[i] = {questions[i].id, a == Answer::kYes ? "Yes" : "No"};
    });
    return responses;
}

EvalReport evaluate_model(const ModelParams& model, const MapConfig& config,
                          const Vocabulary& vocab, const std::vector<SceneEmbeddings>& scenes,
                          const std::vector<Question>& questions, FusionMode mode) {
    return score(questions, run_model(model, config, vocab, scenes, questions, mode));
}

// Order experiment ----------------------------------------------------------------

namespace {

double population_variance(const std::vector<double>& values) {
    if (values.empty()) return 0.0;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    return var / static_cast<double>(values.size());
}

OrderModelResult run_orderings(const ModelParams& model, const MapConfig& config,
                               const Vocabulary& vocab,
                               const std::vector<SceneEmbeddings>& scenes,
                               const std::vector<Question>& questions, FusionMode mode,
                               const std::vector<std::vector<std::size_t>>& orderings,
                               const std::string& label) {
    OrderModelResult result;
    result.label = label;
    std::vector<std::vector<std::string>> decisions;
    std::vector<double> metrics;
    for (std::size_t s = 0; s < orderings.size(); ++s) {
        const auto responses =
            run_model(model, config, vocab, scenes, questions, mode, &orderings[s]);
        const auto report = score(questions, responses);

        OrderRunEntry entry;
        entry.shuffle_index = s;
        entry.ordering = orderings[s];
        entry.metric = report.positive_accuracy;
        std::vector<std::string> texts;
        texts.reserve(responses.size());
        for (const auto& r : responses) texts.push_back(r.text);
        if (s == 0) {
            entry.agreement_with_identity = 1.0;
        } else {
            std::size_t same = 0;
            for (std::size_t i = 0; i < texts.size(); ++i)
                if (texts[i] == decisions[0][i]) ++same;
            entry.agreement_with_identity =
                texts.empty() ? 1.0 : static_cast<double>(same) / static_cast<double>(texts.size());
        }
        decisions.push_back(std::move(texts));
        metrics.push_back(entry.metric);
        result.runs.push_back(std::move(entry));
    }
    result.variance = population_variance(metrics);
    return result;
}

}  // namespace

OrderExperimentReport order_experiment(const ModelParams& model, const MapConfig& config,
                                       const Vocabulary& vocab,
                                       const std::vector<SceneEmbeddings>& scenes,
                                       const std::vector<Question>& positive_questions,
                                       std::size_t shuffles, std::uint64_t seed) {
    if (scenes.empty()) throw std::invalid_argument("order_experiment: no scenes");
    for (const auto& s : scenes)
        if (s.views.size() != 9)
            throw std::invalid_argument("order_experiment: scene " + s.scene_id + " has " +
                                        std::to_string(s.views.size()) +
                                        " views; exactly 9 are required");
    for (const auto& q : positive_questions)
        if (q.polarity != Polarity::kPositive)
            throw std::invalid_argument("order_experiment: question " + q.id +
                                        " is not a positive question");

    std::vector<std::vector<std::size_t>> orderings;
    std::vector<std::size_t> identity(9);
    for (std::size_t i = 0; i < 9; ++i) identity[i] = i;
    orderings.push_back(identity);
    std::mt19937_64 rng(derive_seed(seed, "order_experiment"));
    for (std::size_t s = 0; s < shuffles; ++s) orderings.push_back(random_permutation(9, rng));

    OrderExperimentReport report;
    report.shuffles = shuffles;
    report.seed = seed;
    report.miavlm = run_orderings(model, config, vocab, scenes, positive_questions,
                                  FusionMode::kMap, orderings, "miavlm");
    report.baseline = run_orderings(model, config, vocab, scenes, positive_questions,
                                    FusionMode::kConcatBaseline, orderings, "concat_baseline");
    return report;
}

// Reports --------------------------------------------------------------------------

namespace {

nlohmann::json order_model_to_json(const OrderModelResult& r) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& e : r.runs)
        runs.push_back({{"shuffle_index", e.shuffle_index},
                        {"ordering", e.ordering},
                        {"metric", e.metric},
                        {"agreement_with_identity", e.agreement_with_identity}});
    return {{"label", r.label}, {"variance", r.variance}, {"runs", runs}};
}

OrderModelResult order_model_from_json(const nlohmann::json& j) {
    OrderModelResult r;
    r.label = j.at("label").get<std::string>();
    r.variance = j.at("variance").get<double>();
    for (const auto& e : j.at("runs")) {
        OrderRunEntry entry;
        entry.shuffle_index = e.at("shuffle_index").get<std::size_t>();
        entry.ordering = e.at("ordering").get<std::vector<std::size_t>>();
        entry.metric = e.at("metric").get<double>();
        entry.agreement_with_identity = e.at("agreement_with_identity").get<double>();
        r.runs.push_back(std::move(entry));
    }
    return r;
}

nlohmann::json report_envelope(const RunConfig& config) {
    return {{"tool_version", kVersion}, {"seed", config.seed}, {"run_config", run_config_to_json(config)}};
}

}  // namespace

nlohmann::json train_log_to_json(const TrainLog& log, const RunConfig& config) {
    auto j = report_envelope(config);
    j["kind"] = "train_log";
    j["epoch_losses"] = log.epoch_losses;
    j["lr_trace"] = log.lr_trace;
    return j;
}

nlohmann::json eval_report_to_json(const EvalReport& report, const RunConfig& config) {
    auto j = report_envelope(config);
    j["kind"] = "evaluation";
    j["eval"] = report_to_json(report);
    return j;
}

nlohmann::json order_report_to_json(const OrderExperimentReport& report,
                                    const RunConfig& config) {
    auto j = report_envelope(config);
    j["kind"] = "order_experiment";
    j["shuffles"] = report.shuffles;
    j["order_seed"] = report.seed;
    j["models"] = nlohmann::json::array(
        {order_model_to_json(report.miavlm), order_model_to_json(report.baseline)});
    return j;
}

OrderExperimentReport order_report_from_json(const nlohmann::json& j) {
    OrderExperimentReport report;
    report.shuffles = j.at("shuffles").get<std::size_t>();
    report.seed = j.at("order_seed").get<std::uint64_t>();
    const auto& models = j.at("models");
    if (models.size() != 2) throw std::runtime_error("order report: expected two model entries");
    report.miavlm = order_model_from_json(models[0]);
    report.baseline = order_model_from_json(models[1]);
    return report;
}

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("report: cannot open " + path + " for writing");
    os << j.dump(2) << "\n";
}

nlohmann::json read_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("report: cannot open " + path);
    nlohmann::json j;
    is >> j;
    return j;
}

void write_order_plot_data(const std::string& path, const OrderExperimentReport& report) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("plot data: cannot open " + path + " for writing");
    os << "model\tshuffle_index\tmetric\n";
    for (const auto* model : {&report.miavlm, &report.baseline})
        for (const auto& run : model->runs)
            os << model->label << "\t" << run.shuffle_index << "\t" << run.metric << "\n";
}

}  // namespace miavlm
