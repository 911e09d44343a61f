#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "miavlm/bench.hpp"
#include "miavlm/map.hpp"
#include "miavlm/optim.hpp"
#include "miavlm/synthetic.hpp"

namespace miavlm {

struct RunConfig {
    MapConfig map = MapConfig::desk_scale();
    int epochs = 20;
    double lr = 0.001;
    double min_lr = 0.0;
    int batch_size = 32;
    std::uint64_t seed = 0;
    bool include_negatives = true;  // instruction mix: positives + negatives
    std::string scenes_path;
    std::string questions_path;
    std::string out_dir;
};

nlohmann::json run_config_to_json(const RunConfig& config);

// Human-readable "key = value" model config file covering every MapConfig
// field and design flag.
void write_map_config(const std::string& path, const MapConfig& config);
MapConfig read_map_config(const std::string& path);

/// Full trainable state: the MAP itself, the Yes/No head, and the slot
/// position table used only by the order-sensitive concatenation baseline.
struct ModelParams {
    MapParams map;
    YesNoHeadParams head;
    Tensor concat_pos;  // [max_views x d]
};

ModelParams init_model(const MapConfig& config, std::size_t vocab_size, std::uint64_t seed);
std::vector<NamedParam> named_params(const ModelParams& params);

/// How per-view extractor outputs are fused before the head.
enum class FusionMode {
    kMap,             // sampler-weighted sum; order-invariant
    kConcatBaseline,  // rows concatenated in input order with slot position
                      // embeddings; order-sensitive by construction
};

/// Optional MIAVLM_WORKERS override for evaluation parallelism.
std::size_t worker_count();

struct TrainLog {
    std::vector<double> epoch_losses;  // mean item loss per epoch
    std::vector<double> lr_trace;      // epochs+1 entries, schedule boundaries inclusive
};

/// Cross-entropy training over {Yes, No} targets per the run config:
/// per-epoch cosine learning rate, seeded shuffling, Adam updates per batch.
/// Bit-deterministic in (config, data, seed). Non-finite loss aborts.
TrainLog train_model(ModelParams& model, const std::vector<SceneEmbeddings>& scenes,
                     const std::vector<Question>& questions, const Vocabulary& vocab,
                     const RunConfig& config);

/// Greedy decision for one question against one scene: argmax of the head
/// logits, ties resolved toward Yes.
Answer decide_question(const ModelParams& model, const MapConfig& config, const Vocabulary& vocab,
                       const SceneEmbeddings& scene, const Question& question, FusionMode mode,
                       const std::vector<std::size_t>* view_order = nullptr);

/// Runs the model over every question (parallel over questions, merged in
/// input order) and returns "Yes"/"No" responses keyed by question id.
std::vector<Response> run_model(const ModelParams& model, const MapConfig& config,
                                const Vocabulary& vocab,
                                const std::vector<SceneEmbeddings>& scenes,
                                const std::vector<Question>& questions, FusionMode mode,
                                const std::vector<std::size_t>* view_order = nullptr);

/// run_model + hooa_bench scoring.
EvalReport evaluate_model(const ModelParams& model, const MapConfig& config,
                          const Vocabulary& vocab, const std::vector<SceneEmbeddings>& scenes,
                          const std::vector<Question>& questions,
                          FusionMode mode = FusionMode::kMap);

struct OrderRunEntry {
    std::size_t shuffle_index = 0;           // 0 = identity
    std::vector<std::size_t> ordering;       // permutation of the 9 views
    double metric = 0.0;                     // positive accuracy under this ordering
    double agreement_with_identity = 1.0;    // fraction of unchanged decisions
};

struct OrderModelResult {
    std::string label;
    std::vector<OrderRunEntry> runs;  // identity + shuffles
    double variance = 0.0;            // population variance of the metric
};

struct OrderExperimentReport {
    std::size_t shuffles = 5;
    std::uint64_t seed = 0;
    OrderModelResult miavlm;
    OrderModelResult baseline;
};

/// Identity plus `shuffles` seeded orderings of the 9 views, evaluated on
/// positive questions for both fusion modes. Scenes must have exactly nine
/// views.
OrderExperimentReport order_experiment(const ModelParams& model, const MapConfig& config,
                                       const Vocabulary& vocab,
                                       const std::vector<SceneEmbeddings>& scenes,
                                       const std::vector<Question>& positive_questions,
                                       std::size_t shuffles, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Report emission: every report embeds tool version, seed and config echo,
// so any number in any report is regenerable.
// ---------------------------------------------------------------------------

nlohmann::json train_log_to_json(const TrainLog& log, const RunConfig& config);
nlohmann::json eval_report_to_json(const EvalReport& report, const RunConfig& config);
nlohmann::json order_report_to_json(const OrderExperimentReport& report, const RunConfig& config);
OrderExperimentReport order_report_from_json(const nlohmann::json& j);

void write_json(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json(const std::string& path);

/// Plot-data table for the order experiment: one "model shuffle metric" row
/// per run, tab-separated, ready for box-plot rendering.
void write_order_plot_data(const std::string& path, const OrderExperimentReport& report);

}  // namespace miavlm
