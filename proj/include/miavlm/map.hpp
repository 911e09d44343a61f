#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "miavlm/checkpoint.hpp"
#include "miavlm/tensor.hpp"

namespace miavlm {

/// Where the Multihead Sampler takes its attention queries from.
enum class SamplerQuery { kPrompts, kExtractorOutputs };

struct MapConfig {
    std::size_t l = 32;                      // soft-prompt token count
    std::size_t d = 1024;                    // model dimension
    std::size_t m = 4;                       // decomposed tokens / sampler heads
    std::size_t num_blocks = 6;              // extractor depth
    std::size_t num_attn_heads = 16;         // heads inside each extractor block
    std::size_t d_enc = 1536;                // raw encoder embedding dimension
    std::size_t d_hidden_decomposer = 2048;  // decomposer MLP hidden width (2d)
    std::size_t d_ff = 4096;                 // extractor feed-forward width (4d)
    std::size_t max_views = 9;               // soft cap; sizes the concat baseline only

    // Resolved design choices, all switchable:
    bool pre_norm = true;           // pre-LN blocks with a final norm; false = post-LN
    bool sampler_softmax = true;    // normalize sampler scores over the view axis
    SamplerQuery sampler_query = SamplerQuery::kPrompts;

    void validate() const;  // throws std::invalid_argument on bad combinations

    /// Small profile for CPU-scale experiments and tests.
    static MapConfig desk_scale();
};

struct ImageEmbedding {
    std::string view_id;
    Tensor cls;      // [d]
    Tensor patches;  // [p x d], p >= 1
};

struct SoftPrompts {
    Tensor tokens;  // [l x d], learned
};

struct LayerNormParams {
    Tensor gamma, beta;  // [d]
};

struct AttentionParams {
    Tensor wq, wk, wv, wo;  // [d x d]
};

struct ExtractorBlockParams {
    AttentionParams self_attn;   // over the prompt tokens
    AttentionParams cross_attn;  // prompts attend into the view embedding
    Mlp2Params ff;
    LayerNormParams ln_self, ln_cross, ln_ff;
};

struct SamplerParams {
    Mlp2Params decomposer;        // d -> m*d, reshaped to m tokens of width d
    std::vector<Tensor> head_wq;  // m independent [d x d] query maps
    std::vector<Tensor> head_wk;  // m independent [d x d] key maps
};

struct MapParams {
    Tensor proj_w;  // [d_enc x d]
    Tensor proj_b;  // [d]
    SoftPrompts prompts;
    std::vector<ExtractorBlockParams> blocks;
    LayerNormParams final_norm;  // applied after the stack in pre-norm mode
    SamplerParams sampler;
};

struct MapOutput {
    Tensor fused_prompts;             // [l x d]
    Tensor per_view_weights;          // [n], simplex under the softmax reading
    std::vector<Tensor> per_view_outputs;  // diagnostics, n matrices [l x d]
};

struct YesNoHeadParams {
    Tensor token_embedding;  // [vocab x d]
    Tensor wq, wk, wv;       // [d x d], single attention over the fused prompts
    Tensor out_w;            // [d x 2]
    Tensor out_b;            // [2]
};

inline constexpr std::size_t kAnswerYes = 0;
inline constexpr std::size_t kAnswerNo = 1;

// ---------------------------------------------------------------------------
// Initialization and parameter registry
// ---------------------------------------------------------------------------

/// Scaled-uniform (+-1/sqrt(fan_in)) projections, zero biases, unit layer
/// norms, N(0, 0.02) soft prompts and token embeddings. Deterministic in
/// (config, seed).
MapParams init_map_params(const MapConfig& config, std::uint64_t seed);
YesNoHeadParams init_head_params(std::size_t vocab_size, const MapConfig& config,
                                 std::uint64_t seed);

std::vector<NamedParam> named_params(const MapParams& params);
std::vector<NamedParam> named_params(const YesNoHeadParams& params);

// ---------------------------------------------------------------------------
// Forward operations
// ---------------------------------------------------------------------------

/// Applies the shared linear map d_enc -> d to the CLS vector and every
/// patch token of one raw view.
ImageEmbedding project_embedding(const std::string& view_id, const Tensor& raw_cls,
                                 const Tensor& raw_patches, const Tensor& proj_w,
                                 const Tensor& proj_b);

/// Runs the decoder-block stack for one view: prompt self-attention, then
/// cross-attention with the view's CLS+patch tokens as keys/values, then the
/// feed-forward, each sublayer with a residual. Output is [l x d].
Tensor visual_extract(const SoftPrompts& prompts, const ImageEmbedding& view,
                      const std::vector<ExtractorBlockParams>& blocks,
                      const LayerNormParams& final_norm, const MapConfig& config);

/// Per-view extraction with no cross-view flow: element i is
/// visual_extract(prompts, views[i], ...). Permutation-equivariant by
/// construction.
std::vector<Tensor> visual_extract_all(const SoftPrompts& prompts,
                                       const std::vector<ImageEmbedding>& views,
                                       const std::vector<ExtractorBlockParams>& blocks,
                                       const LayerNormParams& final_norm, const MapConfig& config);

/// Maps one view's CLS token through the decomposer MLP into m width-d
/// tokens.
std::vector<Tensor> decompose_cls(const ImageEmbedding& view, const SamplerParams& sampler,
                                  const MapConfig& config);

/// One scalar weight per view: per head, prompt queries score the views'
/// decomposed tokens, scores are (by default) softmax-normalized over the
/// view axis, averaged over the prompt rows, then averaged over heads.
/// `extractor_outputs` is only consulted when config.sampler_query selects
/// the extractor outputs as queries.
Tensor sampler_weights(const SoftPrompts& prompts, const std::vector<ImageEmbedding>& views,
                       const SamplerParams& sampler, const MapConfig& config,
                       const std::vector<Tensor>* extractor_outputs = nullptr);

/// Order-canonical weighted sum of the per-view outputs (see weighted_sum).
Tensor map_aggregate(const std::vector<Tensor>& per_view_outputs, const Tensor& weights,
                     bool require_simplex = true);

/// Full pass: extract per view, weight, aggregate. Accepts any n >= 1 and is
/// invariant to the order views arrive in (bit-exactly, by canonical
/// reduction orders throughout).
MapOutput map_forward(const std::vector<ImageEmbedding>& views, const MapParams& params,
                      const MapConfig& config);

/// Desk-scale stand-in for a frozen decoder: embeds the question tokens,
/// attends once over the fused prompts, mean-pools and maps to {Yes, No}
/// logits (shape [1 x 2], class order kAnswerYes, kAnswerNo).
Tensor yes_no_head(const Tensor& fused_prompts, const std::vector<int>& question_tokens,
                   const YesNoHeadParams& head);

}  // namespace miavlm
