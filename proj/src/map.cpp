#include "miavlm/map.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "miavlm/rng.hpp"

namespace miavlm {

void MapConfig::validate() const {
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0) throw std::invalid_argument(std::string("MapConfig: ") + name + " must be positive");
    };
    positive(l, "l");
    positive(d, "d");
    positive(m, "m");
    positive(num_blocks, "num_blocks");
    positive(num_attn_heads, "num_attn_heads");
    positive(d_enc, "d_enc");
    positive(d_hidden_decomposer, "d_hidden_decomposer");
    positive(d_ff, "d_ff");
    if (d % num_attn_heads != 0)
        throw std::invalid_argument("MapConfig: d=" + std::to_string(d) +
                                    " not divisible by num_attn_heads=" +
                                    std::to_string(num_attn_heads));
}

MapConfig MapConfig::desk_scale() {
    MapConfig cfg;
    cfg.l = 4;
    cfg.d = 32;
    cfg.m = 2;
    cfg.num_blocks = 2;
    cfg.num_attn_heads = 2;
    cfg.d_enc = 16;
    cfg.d_hidden_decomposer = 64;
    cfg.d_ff = 128;
    cfg.max_views = 9;
    return cfg;
}

// Initialization --------------------------------------------------------------

namespace {

Tensor uniform_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return Tensor::from_data(std::move(shape), std::move(v), true);
}

Tensor normal_init(Shape shape, double sigma, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, sigma);
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return Tensor::from_data(std::move(shape), std::move(v), true);
}

AttentionParams init_attention(std::size_t d, std::mt19937_64& rng) {
    return {uniform_init({d, d}, d, rng), uniform_init({d, d}, d, rng),
            uniform_init({d, d}, d, rng), uniform_init({d, d}, d, rng)};
}

LayerNormParams init_layer_norm(std::size_t d) {
    return {Tensor::full({d}, 1.0, true), Tensor::zeros({d}, true)};
}

Mlp2Params init_mlp2(std::size_t d_in, std::size_t d_hidden, std::size_t d_out,
                     std::mt19937_64& rng) {
    return {uniform_init({d_in, d_hidden}, d_in, rng), Tensor::zeros({d_hidden}, true),
            uniform_init({d_hidden, d_out}, d_hidden, rng), Tensor::zeros({d_out}, true)};
}

void require_view_shapes(const ImageEmbedding& view, std::size_t d) {
    if (view.cls.rank() != 1 || view.cls.shape()[0] != d)
        throw std::invalid_argument("view '" + view.view_id + "': cls shape " +
                                    shape_str(view.cls.shape()) + ", expected (" +
                                    std::to_string(d) + ")");
    if (view.patches.rank() != 2 || view.patches.shape()[1] != d || view.patches.shape()[0] < 1)
        throw std::invalid_argument("view '" + view.view_id + "': patches shape " +
                                    shape_str(view.patches.shape()) + ", expected (p x " +
                                    std::to_string(d) + ") with p >= 1");
    for (double v : view.cls.data())
        if (!std::isfinite(v))
            throw std::invalid_argument("view '" + view.view_id + "': non-finite cls entry");
    for (double v : view.patches.data())
        if (!std::isfinite(v))
            throw std::invalid_argument("view '" + view.view_id + "': non-finite patch entry");
}

}  // namespace

MapParams init_map_params(const MapConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(derive_seed(seed, "map_params"));
    MapParams p;
    p.proj_w = uniform_init({config.d_enc, config.d}, config.d_enc, rng);
    p.proj_b = Tensor::zeros({config.d}, true);
    p.prompts.tokens = normal_init({config.l, config.d}, 0.02, rng);
    p.blocks.reserve(config.num_blocks);
    for (std::size_t b = 0; b < config.num_blocks; ++b) {
        ExtractorBlockParams block;
        block.self_attn = init_attention(config.d, rng);
        block.cross_attn = init_attention(config.d, rng);
        block.ff = init_mlp2(config.d, config.d_ff, config.d, rng);
        block.ln_self = init_layer_norm(config.d);
        block.ln_cross = init_layer_norm(config.d);
        block.ln_ff = init_layer_norm(config.d);
        p.blocks.push_back(std::move(block));
    }
    p.final_norm = init_layer_norm(config.d);
    p.sampler.decomposer =
        init_mlp2(config.d, config.d_hidden_decomposer, config.m * config.d, rng);
    p.sampler.head_wq.reserve(config.m);
    p.sampler.head_wk.reserve(config.m);
    for (std::size_t j = 0; j < config.m; ++j) {
        p.sampler.head_wq.push_back(uniform_init({config.d, config.d}, config.d, rng));
        p.sampler.head_wk.push_back(uniform_init({config.d, config.d}, config.d, rng));
    }
    return p;
}

YesNoHeadParams init_head_params(std::size_t vocab_size, const MapConfig& config,
                                 std::uint64_t seed) {
    if (vocab_size == 0) throw std::invalid_argument("init_head_params: empty vocabulary");
    std::mt19937_64 rng(derive_seed(seed, "head_params"));
    YesNoHeadParams h;
    h.token_embedding = normal_init({vocab_size, config.d}, 0.02, rng);
    h.wq = uniform_init({config.d, config.d}, config.d, rng);
    h.wk = uniform_init({config.d, config.d}, config.d, rng);
    h.wv = uniform_init({config.d, config.d}, config.d, rng);
    h.out_w = uniform_init({config.d, 2}, config.d, rng);
    h.out_b = Tensor::zeros({2}, true);
    return h;
}

std::vector<NamedParam> named_params(const MapParams& params) {
    std::vector<NamedParam> out;
    out.push_back({"projection.weight", params.proj_w});
    out.push_back({"projection.bias", params.proj_b});
    out.push_back({"prompts.tokens", params.prompts.tokens});
    for (std::size_t b = 0; b < params.blocks.size(); ++b) {
        const auto& blk = params.blocks[b];
        const std::string prefix = "extractor.block" + std::to_string(b) + ".";
        auto attn = [&](const std::string& tag, const AttentionParams& a) {
            out.push_back({prefix + tag + ".wq", a.wq});
            out.push_back({prefix + tag + ".wk", a.wk});
            out.push_back({prefix + tag + ".wv", a.wv});
            out.push_back({prefix + tag + ".wo", a.wo});
        };
        attn("self_attn", blk.self_attn);
        attn("cross_attn", blk.cross_attn);
        out.push_back({prefix + "ff.w1", blk.ff.w1});
        out.push_back({prefix + "ff.b1", blk.ff.b1});
        out.push_back({prefix + "ff.w2", blk.ff.w2});
        out.push_back({prefix + "ff.b2", blk.ff.b2});
        auto norm = [&](const std::string& tag, const LayerNormParams& n) {
            out.push_back({prefix + tag + ".gamma", n.gamma});
            out.push_back({prefix + tag + ".beta", n.beta});
        };
        norm("ln_self", blk.ln_self);
        norm("ln_cross", blk.ln_cross);
        norm("ln_ff", blk.ln_ff);
    }
    out.push_back({"extractor.final_norm.gamma", params.final_norm.gamma});
    out.push_back({"extractor.final_norm.beta", params.final_norm.beta});
    out.push_back({"sampler.decomposer.w1", params.sampler.decomposer.w1});
    out.push_back({"sampler.decomposer.b1", params.sampler.decomposer.b1});
    out.push_back({"sampler.decomposer.w2", params.sampler.decomposer.w2});
    out.push_back({"sampler.decomposer.b2", params.sampler.decomposer.b2});
    for (std::size_t j = 0; j < params.sampler.head_wq.size(); ++j) {
        out.push_back({"sampler.head" + std::to_string(j) + ".wq", params.sampler.head_wq[j]});
        out.push_back({"sampler.head" + std::to_string(j) + ".wk", params.sampler.head_wk[j]});
    }
    return out;
}

std::vector<NamedParam> named_params(const YesNoHeadParams& params) {
    return {{"head.token_embedding", params.token_embedding},
            {"head.wq", params.wq},
            {"head.wk", params.wk},
            {"head.wv", params.wv},
            {"head.out_w", params.out_w},
            {"head.out_b", params.out_b}};
}

// Forward ---------------------------------------------------------------------

ImageEmbedding project_embedding(const std::string& view_id, const Tensor& raw_cls,
                                 const Tensor& raw_patches, const Tensor& proj_w,
                                 const Tensor& proj_b) {
    const std::size_t d_enc = proj_w.shape()[0];
    if (raw_cls.rank() != 1 || raw_cls.shape()[0] != d_enc)
        throw std::invalid_argument("project_embedding: raw cls shape " +
                                    shape_str(raw_cls.shape()) + ", expected (" +
                                    std::to_string(d_enc) + ")");
    if (raw_patches.rank() != 2 || raw_patches.shape()[1] != d_enc)
        throw std::invalid_argument("project_embedding: raw patches shape " +
                                    shape_str(raw_patches.shape()) + ", expected (p x " +
                                    std::to_string(d_enc) + ")");
    ImageEmbedding out;
    out.view_id = view_id;
    const std::size_t d = proj_w.shape()[1];
    Tensor cls_row = add_bias(matmul(reshape(raw_cls, {1, d_enc}), proj_w), proj_b);
    out.cls = reshape(cls_row, {d});
    out.patches = add_bias(matmul(raw_patches, proj_w), proj_b);
    return out;
}

namespace {

Tensor multihead_attention(const Tensor& q_input, const Tensor& kv_input,
                           const AttentionParams& p, std::size_t heads) {
    const std::size_t d = q_input.shape()[1];
    const std::size_t dk = d / heads;
    const Tensor q = matmul(q_input, p.wq);
    const Tensor k = matmul(kv_input, p.wk);
    const Tensor v = matmul(kv_input, p.wv);
    std::vector<Tensor> head_outs;
    head_outs.reserve(heads);
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(dk));
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t lo = h * dk, hi = (h + 1) * dk;
        Tensor qh = slice_cols(q, lo, hi);
        Tensor kh = slice_cols(k, lo, hi);
        Tensor vh = slice_cols(v, lo, hi);
        Tensor probs = softmax_rows(scale(matmul(qh, transpose(kh)), inv_scale));
        head_outs.push_back(matmul(probs, vh));
    }
    Tensor merged = heads == 1 ? head_outs[0] : concat_cols(head_outs);
    return matmul(merged, p.wo);
}

Tensor run_block(Tensor h, const Tensor& kv, const ExtractorBlockParams& blk,
                 const MapConfig& config) {
    if (config.pre_norm) {
        Tensor n1 = layer_norm(h, blk.ln_self.gamma, blk.ln_self.beta);
        h = add(h, multihead_attention(n1, n1, blk.self_attn, config.num_attn_heads));
        Tensor n2 = layer_norm(h, blk.ln_cross.gamma, blk.ln_cross.beta);
        h = add(h, multihead_attention(n2, kv, blk.cross_attn, config.num_attn_heads));
        Tensor n3 = layer_norm(h, blk.ln_ff.gamma, blk.ln_ff.beta);
        h = add(h, mlp2_forward(n3, blk.ff, Activation::kGelu));
    } else {
        h = layer_norm(add(h, multihead_attention(h, h, blk.self_attn, config.num_attn_heads)),
                       blk.ln_self.gamma, blk.ln_self.beta);
        h = layer_norm(add(h, multihead_attention(h, kv, blk.cross_attn, config.num_attn_heads)),
                       blk.ln_cross.gamma, blk.ln_cross.beta);
        h = layer_norm(add(h, mlp2_forward(h, blk.ff, Activation::kGelu)), blk.ln_ff.gamma,
                       blk.ln_ff.beta);
    }
    return h;
}

}  // namespace

Tensor visual_extract(const SoftPrompts& prompts, const ImageEmbedding& view,
                      const std::vector<ExtractorBlockParams>& blocks,
                      const LayerNormParams& final_norm, const MapConfig& config) {
    require_view_shapes(view, config.d);
    if (prompts.tokens.shape() != Shape{config.l, config.d})
        throw std::invalid_argument("visual_extract: prompt shape " +
                                    shape_str(prompts.tokens.shape()) + ", expected (" +
                                    std::to_string(config.l) + " x " + std::to_string(config.d) + ")");
    // Keys/values for the cross-attention: the view's CLS token plus all
    // patch tokens.
    const Tensor kv = concat_rows({view.cls, view.patches});
    Tensor h = prompts.tokens;
    for (const auto& blk : blocks) h = run_block(h, kv, blk, config);
    if (config.pre_norm) h = layer_norm(h, final_norm.gamma, final_norm.beta);
    return h;
}

std::vector<Tensor> visual_extract_all(const SoftPrompts& prompts,
                                       const std::vector<ImageEmbedding>& views,
                                       const std::vector<ExtractorBlockParams>& blocks,
                                       const LayerNormParams& final_norm,
                                       const MapConfig& config) {
    if (views.empty())
        throw std::invalid_argument("visual_extract_all: empty view list (need n >= 1)");
    std::vector<Tensor> out;
    out.reserve(views.size());
    for (const auto& v : views) out.push_back(visual_extract(prompts, v, blocks, final_norm, config));
    return out;
}

std::vector<Tensor> decompose_cls(const ImageEmbedding& view, const SamplerParams& sampler,
                                  const MapConfig& config) {
    require_view_shapes(view, config.d);
    Tensor flat = mlp2_forward(reshape(view.cls, {1, config.d}), sampler.decomposer,
                               Activation::kGelu);
    if (flat.shape()[1] != config.m * config.d)
        throw std::invalid_argument("decompose_cls: decomposer emits " +
                                    shape_str(flat.shape()) + ", expected width " +
                                    std::to_string(config.m * config.d));
    Tensor tokens = reshape(flat, {config.m, config.d});
    std::vector<Tensor> out;
    out.reserve(config.m);
    for (std::size_t j = 0; j < config.m; ++j)
        out.push_back(reshape(slice_rows(tokens, j, j + 1), {config.d}));
    return out;
}

Tensor sampler_weights(const SoftPrompts& prompts, const std::vector<ImageEmbedding>& views,
                       const SamplerParams& sampler, const MapConfig& config,
                       const std::vector<Tensor>* extractor_outputs) {
    if (views.empty())
        throw std::invalid_argument("sampler_weights: empty view list (need n >= 1)");
    if (sampler.head_wq.size() != config.m || sampler.head_wk.size() != config.m)
        throw std::invalid_argument("sampler_weights: expected " + std::to_string(config.m) +
                                    " head projections, got " +
                                    std::to_string(sampler.head_wq.size()));
    const std::size_t n = views.size();
    const bool query_from_extractor = config.sampler_query == SamplerQuery::kExtractorOutputs;
    if (query_from_extractor && (extractor_outputs == nullptr || extractor_outputs->size() != n))
        throw std::invalid_argument(
            "sampler_weights: extractor outputs required for SamplerQuery::kExtractorOutputs");

    std::vector<std::vector<Tensor>> decomposed;  // [view][head] -> [d]
    decomposed.reserve(n);
    for (const auto& v : views) decomposed.push_back(decompose_cls(v, sampler, config));

    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(config.d));
    std::vector<Tensor> per_head;
    per_head.reserve(config.m);
    for (std::size_t j = 0; j < config.m; ++j) {
        std::vector<Tensor> token_rows;
        token_rows.reserve(n);
        for (std::size_t i = 0; i < n; ++i) token_rows.push_back(decomposed[i][j]);
        const Tensor keys = matmul(concat_rows(token_rows), sampler.head_wk[j]);  // [n x d]

        Tensor scores;  // [l x n]
        if (!query_from_extractor) {
            const Tensor queries = matmul(prompts.tokens, sampler.head_wq[j]);
            scores = scale(matmul(queries, transpose(keys)), inv_scale);
        } else {
            // Each view is scored by its own extractor output acting as the
            // query set; the column for view i comes from output i.
            std::vector<Tensor> cols;
            cols.reserve(n);
            for (std::size_t i = 0; i < n; ++i) {
                const Tensor qi = matmul((*extractor_outputs)[i], sampler.head_wq[j]);
                const Tensor ki = slice_rows(keys, i, i + 1);
                cols.push_back(scale(matmul(qi, transpose(ki)), inv_scale));
            }
            scores = concat_cols(cols);
        }
        if (config.sampler_softmax) scores = softmax_rows(scores);
        per_head.push_back(mean_axis(scores, 0));  // [n], mean over the l prompt rows
    }
    const Tensor stacked = concat_rows(per_head);  // [m x n]
    return mean_axis(stacked, 0);
}

Tensor map_aggregate(const std::vector<Tensor>& per_view_outputs, const Tensor& weights,
                     bool require_simplex) {
    return weighted_sum(per_view_outputs, weights, require_simplex);
}

MapOutput map_forward(const std::vector<ImageEmbedding>& views, const MapParams& params,
                      const MapConfig& config) {
    if (views.empty())
        throw std::invalid_argument("map_forward: empty view list (need n >= 1)");
    MapOutput out;
    out.per_view_outputs =
        visual_extract_all(params.prompts, views, params.blocks, params.final_norm, config);
    out.per_view_weights =
        sampler_weights(params.prompts, views, params.sampler, config, &out.per_view_outputs);
    // Without the softmax reading the weights need not lie on the simplex.
    out.fused_prompts =
        map_aggregate(out.per_view_outputs, out.per_view_weights, config.sampler_softmax);
    return out;
}

Tensor yes_no_head(const Tensor& fused_prompts, const std::vector<int>& question_tokens,
                   const YesNoHeadParams& head) {
    if (fused_prompts.rank() != 2)
        throw std::invalid_argument("yes_no_head: fused prompts must be rank-2, got " +
                                    shape_str(fused_prompts.shape()));
    const std::size_t d = fused_prompts.shape()[1];
    if (head.token_embedding.shape()[1] != d)
        throw std::invalid_argument("yes_no_head: embedding width " +
                                    shape_str(head.token_embedding.shape()) +
                                    " does not match prompt width " +
                                    shape_str(fused_prompts.shape()));
    const Tensor tokens = embedding_lookup(head.token_embedding, question_tokens);
    const Tensor q = matmul(tokens, head.wq);
    const Tensor k = matmul(fused_prompts, head.wk);
    const Tensor v = matmul(fused_prompts, head.wv);
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d));
    const Tensor probs = softmax_rows(scale(matmul(q, transpose(k)), inv_scale));
    const Tensor context = matmul(probs, v);
    const Tensor pooled = reshape(mean_axis(context, 0), {1, d});
    return add_bias(matmul(pooled, head.out_w), head.out_b);  // [1 x 2]
}

}  // namespace miavlm
