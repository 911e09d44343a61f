#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "miavlm/bench.hpp"

namespace miavlm {

/// The fixed attribute space of the synthetic corpus. Each slot is a binary
/// pole pair whose terms are covered by the builtin templates and lexicon.
struct AttributeSlot {
    std::string category;
    std::string positive_term;
    std::string negative_term;
};

const std::vector<AttributeSlot>& attribute_slots();

/// Caption noun phrase for one slot/term, e.g. "a pointed chin".
std::string attribute_phrase(const std::string& category, const std::string& term);

struct SyntheticConfig {
    std::size_t num_views = 3;   // views per scene, 1..9
    std::size_t d_enc = 16;      // raw embedding width
    std::size_t patches = 4;     // patch tokens per view
    std::size_t nuisance_dims = 4;
    double noise_sigma = 0.05;
    double visible_prob = 0.6;   // chance an attribute renders into a view

    void validate() const;
};

/// One raw (pre-projection) view as stored in the embedding file.
struct RawView {
    std::string view_id;
    std::size_t d_enc = 0;
    std::vector<double> cls;      // d_enc
    std::vector<double> patches;  // p x d_enc, row-major
    std::size_t patch_count() const { return d_enc == 0 ? 0 : patches.size() / d_enc; }
};

struct SceneEmbeddings {
    std::string scene_id;
    std::vector<RawView> views;
};

/// Full in-memory scene: the embeddings plus the ground truth they were
/// rendered from. Latent pole k is +1 for the slot's positive term, -1 for
/// the negative term; visibility[k][v] says whether attribute k rendered
/// into view v (every attribute is visible in at least one view).
struct SyntheticScene {
    std::string scene_id;
    std::vector<double> latent_attributes;       // +-1 per slot
    std::vector<std::vector<bool>> visibility;   // [slot][view]
    SceneEmbeddings embeddings;
};

struct SyntheticDataset {
    std::vector<SyntheticScene> scenes;
    std::vector<AttributeRecord> records;  // one per (scene, slot)
};

/// Deterministic in (seed): shared per-view "camera" maps render a masked
/// latent (poles +-1 plus Gaussian nuisance) into each view's CLS and patch
/// tokens, with small Gaussian noise. A masked attribute contributes nothing
/// to that view, so it is unrecoverable from the view alone but recoverable
/// from the union of views.
SyntheticDataset gen_synthetic(std::size_t count, const SyntheticConfig& config,
                               std::uint64_t seed);

/// The per-view rendering matrix for (view, token) against the full latent
/// (slots then nuisance); token 0 is the CLS, token t>=1 is patch t-1.
/// Exposed so tests can solve the linear system independently.
std::vector<double> camera_matrix(const SyntheticConfig& config, std::uint64_t seed,
                                  std::size_t view, std::size_t token);

// Binary multiview embedding container ("MVEB0001", little-endian); one
// record per view: view_id, d_enc, p, then the raw float64 CLS and patch
// values. See the README for the exact layout.
void save_scenes(const std::string& path, const std::vector<SceneEmbeddings>& scenes);
std::vector<SceneEmbeddings> load_scenes(const std::string& path);

}  // namespace miavlm
