#include "miavlm/synthetic.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include "miavlm/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "embedding container assumes a little-endian host");

namespace miavlm {

const std::vector<AttributeSlot>& attribute_slots() {
    static const std::vector<AttributeSlot> slots = {
        {"chin_shape", "pointed", "rounded"}, {"hair_length", "long", "short"},
        {"hair_shade", "dark", "light"},      {"eye_size", "large", "small"},
        {"brow_weight", "thick", "thin"},     {"face_width", "narrow", "wide"},
    };
    return slots;
}

std::string attribute_phrase(const std::string& category, const std::string& term) {
    if (category == "chin_shape") return "a " + term + " chin";
    if (category == "hair_length" || category == "hair_shade") return term + " hair";
    if (category == "eye_size") return term + " eyes";
    if (category == "brow_weight") return term + " eyebrows";
    if (category == "face_width") return "a " + term + " face";
    throw std::invalid_argument("attribute_phrase: unknown category '" + category + "'");
}

void SyntheticConfig::validate() const {
    if (num_views < 1 || num_views > 9)
        throw std::invalid_argument("synthetic: num_views must lie in [1, 9], got " +
                                    std::to_string(num_views));
    if (d_enc == 0 || patches == 0)
        throw std::invalid_argument("synthetic: d_enc and patches must be positive");
    if (noise_sigma < 0.0) throw std::invalid_argument("synthetic: noise_sigma must be >= 0");
    if (!(visible_prob > 0.0 && visible_prob <= 1.0))
        throw std::invalid_argument("synthetic: visible_prob must lie in (0, 1]");
}

std::vector<double> camera_matrix(const SyntheticConfig& config, std::uint64_t seed,
                                  std::size_t view, std::size_t token) {
    const std::size_t latent_dim = attribute_slots().size() + config.nuisance_dims;
    std::mt19937_64 rng(derive_seed(seed, "camera", view * 4096 + token));
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(latent_dim)));
    std::vector<double> a(config.d_enc * latent_dim);
    for (auto& v : a) v = dist(rng);
    return a;
}

namespace {

std::vector<double> render_token(const std::vector<double>& camera,
                                 const std::vector<double>& masked_latent, std::size_t d_enc,
                                 double sigma, std::mt19937_64& noise_rng) {
    const std::size_t latent_dim = masked_latent.size();
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<double> out(d_enc, 0.0);
    for (std::size_t i = 0; i < d_enc; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < latent_dim; ++j)
            acc += camera[i * latent_dim + j] * masked_latent[j];
        out[i] = acc + sigma * noise(noise_rng);
    }
    return out;
}

}  // namespace

SyntheticDataset gen_synthetic(std::size_t count, const SyntheticConfig& config,
                               std::uint64_t seed) {
    if (count < 1) throw std::invalid_argument("gen_synthetic: count must be >= 1");
    config.validate();

    const auto& slots = attribute_slots();
    const std::size_t num_slots = slots.size();
    const std::size_t latent_dim = num_slots + config.nuisance_dims;
    const std::size_t n = config.num_views;

    // Cameras are shared across scenes; only the latents vary.
    std::vector<std::vector<std::vector<double>>> cameras(n);  // [view][token]
    for (std::size_t v = 0; v < n; ++v)
        for (std::size_t t = 0; t < config.patches + 1; ++t)
            cameras[v].push_back(camera_matrix(config, seed, v, t));

    SyntheticDataset out;
    for (std::size_t idx = 0; idx < count; ++idx) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "scene%04zu", idx);
        SyntheticScene scene;
        scene.scene_id = buf;

        std::mt19937_64 rng(derive_seed(seed, "scene", hash_string(scene.scene_id)));

        scene.latent_attributes.resize(num_slots);
        for (std::size_t k = 0; k < num_slots; ++k)
            scene.latent_attributes[k] = (rng() % 2 == 0) ? 1.0 : -1.0;
        std::normal_distribution<double> nuisance_dist(0.0, 1.0);
        std::vector<double> latent(latent_dim, 0.0);
        for (std::size_t k = 0; k < num_slots; ++k) latent[k] = scene.latent_attributes[k];
        for (std::size_t j = 0; j < config.nuisance_dims; ++j)
            latent[num_slots + j] = nuisance_dist(rng);

        // Visibility: each attribute renders into a random subset of views,
        // forced non-empty.
        scene.visibility.assign(num_slots, std::vector<bool>(n, false));
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        for (std::size_t k = 0; k < num_slots; ++k) {
            bool any = false;
            for (std::size_t v = 0; v < n; ++v) {
                const bool visible = unit(rng) < config.visible_prob;
                scene.visibility[k][v] = visible;
                any = any || visible;
            }
            if (!any) scene.visibility[k][bounded(rng, n)] = true;
        }

        scene.embeddings.scene_id = scene.scene_id;
        for (std::size_t v = 0; v < n; ++v) {
            std::vector<double> masked = latent;
            for (std::size_t k = 0; k < num_slots; ++k)
                if (!scene.visibility[k][v]) masked[k] = 0.0;

            RawView view;
            view.view_id = scene.scene_id + ":view" + std::to_string(v);
            view.d_enc = config.d_enc;
            view.cls = render_token(cameras[v][0], masked, config.d_enc, config.noise_sigma, rng);
            view.patches.reserve(config.patches * config.d_enc);
            for (std::size_t t = 0; t < config.patches; ++t) {
                auto patch = render_token(cameras[v][t + 1], masked, config.d_enc,
                                          config.noise_sigma, rng);
                view.patches.insert(view.patches.end(), patch.begin(), patch.end());
            }
            scene.embeddings.views.push_back(std::move(view));
        }

        for (std::size_t k = 0; k < num_slots; ++k) {
            const auto& slot = slots[k];
            const std::string term =
                scene.latent_attributes[k] > 0 ? slot.positive_term : slot.negative_term;
            AttributeRecord rec;
            rec.image_id = scene.scene_id;
            rec.caption = "this person has " + attribute_phrase(slot.category, term);
            const auto pos = rec.caption.find(term);
            rec.attribute_terms.push_back({term, pos, pos + term.size(), slot.category});
            out.records.push_back(std::move(rec));
        }
        out.scenes.push_back(std::move(scene));
    }
    return out;
}

// Embedding file -------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'V', 'E', 'B', '0', '0', '0', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& is, const std::string& path) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw std::runtime_error("scenes: truncated file " + path);
    return v;
}

void write_string(std::ostream& os, const std::string& s) {
    write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is, const std::string& path) {
    const auto len = read_u64(is, path);
    std::string s(len, '\0');
    is.read(s.data(), static_cast<std::streamsize>(len));
    if (!is) throw std::runtime_error("scenes: truncated file " + path);
    return s;
}

void write_doubles(std::ostream& os, const std::vector<double>& v) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::istream& is, std::size_t count, const std::string& path) {
    std::vector<double> v(count);
    is.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!is) throw std::runtime_error("scenes: truncated file " + path);
    return v;
}

}  // namespace

void save_scenes(const std::string& path, const std::vector<SceneEmbeddings>& scenes) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("scenes: cannot open " + path + " for writing");
    os.write(kMagic, sizeof(kMagic));
    write_u64(os, scenes.size());
    for (const auto& scene : scenes) {
        write_string(os, scene.scene_id);
        write_u64(os, scene.views.size());
        for (const auto& view : scene.views) {
            write_string(os, view.view_id);
            write_u64(os, view.d_enc);
            write_u64(os, view.patch_count());
            write_doubles(os, view.cls);
            write_doubles(os, view.patches);
        }
    }
    if (!os) throw std::runtime_error("scenes: write failed for " + path);
}

std::vector<SceneEmbeddings> load_scenes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("scenes: cannot open " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("scenes: " + path + " is not a multiview embedding file");
    const auto num_scenes = read_u64(is, path);
    std::vector<SceneEmbeddings> out;
    out.reserve(num_scenes);
    for (std::uint64_t s = 0; s < num_scenes; ++s) {
        SceneEmbeddings scene;
        scene.scene_id = read_string(is, path);
        const auto num_views = read_u64(is, path);
        for (std::uint64_t v = 0; v < num_views; ++v) {
            RawView view;
            view.view_id = read_string(is, path);
            view.d_enc = read_u64(is, path);
            const auto p = read_u64(is, path);
            view.cls = read_doubles(is, view.d_enc, path);
            view.patches = read_doubles(is, p * view.d_enc, path);
            scene.views.push_back(std::move(view));
        }
        out.push_back(std::move(scene));
    }
    return out;
}

}  // namespace miavlm
