#include "miavlm/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

namespace miavlm {

namespace {

constexpr char kMagic[8] = {'M', 'V', 'C', 'P', '0', '0', '0', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<NamedParam>& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    os.write(kMagic, sizeof(kMagic));
    write_u64(os, params.size());
    for (const auto& p : params) {
        write_u64(os, p.name.size());
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_u64(os, p.tensor.rank());
        for (std::size_t d : p.tensor.shape()) write_u64(os, d);
        const auto& data = p.tensor.data();
        os.write(reinterpret_cast<const char*>(data.data()),
                 static_cast<std::streamsize>(data.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

std::vector<NamedParam> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("checkpoint: " + path + " is not a parameter container");
    const std::uint64_t count = read_u64(is);
    std::vector<NamedParam> out;
    out.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t name_len = read_u64(is);
        std::string name(name_len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(name_len));
        const std::uint64_t rank = read_u64(is);
        Shape shape(rank);
        std::size_t numel = 1;
        for (std::uint64_t r = 0; r < rank; ++r) {
            shape[r] = read_u64(is);
            numel *= shape[r];
        }
        std::vector<double> values(numel);
        is.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(numel * sizeof(double)));
        if (!is) throw std::runtime_error("checkpoint: truncated file " + path);
        out.push_back({std::move(name), Tensor::from_data(std::move(shape), std::move(values))});
    }
    return out;
}

void load_checkpoint_into(const std::string& path, std::vector<NamedParam>& params) {
    auto loaded = load_checkpoint(path);
    std::map<std::string, Tensor> by_name;
    for (auto& p : loaded) by_name.emplace(p.name, p.tensor);

    std::string missing;
    for (auto& p : params) {
        auto it = by_name.find(p.name);
        if (it == by_name.end()) {
            missing += (missing.empty() ? "" : ", ") + p.name;
            continue;
        }
        if (it->second.shape() != p.tensor.shape())
            throw std::runtime_error("checkpoint: shape mismatch for '" + p.name + "': file has " +
                                     shape_str(it->second.shape()) + ", model expects " +
                                     shape_str(p.tensor.shape()));
        p.tensor.data() = it->second.data();
        by_name.erase(it);
    }
    if (!missing.empty())
        throw std::runtime_error("checkpoint: missing parameters: " + missing);
    if (!by_name.empty()) {
        std::string extra;
        for (const auto& [name, t] : by_name) extra += (extra.empty() ? "" : ", ") + name;
        throw std::runtime_error("checkpoint: unexpected parameters: " + extra);
    }
}

}  // namespace miavlm
