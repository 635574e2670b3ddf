#include "marl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace marl {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'R', 'L', 'C', 'K', 'P', '1'};

void write_u32(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

void write_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
    write_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<uint32_t>(t.shape().rank));
    for (int i = 0; i < t.shape().rank; ++i)
        write_u32(out, static_cast<uint32_t>(t.shape().d[i]));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(sizeof(double) * t.size()));
}

}  // namespace

void save_checkpoint(const std::string& path, const Learner& learner,
                     const std::string& config_json) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_u32(out, static_cast<uint32_t>(config_json.size()));
    out.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));

    std::vector<std::pair<std::string, const Tensor*>> tensors;
    learner.agent.visit([&](const char* name, const Tensor& t) {
        tensors.emplace_back(std::string("agent.") + name, &t);
    });
    learner.mixer.visit([&](const char* name, const Tensor& t) {
        tensors.emplace_back(std::string("mixer.") + name, &t);
    });
    if (learner.cfg.separate_aux_mixer)
        learner.aux_mixer.visit([&](const char* name, const Tensor& t) {
            tensors.emplace_back(std::string("aux_mixer.") + name, &t);
        });

    write_u32(out, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) write_tensor(out, name, *t);
    if (!out) throw Error("checkpoint write failed: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileNotFound("checkpoint not found: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw CheckpointMismatch("bad checkpoint magic: " + path);

    const uint32_t cfg_len = read_u32(in);
    std::string cfg_json(cfg_len, '\0');
    in.read(cfg_json.data(), cfg_len);
    if (!in) throw CheckpointMismatch("truncated checkpoint config: " + path);

    LoadedCheckpoint result;
    result.config = parse_config_text(cfg_json);

    std::map<std::string, Tensor> loaded;
    const uint32_t count = read_u32(in);
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = read_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const uint32_t rank = read_u32(in);
        if (rank < 1 || rank > 3) throw CheckpointMismatch("bad tensor rank in " + path);
        Shape shape;
        shape.rank = static_cast<int>(rank);
        for (uint32_t r = 0; r < rank; ++r) shape.d[r] = static_cast<int>(read_u32(in));
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.mutable_data()),
                static_cast<std::streamsize>(sizeof(double) * t.size()));
        if (!in) throw CheckpointMismatch("truncated tensor data in " + path);
        loaded.emplace(std::move(name), std::move(t));
    }

    std::mt19937_64 rng(0);
    result.learner = Learner::init(learner_config(result.config), result.config.env, rng);

    auto restore = [&](const std::string& prefix, auto& params) {
        params.visit([&](const char* name, Tensor& t) {
            const std::string key = prefix + name;
            auto it = loaded.find(key);
            if (it == loaded.end())
                throw CheckpointMismatch("missing tensor " + key + " in " + path);
            if (it->second.shape() != t.shape())
                throw CheckpointMismatch("shape mismatch for " + key + ": file " +
                                         it->second.shape().str() + " vs model " +
                                         t.shape().str());
            t = it->second;
        });
    };
    restore("agent.", result.learner.agent);
    restore("mixer.", result.learner.mixer);
    if (result.learner.cfg.separate_aux_mixer) restore("aux_mixer.", result.learner.aux_mixer);
    result.learner.sync_targets();
    return result;
}

}  // namespace marl
