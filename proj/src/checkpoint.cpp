#include "miniseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace miniseg {

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_string(std::ostream& os, const std::string& s) {
    write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
std::string read_string(std::istream& is) {
    const std::uint64_t n = read_u64(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot create checkpoint: " + path);
    os.write(kCheckpointMagic, sizeof kCheckpointMagic);
    write_u32(os, ckpt.version);
    write_u64(os, ckpt.iteration);
    write_u64(os, ckpt.adam_t);
    write_string(os, ckpt.config_json);
    write_string(os, ckpt.rng_state);
    write_u32(os, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        write_string(os, name);
        write_u32(os, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) write_u64(os, d);
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    if (!os) throw DataError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
        throw DataError("not a checkpoint file: " + path);
    }
    Checkpoint ckpt;
    ckpt.version = read_u32(is);
    if (ckpt.version != kCheckpointVersion) {
        throw DataError("unsupported checkpoint version " +
                        std::to_string(ckpt.version));
    }
    ckpt.iteration = read_u64(is);
    ckpt.adam_t = read_u64(is);
    ckpt.config_json = read_string(is);
    ckpt.rng_state = read_string(is);
    const std::uint32_t n = read_u32(is);
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::string name = read_string(is);
        const std::uint32_t ndim = read_u32(is);
        Shape shape(ndim);
        for (auto& d : shape) d = read_u64(is);
        std::vector<float> data(shape_numel(shape));
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(float)));
        ckpt.tensors.emplace_back(
            name, Tensor<float>::from_vector(std::move(shape), std::move(data)));
    }
    if (!is) throw DataError("truncated checkpoint: " + path);
    return ckpt;
}

Checkpoint snapshot_train_state(const ParameterSet<float>& params,
                                const AdamWState<float>* opt,
                                std::uint64_t iteration,
                                const std::string& config_json,
                                const std::string& rng_state) {
    Checkpoint ckpt;
    ckpt.iteration = iteration;
    ckpt.config_json = config_json;
    ckpt.rng_state = rng_state;
    for (const auto& [name, t] : params) {
        std::vector<float> copy(t.values().begin(), t.values().end());
        ckpt.tensors.emplace_back(
            name, Tensor<float>::from_vector(t.shape(), std::move(copy)));
    }
    if (opt && opt->m.size() == params.size()) {
        ckpt.adam_t = opt->t;
        for (std::size_t i = 0; i < params.size(); ++i) {
            ckpt.tensors.emplace_back(
                "optim.m." + params[i].first,
                Tensor<float>::from_vector(params[i].second.shape(),
                                           std::vector<float>(opt->m[i])));
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            ckpt.tensors.emplace_back(
                "optim.v." + params[i].first,
                Tensor<float>::from_vector(params[i].second.shape(),
                                           std::vector<float>(opt->v[i])));
        }
    }
    return ckpt;
}

void restore_train_state(const Checkpoint& ckpt, ParameterSet<float>& params,
                         AdamWState<float>* opt) {
    std::map<std::string, const Tensor<float>*> by_name;
    for (const auto& [name, t] : ckpt.tensors) by_name[name] = &t;

    for (auto& [name, p] : params) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw DataError("checkpoint missing parameter '" + name + "'");
        }
        const Tensor<float>& src = *it->second;
        if (src.shape() != p.shape()) {
            throw DataError("checkpoint parameter '" + name + "' has shape " +
                            shape_str(src.shape()) + ", model wants " +
                            shape_str(p.shape()));
        }
        std::copy(src.values().begin(), src.values().end(), p.data());
    }
    if (opt) {
        const bool has_moments =
            !params.empty() && by_name.count("optim.m." + params[0].first) > 0;
        if (has_moments) {
            opt->t = ckpt.adam_t;
            opt->m.clear();
            opt->v.clear();
            for (const auto& [name, p] : params) {
                auto im = by_name.find("optim.m." + name);
                auto iv = by_name.find("optim.v." + name);
                if (im == by_name.end() || iv == by_name.end()) {
                    throw DataError("checkpoint missing moments for '" + name +
                                    "'");
                }
                opt->m.emplace_back(im->second->values().begin(),
                                    im->second->values().end());
                opt->v.emplace_back(iv->second->values().begin(),
                                    iv->second->values().end());
            }
        } else {
            ParameterSet<float> tmp = params;
            opt->init_like(tmp);
        }
    }
}

}  // namespace miniseg
