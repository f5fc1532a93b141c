#pragma once

#include <fstream>
#include <map>

#include <json.hpp>

#include "isore/nets.hpp"
#include "isore/optim.hpp"

namespace isore {

// Checkpoint container: a JSON header describing named parameter arrays
// (component, name, shape, dtype, byte order) followed by one raw blob of
// row-major data. Reloading restores parameters bit for bit.

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
    j = {{"kind", c.kind == GeneratorKind::unet3d ? "unet3d" : "dlg3d"},
         {"base_channels", c.base_channels},
         {"depth", c.depth},
         {"dlg_kernels", c.dlg_kernels},
         {"dlg_pads", c.dlg_pads},
         {"dlg_channels", c.dlg_channels}};
}

inline void from_json(const nlohmann::json& j, GeneratorConfig& c) {
    const std::string kind = j.at("kind");
    if (kind == "unet3d")
        c.kind = GeneratorKind::unet3d;
    else if (kind == "dlg3d")
        c.kind = GeneratorKind::dlg3d;
    else
        throw ConfigError("unknown generator kind: " + kind);
    c.base_channels = j.at("base_channels");
    c.depth = j.at("depth");
    c.dlg_kernels = j.at("dlg_kernels").get<std::vector<int>>();
    c.dlg_pads = j.at("dlg_pads").get<std::vector<int>>();
    c.dlg_channels = j.at("dlg_channels");
}

inline void to_json(nlohmann::json& j, const DiscriminatorConfig& c) {
    j = {{"blocks", c.blocks},       {"kernel", c.kernel},
         {"stride", c.stride},       {"pad", c.pad},
         {"leaky_slope", c.leaky_slope}, {"channels", c.channels}};
}

inline void from_json(const nlohmann::json& j, DiscriminatorConfig& c) {
    c.blocks = j.at("blocks");
    c.kernel = j.at("kernel");
    c.stride = j.at("stride");
    c.pad = j.at("pad");
    c.leaky_slope = j.at("leaky_slope");
    c.channels = j.at("channels").get<std::vector<int>>();
}

namespace ckptdetail {

inline constexpr char kMagic[] = "ISORECKPT1\n";

template <class T>
const char* dtype_name() {
    if constexpr (sizeof(T) == 4)
        return "f32";
    else
        return "f64";
}

}  // namespace ckptdetail

template <class T>
struct OptimizerBlob {
    std::array<Adam<T>*, 8> adams{};  // G, F, DX0..2, DY0..2
};

template <class T>
void save_checkpoint(const std::string& path, ModelBundle<T>& bundle, long long iteration,
                     OptimizerBlob<T>* opt = nullptr, const nlohmann::json& extra = {}) {
    using nlohmann::json;
    const std::array<std::string, 8> comp_names{"G", "F", "DX0", "DX1", "DX2",
                                                "DY0", "DY1", "DY2"};
    std::array<std::vector<ParamRef<T>>, 8> comp_params{
        bundle.G.params(),     bundle.F.params(),     bundle.DX[0].params(),
        bundle.DX[1].params(), bundle.DX[2].params(), bundle.DY[0].params(),
        bundle.DY[1].params(), bundle.DY[2].params()};

    json header;
    header["format"] = "isore-checkpoint";
    header["version"] = ISORE_VERSION;
    header["byte_order"] = "little";
    header["dtype"] = ckptdetail::dtype_name<T>();
    header["iteration"] = iteration;
    header["generator"] = bundle.g_cfg;
    header["backward_generator"] = bundle.f_cfg;
    header["discriminator"] = bundle.d_cfg;
    header["has_optimizer"] = opt != nullptr;
    if (!extra.is_null()) header["extra"] = extra;

    std::vector<const std::vector<T>*> blobs;
    size_t offset = 0;
    json components = json::array();
    for (size_t c = 0; c < comp_names.size(); ++c) {
        json jc;
        jc["name"] = comp_names[c];
        json arrays = json::array();
        auto add_array = [&](const std::string& name, const std::vector<T>* data,
                             const std::vector<int>& shape) {
            json ja;
            ja["name"] = name;
            ja["shape"] = shape.empty() ? std::vector<int>{int(data->size())} : shape;
            ja["count"] = data->size();
            ja["offset"] = offset;
            arrays.push_back(ja);
            blobs.push_back(data);
            offset += data->size() * sizeof(T);
        };
        for (auto& p : comp_params[c]) add_array(p.name, p.value, p.shape);
        if (opt && opt->adams[c]) {
            auto& m = opt->adams[c]->moments_m();
            auto& v = opt->adams[c]->moments_v();
            jc["adam_steps"] = opt->adams[c]->steps();
            for (size_t i = 0; i < m.size(); ++i) {
                add_array("adam_m:" + comp_params[c][i].name, &m[i], {});
                add_array("adam_v:" + comp_params[c][i].name, &v[i], {});
            }
        }
        jc["arrays"] = arrays;
        components.push_back(jc);
    }
    header["components"] = components;

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw IoError("cannot create checkpoint: " + path);
        f.write(ckptdetail::kMagic, sizeof(ckptdetail::kMagic) - 1);
        const std::string hs = header.dump();
        const uint64_t hlen = hs.size();
        f.write(reinterpret_cast<const char*>(&hlen), 8);
        f.write(hs.data(), std::streamsize(hs.size()));
        for (const auto* b : blobs)
            f.write(reinterpret_cast<const char*>(b->data()), std::streamsize(b->size() * sizeof(T)));
        if (!f) throw IoError("checkpoint write failed: " + path);
    }
    std::filesystem::rename(tmp, path);  // atomic publish
}

struct CheckpointInfo {
    nlohmann::json header;
    GeneratorConfig g_cfg, f_cfg;
    DiscriminatorConfig d_cfg;
    long long iteration = 0;
    bool has_optimizer = false;
};

template <class T>
CheckpointInfo load_checkpoint(const std::string& path, ModelBundle<T>* bundle,
                               OptimizerBlob<T>* opt = nullptr) {
    using nlohmann::json;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    char magic[sizeof(ckptdetail::kMagic) - 1];
    f.read(magic, sizeof magic);
    if (!f || std::memcmp(magic, ckptdetail::kMagic, sizeof magic) != 0)
        throw IoError("not an isore checkpoint: " + path);
    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), 8);
    std::string hs(hlen, '\0');
    f.read(hs.data(), std::streamsize(hlen));
    if (!f) throw IoError("truncated checkpoint header: " + path);
    json header = json::parse(hs);
    if (header.at("dtype") != ckptdetail::dtype_name<T>())
        throw ConfigError("checkpoint dtype mismatch");
    if (header.at("byte_order") != "little") throw ConfigError("checkpoint byte order mismatch");

    CheckpointInfo info;
    info.header = header;
    info.g_cfg = header.at("generator").get<GeneratorConfig>();
    info.f_cfg = header.at("backward_generator").get<GeneratorConfig>();
    info.d_cfg = header.at("discriminator").get<DiscriminatorConfig>();
    info.iteration = header.at("iteration");
    info.has_optimizer = header.value("has_optimizer", false);
    const std::streampos data_start = f.tellg();

    if (!bundle) return info;
    *bundle = ModelBundle<T>(info.g_cfg, info.f_cfg, info.d_cfg, /*seed=*/0);

    const std::array<std::string, 8> comp_names{"G", "F", "DX0", "DX1", "DX2",
                                                "DY0", "DY1", "DY2"};
    std::array<std::vector<ParamRef<T>>, 8> comp_params{
        bundle->G.params(),     bundle->F.params(),     bundle->DX[0].params(),
        bundle->DX[1].params(), bundle->DX[2].params(), bundle->DY[0].params(),
        bundle->DY[1].params(), bundle->DY[2].params()};

    for (const auto& jc : header.at("components")) {
        const std::string cname = jc.at("name");
        const auto it = std::find(comp_names.begin(), comp_names.end(), cname);
        if (it == comp_names.end()) throw ConfigError("unknown checkpoint component " + cname);
        const size_t c = size_t(it - comp_names.begin());
        std::map<std::string, std::vector<T>*> dest;
        for (auto& p : comp_params[c]) dest[p.name] = p.value;
        if (opt && opt->adams[c] && info.has_optimizer) {
            auto& adam = *opt->adams[c];
            adam.set_steps(jc.value("adam_steps", 0LL));
            auto& m = adam.moments_m();
            auto& v = adam.moments_v();
            m.clear();
            v.clear();
            for (auto& p : comp_params[c]) {
                m.emplace_back(p.value->size(), T(0));
                v.emplace_back(p.value->size(), T(0));
            }
            for (size_t i = 0; i < comp_params[c].size(); ++i) {
                dest["adam_m:" + comp_params[c][i].name] = &m[i];
                dest["adam_v:" + comp_params[c][i].name] = &v[i];
            }
        }
        for (const auto& ja : jc.at("arrays")) {
            const std::string aname = ja.at("name");
            auto d = dest.find(aname);
            if (d == dest.end()) continue;  // optimizer arrays when not requested
            const size_t count = ja.at("count");
            if (d->second->size() != count)
                throw ConfigError("checkpoint array size mismatch for " + aname);
            f.seekg(data_start + std::streampos(ja.at("offset").get<size_t>()));
            f.read(reinterpret_cast<char*>(d->second->data()),
                   std::streamsize(count * sizeof(T)));
            if (!f) throw IoError("truncated checkpoint data: " + path);
        }
    }
    return info;
}

}  // namespace isore
