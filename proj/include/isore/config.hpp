#pragma once

#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "isore/common.hpp"
#include "isore/preprocess.hpp"

namespace isore {

using nlohmann::json;

// One structured config file drives every subcommand; sections are per
// command and unknown keys are rejected up front.
struct RunConfig {
    json root = json::object();
    std::string config_path;
    std::string output_dir = "out";
    uint64_t seed = 1;

    json section(const std::string& name) const {
        return root.contains(name) ? root.at(name) : json::object();
    }
};

inline void check_keys(const json& obj, const std::set<std::string>& allowed,
                       const std::string& context) {
    if (!obj.is_object()) throw ConfigError(context + " must be a JSON object");
    for (const auto& [key, _] : obj.items())
        if (!allowed.count(key))
            throw ConfigError("unknown key '" + key + "' in " + context);
}

inline json load_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path);
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
}

// --set section.key=value overrides; the value is parsed as JSON when
// possible, otherwise taken as a string.
inline void apply_override(json& root, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override must look like section.key=value");
    const std::string path = assignment.substr(0, eq);
    const std::string value = assignment.substr(eq + 1);
    json parsed;
    try {
        parsed = json::parse(value);
    } catch (const json::parse_error&) {
        parsed = value;
    }
    json* node = &root;
    size_t start = 0;
    for (;;) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot - start);
        if (key.empty()) throw ConfigError("empty key in override path: " + path);
        if (dot == std::string::npos) {
            (*node)[key] = parsed;
            return;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

inline RunConfig load_run_config(const std::string& config_path,
                                 const std::vector<std::string>& overrides,
                                 std::optional<uint64_t> seed_flag,
                                 std::optional<std::string> output_dir_flag) {
    RunConfig rc;
    rc.config_path = config_path;
    if (!config_path.empty()) rc.root = load_json_file(config_path);
    if (!rc.root.is_object()) throw ConfigError("config root must be a JSON object");
    for (const auto& o : overrides) apply_override(rc.root, o);
    static const std::set<std::string> top_keys{"seed",    "output_dir", "phantom", "preprocess",
                                                "train",   "restore",    "evaluate", "rl"};
    check_keys(rc.root, top_keys, "config");
    rc.seed = rc.root.value("seed", 1ull);
    rc.output_dir = rc.root.value("output_dir", std::string("out"));
    if (seed_flag) rc.seed = *seed_flag;
    if (output_dir_flag) rc.output_dir = *output_dir_flag;
    if (rc.output_dir.empty()) throw ConfigError("output_dir must not be empty");
    return rc;
}

inline uint64_t hash_json(const json& j) {
    const std::string s = j.dump();  // object keys are sorted -> canonical
    return fnv1a(s.data(), s.size());
}

inline uint64_t hash_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot hash missing file: " + path);
    uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (f.read(buf, sizeof buf) || f.gcount() > 0) h = fnv1a(buf, size_t(f.gcount()), h);
    return h;
}

// Every command writes one of these next to its outputs; identical runs
// produce byte-identical manifests (no timestamps inside).
inline void write_command_manifest(const RunConfig& rc, const std::string& command,
                                   const json& resolved_section,
                                   const std::vector<std::string>& inputs,
                                   const std::vector<std::string>& outputs) {
    json m;
    m["command"] = command;
    m["version"] = ISORE_VERSION;
    m["seed"] = rc.seed;
    m["output_dir"] = rc.output_dir;
    m["config"] = resolved_section;
    json cfg_and_seed = resolved_section;
    cfg_and_seed["__seed"] = rc.seed;
    m["config_hash"] = hex64(hash_json(cfg_and_seed));
    json jin = json::object(), jout = json::object();
    for (const auto& p : inputs) jin[p] = hex64(hash_file(p));
    for (const auto& p : outputs) jout[p] = hex64(hash_file(p));
    m["inputs"] = jin;
    m["outputs"] = jout;
    const std::string path =
        (std::filesystem::path(rc.output_dir) / (command + "_manifest.json")).string();
    std::ofstream f(path);
    if (!f) throw IoError("cannot write manifest: " + path);
    f << m.dump(2) << '\n';
    if (!f) throw IoError("manifest write failed: " + path);
}

inline void save_normalization(const NormalizationRecord& rec, const std::string& path) {
    json j{{"low_clip", rec.low_clip},
           {"high_clip", rec.high_clip},
           {"low_pct", rec.low_pct},
           {"high_pct", rec.high_pct}};
    std::ofstream f(path);
    if (!f) throw IoError("cannot write normalization record: " + path);
    f << j.dump(2) << '\n';
}

inline NormalizationRecord load_normalization(const std::string& path) {
    const json j = load_json_file(path);
    NormalizationRecord rec;
    rec.low_clip = j.at("low_clip");
    rec.high_clip = j.at("high_clip");
    rec.low_pct = j.at("low_pct");
    rec.high_pct = j.at("high_pct");
    return rec;
}

}  // namespace isore
