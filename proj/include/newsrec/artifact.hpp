#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "newsrec/digest.hpp"
#include "newsrec/error.hpp"

namespace newsrec {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kFormatVersion = 1;

/// Provenance header carried by every artifact file: the first JSON-lines
/// record ({"_meta": {...}}), a "# ..." comment line in text formats, or the
/// header block of binary snapshots.
struct ArtifactMeta {
    std::string artifact;
    int format_version = kFormatVersion;
    std::string tool_version = kToolVersion;
    std::string config_digest;
    std::uint64_t seed = 0;
    /// Digest of the query/gold file a run was produced for; empty when n/a.
    std::string queries_digest;
};

inline nlohmann::json meta_to_json(const ArtifactMeta& m) {
    nlohmann::json j = {{"artifact", m.artifact},
                        {"format_version", m.format_version},
                        {"tool_version", m.tool_version},
                        {"config_digest", m.config_digest},
                        {"seed", m.seed}};
    if (!m.queries_digest.empty()) {
        j["queries_digest"] = m.queries_digest;
    }
    return j;
}

inline ArtifactMeta meta_from_json(const nlohmann::json& j) {
    ArtifactMeta m;
    m.artifact = j.at("artifact").get<std::string>();
    m.format_version = j.at("format_version").get<int>();
    m.tool_version = j.at("tool_version").get<std::string>();
    m.config_digest = j.at("config_digest").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.queries_digest = j.value("queries_digest", std::string{});
    return m;
}

inline std::string meta_line(const ArtifactMeta& m) {
    return nlohmann::json{{"_meta", meta_to_json(m)}}.dump();
}

inline std::string meta_comment(const ArtifactMeta& m) { return "# " + meta_to_json(m).dump(); }

inline std::optional<ArtifactMeta> meta_from_record(const nlohmann::json& record) {
    if (record.is_object() && record.contains("_meta")) {
        return meta_from_json(record.at("_meta"));
    }
    return std::nullopt;
}

/// Rejects artifacts written with another format version.
inline void check_meta(const ArtifactMeta& m, const std::string& path) {
    if (m.format_version != kFormatVersion) {
        fail_user(path + ": artifact format version " + std::to_string(m.format_version) +
                  " is not supported (expected " + std::to_string(kFormatVersion) +
                  "); regenerate it with the '" + m.artifact + "' stage of this tool version");
    }
}

inline std::string config_digest(const nlohmann::json& config) { return sha256_hex(config.dump()).substr(0, 16); }

/// Stage manifest: inputs and outputs by file name and digest, config, seed.
inline void write_manifest(const std::filesystem::path& path, const std::string& stage,
                           const nlohmann::json& config, std::uint64_t seed,
                           const std::vector<std::string>& inputs, const std::vector<std::string>& outputs) {
    nlohmann::json j;
    j["stage"] = stage;
    j["tool_version"] = kToolVersion;
    j["format_version"] = kFormatVersion;
    j["seed"] = seed;
    j["config"] = config;
    j["config_digest"] = config_digest(config);
    auto digest_map = [](const std::vector<std::string>& files) {
        nlohmann::json m = nlohmann::json::object();
        for (const auto& f : files) {
            m[std::filesystem::path(f).filename().string()] = file_digest(f);
        }
        return m;
    };
    j["inputs"] = digest_map(inputs);
    j["outputs"] = digest_map(outputs);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        fail_user("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
}

}  // namespace newsrec
