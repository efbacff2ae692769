#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "phishlab/error.hpp"
#include "phishlab/io.hpp"
#include "phishlab/model/lora.hpp"
#include "phishlab/model/model.hpp"

// File layout shared by checkpoints and adapters:
//
//   8 bytes   magic ("PHLBCKPT" or "PHLBLORA")
//   8 bytes   header length H, unsigned little-endian
//   H bytes   JSON header: version, config, tensor manifest
//             (name, shape, byte offset into the payload), payload hash
//   payload   raw little-endian float32 values in manifest order
//
// Loading checks magic, version, manifest and the SHA-256 of the payload
// before any tensor is returned.

namespace phishlab::model {

inline constexpr int kFileVersion = 1;
inline constexpr std::string_view kCheckpointMagic = "PHLBCKPT";
inline constexpr std::string_view kAdapterMagic = "PHLBLORA";

namespace detail {

struct NamedTensor {
    std::string name;
    const Tensor<float>* tensor;
};

inline std::string assemble(std::string_view magic, nlohmann::ordered_json header,
                            const std::vector<NamedTensor>& tensors) {
    std::string payload;
    auto manifest = nlohmann::ordered_json::array();
    for (const auto& nt : tensors) {
        manifest.push_back({{"name", nt.name}, {"shape", nt.tensor->shape()}, {"offset", payload.size()}});
        append_le_floats(payload, nt.tensor->span());
    }
    header["tensors"] = std::move(manifest);
    header["payload_bytes"] = payload.size();
    header["payload_hash"] = "sha256:" + io::sha256_hex(payload);
    const std::string h = header.dump();
    std::string out(magic);
    const std::uint64_t len = h.size();
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((len >> (8 * i)) & 0xFF));
    }
    out += h;
    out += payload;
    return out;
}

struct Parsed {
    nlohmann::json header;
    std::string_view payload;
};

inline Parsed parse(std::string_view bytes, std::string_view magic, std::string_view what) {
    if (bytes.size() < 16) {
        throw CorruptionError(std::string(what) + " file truncated (no header)");
    }
    if (bytes.substr(0, 8) != magic) {
        throw CorruptionError(std::string(what) + " file has wrong magic");
    }
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) {
        len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
    }
    if (len > bytes.size() - 16) {
        throw CorruptionError(std::string(what) + " file truncated (header)");
    }
    Parsed p;
    try {
        p.header = nlohmann::json::parse(bytes.substr(16, len));
    } catch (const nlohmann::json::parse_error& e) {
        throw CorruptionError(std::string(what) + " header is not valid JSON: " + e.what());
    }
    if (!p.header.is_object() || !p.header.contains("version")) {
        throw CorruptionError(std::string(what) + " header lacks a version");
    }
    if (p.header["version"] != kFileVersion) {
        throw CorruptionError("unknown " + std::string(what) + " version " + p.header["version"].dump());
    }
    p.payload = bytes.substr(16 + len);
    try {
        const auto expected = p.header.at("payload_bytes").get<std::uint64_t>();
        if (p.payload.size() != expected) {
            throw CorruptionError(std::string(what) + " payload is " + std::to_string(p.payload.size()) +
                                  " bytes, header says " + std::to_string(expected) + " (truncated?)");
        }
        const auto hash = p.header.at("payload_hash").get<std::string>();
        if (hash != "sha256:" + io::sha256_hex(p.payload)) {
            throw CorruptionError(std::string(what) + " payload hash mismatch");
        }
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError(std::string(what) + " header malformed: " + e.what());
    }
    return p;
}

/// Fills tensors whose names and shapes must match the manifest exactly.
inline void fill_tensors(const Parsed& p, const std::vector<std::pair<std::string, Tensor<float>*>>& dst,
                         std::string_view what) {
    try {
        const auto& manifest = p.header.at("tensors");
        if (manifest.size() != dst.size()) {
            throw CorruptionError(std::string(what) + " manifest lists " + std::to_string(manifest.size()) +
                                  " tensors, expected " + std::to_string(dst.size()));
        }
        for (std::size_t i = 0; i < dst.size(); ++i) {
            const auto& entry = manifest[i];
            const auto& [name, tensor] = dst[i];
            if (entry.at("name").get<std::string>() != name) {
                throw CorruptionError(std::string(what) + " manifest entry " + std::to_string(i) + " is '" +
                                      entry.at("name").get<std::string>() + "', expected '" + name + "'");
            }
            if (entry.at("shape").get<nn::Shape>() != tensor->shape()) {
                throw CorruptionError(std::string(what) + " tensor '" + name + "' has unexpected shape");
            }
            const auto offset = entry.at("offset").get<std::uint64_t>();
            const std::uint64_t bytes = tensor->size() * 4;
            if (offset > p.payload.size() || bytes > p.payload.size() - offset) {
                throw CorruptionError(std::string(what) + " tensor '" + name + "' runs past the payload");
            }
            read_le_floats(p.payload.substr(offset, bytes), tensor->span());
        }
    } catch (const nlohmann::json::exception& e) {
        throw CorruptionError(std::string(what) + " manifest malformed: " + e.what());
    }
}

} // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
    nlohmann::ordered_json header;
    header["format"] = "phishlab-checkpoint";
    header["version"] = kFileVersion;
    header["config"] = to_json(ckpt.config);
    if (ckpt.vocabulary) {
        header["tokenizer"] = nlohmann::ordered_json::parse(tokenizer::to_json(*ckpt.vocabulary));
    }
    std::vector<detail::NamedTensor> tensors;
    for_each_tensor(ckpt.weights, ckpt.config,
                    [&](const std::string& name, const Tensor<float>& t) { tensors.push_back({name, &t}); });
    return detail::assemble(kCheckpointMagic, std::move(header), tensors);
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
    auto parsed = detail::parse(bytes, kCheckpointMagic, "checkpoint");
    Checkpoint ck;
    try {
        ck.config = config_from_json(parsed.header.at("config"));
    } catch (const std::exception& e) {
        throw CorruptionError(std::string("checkpoint config invalid: ") + e.what());
    }
    ck.weights = zeros_like<float>(ck.config);
    std::vector<std::pair<std::string, Tensor<float>*>> dst;
    for_each_tensor(ck.weights, ck.config, [&](const std::string& name, Tensor<float>& t) { dst.emplace_back(name, &t); });
    detail::fill_tensors(parsed, dst, "checkpoint");
    if (parsed.header.contains("tokenizer")) {
        ck.vocabulary = tokenizer::from_json(parsed.header["tokenizer"].dump());
    }
    return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    io::write_file_atomic(path, serialize_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return deserialize_checkpoint(io::read_file(path));
}

inline std::string serialize_adapter(const LoraAdapter<float>& ad, const ModelConfig& base) {
    validate_adapter(ad, base);
    nlohmann::ordered_json header;
    header["format"] = "phishlab-lora";
    header["version"] = kFileVersion;
    header["base_config"] = to_json(base);
    header["rank"] = ad.spec.rank;
    header["alpha"] = ad.spec.alpha;
    auto targets = nlohmann::ordered_json::array();
    for (auto t : ad.spec.targets) {
        targets.push_back(std::string(target_name(t)));
    }
    header["targets"] = std::move(targets);
    std::vector<detail::NamedTensor> tensors;
    ad.for_each_tensor([&](const std::string& name, const Tensor<float>& t) { tensors.push_back({name, &t}); });
    return detail::assemble(kAdapterMagic, std::move(header), tensors);
}

struct LoadedAdapter {
    LoraAdapter<float> adapter;
    ModelConfig base_config;
};

inline LoadedAdapter deserialize_adapter(std::string_view bytes) {
    auto parsed = detail::parse(bytes, kAdapterMagic, "adapter");
    LoadedAdapter out;
    try {
        out.base_config = config_from_json(parsed.header.at("base_config"));
        LoraSpec spec;
        spec.rank = parsed.header.at("rank").get<std::size_t>();
        spec.alpha = parsed.header.at("alpha").get<double>();
        spec.targets.clear();
        for (const auto& t : parsed.header.at("targets")) {
            spec.targets.push_back(target_from_name(t.get<std::string>()));
        }
        out.adapter = zero_adapter<float>(out.base_config, spec);
    } catch (const std::exception& e) {
        throw CorruptionError(std::string("adapter header invalid: ") + e.what());
    }
    std::vector<std::pair<std::string, Tensor<float>*>> dst;
    out.adapter.for_each_tensor([&](const std::string& name, Tensor<float>& t) { dst.emplace_back(name, &t); });
    detail::fill_tensors(parsed, dst, "adapter");
    return out;
}

inline void save_adapter(const std::filesystem::path& path, const LoraAdapter<float>& ad, const ModelConfig& base) {
    io::write_file_atomic(path, serialize_adapter(ad, base));
}

inline LoadedAdapter load_adapter(const std::filesystem::path& path) {
    return deserialize_adapter(io::read_file(path));
}

} // namespace phishlab::model
