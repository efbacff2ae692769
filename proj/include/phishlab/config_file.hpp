#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>
#include <toml.hpp>

#include "phishlab/error.hpp"
#include "phishlab/io.hpp"

namespace phishlab::config {

namespace detail {

inline nlohmann::json to_json(const toml::node& node) {
    if (const auto* t = node.as_table()) {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [k, v] : *t) {
            j[std::string(k.str())] = to_json(v);
        }
        return j;
    }
    if (const auto* a = node.as_array()) {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& v : *a) {
            j.push_back(to_json(v));
        }
        return j;
    }
    if (const auto* s = node.as_string()) {
        return s->get();
    }
    if (const auto* i = node.as_integer()) {
        return i->get();
    }
    if (const auto* f = node.as_floating_point()) {
        return f->get();
    }
    if (const auto* b = node.as_boolean()) {
        return b->get();
    }
    throw ValidationError("config: unsupported TOML value (dates and times are not accepted)");
}

} // namespace detail

/// Reads a TOML (.toml) or JSON (anything else) config file into JSON.
inline nlohmann::json load(const std::filesystem::path& path) {
    const std::string text = io::read_file(path);
    if (path.extension() == ".toml") {
        try {
            return detail::to_json(toml::parse(text, path.string()));
        } catch (const toml::parse_error& e) {
            throw ValidationError("config " + path.string() + ": " + std::string(e.description()));
        }
    }
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("config " + path.string() + ": " + e.what());
    }
}

/// The [model] table when present, otherwise the whole document.
inline const nlohmann::json& model_section(const nlohmann::json& doc) {
    auto it = doc.find("model");
    return it != doc.end() && it->is_object() ? *it : doc;
}

inline const nlohmann::json* section(const nlohmann::json& doc, const char* name) {
    auto it = doc.find(name);
    return it != doc.end() && it->is_object() ? &*it : nullptr;
}

} // namespace phishlab::config
