#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "phishlab/corpus.hpp"
#include "phishlab/error.hpp"
#include "phishlab/io.hpp"
#include "phishlab/rng.hpp"

#ifndef PHISHLAB_DATA_DIR
#define PHISHLAB_DATA_DIR "data"
#endif

namespace phishlab::synthgen {

struct SynthSpec {
    std::size_t n_per_class = 10;
    std::uint64_t seed = 0;
    double cue_strength = 1.0;  // P(phishing sample carries a cue phrase)
};

/// Template pools and slot fillers. Templates use {slot} placeholders;
/// phishing templates must contain {cue}, benign templates must not.
struct TemplatePool {
    int version = 0;
    std::vector<std::string> phishing_templates;
    std::vector<std::string> benign_templates;
    std::vector<std::string> cue_phrases;
    std::map<std::string, std::vector<std::string>> slots;  // slot name -> fillers
};

inline constexpr int kPoolVersion = 1;

inline std::filesystem::path default_pool_path() {
    return std::filesystem::path(PHISHLAB_DATA_DIR) / "synth_pool_v1.json";
}

inline bool contains_cue(std::string_view text, const TemplatePool& pool) {
    for (const auto& cue : pool.cue_phrases) {
        if (text.find(cue) != std::string_view::npos) {
            return true;
        }
    }
    return false;
}

inline TemplatePool parse_pool(std::string_view json_text) {
    TemplatePool pool;
    try {
        const auto j = nlohmann::json::parse(json_text);
        pool.version = j.at("version").get<int>();
        if (pool.version != kPoolVersion) {
            throw ValidationError("unsupported template pool version " + std::to_string(pool.version));
        }
        pool.phishing_templates = j.at("phishing_templates").get<std::vector<std::string>>();
        pool.benign_templates = j.at("benign_templates").get<std::vector<std::string>>();
        pool.cue_phrases = j.at("cue_phrases").get<std::vector<std::string>>();
        pool.slots["cue_filler"] = j.at("neutral_fillers").get<std::vector<std::string>>();
        const std::map<std::string, std::string> slot_keys = {
            {"name", "names"},   {"brand", "brands"}, {"phish_url", "phish_urls"}, {"safe_url", "safe_urls"},
            {"day", "days"},     {"time", "times"},   {"amount", "amounts"},       {"room", "rooms"}};
        for (const auto& [slot, key] : slot_keys) {
            pool.slots[slot] = j.at(key).get<std::vector<std::string>>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("template pool malformed: ") + e.what());
    }
    if (pool.phishing_templates.size() < 20 || pool.benign_templates.size() < 20) {
        throw ValidationError("template pool needs at least 20 templates per class");
    }
    for (const auto& t : pool.phishing_templates) {
        if (t.find("{cue}") == std::string::npos) {
            throw ValidationError("phishing template lacks a {cue} slot: " + t);
        }
    }
    for (const auto& t : pool.benign_templates) {
        if (t.find("{cue}") != std::string::npos || contains_cue(t, pool)) {
            throw ValidationError("benign template carries a cue: " + t);
        }
    }
    for (const auto& [slot, fillers] : pool.slots) {
        if (fillers.empty()) {
            throw ValidationError("template pool slot '" + slot + "' is empty");
        }
        for (const auto& f : fillers) {
            if (contains_cue(f, pool)) {
                throw ValidationError("slot filler carries a cue phrase: " + f);
            }
        }
    }
    return pool;
}

inline TemplatePool load_pool(const std::filesystem::path& path) { return parse_pool(io::read_file(path)); }

inline const TemplatePool& default_pool() {
    static const TemplatePool pool = load_pool(default_pool_path());
    return pool;
}

namespace detail {

template <class T>
const T& pick(const std::vector<T>& v, SplitMix64& rng) {
    return v[rng.below(v.size())];
}

inline std::string fill(std::string_view tmpl, const TemplatePool& pool, SplitMix64& rng, bool plant_cue) {
    std::string out;
    for (std::size_t i = 0; i < tmpl.size();) {
        if (tmpl[i] == '{') {
            const auto close = tmpl.find('}', i);
            if (close == std::string_view::npos) {
                throw ValidationError("unterminated slot in template: " + std::string(tmpl));
            }
            const std::string slot(tmpl.substr(i + 1, close - i - 1));
            if (slot == "cue") {
                out += plant_cue ? pick(pool.cue_phrases, rng) : pick(pool.slots.at("cue_filler"), rng);
            } else {
                auto it = pool.slots.find(slot);
                if (it == pool.slots.end()) {
                    throw ValidationError("unknown slot {" + slot + "} in template");
                }
                out += pick(it->second, rng);
            }
            i = close + 1;
        } else {
            out.push_back(tmpl[i]);
            ++i;
        }
    }
    return out;
}

} // namespace detail

/// Exactly n_per_class phishing and n_per_class benign samples, alternating
/// phishing/benign, ids "synth-000000"... Each phishing sample carries a cue
/// phrase with probability cue_strength; benign samples never do. Output is
/// already normalized.
inline std::vector<corpus::Sample> generate(const SynthSpec& spec, const TemplatePool& pool) {
    if (spec.n_per_class < 1) {
        throw ValidationError("synth: n_per_class must be at least 1");
    }
    if (!(spec.cue_strength >= 0.0 && spec.cue_strength <= 1.0)) {
        throw ValidationError("synth: cue_strength must lie in [0, 1]");
    }
    SplitMix64 rng(spec.seed);
    std::vector<corpus::Sample> out;
    out.reserve(2 * spec.n_per_class);
    char id[32];
    for (std::size_t i = 0; i < 2 * spec.n_per_class; ++i) {
        const bool phishing = i % 2 == 0;
        std::string text;
        if (phishing) {
            const bool cue = rng.uniform() < spec.cue_strength;
            text = detail::fill(detail::pick(pool.phishing_templates, rng), pool, rng, cue);
        } else {
            text = detail::fill(detail::pick(pool.benign_templates, rng), pool, rng, false);
            if (contains_cue(text, pool)) {
                throw std::logic_error("benign sample assembled a cue phrase: " + text);
            }
        }
        std::snprintf(id, sizeof id, "synth-%06zu", i);
        out.push_back({id, std::move(text), phishing ? 1 : 0});
    }
    return out;
}

inline std::vector<corpus::Sample> generate(const SynthSpec& spec) { return generate(spec, default_pool()); }

} // namespace phishlab::synthgen
