#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include "phishlab/error.hpp"
#include "phishlab/io.hpp"
#include "phishlab/rng.hpp"

namespace phishlab::corpus {

/// One labeled record. label: 0 = benign, 1 = phishing.
struct Sample {
    std::string id;
    std::string text;
    int label = 0;

    friend bool operator==(const Sample&, const Sample&) = default;
};

enum class Format { jsonl, csv };

inline Format format_from_path(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".csv") {
        return Format::csv;
    }
    return Format::jsonl;
}

namespace detail {

inline std::string row_error(std::size_t row, std::string_view field, std::string_view what) {
    std::ostringstream os;
    os << "row " << row << ", field '" << field << "': " << what;
    return os.str();
}

inline void check_unique_ids(const std::vector<Sample>& samples) {
    std::set<std::string_view> seen;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!seen.insert(samples[i].id).second) {
            throw ValidationError(row_error(i + 1, "id", "duplicate id '" + samples[i].id + "'"));
        }
    }
}

inline int parse_label_text(std::string_view s, std::size_t row) {
    if (s == "0") {
        return 0;
    }
    if (s == "1") {
        return 1;
    }
    throw ValidationError(row_error(row, "label", "label must be 0 or 1, got '" + std::string(s) + "'"));
}

inline std::vector<Sample> parse_jsonl(std::string_view data) {
    std::vector<Sample> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < data.size()) {
        std::size_t end = data.find('\n', pos);
        if (end == std::string_view::npos) {
            end = data.size();
        }
        std::string_view line = data.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        if (line.find_first_not_of(" \t") == std::string_view::npos) {
            continue;
        }
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError(row_error(line_no, "<record>", std::string("invalid JSON: ") + e.what()));
        }
        if (!obj.is_object()) {
            throw ValidationError(row_error(line_no, "<record>", "expected a JSON object"));
        }
        Sample s;
        auto text = obj.find("text");
        if (text == obj.end() || !text->is_string()) {
            throw ValidationError(row_error(line_no, "text", "missing or not a string"));
        }
        s.text = text->get<std::string>();
        auto label = obj.find("label");
        if (label == obj.end()) {
            throw ValidationError(row_error(line_no, "label", "missing"));
        }
        if (label->is_number_integer()) {
            const auto v = label->get<std::int64_t>();
            if (v != 0 && v != 1) {
                throw ValidationError(row_error(line_no, "label", "label must be 0 or 1, got " + std::to_string(v)));
            }
            s.label = static_cast<int>(v);
        } else if (label->is_string()) {
            s.label = parse_label_text(label->get<std::string>(), line_no);
        } else {
            throw ValidationError(row_error(line_no, "label", "label must be 0 or 1, got " + label->dump()));
        }
        auto id = obj.find("id");
        if (id == obj.end() || id->is_null()) {
            s.id = std::to_string(out.size());
        } else if (id->is_string()) {
            s.id = id->get<std::string>();
        } else if (id->is_number_integer()) {
            s.id = std::to_string(id->get<std::int64_t>());
        } else {
            throw ValidationError(row_error(line_no, "id", "must be a string or integer"));
        }
        out.push_back(std::move(s));
    }
    return out;
}

/// RFC 4180 records: quoted fields may contain commas, doubled quotes and
/// newlines.
inline std::vector<std::vector<std::string>> parse_csv_records(std::string_view data) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> fields;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    std::size_t record_no = 1;
    auto end_record = [&] {
        fields.push_back(std::move(field));
        field.clear();
        const bool blank = fields.size() == 1 && fields[0].empty() && !field_started;
        if (!blank) {
            records.push_back(std::move(fields));
        }
        fields.clear();
        field_started = false;
        ++record_no;
    };
    for (std::size_t i = 0; i < data.size(); ++i) {
        const char c = data[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < data.size() && data[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        switch (c) {
        case '"':
            if (!field.empty()) {
                throw ValidationError(row_error(record_no, "<record>", "stray quote inside unquoted field"));
            }
            in_quotes = true;
            field_started = true;
            break;
        case ',':
            fields.push_back(std::move(field));
            field.clear();
            field_started = true;
            break;
        case '\r':
            break;
        case '\n':
            end_record();
            break;
        default:
            field.push_back(c);
            field_started = true;
        }
    }
    if (in_quotes) {
        throw ValidationError(row_error(record_no, "<record>", "unterminated quoted field"));
    }
    if (field_started || !fields.empty() || !field.empty()) {
        end_record();
    }
    return records;
}

inline std::vector<Sample> parse_csv(std::string_view data) {
    auto records = parse_csv_records(data);
    std::vector<Sample> out;
    if (records.empty()) {
        return out;
    }
    const auto& header = records.front();
    std::optional<std::size_t> text_col, label_col, id_col;
    for (std::size_t i = 0; i < header.size(); ++i) {
        std::string name = header[i];
        if (i == 0 && name.starts_with("\xEF\xBB\xBF")) {
            name.erase(0, 3);
        }
        if (name == "text") {
            text_col = i;
        } else if (name == "label") {
            label_col = i;
        } else if (name == "id") {
            id_col = i;
        }
    }
    if (!text_col) {
        throw ValidationError(row_error(0, "text", "CSV header lacks a 'text' column"));
    }
    if (!label_col) {
        throw ValidationError(row_error(0, "label", "CSV header lacks a 'label' column"));
    }
    for (std::size_t r = 1; r < records.size(); ++r) {
        const auto& rec = records[r];
        if (rec.size() != header.size()) {
            throw ValidationError(row_error(r, "<record>", "expected " + std::to_string(header.size()) +
                                                               " fields, got " + std::to_string(rec.size())));
        }
        Sample s;
        s.text = rec[*text_col];
        s.label = parse_label_text(rec[*label_col], r);
        s.id = id_col && !rec[*id_col].empty() ? rec[*id_col] : std::to_string(out.size());
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace detail

/// Parses JSON Lines or CSV records. Row numbers in errors are 1-based
/// (JSONL: line number; CSV: data record number after the header).
inline std::vector<Sample> parse_dataset(std::string_view data, Format format) {
    auto samples = format == Format::csv ? detail::parse_csv(data) : detail::parse_jsonl(data);
    detail::check_unique_ids(samples);
    return samples;
}

inline std::vector<Sample> load_dataset(const std::filesystem::path& path, Format format) {
    return parse_dataset(io::read_file(path), format);
}

inline std::vector<Sample> load_dataset(const std::filesystem::path& path) {
    return load_dataset(path, format_from_path(path));
}

inline std::string to_jsonl(const std::vector<Sample>& samples) {
    std::string out;
    for (const auto& s : samples) {
        nlohmann::ordered_json obj;
        obj["id"] = s.id;
        obj["text"] = s.text;
        obj["label"] = s.label;
        out += obj.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
        out += '\n';
    }
    return out;
}

inline void save_jsonl(const std::filesystem::path& path, const std::vector<Sample>& samples) {
    io::write_file_atomic(path, to_jsonl(samples));
}

// ---------------------------------------------------------------------------
// Text normalization

namespace detail {

inline bool is_tag_name_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == ':' ||
           c == '_' || c == '-' || c == '.';
}

inline bool is_ascii_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

inline bool is_ascii_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

/// Length of the markup construct starting at s[0] == '<', or 0 when the
/// '<' does not open one. Recognized: <name ...>, </name ...>, <!-- ... -->,
/// <!...>, <?...?>. Attribute text may not contain '<' or '>'.
inline std::size_t match_tag(std::string_view s, std::string* name_out) {
    if (s.size() < 3 || s[0] != '<') {
        return 0;
    }
    if (s.substr(0, 4) == "<!--") {
        const auto end = s.find("-->", 4);
        return end == std::string_view::npos ? 0 : end + 3;
    }
    std::size_t i = 1;
    if (s[1] == '!' || s[1] == '?') {
        if (!is_ascii_alpha(s[2]) && !(s[1] == '!' && s[2] == '[')) {
            return 0;
        }
        for (std::size_t j = 2; j < s.size(); ++j) {
            if (s[j] == '<') {
                return 0;
            }
            if (s[j] == '>') {
                return j + 1;
            }
        }
        return 0;
    }
    if (s[i] == '/') {
        ++i;
    }
    if (i >= s.size() || !is_ascii_alpha(s[i])) {
        return 0;
    }
    const std::size_t name_begin = i;
    while (i < s.size() && is_tag_name_char(s[i])) {
        ++i;
    }
    if (name_out != nullptr) {
        name_out->assign(s.substr(name_begin, i - name_begin));
    }
    if (i >= s.size()) {
        return 0;
    }
    if (s[i] == '>') {
        return i + 1;
    }
    if (!is_ascii_space(s[i]) && s[i] != '/') {
        return 0;
    }
    for (; i < s.size(); ++i) {
        if (s[i] == '<') {
            return 0;
        }
        if (s[i] == '>') {
            return i + 1;
        }
    }
    return 0;
}

/// Tags that separate words when rendered; removing them leaves a space
/// behind. All other tags are removed without a trace so that inline markup
/// splitting a word ("ph<b></b>ish") does not split the token.
inline bool is_block_tag(std::string name) {
    std::transform(name.begin(), name.end(), name.begin(),
                   [](char c) { return static_cast<char>(c >= 'A' && c <= 'Z' ? c - 'A' + 'a' : c); });
    static constexpr std::array<std::string_view, 18> kBlock = {
        "br", "p", "div", "li", "ul", "ol", "tr", "td", "th", "table",
        "h1", "h2", "h3", "h4", "h5", "h6", "hr", "title"};
    return std::find(kBlock.begin(), kBlock.end(), name) != kBlock.end();
}

inline std::string strip_markup(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size();) {
        if (s[i] == '<') {
            std::string name;
            const std::size_t len = match_tag(s.substr(i), &name);
            if (len > 0) {
                if (!name.empty() && is_block_tag(name)) {
                    out.push_back(' ');
                }
                i += len;
                continue;
            }
        }
        out.push_back(s[i]);
        ++i;
    }
    return out;
}

inline void append_utf8(std::string& out, UChar32 cp) {
    char buf[4];
    std::int32_t len = 0;
    UBool err = false;
    U8_APPEND(reinterpret_cast<std::uint8_t*>(buf), len, 4, cp, err);
    if (err) {
        out += "\xEF\xBF\xBD";
        return;
    }
    out.append(buf, static_cast<std::size_t>(len));
}

inline std::optional<UChar32> named_entity(std::string_view name) {
    struct Entry {
        std::string_view name;
        UChar32 cp;
    };
    static constexpr std::array<Entry, 22> kNamed = {{
        {"amp", '&'},        {"lt", '<'},         {"gt", '>'},         {"quot", '"'},
        {"apos", '\''},      {"nbsp", 0x00A0},    {"copy", 0x00A9},    {"reg", 0x00AE},
        {"trade", 0x2122},   {"hellip", 0x2026},  {"mdash", 0x2014},   {"ndash", 0x2013},
        {"lsquo", 0x2018},   {"rsquo", 0x2019},   {"ldquo", 0x201C},   {"rdquo", 0x201D},
        {"euro", 0x20AC},    {"pound", 0x00A3},   {"yen", 0x00A5},     {"cent", 0x00A2},
        {"bull", 0x2022},    {"zwnj", 0x200C},
    }};
    for (const auto& e : kNamed) {
        if (e.name == name) {
            return e.cp;
        }
    }
    return std::nullopt;
}

/// Decodes &name; &#ddd; &#xhh; references in one left-to-right pass.
/// Unknown names are left as literal text.
inline std::string decode_entities(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '&') {
            out.push_back(s[i]);
            continue;
        }
        const std::size_t semi = s.find(';', i + 1);
        if (semi == std::string_view::npos || semi - i > 12 || semi == i + 1) {
            out.push_back('&');
            continue;
        }
        const std::string_view body = s.substr(i + 1, semi - i - 1);
        std::optional<UChar32> cp;
        if (body[0] == '#') {
            const bool hex = body.size() > 1 && (body[1] == 'x' || body[1] == 'X');
            const std::string_view digits = body.substr(hex ? 2 : 1);
            if (!digits.empty() && digits.size() <= 8) {
                std::uint32_t value = 0;
                bool ok = true;
                for (char c : digits) {
                    int d = -1;
                    if (c >= '0' && c <= '9') {
                        d = c - '0';
                    } else if (hex && c >= 'a' && c <= 'f') {
                        d = c - 'a' + 10;
                    } else if (hex && c >= 'A' && c <= 'F') {
                        d = c - 'A' + 10;
                    }
                    if (d < 0) {
                        ok = false;
                        break;
                    }
                    value = value * (hex ? 16U : 10U) + static_cast<std::uint32_t>(d);
                }
                if (ok) {
                    const bool valid = value != 0 && value <= 0x10FFFF && (value < 0xD800 || value > 0xDFFF);
                    cp = valid ? static_cast<UChar32>(value) : 0xFFFD;
                }
            }
        } else {
            cp = named_entity(body);
        }
        if (!cp) {
            out.push_back('&');
            continue;
        }
        append_utf8(out, *cp);
        i = semi;
    }
    return out;
}

inline bool is_space_cp(UChar32 c) {
    return u_isUWhiteSpace(c);
}

inline bool is_dropped_cp(UChar32 c) {
    const auto type = u_charType(c);
    return type == U_CONTROL_CHAR || type == U_FORMAT_CHAR;
}

/// Uppercase letters without a lowercase mapping (script capitals, some
/// Greek symbols) are replaced by their lowercased compatibility form, or
/// dropped if that is still uppercase.
inline void append_caseless(icu::UnicodeString& out, UChar32 c) {
    if (!u_isUUppercase(c)) {
        out.append(c);
        return;
    }
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* nfkc = icu::Normalizer2::getNFKCInstance(status);
    if (U_FAILURE(status)) {
        throw std::runtime_error("ICU NFKC normalizer unavailable");
    }
    icu::UnicodeString compat = nfkc->normalize(icu::UnicodeString(c), status);
    if (U_FAILURE(status)) {
        throw std::runtime_error("ICU normalization failed");
    }
    compat.toLower(icu::Locale::getRoot());
    for (int32_t i = 0; i < compat.length();) {
        const UChar32 d = compat.char32At(i);
        i += U16_LENGTH(d);
        if (!u_isUUppercase(d) && !u_isUWhiteSpace(d) && !is_dropped_cp(d)) {
            out.append(d);
        }
    }
}

/// Lowercase, NFC, drop control/format characters, collapse whitespace to
/// single spaces and trim.
inline std::string fold_unicode(std::string_view s) {
    icu::UnicodeString u = icu::UnicodeString::fromUTF8(icu::StringPiece(s.data(), static_cast<int32_t>(s.size())));
    u.toLower(icu::Locale::getRoot());
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
    if (U_FAILURE(status)) {
        throw std::runtime_error("ICU NFC normalizer unavailable");
    }
    icu::UnicodeString n = nfc->normalize(u, status);
    if (U_FAILURE(status)) {
        throw std::runtime_error("ICU normalization failed");
    }
    icu::UnicodeString cleaned;
    bool pending_space = false;
    for (int32_t i = 0; i < n.length();) {
        const UChar32 c = n.char32At(i);
        i += U16_LENGTH(c);
        if (is_space_cp(c)) {
            pending_space = true;
            continue;
        }
        if (is_dropped_cp(c)) {
            continue;
        }
        if (pending_space && !cleaned.isEmpty()) {
            cleaned.append(static_cast<UChar32>(' '));
        }
        pending_space = false;
        append_caseless(cleaned, c);
    }
    std::string out;
    cleaned.toUTF8String(out);
    return out;
}

inline std::string normalize_pass(std::string_view s) {
    return fold_unicode(decode_entities(strip_markup(s)));
}

} // namespace detail

/// Normalizes raw message text: markup tags removed (inner text kept), HTML
/// entities decoded, Unicode lowercase, NFC, control and format characters
/// removed, whitespace collapsed and trimmed. Invalid UTF-8 becomes U+FFFD.
///
/// The pass is iterated to a fixed point, so normalize is idempotent even
/// when decoding produces new markup ("&lt;b&gt;" decodes to a tag that the
/// next pass removes).
inline std::string normalize(std::string_view text) {
    std::string current = detail::normalize_pass(text);
    for (std::size_t guard = 0; guard < text.size() + 8; ++guard) {
        std::string next = detail::normalize_pass(current);
        if (next == current) {
            break;
        }
        current = std::move(next);
    }
    return current;
}

inline Sample normalize(const Sample& s) { return Sample{s.id, normalize(s.text), s.label}; }

inline std::vector<Sample> normalize_all(const std::vector<Sample>& samples) {
    std::vector<Sample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        out.push_back(normalize(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stratified splitting

struct SplitSpec {
    double train_frac = 0.8;
    double valid_frac = 0.1;
    double test_frac = 0.1;
    std::uint64_t seed = 0;

    void validate() const {
        for (double f : {train_frac, valid_frac, test_frac}) {
            if (!(f > 0.0 && f < 1.0)) {
                throw ValidationError("split fractions must lie in (0, 1)");
            }
        }
        if (std::abs(train_frac + valid_frac + test_frac - 1.0) > 1e-12) {
            throw ValidationError("split fractions must sum to 1");
        }
    }
};

struct Split {
    std::vector<Sample> train;
    std::vector<Sample> valid;
    std::vector<Sample> test;
};

/// Per class c: |valid_c| = round(valid_frac * N_c), |test_c| =
/// round(test_frac * N_c), and train takes the remainder. Members are picked
/// by a SplitMix64 Fisher-Yates shuffle of each class (class 0 first, then
/// class 1) seeded with spec.seed. Each output keeps input order.
inline Split stratified_split(const std::vector<Sample>& samples, const SplitSpec& spec) {
    spec.validate();
    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const int label = samples[i].label;
        if (label != 0 && label != 1) {
            throw ValidationError("sample '" + samples[i].id + "' has label outside {0,1}");
        }
        by_class[static_cast<std::size_t>(label)].push_back(i);
    }
    for (int c = 0; c < 2; ++c) {
        if (by_class[static_cast<std::size_t>(c)].size() < 3) {
            throw ValidationError("class " + std::to_string(c) + " has fewer than 3 samples");
        }
    }
    // 0 = train, 1 = valid, 2 = test
    std::vector<int> assignment(samples.size(), 0);
    SplitMix64 rng(spec.seed);
    for (auto& members : by_class) {
        const auto n = static_cast<double>(members.size());
        const auto n_valid = static_cast<std::size_t>(std::round(spec.valid_frac * n));
        const auto n_test = static_cast<std::size_t>(std::round(spec.test_frac * n));
        rng.shuffle(std::span<std::size_t>(members));
        for (std::size_t k = 0; k < members.size(); ++k) {
            const std::size_t from_end = members.size() - 1 - k;
            if (from_end < n_test) {
                assignment[members[k]] = 2;
            } else if (from_end < n_test + n_valid) {
                assignment[members[k]] = 1;
            }
        }
    }
    Split out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        switch (assignment[i]) {
        case 0: out.train.push_back(samples[i]); break;
        case 1: out.valid.push_back(samples[i]); break;
        default: out.test.push_back(samples[i]); break;
        }
    }
    return out;
}

/// Manifest listing sample ids per split, keyed by split name.
inline std::string split_manifest_json(const Split& split, const SplitSpec& spec) {
    nlohmann::ordered_json m;
    m["version"] = 1;
    m["seed"] = spec.seed;
    m["fractions"] = {{"train", spec.train_frac}, {"valid", spec.valid_frac}, {"test", spec.test_frac}};
    auto ids = [](const std::vector<Sample>& v) {
        std::vector<std::string> out;
        out.reserve(v.size());
        for (const auto& s : v) {
            out.push_back(s.id);
        }
        return out;
    };
    m["train"] = ids(split.train);
    m["valid"] = ids(split.valid);
    m["test"] = ids(split.test);
    return m.dump(2) + "\n";
}

} // namespace phishlab::corpus
