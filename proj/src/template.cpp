#include "tdf/template.hpp"

namespace tdf {

namespace {

// Tries to read `{{ <spaces> identifier <spaces> }}` starting at `pos` (which
// must point at "{{"). Returns the identifier and sets `end` just past "}}".
bool match_placeholder(std::string_view raw, size_t pos, std::string& name, size_t& end) {
    size_t i = pos + 2;
    while (i < raw.size() && raw[i] == ' ') ++i;
    size_t start = i;
    if (i >= raw.size() || raw[i] < 'a' || raw[i] > 'z') return false;
    ++i;
    while (i < raw.size() && ((raw[i] >= 'a' && raw[i] <= 'z') || (raw[i] >= '0' && raw[i] <= '9') || raw[i] == '_')) {
        ++i;
    }
    size_t name_end = i;
    while (i < raw.size() && raw[i] == ' ') ++i;
    if (i + 1 >= raw.size() || raw[i] != '}' || raw[i + 1] != '}') return false;
    name.assign(raw.substr(start, name_end - start));
    end = i + 2;
    return true;
}

}  // namespace

bool is_identifier(std::string_view s) {
    if (s.empty() || s[0] < 'a' || s[0] > 'z') return false;
    for (char c : s.substr(1)) {
        if (!((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_')) return false;
    }
    return true;
}

std::vector<std::string> TemplateString::placeholders() const {
    std::vector<std::string> out;
    size_t pos = 0;
    while (pos + 1 < raw.size()) {
        if (raw[pos] == '{' && raw[pos + 1] == '{') {
            std::string name;
            size_t end = 0;
            if (match_placeholder(raw, pos, name, end)) {
                out.push_back(std::move(name));
                pos = end;
                continue;
            }
        }
        ++pos;
    }
    return out;
}

std::string value_to_string(const Value& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number_integer()) return std::to_string(v.get<int64_t>());
    if (v.is_number_unsigned()) return std::to_string(v.get<uint64_t>());
    if (v.is_null()) return "";
    return v.dump();
}

std::string render_template(const TemplateString& t, const Scope& scope) {
    const std::string& raw = t.raw;
    std::string out;
    out.reserve(raw.size());
    size_t pos = 0;
    while (pos < raw.size()) {
        if (pos + 1 < raw.size() && raw[pos] == '{' && raw[pos + 1] == '{') {
            std::string name;
            size_t end = 0;
            if (match_placeholder(raw, pos, name, end)) {
                if (scope.is_unset_dynamic(name)) {
                    throw TemplateError(name, "dynamic variable '" + name + "' read before capture");
                }
                const Value* v = scope.find(name);
                if (!v) {
                    throw TemplateError(name, "unresolved identifier '" + name + "' in template");
                }
                out += value_to_string(*v);
                pos = end;
                continue;
            }
        }
        out.push_back(raw[pos]);
        ++pos;
    }
    return out;
}

}  // namespace tdf
