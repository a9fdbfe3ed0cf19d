#pragma once

#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace tdf {

using Value = nlohmann::json;

// Variable bindings visible to template rendering and predicates. Declared
// dynamic variables start in `unset_dynamic` and move to `values` on capture.
struct Scope {
    std::map<std::string, Value> values;
    std::set<std::string> unset_dynamic;

    const Value* find(const std::string& name) const {
        auto it = values.find(name);
        return it == values.end() ? nullptr : &it->second;
    }
    bool is_unset_dynamic(const std::string& name) const { return unset_dynamic.count(name) > 0; }
    void set(const std::string& name, Value v) {
        unset_dynamic.erase(name);
        values[name] = std::move(v);
    }
};

class TemplateError : public std::runtime_error {
public:
    TemplateError(std::string identifier, const std::string& message)
        : std::runtime_error(message), identifier_(std::move(identifier)) {}
    const std::string& identifier() const { return identifier_; }

private:
    std::string identifier_;
};

// Text with zero or more `{{ identifier }}` placeholders. Anything that does
// not match that exact shape stays literal.
struct TemplateString {
    std::string raw;

    TemplateString() = default;
    explicit TemplateString(std::string r) : raw(std::move(r)) {}
    bool operator==(const TemplateString&) const = default;

    std::vector<std::string> placeholders() const;
};

bool is_identifier(std::string_view s);

// Scalar rendering used for substitution: strings verbatim, numbers in
// canonical form, booleans as true/false.
std::string value_to_string(const Value& v);

// Throws TemplateError on an identifier missing from scope or on a declared
// dynamic variable that has not been captured yet. Single pass; substituted
// text is never re-expanded.
std::string render_template(const TemplateString& t, const Scope& scope);

}  // namespace tdf
