#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tdf/template.hpp"

namespace tdf {

enum class TestStatus { pass, fail, error };

std::string to_string(TestStatus s);
std::optional<TestStatus> test_status_from_string(std::string_view s);

// Outcome of one assertion evaluation. `fail` means the observed state
// contradicts the expectation; `error` means the expectation could not be
// evaluated at all. The two are never conflated.
struct TestResult {
    std::string test_name;
    std::string function;
    TestStatus status = TestStatus::error;
    Value observed;  // null when the function defines none
    Value expected;  // null when the function defines none
    std::string message;
    std::string started_at;
    int64_t duration_ms = 0;

    Value to_json() const;
    static std::optional<TestResult> from_json(const Value& v);
};

struct ParamSpec {
    std::string name;
    std::string type = "string";  // path | string | number | any
    bool required = true;
    Value default_value;  // used when !required and the parameter is absent
};

struct FunctionDescriptor {
    std::string name;
    std::string library = "core";
    std::vector<ParamSpec> params;

    const ParamSpec* find_param(const std::string& p) const;
};

struct AssertionContext {
    // When set, every path parameter must normalize to a location under this
    // root; anything else is an evaluation error, never a filesystem access.
    std::optional<std::filesystem::path> sandbox_root;
    uint64_t file_size_cap = 64ull << 20;
};

using AssertionFn = std::function<TestResult(const Value& params, const AssertionContext&)>;

// Named, parameterized test functions. Descriptors are immutable once
// registered; lookup is safe for concurrent use after startup.
class AssertionRegistry {
public:
    // The seven built-in functions: file_exists, file_absent, file_contains,
    // json_query_equals, xml_query_equals, sqlite_query_equals,
    // timestamp_within.
    static AssertionRegistry core();

    bool register_function(FunctionDescriptor desc, AssertionFn fn);
    // Declarative descriptor file for an external test library; functions
    // registered this way validate in playbooks but evaluate to an error
    // until an implementation is bound.
    bool load_manifest(const std::filesystem::path& manifest, std::string* error = nullptr);

    const FunctionDescriptor* find(const std::string& name) const;
    std::vector<std::string> function_names() const;

    Value manifest_json() const;
    std::string digest() const;

    // Fills defaults, re-checks required parameters and path confinement,
    // then runs the function. Never throws; failures become error results.
    TestResult evaluate(const std::string& function, const Value& params, const AssertionContext& ctx) const;

private:
    struct Entry {
        FunctionDescriptor desc;
        AssertionFn fn;
    };
    std::map<std::string, Entry> entries_;
};

}  // namespace tdf
