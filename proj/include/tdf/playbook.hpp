#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "tdf/assertions.hpp"
#include "tdf/template.hpp"

namespace tdf {

// Loops and conditionals may nest at most this deep.
inline constexpr int kMaxNestingDepth = 8;

struct SourcePos {
    int line = 0;  // 1-based; 0 means unknown
    int column = 0;
    bool operator==(const SourcePos&) const = default;
};

struct Diagnostic {
    SourcePos pos;
    std::string message;
};

enum class VarKind { string_, path, number, boolean, dynamic };

const char* to_string(VarKind k);
std::optional<VarKind> var_kind_from_string(std::string_view s);

struct VariableDecl {
    std::string name;
    VarKind kind = VarKind::string_;
    TemplateString value;  // unused for kind=dynamic
    SourcePos pos;
};

// Converts a rendered variable value to its typed form. Returns nothing when
// the text does not parse as the declared kind.
std::optional<Value> coerce_rendered(VarKind kind, const std::string& rendered);

struct TestDef {
    std::string name;
    std::string function;
    std::vector<std::pair<std::string, Value>> parameter;  // declaration order
    SourcePos pos;

    const Value* find_param(const std::string& key) const;
};

struct TargetSpec {
    enum class Kind { image, text, coordinates };
    Kind kind = Kind::text;
    TemplateString image;  // kind=image: template image asset reference
    TemplateString text;   // kind=text: visible label
    int x = 0;             // kind=coordinates
    int y = 0;
};

enum class MouseButton { left, right, double_click };

const char* to_string(MouseButton b);

struct ClickAction {
    MouseButton button = MouseButton::left;
    TargetSpec target;
};

struct TypeTextAction {
    TemplateString text;
};

struct ScrollAction {
    std::string direction;  // up|down|left|right
    int amount = 1;
};

struct DragDropAction {
    TargetSpec from;
    TargetSpec to;
};

struct CommandAction {
    TemplateString command;
    bool shell = false;
};

struct ShareFileAction {
    enum class Direction { host_to_guest, guest_to_host };
    Direction direction = Direction::host_to_guest;
    TemplateString src;
    TemplateString dst;
};

struct WaitAction {
    int64_t duration_ms = 0;
};

struct CaptureTimeAction {
    std::string into;  // declared dynamic variable
};

using Action = std::variant<ClickAction, TypeTextAction, ScrollAction, DragDropAction, CommandAction,
                            ShareFileAction, WaitAction, CaptureTimeAction>;

struct TestInvocation {
    std::string test_name;
};

// Comparison between a declared variable and a literal.
struct Predicate {
    std::string var;
    std::string op;  // == != < <= > >=
    Value literal;
};

struct Step;

struct Loop {
    Value count;        // integer literal, or string naming a numeric variable
    std::string index;  // optional dynamic variable bound to the 1-based iteration
    std::vector<Step> body;
};

struct Conditional {
    Predicate predicate;
    std::vector<Step> then_steps;
    std::vector<Step> else_steps;
};

struct Step {
    std::variant<Action, TestInvocation, Loop, Conditional> node;
    SourcePos pos;
};

struct Playbook {
    std::vector<VariableDecl> variables;
    std::vector<TestDef> tests;
    std::vector<Step> actions;

    const VariableDecl* find_variable(const std::string& name) const;
    const TestDef* find_test(const std::string& name) const;
};

struct ParseResult {
    std::optional<Playbook> playbook;
    std::vector<Diagnostic> diagnostics;
    bool ok() const { return playbook.has_value() && diagnostics.empty(); }
};

ParseResult parse_playbook(std::string_view source);
ParseResult load_playbook(const std::filesystem::path& file);

// Canonical document form: declaration-order keys, quoted strings. Feeding
// the output back through parse_playbook reproduces the same model.
std::string serialize_playbook(const Playbook& pb);

struct ValidationReport {
    std::vector<Diagnostic> findings;
    bool ok() const { return findings.empty(); }
};

// Static cross-checks against the assertion registry and the ambient
// variable set: template identifiers, function names, required parameters,
// capture/index/predicate variable references.
ValidationReport validate(const Playbook& pb, const AssertionRegistry& registry,
                          const std::set<std::string>& sys_vars);

}  // namespace tdf
