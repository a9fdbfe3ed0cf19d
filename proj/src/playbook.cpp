#include "tdf/playbook.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cstdlib>
#include <cstring>

#include "tdf/util.hpp"

namespace tdf {

const char* to_string(VarKind k) {
    switch (k) {
        case VarKind::string_: return "string";
        case VarKind::path: return "path";
        case VarKind::number: return "number";
        case VarKind::boolean: return "boolean";
        case VarKind::dynamic: return "dynamic";
    }
    return "string";
}

std::optional<VarKind> var_kind_from_string(std::string_view s) {
    if (s == "string") return VarKind::string_;
    if (s == "path") return VarKind::path;
    if (s == "number") return VarKind::number;
    if (s == "boolean") return VarKind::boolean;
    if (s == "dynamic") return VarKind::dynamic;
    return std::nullopt;
}

const char* to_string(MouseButton b) {
    switch (b) {
        case MouseButton::left: return "left";
        case MouseButton::right: return "right";
        case MouseButton::double_click: return "double";
    }
    return "left";
}

std::optional<Value> coerce_rendered(VarKind kind, const std::string& rendered) {
    switch (kind) {
        case VarKind::string_:
        case VarKind::path:
        case VarKind::dynamic:
            return Value(rendered);
        case VarKind::boolean:
            if (rendered == "true") return Value(true);
            if (rendered == "false") return Value(false);
            return std::nullopt;
        case VarKind::number: {
            if (rendered.empty()) return std::nullopt;
            char* end = nullptr;
            errno = 0;
            long long i = std::strtoll(rendered.c_str(), &end, 10);
            if (errno == 0 && end && *end == '\0') return Value(static_cast<int64_t>(i));
            errno = 0;
            double d = std::strtod(rendered.c_str(), &end);
            if (errno == 0 && end && *end == '\0') return Value(d);
            return std::nullopt;
        }
    }
    return std::nullopt;
}

const Value* TestDef::find_param(const std::string& key) const {
    for (const auto& [k, v] : parameter) {
        if (k == key) return &v;
    }
    return nullptr;
}

const VariableDecl* Playbook::find_variable(const std::string& name) const {
    for (const auto& v : variables) {
        if (v.name == name) return &v;
    }
    return nullptr;
}

const TestDef* Playbook::find_test(const std::string& name) const {
    for (const auto& t : tests) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

namespace {

SourcePos mark_pos(const YAML::Node& n) {
    auto m = n.Mark();
    if (m.line < 0) return {};
    return {m.line + 1, m.column + 1};
}

// Scalar typing: quoted scalars are strings; plain scalars become bool,
// integer, float or string, in that order. Only `true`/`false` are booleans.
Value scalar_value(const YAML::Node& n) {
    if (n.IsNull()) return Value(nullptr);
    const std::string& s = n.Scalar();
    if (n.Tag() == "!") return Value(s);
    if (s == "true") return Value(true);
    if (s == "false") return Value(false);
    if (!s.empty()) {
        char* end = nullptr;
        errno = 0;
        long long i = std::strtoll(s.c_str(), &end, 10);
        if (errno == 0 && end && *end == '\0') return Value(static_cast<int64_t>(i));
        errno = 0;
        double d = std::strtod(s.c_str(), &end);
        if (errno == 0 && end && *end == '\0') return Value(d);
    }
    return Value(s);
}

const std::set<std::string> kPredicateOps = {"==", "!=", "<", "<=", ">", ">="};

class Parser {
public:
    ParseResult run(std::string_view source) {
        YAML::Node doc;
        try {
            doc = YAML::Load(std::string(source));
        } catch (const YAML::ParserException& e) {
            add({e.mark.line + 1, e.mark.column + 1}, std::string("document syntax: ") + e.msg);
            return finish();
        }
        if (doc.IsNull()) {
            add(mark_pos(doc), "step sequence must be non-empty");
            return finish();
        }
        if (!doc.IsMap()) {
            add(mark_pos(doc), "playbook document must be a mapping");
            return finish();
        }
        check_keys(doc, {"variables", "tests", "actions"}, "playbook");
        if (doc["variables"]) parse_variables(doc["variables"]);
        if (doc["tests"]) parse_tests(doc["tests"]);
        if (doc["actions"]) {
            pb_.actions = parse_steps(doc["actions"], 0, "actions");
        }
        if (pb_.actions.empty() && ok_so_far()) {
            add(mark_pos(doc), "step sequence must be non-empty");
        }
        check_test_references();
        return finish();
    }

private:
    Playbook pb_;
    std::vector<Diagnostic> diags_;

    bool ok_so_far() const { return diags_.empty(); }

    void add(SourcePos pos, std::string message) { diags_.push_back({pos, std::move(message)}); }

    ParseResult finish() {
        ParseResult r;
        r.diagnostics = std::move(diags_);
        if (r.diagnostics.empty()) r.playbook = std::move(pb_);
        return r;
    }

    // Flags unknown and duplicated keys; playbooks double as documentation,
    // so a typo must not pass silently.
    void check_keys(const YAML::Node& map, const std::set<std::string>& allowed, const std::string& ctx) {
        std::set<std::string> seen;
        for (const auto& kv : map) {
            if (!kv.first.IsScalar()) {
                add(mark_pos(kv.first), "non-scalar key in " + ctx);
                continue;
            }
            const std::string& key = kv.first.Scalar();
            if (!allowed.count(key)) add(mark_pos(kv.first), "unknown key '" + key + "' in " + ctx);
            if (!seen.insert(key).second) add(mark_pos(kv.first), "duplicate key '" + key + "' in " + ctx);
        }
    }

    bool require_scalar(const YAML::Node& n, const std::string& what) {
        if (n && n.IsScalar()) return true;
        add(mark_pos(n), what + " must be a scalar");
        return false;
    }

    std::optional<std::string> identifier_field(const YAML::Node& map, const char* key, const std::string& ctx) {
        YAML::Node n = map[key];
        if (!n) {
            add(mark_pos(map), ctx + " requires '" + key + "'");
            return std::nullopt;
        }
        if (!n.IsScalar() || !is_identifier(n.Scalar())) {
            add(mark_pos(n), std::string("'") + key + "' in " + ctx + " must be an identifier");
            return std::nullopt;
        }
        return n.Scalar();
    }

    void parse_variables(const YAML::Node& node) {
        if (!node.IsMap()) {
            add(mark_pos(node), "'variables' must be a mapping of name to declaration");
            return;
        }
        std::set<std::string> seen;
        for (const auto& kv : node) {
            if (!kv.first.IsScalar()) {
                add(mark_pos(kv.first), "variable name must be a scalar");
                continue;
            }
            std::string name = kv.first.Scalar();
            SourcePos pos = mark_pos(kv.first);
            if (!is_identifier(name)) {
                add(pos, "variable name '" + name + "' must match [a-z][a-z0-9_]*");
                continue;
            }
            if (!seen.insert(name).second) {
                add(pos, "duplicate variable '" + name + "'");
                continue;
            }
            const YAML::Node& decl = kv.second;
            if (!decl.IsMap()) {
                add(pos, "variable '" + name + "' must be declared as a mapping");
                continue;
            }
            check_keys(decl, {"type", "value"}, "variable '" + name + "'");
            YAML::Node type = decl["type"];
            if (!type || !type.IsScalar()) {
                add(pos, "variable '" + name + "' requires a 'type'");
                continue;
            }
            auto kind = var_kind_from_string(type.Scalar());
            if (!kind) {
                add(mark_pos(type), "unknown variable type '" + type.Scalar() + "'");
                continue;
            }
            VariableDecl v;
            v.name = name;
            v.kind = *kind;
            v.pos = pos;
            YAML::Node value = decl["value"];
            if (*kind == VarKind::dynamic) {
                if (value) {
                    add(mark_pos(value), "dynamic variable '" + name + "' must not carry a value");
                    continue;
                }
            } else {
                if (!value || !value.IsScalar()) {
                    add(pos, "variable '" + name + "' requires a scalar 'value'");
                    continue;
                }
                v.value = TemplateString(value.Scalar());
            }
            pb_.variables.push_back(std::move(v));
        }
    }

    void parse_tests(const YAML::Node& node) {
        if (!node.IsSequence()) {
            add(mark_pos(node), "'tests' must be a sequence");
            return;
        }
        std::set<std::string> seen;
        for (const auto& item : node) {
            if (!item.IsMap()) {
                add(mark_pos(item), "test declaration must be a mapping");
                continue;
            }
            check_keys(item, {"name", "function", "parameter"}, "test declaration");
            auto name = identifier_field(item, "name", "test declaration");
            auto function = identifier_field(item, "function", "test declaration");
            if (!name || !function) continue;
            if (!seen.insert(*name).second) {
                add(mark_pos(item["name"]), "duplicate test '" + *name + "'");
                continue;
            }
            TestDef t;
            t.name = *name;
            t.function = *function;
            t.pos = mark_pos(item);
            if (YAML::Node params = item["parameter"]) {
                if (!params.IsMap()) {
                    add(mark_pos(params), "'parameter' of test '" + t.name + "' must be a mapping");
                    continue;
                }
                bool bad = false;
                std::set<std::string> pseen;
                for (const auto& pkv : params) {
                    if (!pkv.first.IsScalar() || !pkv.second.IsScalar()) {
                        add(mark_pos(pkv.first), "parameters of test '" + t.name + "' must be scalar pairs");
                        bad = true;
                        break;
                    }
                    std::string pname = pkv.first.Scalar();
                    if (!pseen.insert(pname).second) {
                        add(mark_pos(pkv.first), "duplicate parameter '" + pname + "' in test '" + t.name + "'");
                        bad = true;
                        break;
                    }
                    t.parameter.emplace_back(pname, scalar_value(pkv.second));
                }
                if (bad) continue;
            }
            pb_.tests.push_back(std::move(t));
        }
    }

    std::optional<TargetSpec> parse_target(const YAML::Node& node, const std::string& ctx) {
        if (!node || !node.IsMap()) {
            add(mark_pos(node), ctx + " requires a 'target' mapping");
            return std::nullopt;
        }
        check_keys(node, {"image", "text", "coordinates"}, ctx);
        int variants = (node["image"] ? 1 : 0) + (node["text"] ? 1 : 0) + (node["coordinates"] ? 1 : 0);
        if (variants != 1) {
            add(mark_pos(node), ctx + " must set exactly one of image, text, coordinates");
            return std::nullopt;
        }
        TargetSpec spec;
        if (YAML::Node img = node["image"]) {
            if (!require_scalar(img, ctx + " image")) return std::nullopt;
            spec.kind = TargetSpec::Kind::image;
            spec.image = TemplateString(img.Scalar());
        } else if (YAML::Node text = node["text"]) {
            if (!require_scalar(text, ctx + " text")) return std::nullopt;
            spec.kind = TargetSpec::Kind::text;
            spec.text = TemplateString(text.Scalar());
        } else {
            YAML::Node coords = node["coordinates"];
            if (!coords.IsMap()) {
                add(mark_pos(coords), ctx + " coordinates must be a mapping with x and y");
                return std::nullopt;
            }
            check_keys(coords, {"x", "y"}, ctx + " coordinates");
            auto px = read_int(coords["x"], ctx + " coordinates x");
            auto py = read_int(coords["y"], ctx + " coordinates y");
            if (!px || !py) return std::nullopt;
            spec.kind = TargetSpec::Kind::coordinates;
            spec.x = static_cast<int>(*px);
            spec.y = static_cast<int>(*py);
        }
        return spec;
    }

    std::optional<int64_t> read_int(const YAML::Node& n, const std::string& what) {
        if (!n || !n.IsScalar()) {
            add(mark_pos(n), what + " must be an integer");
            return std::nullopt;
        }
        Value v = scalar_value(n);
        if (!v.is_number_integer()) {
            add(mark_pos(n), what + " must be an integer");
            return std::nullopt;
        }
        return v.get<int64_t>();
    }

    std::optional<bool> read_bool(const YAML::Node& n, const std::string& what) {
        if (!n || !n.IsScalar()) {
            add(mark_pos(n), what + " must be true or false");
            return std::nullopt;
        }
        Value v = scalar_value(n);
        if (!v.is_boolean()) {
            add(mark_pos(n), what + " must be true or false");
            return std::nullopt;
        }
        return v.get<bool>();
    }

    std::optional<TemplateString> read_template(const YAML::Node& map, const char* key, const std::string& ctx) {
        YAML::Node n = map[key];
        if (!n || !n.IsScalar()) {
            add(mark_pos(n ? n : map), ctx + " requires a scalar '" + key + "'");
            return std::nullopt;
        }
        return TemplateString(n.Scalar());
    }

    std::vector<Step> parse_steps(const YAML::Node& node, int depth, const std::string& ctx) {
        std::vector<Step> out;
        if (!node.IsSequence()) {
            add(mark_pos(node), "'" + ctx + "' must be a sequence of steps");
            return out;
        }
        for (const auto& item : node) {
            auto step = parse_step(item, depth);
            if (step) out.push_back(std::move(*step));
        }
        return out;
    }

    std::optional<Step> parse_step(const YAML::Node& item, int depth) {
        if (!item.IsMap() || item.size() != 1) {
            add(mark_pos(item), "each step must be a single-key mapping naming the step kind");
            return std::nullopt;
        }
        auto kv = *item.begin();
        if (!kv.first.IsScalar()) {
            add(mark_pos(kv.first), "step kind must be a scalar key");
            return std::nullopt;
        }
        std::string kind = kv.first.Scalar();
        YAML::Node body = kv.second;
        Step step;
        step.pos = mark_pos(kv.first);

        if (kind == "test") {
            if (!body.IsScalar() || !is_identifier(body.Scalar())) {
                add(mark_pos(body), "'test' step must name a declared test");
                return std::nullopt;
            }
            step.node = TestInvocation{body.Scalar()};
            return step;
        }
        if (kind == "click") {
            if (!body.IsMap()) {
                add(step.pos, "'click' must be a mapping");
                return std::nullopt;
            }
            check_keys(body, {"type", "target"}, "click");
            ClickAction a;
            if (YAML::Node type = body["type"]) {
                if (!type.IsScalar()) {
                    add(mark_pos(type), "click type must be left, right or double");
                    return std::nullopt;
                }
                const std::string& t = type.Scalar();
                if (t == "left") {
                    a.button = MouseButton::left;
                } else if (t == "right") {
                    a.button = MouseButton::right;
                } else if (t == "double") {
                    a.button = MouseButton::double_click;
                } else {
                    add(mark_pos(type), "click type must be left, right or double");
                    return std::nullopt;
                }
            }
            auto target = parse_target(body["target"], "click");
            if (!target) return std::nullopt;
            a.target = std::move(*target);
            step.node = Action{std::move(a)};
            return step;
        }
        if (kind == "type_text") {
            if (!body.IsMap()) {
                add(step.pos, "'type_text' must be a mapping");
                return std::nullopt;
            }
            check_keys(body, {"text"}, "type_text");
            auto text = read_template(body, "text", "type_text");
            if (!text) return std::nullopt;
            step.node = Action{TypeTextAction{std::move(*text)}};
            return step;
        }
        if (kind == "scroll") {
            if (!body.IsMap()) {
                add(step.pos, "'scroll' must be a mapping");
                return std::nullopt;
            }
            check_keys(body, {"direction", "amount"}, "scroll");
            YAML::Node dir = body["direction"];
            static const std::set<std::string> dirs = {"up", "down", "left", "right"};
            if (!dir || !dir.IsScalar() || !dirs.count(dir.Scalar())) {
                add(mark_pos(dir ? dir : body), "scroll direction must be up, down, left or right");
                return std::nullopt;
            }
            ScrollAction a;
            a.direction = dir.Scalar();
            if (body["amount"]) {
                auto amount = read_int(body["amount"], "scroll amount");
                if (!amount) return std::nullopt;
                if (*amount < 1) {
                    add(mark_pos(body["amount"]), "scroll amount must be >= 1");
                    return std::nullopt;
                }
                a.amount = static_cast<int>(*amount);
            }
            step.node = Action{std::move(a)};
            return step;
        }
        if (kind == "drag_drop") {
            if (!body.IsMap()) {
                add(step.pos, "'drag_drop' must be a mapping");
                return std::nullopt;
            }
            check_keys(body, {"from", "to"}, "drag_drop");
            auto from = parse_target(body["from"], "drag_drop from");
            auto to = parse_target(body["to"], "drag_drop to");
            if (!from || !to) return std::nullopt;
            step.node = Action{DragDropAction{std::move(*from), std::move(*to)}};
            return step;
        }
        if (kind == "command") {
            if (!body.IsMap()) {
                add(step.pos, "'command' must be a mapping");
                return std::nullopt;
            }
            check_keys(body, {"command", "shell"}, "command");
            auto cmd = read_template(body, "command", "command");
            if (!cmd) return std::nullopt;
            CommandAction a;
            a.command = std::move(*cmd);
            if (body["shell"]) {
                auto shell = read_bool(body["shell"], "command shell");
                if (!shell) return std::nullopt;
                a.shell = *shell;
            }
            step.node = Action{std::move(a)};
            return step;
        }
        if (kind == "share_file") {
            if (!body.IsMap()) {
                add(step.pos, "'share_file' must be a mapping");
                return std::nullopt;
            }
            check_keys(body, {"direction", "src", "dst"}, "share_file");
            YAML::Node dir = body["direction"];
            ShareFileAction a;
            if (!dir || !dir.IsScalar()) {
                add(mark_pos(dir ? dir : body), "share_file direction must be host_to_guest or guest_to_host");
                return std::nullopt;
            }
            if (dir.Scalar() == "host_to_guest") {
                a.direction = ShareFileAction::Direction::host_to_guest;
            } else if (dir.Scalar() == "guest_to_host") {
                a.direction = ShareFileAction::Direction::guest_to_host;
            } else {
                add(mark_pos(dir), "share_file direction must be host_to_guest or guest_to_host");
                return std::nullopt;
            }
            auto src = read_template(body, "src", "share_file");
            auto dst = read_template(body, "dst", "share_file");
            if (!src || !dst) return std::nullopt;
            a.src = std::move(*src);
            a.dst = std::move(*dst);
            step.node = Action{std::move(a)};
            return step;
        }
        if (kind == "wait") {
            if (!body.IsMap()) {
                add(step.pos, "'wait' must be a mapping");
                return std::nullopt;
            }
            check_keys(body, {"duration_ms"}, "wait");
            auto ms = read_int(body["duration_ms"], "wait duration_ms");
            if (!ms) return std::nullopt;
            if (*ms < 0) {
                add(mark_pos(body["duration_ms"]), "wait duration_ms must be >= 0");
                return std::nullopt;
            }
            step.node = Action{WaitAction{*ms}};
            return step;
        }
        if (kind == "capture_time") {
            if (!body.IsMap()) {
                add(step.pos, "'capture_time' must be a mapping");
                return std::nullopt;
            }
            check_keys(body, {"into"}, "capture_time");
            auto into = identifier_field(body, "into", "capture_time");
            if (!into) return std::nullopt;
            step.node = Action{CaptureTimeAction{std::move(*into)}};
            return step;
        }
        if (kind == "loop") {
            if (depth + 1 > kMaxNestingDepth) {
                add(step.pos, "nesting depth exceeds the limit of " + std::to_string(kMaxNestingDepth));
                return std::nullopt;
            }
            if (!body.IsMap()) {
                add(step.pos, "'loop' must be a mapping");
                return std::nullopt;
            }
            check_keys(body, {"count", "index", "body"}, "loop");
            YAML::Node count = body["count"];
            if (!count || !count.IsScalar()) {
                add(mark_pos(count ? count : body), "loop count must be an integer or a variable name");
                return std::nullopt;
            }
            Loop l;
            Value cv = scalar_value(count);
            if (cv.is_number_integer()) {
                if (cv.get<int64_t>() < 1) {
                    add(mark_pos(count), "literal loop count must be >= 1");
                    return std::nullopt;
                }
                l.count = cv;
            } else if (cv.is_string() && is_identifier(cv.get<std::string>())) {
                l.count = cv;
            } else {
                add(mark_pos(count), "loop count must be an integer or a variable name");
                return std::nullopt;
            }
            if (body["index"]) {
                auto index = identifier_field(body, "index", "loop");
                if (!index) return std::nullopt;
                l.index = std::move(*index);
            }
            YAML::Node inner = body["body"];
            if (!inner || !inner.IsSequence() || inner.size() == 0) {
                add(mark_pos(inner ? inner : body), "loop body must be a non-empty sequence");
                return std::nullopt;
            }
            l.body = parse_steps(inner, depth + 1, "loop body");
            step.node = std::move(l);
            return step;
        }
        if (kind == "if") {
            if (depth + 1 > kMaxNestingDepth) {
                add(step.pos, "nesting depth exceeds the limit of " + std::to_string(kMaxNestingDepth));
                return std::nullopt;
            }
            if (!body.IsMap()) {
                add(step.pos, "'if' must be a mapping");
                return std::nullopt;
            }
            check_keys(body, {"var", "op", "value", "then", "else"}, "if");
            Conditional c;
            auto var = identifier_field(body, "var", "if");
            if (!var) return std::nullopt;
            c.predicate.var = std::move(*var);
            YAML::Node op = body["op"];
            if (!op || !op.IsScalar() || !kPredicateOps.count(op.Scalar())) {
                add(mark_pos(op ? op : body), "if op must be one of ==, !=, <, <=, >, >=");
                return std::nullopt;
            }
            c.predicate.op = op.Scalar();
            YAML::Node value = body["value"];
            if (!value || !value.IsScalar()) {
                add(mark_pos(value ? value : body), "if requires a scalar 'value' literal");
                return std::nullopt;
            }
            c.predicate.literal = scalar_value(value);
            YAML::Node then_node = body["then"];
            if (!then_node || !then_node.IsSequence() || then_node.size() == 0) {
                add(mark_pos(then_node ? then_node : body), "if 'then' must be a non-empty sequence");
                return std::nullopt;
            }
            c.then_steps = parse_steps(then_node, depth + 1, "then");
            if (YAML::Node else_node = body["else"]) {
                if (!else_node.IsSequence()) {
                    add(mark_pos(else_node), "if 'else' must be a sequence");
                    return std::nullopt;
                }
                c.else_steps = parse_steps(else_node, depth + 1, "else");
            }
            step.node = std::move(c);
            return step;
        }
        add(step.pos, "unknown step kind '" + kind + "'");
        return std::nullopt;
    }

    void check_test_references() {
        walk_steps(pb_.actions, [&](const Step& s) {
            if (const auto* inv = std::get_if<TestInvocation>(&s.node)) {
                if (!pb_.find_test(inv->test_name)) {
                    add(s.pos, "step invokes undeclared test '" + inv->test_name + "'");
                }
            }
        });
    }

    template <typename Fn>
    static void walk_steps(const std::vector<Step>& steps, Fn&& fn) {
        for (const auto& s : steps) {
            fn(s);
            if (const auto* loop = std::get_if<Loop>(&s.node)) {
                walk_steps(loop->body, fn);
            } else if (const auto* cond = std::get_if<Conditional>(&s.node)) {
                walk_steps(cond->then_steps, fn);
                walk_steps(cond->else_steps, fn);
            }
        }
    }
};

}  // namespace

ParseResult parse_playbook(std::string_view source) {
    Parser parser;
    return parser.run(source);
}

ParseResult load_playbook(const std::filesystem::path& file) {
    auto content = read_file(file);
    if (!content) {
        ParseResult r;
        r.diagnostics.push_back({{}, "cannot read playbook '" + file.string() + "'"});
        return r;
    }
    return parse_playbook(*content);
}

namespace {

void emit_scalar(YAML::Emitter& em, const Value& v) {
    if (v.is_string()) {
        em << YAML::DoubleQuoted << v.get<std::string>();
    } else if (v.is_boolean()) {
        em << v.get<bool>();
    } else if (v.is_number_integer()) {
        em << static_cast<long long>(v.get<int64_t>());
    } else if (v.is_number_unsigned()) {
        em << static_cast<unsigned long long>(v.get<uint64_t>());
    } else if (v.is_number_float()) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", v.get<double>());
        // Keep a float marker so the value round-trips as a float.
        if (!std::strpbrk(buf, ".eE")) std::strcat(buf, ".0");
        em << buf;
    } else {
        em << YAML::Null;
    }
}

void emit_target(YAML::Emitter& em, const TargetSpec& t) {
    em << YAML::BeginMap;
    switch (t.kind) {
        case TargetSpec::Kind::image:
            em << YAML::Key << "image" << YAML::Value << YAML::DoubleQuoted << t.image.raw;
            break;
        case TargetSpec::Kind::text:
            em << YAML::Key << "text" << YAML::Value << YAML::DoubleQuoted << t.text.raw;
            break;
        case TargetSpec::Kind::coordinates:
            em << YAML::Key << "coordinates" << YAML::Value << YAML::BeginMap;
            em << YAML::Key << "x" << YAML::Value << t.x;
            em << YAML::Key << "y" << YAML::Value << t.y;
            em << YAML::EndMap;
            break;
    }
    em << YAML::EndMap;
}

void emit_steps(YAML::Emitter& em, const std::vector<Step>& steps);

void emit_step(YAML::Emitter& em, const Step& step) {
    em << YAML::BeginMap;
    if (const auto* inv = std::get_if<TestInvocation>(&step.node)) {
        em << YAML::Key << "test" << YAML::Value << inv->test_name;
    } else if (const auto* loop = std::get_if<Loop>(&step.node)) {
        em << YAML::Key << "loop" << YAML::Value << YAML::BeginMap;
        em << YAML::Key << "count" << YAML::Value;
        if (loop->count.is_string()) {
            em << loop->count.get<std::string>();
        } else {
            em << static_cast<long long>(loop->count.get<int64_t>());
        }
        if (!loop->index.empty()) em << YAML::Key << "index" << YAML::Value << loop->index;
        em << YAML::Key << "body" << YAML::Value;
        emit_steps(em, loop->body);
        em << YAML::EndMap;
    } else if (const auto* cond = std::get_if<Conditional>(&step.node)) {
        em << YAML::Key << "if" << YAML::Value << YAML::BeginMap;
        em << YAML::Key << "var" << YAML::Value << cond->predicate.var;
        em << YAML::Key << "op" << YAML::Value << YAML::DoubleQuoted << cond->predicate.op;
        em << YAML::Key << "value" << YAML::Value;
        emit_scalar(em, cond->predicate.literal);
        em << YAML::Key << "then" << YAML::Value;
        emit_steps(em, cond->then_steps);
        if (!cond->else_steps.empty()) {
            em << YAML::Key << "else" << YAML::Value;
            emit_steps(em, cond->else_steps);
        }
        em << YAML::EndMap;
    } else {
        const Action& action = std::get<Action>(step.node);
        std::visit(
            [&](const auto& a) {
                using T = std::decay_t<decltype(a)>;
                if constexpr (std::is_same_v<T, ClickAction>) {
                    em << YAML::Key << "click" << YAML::Value << YAML::BeginMap;
                    em << YAML::Key << "type" << YAML::Value << to_string(a.button);
                    em << YAML::Key << "target" << YAML::Value;
                    emit_target(em, a.target);
                    em << YAML::EndMap;
                } else if constexpr (std::is_same_v<T, TypeTextAction>) {
                    em << YAML::Key << "type_text" << YAML::Value << YAML::BeginMap;
                    em << YAML::Key << "text" << YAML::Value << YAML::DoubleQuoted << a.text.raw;
                    em << YAML::EndMap;
                } else if constexpr (std::is_same_v<T, ScrollAction>) {
                    em << YAML::Key << "scroll" << YAML::Value << YAML::BeginMap;
                    em << YAML::Key << "direction" << YAML::Value << a.direction;
                    em << YAML::Key << "amount" << YAML::Value << a.amount;
                    em << YAML::EndMap;
                } else if constexpr (std::is_same_v<T, DragDropAction>) {
                    em << YAML::Key << "drag_drop" << YAML::Value << YAML::BeginMap;
                    em << YAML::Key << "from" << YAML::Value;
                    emit_target(em, a.from);
                    em << YAML::Key << "to" << YAML::Value;
                    emit_target(em, a.to);
                    em << YAML::EndMap;
                } else if constexpr (std::is_same_v<T, CommandAction>) {
                    em << YAML::Key << "command" << YAML::Value << YAML::BeginMap;
                    em << YAML::Key << "command" << YAML::Value << YAML::DoubleQuoted << a.command.raw;
                    em << YAML::Key << "shell" << YAML::Value << a.shell;
                    em << YAML::EndMap;
                } else if constexpr (std::is_same_v<T, ShareFileAction>) {
                    em << YAML::Key << "share_file" << YAML::Value << YAML::BeginMap;
                    em << YAML::Key << "direction" << YAML::Value
                       << (a.direction == ShareFileAction::Direction::host_to_guest ? "host_to_guest"
                                                                                    : "guest_to_host");
                    em << YAML::Key << "src" << YAML::Value << YAML::DoubleQuoted << a.src.raw;
                    em << YAML::Key << "dst" << YAML::Value << YAML::DoubleQuoted << a.dst.raw;
                    em << YAML::EndMap;
                } else if constexpr (std::is_same_v<T, WaitAction>) {
                    em << YAML::Key << "wait" << YAML::Value << YAML::BeginMap;
                    em << YAML::Key << "duration_ms" << YAML::Value << static_cast<long long>(a.duration_ms);
                    em << YAML::EndMap;
                } else if constexpr (std::is_same_v<T, CaptureTimeAction>) {
                    em << YAML::Key << "capture_time" << YAML::Value << YAML::BeginMap;
                    em << YAML::Key << "into" << YAML::Value << a.into;
                    em << YAML::EndMap;
                }
            },
            action);
    }
    em << YAML::EndMap;
}

void emit_steps(YAML::Emitter& em, const std::vector<Step>& steps) {
    em << YAML::BeginSeq;
    for (const auto& s : steps) emit_step(em, s);
    em << YAML::EndSeq;
}

}  // namespace

std::string serialize_playbook(const Playbook& pb) {
    YAML::Emitter em;
    em << YAML::BeginMap;
    if (!pb.variables.empty()) {
        em << YAML::Key << "variables" << YAML::Value << YAML::BeginMap;
        for (const auto& v : pb.variables) {
            em << YAML::Key << v.name << YAML::Value << YAML::BeginMap;
            em << YAML::Key << "type" << YAML::Value << to_string(v.kind);
            if (v.kind != VarKind::dynamic) {
                em << YAML::Key << "value" << YAML::Value << YAML::DoubleQuoted << v.value.raw;
            }
            em << YAML::EndMap;
        }
        em << YAML::EndMap;
    }
    if (!pb.tests.empty()) {
        em << YAML::Key << "tests" << YAML::Value << YAML::BeginSeq;
        for (const auto& t : pb.tests) {
            em << YAML::BeginMap;
            em << YAML::Key << "name" << YAML::Value << t.name;
            em << YAML::Key << "function" << YAML::Value << t.function;
            if (!t.parameter.empty()) {
                em << YAML::Key << "parameter" << YAML::Value << YAML::BeginMap;
                for (const auto& [k, v] : t.parameter) {
                    em << YAML::Key << k << YAML::Value;
                    emit_scalar(em, v);
                }
                em << YAML::EndMap;
            }
            em << YAML::EndMap;
        }
        em << YAML::EndSeq;
    }
    em << YAML::Key << "actions" << YAML::Value;
    emit_steps(em, pb.actions);
    em << YAML::EndMap;
    std::string out = em.c_str();
    out.push_back('\n');
    return out;
}

namespace {

struct Validator {
    const Playbook& pb;
    const AssertionRegistry& registry;
    const std::set<std::string>& sys_vars;
    std::vector<Diagnostic> findings;

    bool declared(const std::string& name) const {
        return pb.find_variable(name) != nullptr || sys_vars.count(name) > 0;
    }

    void check_template(const TemplateString& t, SourcePos pos, const std::string& where) {
        for (const auto& id : t.placeholders()) {
            if (!declared(id)) {
                findings.push_back({pos, "undeclared identifier '" + id + "' in " + where});
            }
        }
    }

    void check_target(const TargetSpec& t, SourcePos pos, const std::string& where) {
        if (t.kind == TargetSpec::Kind::image) check_template(t.image, pos, where + " image");
        if (t.kind == TargetSpec::Kind::text) check_template(t.text, pos, where + " text");
    }

    void check_dynamic_ref(const std::string& name, SourcePos pos, const std::string& role) {
        const VariableDecl* v = pb.find_variable(name);
        if (!v) {
            findings.push_back({pos, role + " references undeclared variable '" + name + "'"});
        } else if (v->kind != VarKind::dynamic) {
            findings.push_back({pos, role + " must name a dynamic variable, but '" + name + "' is " +
                                         to_string(v->kind)});
        }
    }

    void check_steps(const std::vector<Step>& steps) {
        for (const auto& s : steps) {
            if (const auto* action = std::get_if<Action>(&s.node)) {
                std::visit(
                    [&](const auto& a) {
                        using T = std::decay_t<decltype(a)>;
                        if constexpr (std::is_same_v<T, ClickAction>) {
                            check_target(a.target, s.pos, "click target");
                        } else if constexpr (std::is_same_v<T, TypeTextAction>) {
                            check_template(a.text, s.pos, "type_text");
                        } else if constexpr (std::is_same_v<T, DragDropAction>) {
                            check_target(a.from, s.pos, "drag_drop from");
                            check_target(a.to, s.pos, "drag_drop to");
                        } else if constexpr (std::is_same_v<T, CommandAction>) {
                            check_template(a.command, s.pos, "command");
                        } else if constexpr (std::is_same_v<T, ShareFileAction>) {
                            check_template(a.src, s.pos, "share_file src");
                            check_template(a.dst, s.pos, "share_file dst");
                        } else if constexpr (std::is_same_v<T, CaptureTimeAction>) {
                            check_dynamic_ref(a.into, s.pos, "capture_time into");
                        }
                    },
                    *action);
            } else if (const auto* loop = std::get_if<Loop>(&s.node)) {
                if (loop->count.is_string()) {
                    const std::string& name = loop->count.get<std::string>();
                    const VariableDecl* v = pb.find_variable(name);
                    if (!v) {
                        findings.push_back({s.pos, "loop count references undeclared variable '" + name + "'"});
                    } else if (v->kind != VarKind::number && v->kind != VarKind::dynamic) {
                        findings.push_back(
                            {s.pos, "loop count variable '" + name + "' must be number or dynamic"});
                    }
                }
                if (!loop->index.empty()) check_dynamic_ref(loop->index, s.pos, "loop index");
                check_steps(loop->body);
            } else if (const auto* cond = std::get_if<Conditional>(&s.node)) {
                if (!declared(cond->predicate.var)) {
                    findings.push_back(
                        {s.pos, "predicate references undeclared variable '" + cond->predicate.var + "'"});
                }
                check_steps(cond->then_steps);
                check_steps(cond->else_steps);
            }
        }
    }
};

}  // namespace

ValidationReport validate(const Playbook& pb, const AssertionRegistry& registry,
                          const std::set<std::string>& sys_vars) {
    Validator v{pb, registry, sys_vars, {}};
    for (const auto& var : pb.variables) {
        if (var.kind != VarKind::dynamic) {
            v.check_template(var.value, var.pos, "variable '" + var.name + "'");
        }
    }
    for (const auto& t : pb.tests) {
        const FunctionDescriptor* desc = registry.find(t.function);
        if (!desc) {
            v.findings.push_back(
                {t.pos, "test '" + t.name + "' uses unknown assertion function '" + t.function + "'"});
        } else {
            for (const auto& p : desc->params) {
                if (p.required && !t.find_param(p.name)) {
                    v.findings.push_back({t.pos, "test '" + t.name + "' is missing required parameter '" +
                                                     p.name + "' of '" + t.function + "'"});
                }
            }
        }
        for (const auto& [key, value] : t.parameter) {
            if (value.is_string()) {
                v.check_template(TemplateString(value.get<std::string>()), t.pos,
                                 "parameter '" + key + "' of test '" + t.name + "'");
            }
        }
    }
    v.check_steps(pb.actions);
    ValidationReport report;
    report.findings = std::move(v.findings);
    return report;
}

}  // namespace tdf
