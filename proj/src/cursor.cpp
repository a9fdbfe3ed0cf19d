#include "tdf/cursor.hpp"

namespace tdf {

namespace {

// Strict ordering across JSON kinds: numbers compare numerically, strings
// lexicographically, booleans as false < true. Ordering mixed kinds is an
// error; equality across kinds is simply false.
int compare_values(const Value& a, const Value& b, SourcePos pos) {
    if (a.is_number() && b.is_number()) {
        if (a.is_number_integer() && b.is_number_integer()) {
            int64_t x = a.get<int64_t>(), y = b.get<int64_t>();
            return x < y ? -1 : (x > y ? 1 : 0);
        }
        double x = a.get<double>(), y = b.get<double>();
        return x < y ? -1 : (x > y ? 1 : 0);
    }
    if (a.is_string() && b.is_string()) {
        return a.get<std::string>().compare(b.get<std::string>());
    }
    if (a.is_boolean() && b.is_boolean()) {
        return static_cast<int>(a.get<bool>()) - static_cast<int>(b.get<bool>());
    }
    throw CursorError(pos, "predicate operands are not comparable (" + std::string(a.type_name()) + " vs " +
                               std::string(b.type_name()) + ")");
}

}  // namespace

bool eval_predicate(const Predicate& p, const Scope& scope, SourcePos pos) {
    if (scope.is_unset_dynamic(p.var)) {
        throw CursorError(pos, "predicate reads dynamic variable '" + p.var + "' before capture");
    }
    const Value* v = scope.find(p.var);
    if (!v) throw CursorError(pos, "predicate references unset variable '" + p.var + "'");

    bool same_kind = (v->is_number() && p.literal.is_number()) || (v->is_string() && p.literal.is_string()) ||
                     (v->is_boolean() && p.literal.is_boolean());
    if (p.op == "==") return same_kind && compare_values(*v, p.literal, pos) == 0;
    if (p.op == "!=") return !same_kind || compare_values(*v, p.literal, pos) != 0;
    int c = compare_values(*v, p.literal, pos);
    if (p.op == "<") return c < 0;
    if (p.op == "<=") return c <= 0;
    if (p.op == ">") return c > 0;
    if (p.op == ">=") return c >= 0;
    throw CursorError(pos, "unknown predicate operator '" + p.op + "'");
}

ExecutionCursor::ExecutionCursor(const Playbook& pb) {
    stack_.push_back({&pb.actions});
}

const Step* ExecutionCursor::next(Scope& scope) {
    while (!stack_.empty()) {
        Frame& top = stack_.back();
        if (top.idx >= top.steps->size()) {
            if (top.loop && top.iteration < top.total) {
                ++top.iteration;
                top.idx = 0;
                if (!top.loop->index.empty()) scope.set(top.loop->index, Value(top.iteration));
                continue;
            }
            stack_.pop_back();
            continue;
        }
        const Step& step = (*top.steps)[top.idx++];
        if (std::holds_alternative<Action>(step.node) || std::holds_alternative<TestInvocation>(step.node)) {
            return &step;
        }
        if (const auto* loop = std::get_if<Loop>(&step.node)) {
            int64_t total = 0;
            if (loop->count.is_number_integer()) {
                total = loop->count.get<int64_t>();
            } else {
                const std::string& name = loop->count.get<std::string>();
                if (scope.is_unset_dynamic(name)) {
                    throw CursorError(step.pos, "loop count '" + name + "' read before capture");
                }
                const Value* v = scope.find(name);
                if (!v) throw CursorError(step.pos, "loop count references unset variable '" + name + "'");
                if (v->is_number_integer()) {
                    total = v->get<int64_t>();
                } else if (v->is_number_float()) {
                    double d = v->get<double>();
                    total = static_cast<int64_t>(d);
                    if (static_cast<double>(total) != d) {
                        throw CursorError(step.pos, "loop count '" + name + "' is not an integer");
                    }
                } else {
                    throw CursorError(step.pos, "loop count '" + name + "' is not numeric");
                }
            }
            if (total <= 0) continue;  // zero-trip loop
            Frame frame;
            frame.steps = &loop->body;
            frame.loop = loop;
            frame.iteration = 1;
            frame.total = total;
            frame.pos = step.pos;
            if (!loop->index.empty()) scope.set(loop->index, Value(frame.iteration));
            stack_.push_back(frame);
            continue;
        }
        const auto& cond = std::get<Conditional>(step.node);
        const std::vector<Step>& branch =
            eval_predicate(cond.predicate, scope, step.pos) ? cond.then_steps : cond.else_steps;
        if (!branch.empty()) stack_.push_back({&branch});
    }
    return nullptr;
}

namespace {

std::optional<int64_t> count_steps(const std::vector<Step>& steps) {
    int64_t total = 0;
    for (const auto& s : steps) {
        if (std::holds_alternative<Conditional>(s.node)) return std::nullopt;
        if (const auto* loop = std::get_if<Loop>(&s.node)) {
            if (!loop->count.is_number_integer()) return std::nullopt;
            auto inner = count_steps(loop->body);
            if (!inner) return std::nullopt;
            total += loop->count.get<int64_t>() * *inner;
        } else {
            ++total;
        }
    }
    return total;
}

}  // namespace

std::optional<int64_t> count_expanded_steps(const Playbook& pb) {
    return count_steps(pb.actions);
}

}  // namespace tdf
