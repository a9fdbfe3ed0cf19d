#pragma once

#include <stdexcept>
#include <vector>

#include "tdf/playbook.hpp"

namespace tdf {

class CursorError : public std::runtime_error {
public:
    CursorError(SourcePos pos, const std::string& message) : std::runtime_error(message), pos_(pos) {}
    SourcePos pos() const { return pos_; }

private:
    SourcePos pos_;
};

// Throws CursorError when the variable is unset or the operands are not
// comparable under the requested operator.
bool eval_predicate(const Predicate& p, const Scope& scope, SourcePos pos);

// Streams the leaf steps (actions and test invocations) of a playbook in
// depth-first document order. Loops repeat their body; conditionals choose a
// branch when reached, against the scope of that moment. A loop that declares
// an index binds it in the scope at the start of every iteration.
class ExecutionCursor {
public:
    explicit ExecutionCursor(const Playbook& pb);

    // Next leaf step, or nullptr when the playbook is exhausted.
    const Step* next(Scope& scope);

private:
    struct Frame {
        const std::vector<Step>* steps;
        size_t idx = 0;
        const Loop* loop = nullptr;  // set for loop-body frames
        int64_t iteration = 0;       // 1-based
        int64_t total = 0;
        SourcePos pos;
    };
    std::vector<Frame> stack_;
};

// Number of leaf steps a playbook expands to, when that is statically known
// (literal loop counts, no conditionals); nothing otherwise.
std::optional<int64_t> count_expanded_steps(const Playbook& pb);

}  // namespace tdf
