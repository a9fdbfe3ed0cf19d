#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "tdf/template.hpp"

namespace tdf {

struct Region {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;

    bool operator==(const Region&) const = default;
    std::pair<int, int> center() const { return {x + w / 2, y + h / 2}; }
    bool overlaps(const Region& o) const {
        return x < o.x + o.w && o.x < x + w && y < o.y + o.h && o.y < y + h;
    }
};

enum class Gesture { click_left, click_right, click_double, drag };

const char* to_string(Gesture g);
std::optional<Gesture> gesture_from_string(std::string_view s);

enum class ElementKind { icon, text };

struct Element {
    std::string id;
    ElementKind kind = ElementKind::text;
    // Visible label for text elements, image reference name for icons.
    std::string label;
    Region region;
};

// Filesystem side effect scripted on a transition. Paths may carry
// {{ system_variable }} placeholders resolved at application time.
struct FsEffect {
    enum class Op { write_file, append_file, mkdir, remove, move, copy, trash, trash_no_info };
    Op op = Op::write_file;
    std::string path;       // write_file, append_file, mkdir, remove, trash, trash_no_info
    std::string content;    // write_file, append_file
    std::string from;       // move, copy
    std::string to;         // move, copy
    std::string trash_dir;  // trash, trash_no_info
};

struct Transition {
    std::string element;
    Gesture gesture = Gesture::click_left;
    std::string to;  // target screen id, empty to stay put
    std::vector<FsEffect> effects;
};

struct Screen {
    std::string id;
    std::vector<Element> elements;
    std::vector<Transition> transitions;

    const Element* find_element(const std::string& element_id) const;
    const Transition* find_transition(const std::string& element_id, Gesture g) const;
};

// A deterministic stand-in for a live desktop: a finite set of screens with
// labeled elements, gesture-driven transitions, and scripted filesystem
// consequences.
struct ScreenModel {
    int width = 0;
    int height = 0;
    std::string initial;
    std::vector<Screen> screens;

    const Screen* find_screen(const std::string& id) const;
};

// Validates structure: bounds, unique ids, no identically labeled overlapping
// text elements, transitions referencing real elements and screens.
std::variant<ScreenModel, std::string> load_screen_model(const Value& doc);
std::variant<ScreenModel, std::string> load_screen_model_file(const std::filesystem::path& file);

// Runs each effect in order. Placeholders in paths resolve from `sys_vars`;
// with `confine_root` set, every resolved path must normalize to a location
// under it. Error text stops at the first failing effect.
std::optional<std::string> apply_effects(const std::vector<FsEffect>& effects,
                                         const std::map<std::string, std::string>& sys_vars,
                                         const std::optional<std::filesystem::path>& confine_root);

}  // namespace tdf
