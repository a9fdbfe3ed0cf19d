#include "tdf/screen_model.hpp"

#include <fstream>

#include "tdf/util.hpp"

namespace tdf {

namespace fs = std::filesystem;

const char* to_string(Gesture g) {
    switch (g) {
        case Gesture::click_left: return "click_left";
        case Gesture::click_right: return "click_right";
        case Gesture::click_double: return "click_double";
        case Gesture::drag: return "drag";
    }
    return "click_left";
}

std::optional<Gesture> gesture_from_string(std::string_view s) {
    if (s == "click_left") return Gesture::click_left;
    if (s == "click_right") return Gesture::click_right;
    if (s == "click_double") return Gesture::click_double;
    if (s == "drag") return Gesture::drag;
    return std::nullopt;
}

const Element* Screen::find_element(const std::string& element_id) const {
    for (const auto& e : elements)
        if (e.id == element_id) return &e;
    return nullptr;
}

const Transition* Screen::find_transition(const std::string& element_id, Gesture g) const {
    for (const auto& t : transitions)
        if (t.element == element_id && t.gesture == g) return &t;
    return nullptr;
}

const Screen* ScreenModel::find_screen(const std::string& id) const {
    for (const auto& s : screens)
        if (s.id == id) return &s;
    return nullptr;
}

namespace {

std::optional<std::string> parse_effect(const Value& v, FsEffect& out) {
    if (!v.is_object() || !v.contains("op") || !v["op"].is_string()) return "effect needs a string 'op'";
    std::string op = v["op"];
    auto need = [&](const char* field, std::string& into) -> std::optional<std::string> {
        if (!v.contains(field) || !v[field].is_string())
            return "effect '" + op + "' needs a string '" + field + "'";
        into = v[field];
        return std::nullopt;
    };
    if (op == "write_file" || op == "append_file") {
        out.op = op == "write_file" ? FsEffect::Op::write_file : FsEffect::Op::append_file;
        if (auto e = need("path", out.path)) return e;
        if (auto e = need("content", out.content)) return e;
    } else if (op == "mkdir" || op == "remove") {
        out.op = op == "mkdir" ? FsEffect::Op::mkdir : FsEffect::Op::remove;
        if (auto e = need("path", out.path)) return e;
    } else if (op == "move" || op == "copy") {
        out.op = op == "move" ? FsEffect::Op::move : FsEffect::Op::copy;
        if (auto e = need("from", out.from)) return e;
        if (auto e = need("to", out.to)) return e;
    } else if (op == "trash" || op == "trash_no_info") {
        out.op = op == "trash" ? FsEffect::Op::trash : FsEffect::Op::trash_no_info;
        if (auto e = need("path", out.path)) return e;
        if (auto e = need("trash_dir", out.trash_dir)) return e;
    } else {
        return "unknown effect op '" + op + "'";
    }
    return std::nullopt;
}

std::optional<std::string> parse_region(const Value& v, Region& out) {
    if (!v.is_array() || v.size() != 4) return "region must be [x, y, w, h]";
    for (const auto& c : v)
        if (!c.is_number_integer()) return "region components must be integers";
    out = Region{v[0].get<int>(), v[1].get<int>(), v[2].get<int>(), v[3].get<int>()};
    return std::nullopt;
}

}  // namespace

std::variant<ScreenModel, std::string> load_screen_model(const Value& doc) {
    if (!doc.is_object()) return std::string("screen model must be a JSON object");
    ScreenModel m;
    if (!doc.contains("width") || !doc["width"].is_number_integer() || !doc.contains("height") ||
        !doc["height"].is_number_integer())
        return std::string("screen model needs integer 'width' and 'height'");
    m.width = doc["width"].get<int>();
    m.height = doc["height"].get<int>();
    if (m.width <= 0 || m.height <= 0) return std::string("screen resolution must be positive");
    if (!doc.contains("screens") || !doc["screens"].is_array() || doc["screens"].empty())
        return std::string("screen model needs a non-empty 'screens' array");

    for (const auto& sv : doc["screens"]) {
        if (!sv.is_object() || !sv.contains("id") || !sv["id"].is_string())
            return std::string("every screen needs a string 'id'");
        Screen s;
        s.id = sv["id"];
        if (m.find_screen(s.id)) return "duplicate screen id '" + s.id + "'";
        for (const auto& ev : sv.value("elements", Value::array())) {
            Element e;
            if (!ev.is_object() || !ev.contains("id") || !ev["id"].is_string())
                return "screen '" + s.id + "': every element needs a string 'id'";
            e.id = ev["id"];
            if (s.find_element(e.id)) return "screen '" + s.id + "': duplicate element id '" + e.id + "'";
            std::string kind = ev.value("kind", "");
            if (kind == "icon") {
                e.kind = ElementKind::icon;
                if (!ev.contains("image") || !ev["image"].is_string())
                    return "element '" + e.id + "': icon elements need a string 'image'";
                e.label = ev["image"];
            } else if (kind == "text") {
                e.kind = ElementKind::text;
                if (!ev.contains("label") || !ev["label"].is_string())
                    return "element '" + e.id + "': text elements need a string 'label'";
                e.label = ev["label"];
            } else {
                return "element '" + e.id + "': kind must be 'icon' or 'text'";
            }
            if (!ev.contains("region")) return "element '" + e.id + "': missing 'region'";
            if (auto err = parse_region(ev["region"], e.region)) return "element '" + e.id + "': " + *err;
            if (e.region.w <= 0 || e.region.h <= 0 || e.region.x < 0 || e.region.y < 0 ||
                e.region.x + e.region.w > m.width || e.region.y + e.region.h > m.height)
                return "element '" + e.id + "': region exceeds screen bounds";
            for (const auto& other : s.elements) {
                if (other.kind == ElementKind::text && e.kind == ElementKind::text && other.label == e.label &&
                    other.region.overlaps(e.region))
                    return "screen '" + s.id + "': text elements '" + other.id + "' and '" + e.id +
                           "' share label '" + e.label + "' with overlapping regions";
            }
            s.elements.push_back(std::move(e));
        }
        for (const auto& tv : sv.value("transitions", Value::array())) {
            Transition t;
            if (!tv.is_object() || !tv.contains("element") || !tv["element"].is_string())
                return "screen '" + s.id + "': every transition needs a string 'element'";
            t.element = tv["element"];
            if (!s.find_element(t.element))
                return "screen '" + s.id + "': transition references unknown element '" + t.element + "'";
            std::string g = tv.value("gesture", "");
            auto gesture = gesture_from_string(g);
            if (!gesture) return "screen '" + s.id + "': unknown gesture '" + g + "'";
            t.gesture = *gesture;
            if (s.find_transition(t.element, t.gesture))
                return "screen '" + s.id + "': duplicate transition for ('" + t.element + "', " + g + ")";
            t.to = tv.value("to", "");
            for (const auto& ev : tv.value("effects", Value::array())) {
                FsEffect fx;
                if (auto err = parse_effect(ev, fx)) return "screen '" + s.id + "': " + *err;
                t.effects.push_back(std::move(fx));
            }
            s.transitions.push_back(std::move(t));
        }
        m.screens.push_back(std::move(s));
    }

    m.initial = doc.value("initial", m.screens.front().id);
    if (!m.find_screen(m.initial)) return "initial screen '" + m.initial + "' does not exist";
    for (const auto& s : m.screens)
        for (const auto& t : s.transitions)
            if (!t.to.empty() && !m.find_screen(t.to))
                return "screen '" + s.id + "': transition targets unknown screen '" + t.to + "'";
    return m;
}

std::variant<ScreenModel, std::string> load_screen_model_file(const fs::path& file) {
    auto text = read_file(file);
    if (!text) return "cannot read screen model file " + file.string();
    Value doc = Value::parse(*text, nullptr, false);
    if (doc.is_discarded()) return "screen model file " + file.string() + " is not valid JSON";
    return load_screen_model(doc);
}

namespace {

std::variant<fs::path, std::string> resolve_effect_path(const std::string& raw,
                                                        const std::map<std::string, std::string>& sys_vars,
                                                        const std::optional<fs::path>& confine_root) {
    Scope scope;
    for (const auto& [k, v] : sys_vars) scope.set(k, v);
    std::string rendered;
    try {
        rendered = render_template(TemplateString(raw), scope);
    } catch (const TemplateError& e) {
        return "effect path '" + raw + "': " + e.what();
    }
    fs::path p(rendered);
    if (!p.is_absolute()) return "effect path '" + rendered + "' is not absolute";
    if (confine_root && !path_within(*confine_root, p))
        return "effect path '" + rendered + "' escapes the execution root";
    return p;
}

std::optional<std::string> trash_one(const fs::path& victim, const fs::path& trash_dir, bool with_info) {
    std::error_code ec;
    if (!fs::exists(victim, ec)) return "trash: '" + victim.string() + "' does not exist";
    fs::create_directories(trash_dir / "files", ec);
    if (ec) return "trash: cannot create " + (trash_dir / "files").string();
    fs::create_directories(trash_dir / "info", ec);
    if (ec) return "trash: cannot create " + (trash_dir / "info").string();
    std::string name = victim.filename().string();
    fs::path dest = trash_dir / "files" / name;
    if (fs::exists(dest, ec)) return "trash: '" + dest.string() + "' already exists";
    fs::rename(victim, dest, ec);
    if (ec) return "trash: cannot move '" + victim.string() + "': " + ec.message();
    if (with_info) {
        std::string info = "[Trash Info]\nPath=" + victim.string() + "\nDeletionDate=" +
                           format_local_seconds(now_utc()) + "\n";
        if (!write_file(trash_dir / "info" / (name + ".trashinfo"), info))
            return "trash: cannot write the info record for '" + name + "'";
    }
    return std::nullopt;
}

}  // namespace

std::optional<std::string> apply_effects(const std::vector<FsEffect>& effects,
                                         const std::map<std::string, std::string>& sys_vars,
                                         const std::optional<fs::path>& confine_root) {
    for (const auto& fx : effects) {
        auto resolve = [&](const std::string& raw) { return resolve_effect_path(raw, sys_vars, confine_root); };
        std::error_code ec;
        switch (fx.op) {
            case FsEffect::Op::write_file:
            case FsEffect::Op::append_file: {
                auto p = resolve(fx.path);
                if (auto* err = std::get_if<std::string>(&p)) return *err;
                auto& path = std::get<fs::path>(p);
                fs::create_directories(path.parent_path(), ec);
                std::ofstream out(path, fx.op == FsEffect::Op::append_file ? std::ios::app : std::ios::trunc);
                if (!out) return "cannot open '" + path.string() + "' for writing";
                out << fx.content;
                break;
            }
            case FsEffect::Op::mkdir: {
                auto p = resolve(fx.path);
                if (auto* err = std::get_if<std::string>(&p)) return *err;
                fs::create_directories(std::get<fs::path>(p), ec);
                if (ec) return "mkdir '" + std::get<fs::path>(p).string() + "': " + ec.message();
                break;
            }
            case FsEffect::Op::remove: {
                auto p = resolve(fx.path);
                if (auto* err = std::get_if<std::string>(&p)) return *err;
                fs::remove_all(std::get<fs::path>(p), ec);
                if (ec) return "remove '" + std::get<fs::path>(p).string() + "': " + ec.message();
                break;
            }
            case FsEffect::Op::move:
            case FsEffect::Op::copy: {
                auto pf = resolve(fx.from);
                if (auto* err = std::get_if<std::string>(&pf)) return *err;
                auto pt = resolve(fx.to);
                if (auto* err = std::get_if<std::string>(&pt)) return *err;
                const auto& from = std::get<fs::path>(pf);
                const auto& to = std::get<fs::path>(pt);
                fs::create_directories(to.parent_path(), ec);
                if (fx.op == FsEffect::Op::move) {
                    fs::rename(from, to, ec);
                    if (ec) return "move '" + from.string() + "': " + ec.message();
                } else {
                    fs::copy(from, to, fs::copy_options::recursive, ec);
                    if (ec) return "copy '" + from.string() + "': " + ec.message();
                }
                break;
            }
            case FsEffect::Op::trash:
            case FsEffect::Op::trash_no_info: {
                auto p = resolve(fx.path);
                if (auto* err = std::get_if<std::string>(&p)) return *err;
                auto pd = resolve(fx.trash_dir);
                if (auto* err = std::get_if<std::string>(&pd)) return *err;
                if (auto err = trash_one(std::get<fs::path>(p), std::get<fs::path>(pd),
                                         fx.op == FsEffect::Op::trash))
                    return err;
                break;
            }
        }
    }
    return std::nullopt;
}

}  // namespace tdf
