#include "tdf/resolver.hpp"

#include <algorithm>

#include <httplib.h>

#include "tdf/util.hpp"

namespace tdf {

const char* to_string(Resolution::Method m) {
    switch (m) {
        case Resolution::Method::fixture: return "fixture";
        case Resolution::Method::icon_match: return "icon_match";
        case Resolution::Method::ocr: return "ocr";
    }
    return "fixture";
}

ResolveResult resolve_on_screen(const GuiTarget& target, const Screen& screen) {
    ElementKind want_kind;
    std::string want_label;
    switch (target.kind) {
        case GuiTarget::Kind::text:
            want_kind = ElementKind::text;
            want_label = target.text;
            break;
        case GuiTarget::Kind::image:
            want_kind = ElementKind::icon;
            want_label = target.image;
            break;
        case GuiTarget::Kind::coordinates:
            return BackendError{"coordinate targets bypass resolution"};
    }

    std::vector<const Element*> matches;
    for (const auto& e : screen.elements)
        if (e.kind == want_kind && e.label == want_label) matches.push_back(&e);

    if (matches.empty()) {
        NotFound nf;
        for (const auto& e : screen.elements) {
            if (e.kind != want_kind) continue;
            nf.candidates.push_back(e.label);
            if (nf.candidates.size() == 5) break;
        }
        return nf;
    }

    std::stable_sort(matches.begin(), matches.end(), [](const Element* a, const Element* b) {
        if (a->region.y != b->region.y) return a->region.y < b->region.y;
        return a->region.x < b->region.x;
    });

    Resolution r;
    r.region = matches.front()->region;
    r.confidence = 1.0;
    r.method = Resolution::Method::fixture;
    r.ambiguous = matches.size() > 1;
    r.element_id = matches.front()->id;
    return r;
}

ResolveResult resolve_via_backend(const CvBackendConfig& cfg, const std::string& screenshot_png,
                                  const GuiTarget& target) {
    Value req;
    req["screenshot"] = base64_encode(screenshot_png);
    if (target.kind == GuiTarget::Kind::image) {
        req["target"] = Value{{"kind", "icon"}, {"data", target.image}};
    } else if (target.kind == GuiTarget::Kind::text) {
        req["target"] = Value{{"kind", "text"}, {"data", target.text}};
    } else {
        return BackendError{"coordinate targets bypass resolution"};
    }

    httplib::Client client(cfg.host, cfg.port);
    client.set_connection_timeout(cfg.timeout_ms / 1000, (cfg.timeout_ms % 1000) * 1000);
    client.set_read_timeout(cfg.timeout_ms / 1000, (cfg.timeout_ms % 1000) * 1000);
    auto res = client.Post(cfg.path, req.dump(), "application/json");
    if (!res) return BackendError{"backend unreachable: " + httplib::to_string(res.error())};
    if (res->status != 200) return BackendError{"backend returned HTTP " + std::to_string(res->status)};

    Value body = Value::parse(res->body, nullptr, false);
    if (body.is_discarded() || !body.is_object() || !body.contains("found") || !body["found"].is_boolean())
        return BackendError{"malformed backend response"};
    if (!body["found"].get<bool>()) return NotFound{};

    if (!body.contains("region") || !body["region"].is_array() || body["region"].size() != 4 ||
        !body.contains("confidence") || !body["confidence"].is_number())
        return BackendError{"malformed backend response"};
    for (const auto& c : body["region"])
        if (!c.is_number()) return BackendError{"malformed backend response"};

    double confidence = body["confidence"].get<double>();
    if (confidence < cfg.threshold) return NotFound{};

    Resolution r;
    r.region = Region{body["region"][0].get<int>(), body["region"][1].get<int>(), body["region"][2].get<int>(),
                      body["region"][3].get<int>()};
    r.confidence = confidence;
    r.method = target.kind == GuiTarget::Kind::image ? Resolution::Method::icon_match : Resolution::Method::ocr;
    return r;
}

}  // namespace tdf
