#pragma once

#include <string>
#include <variant>
#include <vector>

#include "tdf/screen_model.hpp"

namespace tdf {

// A target after template rendering: plain strings, ready to match.
struct GuiTarget {
    enum class Kind { image, text, coordinates };
    Kind kind = Kind::text;
    std::string image;  // kind=image: image asset reference
    std::string text;   // kind=text: visible label
    int x = 0;          // kind=coordinates
    int y = 0;
};

// One successful target resolution. `ambiguous` records that several
// elements matched and the top-most/left-most one was chosen.
struct Resolution {
    Region region;
    double confidence = 1.0;
    enum class Method { fixture, icon_match, ocr } method = Method::fixture;
    bool ambiguous = false;
    std::string element_id;  // fixture backend only
};

const char* to_string(Resolution::Method m);

// The target is absent from the screen; candidates list what was visible.
struct NotFound {
    std::vector<std::string> candidates;
};

// The resolver machinery itself failed (endpoint down, malformed reply).
// Never folded into NotFound.
struct BackendError {
    std::string message;
};

using ResolveResult = std::variant<Resolution, NotFound, BackendError>;

// Deterministic fixture backend: text targets match element labels exactly,
// image targets match icon references exactly. Ties break to the top-most,
// then left-most region.
ResolveResult resolve_on_screen(const GuiTarget& target, const Screen& screen);

// Contract for an external computer-vision service.
struct CvBackendConfig {
    std::string host = "127.0.0.1";
    int port = 0;
    std::string path = "/resolve";
    double threshold = 0.6;  // confidence below this reads as NotFound
    int timeout_ms = 10000;
};

// POSTs {screenshot: base64 PNG, target: {kind, data}} and maps the reply
// {found, region, confidence} through the threshold rule.
ResolveResult resolve_via_backend(const CvBackendConfig& cfg, const std::string& screenshot_png,
                                  const GuiTarget& target);

}  // namespace tdf
