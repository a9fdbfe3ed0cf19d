#include <doctest.h>

#include "tdf/template.hpp"

using namespace tdf;

namespace {

Scope demo_scope() {
    Scope s;
    s.set("filename", "secret.txt");
    s.set("count", 7);
    s.set("ratio", 2.5);
    s.set("flag", true);
    s.set("home", "/home/user");
    s.unset_dynamic.insert("captured_later");
    return s;
}

std::string render(const std::string& raw, const Scope& scope) {
    return render_template(TemplateString(raw), scope);
}

}  // namespace

TEST_CASE("identifiers are lowercase snake_case starting with a letter") {
    CHECK(is_identifier("a"));
    CHECK(is_identifier("file_name2"));
    CHECK_FALSE(is_identifier(""));
    CHECK_FALSE(is_identifier("2fast"));
    CHECK_FALSE(is_identifier("_x"));
    CHECK_FALSE(is_identifier("Upper"));
    CHECK_FALSE(is_identifier("has-dash"));
    CHECK_FALSE(is_identifier("has space"));
}

TEST_CASE("plain text renders verbatim") {
    Scope s = demo_scope();
    CHECK(render("", s) == "");
    CHECK(render("no placeholders here", s) == "no placeholders here");
    CHECK(render("lone { brace } pair", s) == "lone { brace } pair");
}

TEST_CASE("placeholders substitute with optional inner spaces") {
    Scope s = demo_scope();
    CHECK(render("{{filename}}", s) == "secret.txt");
    CHECK(render("{{ filename }}", s) == "secret.txt");
    CHECK(render("{{  filename  }}", s) == "secret.txt");
    CHECK(render("{{ home }}/{{ filename }}", s) == "/home/user/secret.txt");
    CHECK(render("{{count}}{{count}}", s) == "77");
}

TEST_CASE("value kinds render in canonical scalar form") {
    Scope s = demo_scope();
    CHECK(render("n={{ count }}", s) == "n=7");
    CHECK(render("r={{ ratio }}", s) == "r=2.5");
    CHECK(render("f={{ flag }}", s) == "f=true");
}

TEST_CASE("near-miss syntax stays literal") {
    Scope s = demo_scope();
    CHECK(render("{ filename }", s) == "{ filename }");
    CHECK(render("{{ file-name }}", s) == "{{ file-name }}");
    CHECK(render("{{ Filename }}", s) == "{{ Filename }}");
    CHECK(render("{{ filename", s) == "{{ filename");
    CHECK(render("{{}}", s) == "{{}}");
    // A stray third brace re-synchronizes on the next two.
    CHECK(render("{{{ filename }}", s) == "{secret.txt");
}

TEST_CASE("substituted text is not re-expanded") {
    Scope s;
    s.set("outer", "{{ inner }}");
    s.set("inner", "boom");
    CHECK(render("{{ outer }}", s) == "{{ inner }}");
}

TEST_CASE("unknown identifiers raise a named error") {
    Scope s = demo_scope();
    try {
        render("{{ nonexistent }}", s);
        FAIL("expected TemplateError");
    } catch (const TemplateError& e) {
        CHECK(e.identifier() == "nonexistent");
    }
}

TEST_CASE("reading an uncaptured dynamic variable raises a named error") {
    Scope s = demo_scope();
    try {
        render("{{ captured_later }}", s);
        FAIL("expected TemplateError");
    } catch (const TemplateError& e) {
        CHECK(e.identifier() == "captured_later");
    }
    s.set("captured_later", "now set");
    CHECK(render("{{ captured_later }}", s) == "now set");
}

TEST_CASE("placeholders() lists references in order with duplicates") {
    TemplateString t("{{ a }}/{{ b }}/{{ a }} and {{ not-one }}");
    CHECK(t.placeholders() == std::vector<std::string>{"a", "b", "a"});
}
