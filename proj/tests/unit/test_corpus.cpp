#include <doctest.h>

#include "langadapt/corpus.h"
#include "langadapt/error.h"
#include "langadapt/utf8.h"
#include "support.h"

using namespace langadapt;
using namespace langadapt::corpus;

TEST_CASE("utf8 decoding replaces invalid sequences") {
    CHECK(utf8::decode("ol\xC3\xA1") == U"olá");
    CHECK(utf8::decode("a\xFF" "b") == U"a�b");
    CHECK(utf8::encode(U"ção") == "ção");
    std::u32string out;
    CHECK_FALSE(utf8::decode_strict("\xC3", out));
}

TEST_CASE("strip_html") {
    CHECK(strip_html("<p>olá</p>") == "olá");
    CHECK(strip_html("a &amp; b") == "a & b");
    CHECK(strip_html("x &#231;&#227; <br/> y") == "x çã  y");
    std::size_t tags = 0;
    strip_html("<b>x</b><i>y</i>", &tags);
    CHECK(tags == 4);
}

TEST_CASE("decode_unicode_escapes") {
    CHECK(decode_unicode_escapes("ma\\u00e7\\u00e3") == "maçã");
    CHECK(decode_unicode_escapes("no escapes") == "no escapes");
    CHECK(decode_unicode_escapes("\\u00zz") == "\\u00zz");
}

TEST_CASE("fix_mojibake round-trips UTF-8 read as Latin-1") {
    // Build the broken form from the intended text: every UTF-8 byte of the
    // original reinterpreted as one Latin-1 code point.
    const auto break_text = [](const std::string& s) {
        std::u32string cps;
        for (unsigned char b : s) cps.push_back(b);
        return utf8::encode(cps);
    };
    CHECK(break_text("não") == "nÃ£o");
    CHECK(fix_mojibake(break_text("não")) == "não");
    CHECK(fix_mojibake(break_text("coração")) == "coração");
    CHECK(fix_mojibake("ação") == "ação");
}

TEST_CASE("remove_emoji") {
    CHECK(normalize_whitespace(remove_emoji("bom dia ☀")) == "bom dia");
    CHECK(remove_emoji("texto puro") == "texto puro");
    // Three regional-indicator flag pairs.
    CHECK(remove_emoji("\U0001F1E7\U0001F1F7\U0001F1F5\U0001F1F9\U0001F1FA\U0001F1F8") == "");
    const EmojiTable only_a({{U'a', U'a'}});
    CHECK(remove_emoji("banana", only_a) == "bnn");
}

TEST_CASE("clean_document composes the stages") {
    CHECK(clean_document({"", "<b>ol\\u00e1</b> \U0001F600"})->text == "olá");
    CHECK_FALSE(clean_document({"", "<br/>"}).has_value());
    CHECK(clean_document({"", "  a   b "})->text == "a b");
}

TEST_CASE("clean_text is idempotent") {
    for (const char* s : {"<p>a &lt;b&gt; c</p>", "x \\u003cb\\u003e y", "ma\\u00c3\\u00a7a", " \t a\n\nb "}) {
        const auto once = clean_text(s);
        CHECK(clean_text(once) == once);
    }
}

TEST_CASE("split_oversized keeps every word and respects the limit") {
    const std::string line = "Primeira frase. Segunda frase longa. Terceira.";
    const auto parts = split_oversized(line, 20);
    std::string joined;
    for (const auto& p : parts) {
        CHECK(p.size() <= 20);
        joined += (joined.empty() ? "" : " ") + p;
    }
    // The space at each cut is consumed.
    CHECK(parts.size() > 1);
    CHECK(joined == line);
}

TEST_CASE("ingest_corpus counts documents") {
    unit::TempDir dir("ingest");
    unit::write_file(dir / "a.txt", "um\n<br/>\ndois\n");
    unit::write_file(dir / "b.txt", "tres\nquatro\ncinco\n");
    unit::write_file(dir / "empty.txt", "");
    const auto r = ingest_corpus({dir / "a.txt", dir / "b.txt"}, dir / "out.txt");
    CHECK(r.stats.docs_in == 6);
    CHECK(r.stats.docs_out == 5);
    CHECK(r.stats.docs_dropped_empty == 1);
    CHECK(unit::read_file(dir / "out.txt") == "um\ndois\ntres\nquatro\ncinco\n");

    const auto e = ingest_corpus({dir / "empty.txt"}, dir / "out2.txt");
    CHECK(e.stats.docs_in == 0);
    CHECK(unit::read_file(dir / "out2.txt").empty());

    const auto missing = ingest_corpus({dir / "nope.txt", dir / "a.txt"}, dir / "out3.txt");
    CHECK(missing.file_errors.size() == 1);
    CHECK(missing.stats.docs_out == 2);

    CHECK_THROWS_AS(ingest_corpus({dir / "a.txt"}, dir / "no_such_dir" / "out.txt"), IoError);
}

TEST_CASE("emoji range files") {
    unit::TempDir dir("emoji");
    unit::write_file(dir / "ranges.txt", "# comment\n\n1F600-1F64F\nU+2600-U+26FF\nFE0F\n");
    const auto t = EmojiTable::load(dir / "ranges.txt");
    CHECK(t.contains(0x1F600));
    CHECK(t.contains(0x2600));
    CHECK(t.contains(0xFE0F));
    CHECK_FALSE(t.contains(U'a'));
    unit::write_file(dir / "bad.txt", "zz-1F\n");
    CHECK_THROWS(EmojiTable::load(dir / "bad.txt"));
}
