#include "flowalign/prompttok.hpp"

#include <array>

#include <json.hpp>

#include "flowalign/errors.hpp"

namespace flowalign::prompttok {

const char* to_string(SpanKind kind) {
    switch (kind) {
        case SpanKind::word: return "word";
        case SpanKind::character: return "char";
        case SpanKind::quote_mark: return "quote_mark";
    }
    return "unknown";
}

std::span<const QuotePair> default_quote_pairs() {
    static constexpr std::array<QuotePair, 4> pairs{{
        {0x0022, 0x0022},  // "
        {0x201C, 0x201D},  // curly double quotes
        {0x300C, 0x300D},  // corner brackets
        {0x300E, 0x300F},  // white corner brackets
    }};
    return pairs;
}

Decoded decode_utf8(std::string_view s, size_t i) {
    const auto byte = [&](size_t k) { return static_cast<unsigned char>(s[k]); };
    const unsigned char b0 = byte(i);
    if (b0 < 0x80) {
        return {b0, 1, true};
    }
    int len = 0;
    uint32_t cp = 0;
    if ((b0 & 0xE0) == 0xC0) {
        len = 2;
        cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        len = 3;
        cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
        len = 4;
        cp = b0 & 0x07;
    } else {
        return {b0, 1, false};  // stray continuation or invalid lead byte
    }
    if (i + static_cast<size_t>(len) > s.size()) {
        return {b0, 1, false};
    }
    for (int k = 1; k < len; ++k) {
        const unsigned char bk = byte(i + static_cast<size_t>(k));
        if ((bk & 0xC0) != 0x80) {
            return {b0, 1, false};
        }
        cp = (cp << 6) | (bk & 0x3F);
    }
    return {cp, len, true};
}

namespace {

bool is_whitespace(uint32_t cp) {
    switch (cp) {
        case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x20:
        case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
        case 0x202F: case 0x205F: case 0x3000:
            return true;
        default:
            return cp >= 0x2000 && cp <= 0x200A;
    }
}

bool is_extend(uint32_t cp) {
    return (cp >= 0x0300 && cp <= 0x036F) ||  // combining diacriticals
           (cp >= 0x1AB0 && cp <= 0x1AFF) ||
           (cp >= 0x1DC0 && cp <= 0x1DFF) ||
           (cp >= 0x20D0 && cp <= 0x20FF) ||
           (cp >= 0xFE20 && cp <= 0xFE2F) ||
           (cp >= 0xFE00 && cp <= 0xFE0F) ||  // variation selectors
           (cp >= 0x1F3FB && cp <= 0x1F3FF);  // skin-tone modifiers
}

bool is_regional_indicator(uint32_t cp) { return cp >= 0x1F1E6 && cp <= 0x1F1FF; }

bool is_control(uint32_t cp) {
    return cp < 0x20 || cp == 0x7F || (cp >= 0x80 && cp <= 0x9F);
}

enum class Hangul { none, L, V, T, LV, LVT };

Hangul hangul_class(uint32_t cp) {
    if ((cp >= 0x1100 && cp <= 0x115F) || (cp >= 0xA960 && cp <= 0xA97C)) return Hangul::L;
    if ((cp >= 0x1160 && cp <= 0x11A7) || (cp >= 0xD7B0 && cp <= 0xD7C6)) return Hangul::V;
    if ((cp >= 0x11A8 && cp <= 0x11FF) || (cp >= 0xD7CB && cp <= 0xD7FB)) return Hangul::T;
    if (cp >= 0xAC00 && cp <= 0xD7A3) {
        return (cp - 0xAC00) % 28 == 0 ? Hangul::LV : Hangul::LVT;
    }
    return Hangul::none;
}

bool hangul_joins(uint32_t prev, uint32_t next) {
    const Hangul a = hangul_class(prev);
    const Hangul b = hangul_class(next);
    if (a == Hangul::none || b == Hangul::none) return false;
    if (a == Hangul::L) return b == Hangul::L || b == Hangul::V || b == Hangul::LV || b == Hangul::LVT;
    if (a == Hangul::LV || a == Hangul::V) return b == Hangul::V || b == Hangul::T;
    if (a == Hangul::LVT || a == Hangul::T) return b == Hangul::T;
    return false;
}

constexpr uint32_t kZwj = 0x200D;

}  // namespace

size_t next_grapheme(std::string_view s, size_t i) {
    const Decoded first = decode_utf8(s, i);
    size_t j = i + static_cast<size_t>(first.length);
    if (!first.valid) {
        return j;  // opaque byte, its own unit
    }
    if (first.cp == '\r') {
        if (j < s.size() && s[j] == '\n') {
            return j + 1;
        }
        return j;
    }
    if (is_control(first.cp)) {
        return j;
    }
    uint32_t prev = first.cp;
    bool ri_open = is_regional_indicator(first.cp);
    while (j < s.size()) {
        const Decoded d = decode_utf8(s, j);
        if (!d.valid) {
            break;
        }
        if (is_extend(d.cp)) {
            j += static_cast<size_t>(d.length);
            continue;
        }
        if (d.cp == kZwj) {
            // join the ZWJ and the following base (emoji sequences)
            const size_t after = j + static_cast<size_t>(d.length);
            if (after < s.size()) {
                const Decoded nxt = decode_utf8(s, after);
                if (nxt.valid && !is_control(nxt.cp) && !is_whitespace(nxt.cp)) {
                    j = after + static_cast<size_t>(nxt.length);
                    prev = nxt.cp;
                    ri_open = false;
                    continue;
                }
            }
            j = after;
            break;
        }
        if (ri_open && is_regional_indicator(d.cp)) {
            j += static_cast<size_t>(d.length);
            ri_open = false;  // flags pair up
            prev = d.cp;
            continue;
        }
        if (hangul_joins(prev, d.cp)) {
            j += static_cast<size_t>(d.length);
            prev = d.cp;
            continue;
        }
        break;
    }
    return j;
}

namespace {

const QuotePair* opening_pair(uint32_t cp, std::span<const QuotePair> pairs) {
    for (const QuotePair& p : pairs) {
        if (p.open == cp) {
            return &p;
        }
    }
    return nullptr;
}

bool closer_ahead(std::string_view s, size_t from, uint32_t close) {
    size_t i = from;
    while (i < s.size()) {
        const Decoded d = decode_utf8(s, i);
        if (d.valid && d.cp == close) {
            return true;
        }
        i += static_cast<size_t>(d.length);
    }
    return false;
}

}  // namespace

std::vector<TokenSpan> segment_prompt(std::string_view prompt) {
    return segment_prompt(prompt, default_quote_pairs());
}

std::vector<TokenSpan> segment_prompt(std::string_view prompt,
                                      std::span<const QuotePair> quote_pairs) {
    std::vector<TokenSpan> spans;
    size_t i = 0;
    bool inside = false;
    uint32_t expected_close = 0;

    size_t word_begin = 0;
    bool in_word = false;
    const auto flush_word = [&](size_t end) {
        if (in_word) {
            spans.push_back({std::string(prompt.substr(word_begin, end - word_begin)),
                             SpanKind::word, word_begin, end});
            in_word = false;
        }
    };

    while (i < prompt.size()) {
        const Decoded d = decode_utf8(prompt, i);
        const size_t len = static_cast<size_t>(d.length);
        if (inside) {
            if (d.valid && d.cp == expected_close) {
                spans.push_back({std::string(prompt.substr(i, len)), SpanKind::quote_mark, i, i + len});
                inside = false;
                i += len;
                continue;
            }
            const size_t end = next_grapheme(prompt, i);
            spans.push_back({std::string(prompt.substr(i, end - i)), SpanKind::character, i, end});
            i = end;
            continue;
        }
        if (d.valid && is_whitespace(d.cp)) {
            flush_word(i);
            i += len;
            continue;
        }
        if (d.valid) {
            if (const QuotePair* p = opening_pair(d.cp, quote_pairs);
                p && closer_ahead(prompt, i + len, p->close)) {
                flush_word(i);
                spans.push_back({std::string(prompt.substr(i, len)), SpanKind::quote_mark, i, i + len});
                inside = true;
                expected_close = p->close;
                i += len;
                continue;
            }
        }
        // word content (including unmatched quote marks and invalid bytes)
        if (!in_word) {
            in_word = true;
            word_begin = i;
        }
        i += len;
    }
    flush_word(prompt.size());
    return spans;
}

std::string reconstruct(std::span<const TokenSpan> spans, std::string_view original) {
    std::string out;
    size_t cursor = 0;
    for (const TokenSpan& span : spans) {
        if (span.byte_begin < cursor || span.byte_end > original.size() ||
            span.byte_begin > span.byte_end) {
            throw ContractError("reconstruct: spans overlap or exceed the original");
        }
        // the gap must be whitespace only
        size_t g = cursor;
        while (g < span.byte_begin) {
            const Decoded d = decode_utf8(original, g);
            if (!d.valid || !is_whitespace(d.cp)) {
                throw ContractError("reconstruct: non-whitespace gap between spans");
            }
            g += static_cast<size_t>(d.length);
        }
        out += original.substr(cursor, span.byte_begin - cursor);
        if (original.substr(span.byte_begin, span.byte_end - span.byte_begin) != span.text) {
            throw ContractError("reconstruct: span text does not match the original");
        }
        out += span.text;
        cursor = span.byte_end;
    }
    size_t g = cursor;
    while (g < original.size()) {
        const Decoded d = decode_utf8(original, g);
        if (!d.valid || !is_whitespace(d.cp)) {
            throw ContractError("reconstruct: non-whitespace tail after the last span");
        }
        g += static_cast<size_t>(d.length);
    }
    out += original.substr(cursor);
    return out;
}

std::string spans_to_json(std::span<const TokenSpan> spans) {
    nlohmann::json arr = nlohmann::json::array();
    for (const TokenSpan& span : spans) {
        arr.push_back(nlohmann::json{{"text", span.text},
                                     {"kind", to_string(span.kind)},
                                     {"begin", span.byte_begin},
                                     {"end", span.byte_end}});
    }
    return arr.dump();
}

}  // namespace flowalign::prompttok
