#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace flowalign::prompttok {

// Segmentation policy for prompts that mix natural text with spans to be
// rendered verbatim: word-level tokens outside quotation marks, one token per
// character inside them, with the quote marks kept as their own tokens.

enum class SpanKind { word, character, quote_mark };

const char* to_string(SpanKind kind);  // "word", "char", "quote_mark"

struct TokenSpan {
    std::string text;
    SpanKind kind = SpanKind::word;
    size_t byte_begin = 0;  // half-open byte range into the original prompt
    size_t byte_end = 0;
};

struct QuotePair {
    uint32_t open;
    uint32_t close;
};

// ASCII ", curly double quotes, and the CJK corner brackets.
std::span<const QuotePair> default_quote_pairs();

// Rules: outside quotes, maximal whitespace-delimited words; a quote mark
// with a matching closer ahead opens a quoted region and is emitted as its
// own span; inside a quoted region every extended grapheme cluster (spaces
// included) becomes one character span until the closer. Unmatched quote
// marks degrade to literal word text. Whitespace between spans is not
// emitted; it lives in the gaps between byte ranges.
//
// Grapheme clustering covers the common cases: combining marks, variation
// selectors, ZWJ sequences, regional-indicator pairs, Hangul jamo
// composition and CRLF. It is not a full UAX #29 implementation.
std::vector<TokenSpan> segment_prompt(std::string_view prompt);
std::vector<TokenSpan> segment_prompt(std::string_view prompt,
                                      std::span<const QuotePair> quote_pairs);

// Splices the spans back together, restoring inter-span whitespace from the
// original via the byte ranges. Throws ContractError if the spans do not
// describe the original (wrong text, overlap, or non-whitespace gap).
std::string reconstruct(std::span<const TokenSpan> spans, std::string_view original);

// Spans rendered as a JSON array (for the tokenize CLI subcommand).
std::string spans_to_json(std::span<const TokenSpan> spans);

// decoding helper shared with tests: one UTF-8 codepoint at byte i; invalid
// bytes decode as one-byte units with valid = false
struct Decoded {
    uint32_t cp = 0;
    int length = 1;
    bool valid = true;
};
Decoded decode_utf8(std::string_view s, size_t i);

// end byte of the extended grapheme cluster starting at byte i
size_t next_grapheme(std::string_view s, size_t i);

}  // namespace flowalign::prompttok
