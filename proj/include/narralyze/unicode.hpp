#pragma once

#include "narralyze/error.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include <string>
#include <string_view>
#include <vector>

namespace narralyze::unicode {

inline std::string nfc(std::string_view text) {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* norm = icu::Normalizer2::getNFCInstance(status);
    if (U_FAILURE(status)) throw Error("ICU NFC normalizer unavailable");
    const auto src = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
    if (norm->isNormalized(src, status) && U_SUCCESS(status)) return std::string(text);
    status = U_ZERO_ERROR;
    icu::UnicodeString dst = norm->normalize(src, status);
    if (U_FAILURE(status)) throw ValidationError("text is not valid Unicode");
    std::string out;
    dst.toUTF8String(out);
    return out;
}

/// Code point plus the byte range it occupies in the source string.
struct CodePoint {
    char32_t value;
    std::size_t offset;
    std::size_t length;
};

/// Decodes UTF-8; malformed sequences become U+FFFD occupying their bytes.
inline std::vector<CodePoint> decode(std::string_view text) {
    std::vector<CodePoint> out;
    out.reserve(text.size());
    const auto* s = reinterpret_cast<const uint8_t*>(text.data());
    const auto n = static_cast<int32_t>(text.size());
    int32_t i = 0;
    while (i < n) {
        const int32_t start = i;
        UChar32 c = 0;
        U8_NEXT(s, i, n, c);
        if (c < 0) c = 0xFFFD;
        out.push_back({static_cast<char32_t>(c), static_cast<std::size_t>(start),
                       static_cast<std::size_t>(i - start)});
    }
    return out;
}

inline std::u32string to_u32(std::string_view text) {
    std::u32string out;
    for (const auto& cp : decode(text)) out.push_back(cp.value);
    return out;
}

inline void append_utf8(std::string& out, char32_t c) {
    uint8_t buf[U8_MAX_LENGTH];
    int32_t len = 0;
    UBool error = false;
    U8_APPEND(buf, len, U8_MAX_LENGTH, static_cast<UChar32>(c), error);
    if (error) throw ValidationError("invalid code point");
    out.append(reinterpret_cast<const char*>(buf), static_cast<std::size_t>(len));
}

inline std::string to_utf8(std::u32string_view text) {
    std::string out;
    for (char32_t c : text) append_utf8(out, c);
    return out;
}

inline bool is_separator(char32_t c) {
    return u_isUWhiteSpace(static_cast<UChar32>(c)) || u_ispunct(static_cast<UChar32>(c));
}

inline bool is_whitespace(char32_t c) { return u_isUWhiteSpace(static_cast<UChar32>(c)); }

} // namespace narralyze::unicode
