#pragma once

#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tagkit/common.hpp"

// Source and statement normalization: include stripping, user-macro expansion,
// comment removal, LaTeX-to-text conversion, and word tokenization.

namespace tagkit {

namespace detail {

inline bool is_ident_start(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
}
inline bool is_ident_char(char c) { return is_ident_start(c) || (c >= '0' && c <= '9'); }

// Copies a string or character literal starting at s[i] into out, returns the
// index one past the closing quote (or end on unterminated literals).
inline std::size_t copy_literal(std::string_view s, std::size_t i, std::string& out) {
    const char quote = s[i];
    out.push_back(s[i++]);
    while (i < s.size()) {
        char c = s[i];
        out.push_back(c);
        ++i;
        if (c == '\\' && i < s.size()) {
            out.push_back(s[i++]);
        } else if (c == quote) {
            break;
        }
    }
    return i;
}

struct MacroDef {
    bool function_like = false;
    std::vector<std::string> params;
    std::string body;
};

using MacroTable = std::map<std::string, MacroDef>;

// Returns the directive keyword ("include", "define", ...) if the line is a
// preprocessor directive, otherwise nullopt.
inline std::optional<std::string> directive_keyword(std::string_view line) {
    std::size_t i = 0;
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    if (i >= line.size() || line[i] != '#') return std::nullopt;
    ++i;
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    std::size_t start = i;
    while (i < line.size() && is_ident_char(line[i])) ++i;
    return std::string(line.substr(start, i - start));
}

inline std::string expand_text(std::string_view text, const MacroTable& table, int depth,
                               int max_depth, Warnings* warnings);

// Expands one function-like invocation whose '(' is at s[i]. Returns nullopt
// when the argument list is unbalanced at end of input.
inline std::optional<std::pair<std::string, std::size_t>> expand_invocation(
    std::string_view s, std::size_t i, const MacroDef& def, const MacroTable& table, int depth,
    int max_depth, Warnings* warnings) {
    std::vector<std::string> args;
    std::string current;
    int paren = 1;
    std::size_t j = i + 1;
    while (j < s.size() && paren > 0) {
        char c = s[j];
        if (c == '"' || c == '\'') {
            std::string lit;
            j = copy_literal(s, j, lit);
            current += lit;
            continue;
        }
        if (c == '(') ++paren;
        if (c == ')') {
            --paren;
            if (paren == 0) {
                ++j;
                break;
            }
        }
        if (c == ',' && paren == 1) {
            args.push_back(current);
            current.clear();
        } else {
            current.push_back(c);
        }
        ++j;
    }
    if (paren != 0) return std::nullopt;
    if (!current.empty() || !args.empty() || !def.params.empty()) args.push_back(current);

    std::unordered_map<std::string, std::string> binding;
    for (std::size_t k = 0; k < def.params.size(); ++k)
        binding[def.params[k]] = k < args.size() ? args[k] : "";

    // Substitute parameters token-wise in the body, then rescan the result.
    std::string substituted;
    std::size_t b = 0;
    std::string_view body = def.body;
    while (b < body.size()) {
        char c = body[b];
        if (c == '"' || c == '\'') {
            b = copy_literal(body, b, substituted);
        } else if (is_ident_start(c)) {
            std::size_t start = b;
            while (b < body.size() && is_ident_char(body[b])) ++b;
            std::string word(body.substr(start, b - start));
            auto it = binding.find(word);
            substituted += it != binding.end() ? it->second : word;
        } else {
            substituted.push_back(c);
            ++b;
        }
    }
    return std::make_pair(expand_text(substituted, table, depth + 1, max_depth, warnings), j);
}

inline std::string expand_text(std::string_view text, const MacroTable& table, int depth,
                               int max_depth, Warnings* warnings) {
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        char c = text[i];
        if (c == '"' || c == '\'') {
            i = copy_literal(text, i, out);
            continue;
        }
        if (!is_ident_start(c)) {
            out.push_back(c);
            ++i;
            continue;
        }
        std::size_t start = i;
        while (i < text.size() && is_ident_char(text[i])) ++i;
        std::string word(text.substr(start, i - start));
        auto it = table.find(word);
        if (it == table.end() || depth >= max_depth) {
            out += word;
            continue;
        }
        const MacroDef& def = it->second;
        if (!def.function_like) {
            out += expand_text(def.body, table, depth + 1, max_depth, warnings);
            continue;
        }
        std::size_t open = i;
        while (open < text.size() && (text[open] == ' ' || text[open] == '\t')) ++open;
        if (open >= text.size() || text[open] != '(') {
            out += word;  // function-like macro name without an argument list
            continue;
        }
        auto expanded = expand_invocation(text, open, def, table, depth, max_depth, warnings);
        if (!expanded) {
            warn(warnings, "unterminated invocation of macro '" + word + "'");
            out += text.substr(start);
            return out;
        }
        out += expanded->first;
        i = expanded->second;
    }
    return out;
}

inline void parse_define(std::string_view rest, MacroTable& table) {
    std::size_t i = 0;
    while (i < rest.size() && (rest[i] == ' ' || rest[i] == '\t')) ++i;
    std::size_t start = i;
    while (i < rest.size() && is_ident_char(rest[i])) ++i;
    if (i == start) return;  // malformed define, dropped
    std::string name(rest.substr(start, i - start));
    MacroDef def;
    if (i < rest.size() && rest[i] == '(') {  // no space before '(' per the C rule
        def.function_like = true;
        ++i;
        std::string param;
        for (; i < rest.size(); ++i) {
            char c = rest[i];
            if (c == ')') {
                ++i;
                break;
            }
            if (c == ',') {
                if (!param.empty()) def.params.push_back(param);
                param.clear();
            } else if (!std::isspace(static_cast<unsigned char>(c))) {
                param.push_back(c);
            }
        }
        if (!param.empty()) def.params.push_back(param);
    }
    while (i < rest.size() && (rest[i] == ' ' || rest[i] == '\t')) ++i;
    def.body = std::string(rest.substr(i));
    while (!def.body.empty() && (def.body.back() == ' ' || def.body.back() == '\t'))
        def.body.pop_back();
    table[name] = std::move(def);
}

}  // namespace detail

// Removes every line whose first non-whitespace token is an include directive;
// all other lines pass through byte-identical.
inline std::string strip_includes(std::string_view source) {
    std::string out;
    out.reserve(source.size());
    std::size_t start = 0;
    while (start < source.size()) {
        std::size_t nl = source.find('\n', start);
        std::size_t end = nl == std::string_view::npos ? source.size() : nl + 1;
        std::string_view line = source.substr(start, end - start);
        auto kw = detail::directive_keyword(line);
        if (!kw || *kw != "include") out += line;
        start = end;
    }
    return out;
}

// Collects `#define`/`#undef` directives in order, substitutes user macros in
// the following text (recursing up to max_depth), and drops all remaining
// preprocessor directive lines. Conditional-compilation directives are removed
// while the text of their branches is kept.
inline std::string expand_macros(std::string_view source, int max_depth = 16,
                                 Warnings* warnings = nullptr) {
    const bool trailing_newline = !source.empty() && source.back() == '\n';
    std::vector<std::string> lines;
    {  // splice directive lines that end with a backslash continuation
        auto raw = split_lines(source);
        for (std::size_t i = 0; i < raw.size(); ++i) {
            std::string line = raw[i];
            if (detail::directive_keyword(line)) {
                while (!line.empty() && line.back() == '\\' && i + 1 < raw.size()) {
                    line.pop_back();
                    line += raw[++i];
                }
            }
            lines.push_back(std::move(line));
        }
    }

    detail::MacroTable table;
    std::string out;
    std::string segment;
    auto flush = [&] {
        if (segment.empty()) return;
        out += detail::expand_text(segment, table, 0, max_depth, warnings);
        segment.clear();
    };
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::string& line = lines[i];
        bool last = i + 1 == lines.size();
        auto kw = detail::directive_keyword(line);
        if (!kw) {
            segment += line;
            if (!last || trailing_newline) segment += '\n';
            continue;
        }
        flush();
        std::size_t hash = line.find('#');
        std::size_t body = line.find(*kw, hash + 1);
        std::string_view rest = std::string_view(line).substr(body + kw->size());
        if (*kw == "define") {
            detail::parse_define(rest, table);
        } else if (*kw == "undef") {
            std::string name(collapse_whitespace(rest));
            table.erase(name);
        }
        // every directive line is dropped from the output
    }
    flush();
    return out;
}

// Replaces // and /*...*/ comments with a single space. Comment markers inside
// string and character literals are preserved.
inline std::string strip_comments(std::string_view source, Warnings* warnings = nullptr) {
    std::string out;
    out.reserve(source.size());
    std::size_t i = 0;
    while (i < source.size()) {
        char c = source[i];
        if (c == '"' || c == '\'') {
            if (c == '"' && i > 0 && source[i - 1] == 'R') {
                // raw string literal R"delim(...)delim"
                std::size_t open = source.find('(', i);
                if (open != std::string_view::npos) {
                    std::string delim = std::string(source.substr(i + 1, open - i - 1));
                    std::string closer = ")" + delim + "\"";
                    std::size_t close = source.find(closer, open + 1);
                    std::size_t end =
                        close == std::string_view::npos ? source.size() : close + closer.size();
                    out += source.substr(i, end - i);
                    i = end;
                    continue;
                }
            }
            i = detail::copy_literal(source, i, out);
            continue;
        }
        if (c == '/' && i + 1 < source.size() && source[i + 1] == '/') {
            std::size_t nl = source.find('\n', i);
            out.push_back(' ');
            i = nl == std::string_view::npos ? source.size() : nl;
            continue;
        }
        if (c == '/' && i + 1 < source.size() && source[i + 1] == '*') {
            std::size_t close = source.find("*/", i + 2);
            out.push_back(' ');
            if (close == std::string_view::npos) {
                warn(warnings, "unterminated block comment");
                i = source.size();
            } else {
                i = close + 2;
            }
            continue;
        }
        out.push_back(c);
        ++i;
    }
    return out;
}

namespace detail {

inline std::size_t find_balanced_close(std::string_view s, std::size_t open) {
    int depth = 0;
    for (std::size_t i = open; i < s.size(); ++i) {
        if (s[i] == '\\') {
            ++i;
            continue;
        }
        if (s[i] == '{') ++depth;
        if (s[i] == '}') {
            --depth;
            if (depth == 0) return i;
        }
    }
    return std::string_view::npos;
}

inline std::string latex_scan(std::string_view s);

// Handles a \command at position i (one past the backslash). Appends the
// replacement to out and returns the continuation index.
inline std::size_t latex_command(std::string_view s, std::size_t i, std::string& out) {
    static const std::unordered_set<std::string> kDropEnvs = {"figure", "table", "tabular"};
    std::size_t start = i;
    while (i < s.size() && std::isalpha(static_cast<unsigned char>(s[i]))) ++i;
    std::string name(s.substr(start, i - start));
    while (i < s.size() && s[i] == '*') ++i;  // starred variants

    if (name == "begin" || name == "end") {
        if (i < s.size() && s[i] == '{') {
            std::size_t close = find_balanced_close(s, i);
            if (close == std::string_view::npos) return i;
            std::string env(s.substr(i + 1, close - i - 1));
            i = close + 1;
            if (name == "begin" && kDropEnvs.count(env)) {
                std::string marker = "\\end{" + env + "}";
                std::size_t stop = s.find(marker, i);
                out.push_back(' ');
                return stop == std::string_view::npos ? s.size() : stop + marker.size();
            }
        }
        out.push_back(' ');
        return i;
    }

    // optional [...] arguments are dropped
    while (i < s.size() && s[i] == '[') {
        std::size_t close = s.find(']', i);
        if (close == std::string_view::npos) break;
        i = close + 1;
    }
    bool any_group = false;
    while (i < s.size() && s[i] == '{') {
        std::size_t close = find_balanced_close(s, i);
        if (close == std::string_view::npos) break;
        if (any_group) out.push_back(' ');
        out += latex_scan(s.substr(i + 1, close - i - 1));
        any_group = true;
        i = close + 1;
    }
    if (!any_group) out.push_back(' ');  // argument-less command removed
    return i;
}

inline std::string latex_scan(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        char c = s[i];
        if (c == '\\') {
            if (i + 1 >= s.size()) break;
            char n = s[i + 1];
            if (std::isalpha(static_cast<unsigned char>(n))) {
                i = latex_command(s, i + 1, out);
            } else if (n == '\\') {
                out.push_back(' ');
                i += 2;
            } else if (n == '(' || n == ')' || n == '[' || n == ']') {
                i += 2;  // math delimiters, content kept
            } else {
                out.push_back(n);  // escaped symbol such as \$ or \%
                i += 2;
            }
            continue;
        }
        switch (c) {
            case '$': while (i < s.size() && s[i] == '$') ++i; break;
            case '{': {
                std::size_t close = find_balanced_close(s, i);
                if (close == std::string_view::npos) {  // unbalanced: keep verbatim
                    out += s.substr(i);
                    return out;
                }
                out += latex_scan(s.substr(i + 1, close - i - 1));
                i = close + 1;
                break;
            }
            case '}': ++i; break;
            case '%': {
                std::size_t nl = s.find('\n', i);
                i = nl == std::string_view::npos ? s.size() : nl;
                break;
            }
            case '~': out.push_back(' '); ++i; break;
            default: out.push_back(c); ++i; break;
        }
    }
    return out;
}

}  // namespace detail

// Best-effort LaTeX stripper: math delimiters removed (content kept), commands
// replaced by their argument text, figure/table/tabular environments dropped,
// whitespace collapsed.
inline std::string latex_to_text(std::string_view statement) {
    return collapse_whitespace(detail::latex_scan(statement));
}

// Lowercased word tokens split on whitespace and punctuation. Used for Jaccard
// near-duplicate detection and TF-IDF features.
inline std::vector<std::string> word_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::string current;
    for (char c : text) {
        unsigned char u = static_cast<unsigned char>(c);
        bool word_char = std::isalnum(u) || u >= 0x80;
        if (word_char) {
            current.push_back(std::isupper(u) ? static_cast<char>(std::tolower(u)) : c);
        } else if (!current.empty()) {
            out.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) out.push_back(std::move(current));
    return out;
}

// Lowercased tokens for WordPiece pre-splitting: words plus single-character
// punctuation tokens.
inline std::vector<std::string> basic_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            out.push_back(std::move(current));
            current.clear();
        }
    };
    for (char c : text) {
        unsigned char u = static_cast<unsigned char>(c);
        if (std::isspace(u)) {
            flush();
        } else if (std::isalnum(u) || u >= 0x80) {
            current.push_back(std::isupper(u) ? static_cast<char>(std::tolower(u)) : c);
        } else {
            flush();
            out.emplace_back(1, c);
        }
    }
    flush();
    return out;
}

}  // namespace tagkit
