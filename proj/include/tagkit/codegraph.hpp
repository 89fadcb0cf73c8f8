#pragma once

#include <tree_sitter/api.h>

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "tagkit/common.hpp"

extern "C" const TSLanguage* tree_sitter_cpp();

// Program graphs: C++ syntax trees (tree-sitter) augmented with semantic edges
// (token order, data flow, guards, returns) and a sink node whose final GGNN
// state represents the whole graph.

namespace tagkit {

// ---------------------------------------------------------------------------
// edge types
// ---------------------------------------------------------------------------

enum class EdgeType : std::uint8_t {
    Child = 0,
    NextToken,
    LastRead,
    LastWrite,
    ComputedFrom,
    LastLexicalUse,
    ReturnsTo,
    GuardedBy,
    GuardedByNegation,
    ToSink,
    ChildReversed,
    NextTokenReversed,
    LastReadReversed,
    LastWriteReversed,
    ComputedFromReversed,
    LastLexicalUseReversed,
    ReturnsToReversed,
    GuardedByReversed,
    GuardedByNegationReversed,
    ToSinkReversed,
};

constexpr std::size_t kEdgeTypeCount = 20;
constexpr std::size_t kForwardEdgeTypeCount = 10;

inline EdgeType reversed(EdgeType t) {
    auto v = static_cast<std::uint8_t>(t);
    return static_cast<EdgeType>(v < kForwardEdgeTypeCount ? v + kForwardEdgeTypeCount
                                                           : v - kForwardEdgeTypeCount);
}

inline const char* edge_type_name(EdgeType t) {
    static const char* names[kEdgeTypeCount] = {
        "Child",          "NextToken",         "LastRead",
        "LastWrite",      "ComputedFrom",      "LastLexicalUse",
        "ReturnsTo",      "GuardedBy",         "GuardedByNegation",
        "ToSink",         "ChildRev",          "NextTokenRev",
        "LastReadRev",    "LastWriteRev",      "ComputedFromRev",
        "LastLexicalRev", "ReturnsToRev",      "GuardedByRev",
        "GuardedByNegRev", "ToSinkRev",
    };
    return names[static_cast<std::size_t>(t)];
}

// ---------------------------------------------------------------------------
// graph model
// ---------------------------------------------------------------------------

struct GraphNode {
    std::uint32_t id = 0;
    std::string kind;
    std::optional<std::string> token_text;     // leaves only
    std::optional<std::string> variable_type;  // identifier leaves with a resolved declaration
};

struct GraphEdge {
    std::uint32_t source = 0;
    EdgeType type = EdgeType::Child;
    std::uint32_t target = 0;
};

struct ProgramGraph {
    std::vector<GraphNode> nodes;  // sink is the last node
    std::vector<GraphEdge> edges;
    std::uint32_t sink_id = 0;
    double parse_error_fraction = 0.0;

    std::size_t node_count() const { return nodes.size(); }

    // Structural invariants; returns human-readable violations (empty = valid).
    std::vector<std::string> validate() const;
};

inline const std::string kUnknownType = "⟨unk⟩";  // ⟨unk⟩

// ---------------------------------------------------------------------------
// parsing
// ---------------------------------------------------------------------------

// Owns the tree-sitter tree plus the source text it refers to.
class SyntaxTree {
public:
    SyntaxTree(std::string source, TSTree* tree) : source_(std::move(source)), tree_(tree) {}
    SyntaxTree(SyntaxTree&& other) noexcept : source_(std::move(other.source_)), tree_(other.tree_) {
        other.tree_ = nullptr;
    }
    SyntaxTree& operator=(SyntaxTree&& other) noexcept {
        if (this != &other) {
            if (tree_) ts_tree_delete(tree_);
            tree_ = other.tree_;
            other.tree_ = nullptr;
            source_ = std::move(other.source_);
        }
        return *this;
    }
    SyntaxTree(const SyntaxTree&) = delete;
    SyntaxTree& operator=(const SyntaxTree&) = delete;
    ~SyntaxTree() {
        if (tree_) ts_tree_delete(tree_);
    }

    TSNode root() const { return ts_tree_root_node(tree_); }
    const std::string& source() const { return source_; }
    std::string text_of(TSNode n) const {
        return source_.substr(ts_node_start_byte(n), ts_node_end_byte(n) - ts_node_start_byte(n));
    }

private:
    std::string source_;
    TSTree* tree_ = nullptr;
};

// Parses preprocessed C++ source. The parser always produces a tree; error
// subtrees are flagged and surface as parse_error_fraction on the graph.
inline SyntaxTree parse_to_ast(std::string source) {
    TSParser* parser = ts_parser_new();
    ts_parser_set_language(parser, tree_sitter_cpp());
    TSTree* tree =
        ts_parser_parse_string(parser, nullptr, source.data(), static_cast<std::uint32_t>(source.size()));
    ts_parser_delete(parser);
    return SyntaxTree(std::move(source), tree);
}

// ---------------------------------------------------------------------------
// construction
// ---------------------------------------------------------------------------

namespace detail {

struct CstNode {
    TSNode ts;
    std::uint32_t id = 0;
    std::int64_t parent = -1;
    std::string kind;
    std::uint32_t start = 0, end = 0;
    bool leaf = false;
    bool in_error = false;
};

// Pre-order walk over all nodes (named and anonymous); zero-width "missing"
// nodes inserted by error recovery are skipped.
inline std::vector<CstNode> flatten_cst(const SyntaxTree& tree) {
    std::vector<CstNode> out;
    struct Item {
        TSNode node;
        std::int64_t parent;
        bool in_error;
    };
    std::vector<Item> stack{{tree.root(), -1, ts_node_is_error(tree.root())}};
    while (!stack.empty()) {
        Item item = stack.back();
        stack.pop_back();
        CstNode n;
        n.ts = item.node;
        n.id = static_cast<std::uint32_t>(out.size());
        n.parent = item.parent;
        n.kind = ts_node_type(item.node);
        n.start = ts_node_start_byte(item.node);
        n.end = ts_node_end_byte(item.node);
        n.leaf = ts_node_child_count(item.node) == 0 && n.start < n.end;
        n.in_error = item.in_error;
        out.push_back(n);
        std::uint32_t count = ts_node_child_count(item.node);
        // push children in reverse so pre-order pops them in source order
        for (std::uint32_t i = count; i > 0; --i) {
            TSNode child = ts_node_child(item.node, i - 1);
            if (ts_node_is_missing(child)) continue;
            bool err = item.in_error || ts_node_is_error(child);
            stack.push_back({child, static_cast<std::int64_t>(n.id), err});
        }
    }
    return out;
}

inline bool field_is(TSNode parent, TSNode child, const char* field) {
    TSNode named = ts_node_child_by_field_name(parent, field, static_cast<std::uint32_t>(std::strlen(field)));
    return !ts_node_is_null(named) && ts_node_eq(named, child);
}

struct VariableOccurrence {
    std::uint32_t node_index = 0;  // index into the flattened CST
    std::uint32_t scope = 0;       // id of enclosing function_definition (root otherwise)
    std::string name;
    bool is_write = false;
};

struct VariableAnalysis {
    std::vector<VariableOccurrence> occurrences;                 // in source order
    std::map<std::pair<std::uint32_t, std::string>, std::string> declared_types;
    std::unordered_map<std::uint32_t, std::string> types_by_node;  // CST index -> type
    std::set<std::uint32_t> declared_name_nodes;                   // identifiers that ARE the declared name
};

inline std::uint32_t enclosing_scope(const std::vector<CstNode>& nodes, std::uint32_t idx) {
    std::int64_t cur = nodes[idx].parent;
    while (cur >= 0) {
        if (nodes[static_cast<std::size_t>(cur)].kind == "function_definition")
            return static_cast<std::uint32_t>(cur);
        cur = nodes[static_cast<std::size_t>(cur)].parent;
    }
    return 0;
}

// Canonical type text: whitespace collapsed, const/pointer/reference/array
// markers appended as suffix tokens.
inline std::string canonical_type(const SyntaxTree& tree, TSNode type_node,
                                  const std::vector<std::string>& suffixes) {
    std::string base = collapse_whitespace(tree.text_of(type_node));
    for (const auto& s : suffixes) {
        base += ' ';
        base += s;
    }
    return base;
}

// Descends a declarator chain to the declared identifier, collecting suffix
// markers. Returns null TSNode when the declarator declares a function.
inline TSNode declarator_identifier(TSNode declarator, std::vector<std::string>& suffixes) {
    TSNode cur = declarator;
    while (!ts_node_is_null(cur)) {
        std::string kind = ts_node_type(cur);
        if (kind == "identifier" || kind == "field_identifier") return cur;
        if (kind == "function_declarator") return TSNode{};  // function, not a variable
        if (kind == "pointer_declarator")
            suffixes.push_back("*");
        else if (kind == "reference_declarator")
            suffixes.push_back("&");
        else if (kind == "array_declarator")
            suffixes.push_back("[]");
        else if (kind != "init_declarator" && kind != "parenthesized_declarator" &&
                 kind != "structured_binding_declarator")
            return TSNode{};
        TSNode next = ts_node_child_by_field_name(cur, "declarator", 10);
        if (ts_node_is_null(next)) {
            // some declarators (e.g. reference_declarator) hold the identifier
            // as a plain named child
            TSNode found{};
            for (std::uint32_t i = 0; i < ts_node_child_count(cur); ++i) {
                TSNode c = ts_node_child(cur, i);
                if (ts_node_is_named(c)) {
                    found = c;
                    break;
                }
            }
            next = found;
        }
        cur = next;
    }
    return TSNode{};
}

inline VariableAnalysis analyze_variables(const SyntaxTree& tree,
                                          const std::vector<CstNode>& nodes) {
    VariableAnalysis va;
    std::unordered_map<const void*, std::uint32_t> ts_to_index;
    for (const auto& n : nodes) ts_to_index[n.ts.id] = n.id;

    // declarations: declaration / parameter_declaration / range-for bindings
    for (const auto& n : nodes) {
        if (n.kind != "declaration" && n.kind != "parameter_declaration" &&
            n.kind != "for_range_loop")
            continue;
        TSNode type_node = ts_node_child_by_field_name(n.ts, "type", 4);
        if (ts_node_is_null(type_node)) continue;
        bool is_const = false;
        for (std::uint32_t i = 0; i < ts_node_child_count(n.ts); ++i) {
            TSNode c = ts_node_child(n.ts, i);
            if (std::string(ts_node_type(c)) == "type_qualifier" &&
                tree.text_of(c).find("const") != std::string::npos)
                is_const = true;
        }
        for (std::uint32_t i = 0; i < ts_node_child_count(n.ts); ++i) {
            TSNode decl = ts_node_child(n.ts, i);
            if (!field_is(n.ts, decl, "declarator") &&
                !(n.kind == "declaration" && std::string(ts_node_type(decl)) == "init_declarator"))
                continue;
            std::vector<std::string> suffixes;
            if (is_const) suffixes.push_back("const");
            TSNode ident = declarator_identifier(decl, suffixes);
            if (ts_node_is_null(ident)) continue;
            auto it = ts_to_index.find(ident.id);
            if (it == ts_to_index.end()) continue;
            std::uint32_t scope = enclosing_scope(nodes, it->second);
            std::string name = tree.text_of(ident);
            std::string type = canonical_type(tree, type_node, suffixes);
            va.declared_types.try_emplace({scope, name}, type);
            va.declared_name_nodes.insert(it->second);
        }
    }

    // occurrences with read/write roles
    for (const auto& n : nodes) {
        if (n.kind != "identifier" || !n.leaf) continue;
        std::int64_t parent_idx = n.parent;
        if (parent_idx < 0) continue;
        const CstNode& parent = nodes[static_cast<std::size_t>(parent_idx)];
        // skip function names in declarators and call targets
        if (parent.kind == "function_declarator") continue;
        if (parent.kind == "call_expression" && field_is(parent.ts, n.ts, "function")) continue;

        VariableOccurrence occ;
        occ.node_index = n.id;
        occ.scope = enclosing_scope(nodes, n.id);
        occ.name = tree.text_of(n.ts);
        occ.is_write = false;
        if (parent.kind == "assignment_expression" && field_is(parent.ts, n.ts, "left"))
            occ.is_write = true;
        else if (parent.kind == "update_expression")
            occ.is_write = true;
        else if (va.declared_name_nodes.count(n.id))
            occ.is_write = true;  // the declared name itself
        va.occurrences.push_back(std::move(occ));

        // resolve the type: function scope first, then globals
        const auto& o = va.occurrences.back();
        auto local = va.declared_types.find({o.scope, o.name});
        if (local != va.declared_types.end()) {
            va.types_by_node[o.node_index] = local->second;
        } else {
            auto global = va.declared_types.find({0u, o.name});
            if (global != va.declared_types.end()) va.types_by_node[o.node_index] = global->second;
        }
    }
    return va;
}

}  // namespace detail

// Per-occurrence canonical variable types, keyed by the identifier's start
// byte. Unresolved identifiers map to the unknown-type marker.
inline std::map<std::uint32_t, std::string> extract_variable_types(const SyntaxTree& tree) {
    auto nodes = detail::flatten_cst(tree);
    auto va = detail::analyze_variables(tree, nodes);
    std::map<std::uint32_t, std::string> out;
    for (const auto& occ : va.occurrences) {
        auto it = va.types_by_node.find(occ.node_index);
        out[nodes[occ.node_index].start] = it != va.types_by_node.end() ? it->second : kUnknownType;
    }
    return out;
}

// Builds the augmented program graph from a parsed tree. Node ids are the
// pre-order positions; the sink node is appended last.
inline ProgramGraph build_graph(const SyntaxTree& tree) {
    auto cst = detail::flatten_cst(tree);
    auto va = detail::analyze_variables(tree, cst);

    ProgramGraph g;
    g.nodes.reserve(cst.size() + 1);
    std::size_t error_nodes = 0;
    for (const auto& n : cst) {
        GraphNode gn;
        gn.id = n.id;
        gn.kind = n.kind;
        if (n.leaf) gn.token_text = tree.text_of(n.ts);
        if (n.in_error) ++error_nodes;
        g.nodes.push_back(std::move(gn));
    }
    for (const auto& [idx, type] : va.types_by_node)
        g.nodes[idx].variable_type = type;
    g.parse_error_fraction =
        cst.empty() ? 0.0 : static_cast<double>(error_nodes) / static_cast<double>(cst.size());

    std::vector<GraphEdge> forward;
    // Child edges (parent -> child), pre-order so source < target.
    for (const auto& n : cst)
        if (n.parent >= 0)
            forward.push_back({static_cast<std::uint32_t>(n.parent), EdgeType::Child, n.id});

    // NextToken path over token leaves in source order (= pre-order).
    std::int64_t prev_leaf = -1;
    for (const auto& n : cst) {
        if (!n.leaf) continue;
        if (prev_leaf >= 0)
            forward.push_back({static_cast<std::uint32_t>(prev_leaf), EdgeType::NextToken, n.id});
        prev_leaf = n.id;
    }

    // Variable chains: LastRead / LastWrite / LastLexicalUse, later -> earlier.
    std::map<std::pair<std::uint32_t, std::string>, std::vector<const detail::VariableOccurrence*>>
        groups;
    for (const auto& occ : va.occurrences) groups[{occ.scope, occ.name}].push_back(&occ);
    for (const auto& [key, occs] : groups) {
        for (std::size_t i = 1; i < occs.size(); ++i) {
            const auto& cur = *occs[i];
            forward.push_back({cur.node_index, EdgeType::LastLexicalUse, occs[i - 1]->node_index});
            for (std::size_t j = i; j-- > 0;) {
                if (!occs[j]->is_write) {
                    forward.push_back({cur.node_index, EdgeType::LastRead, occs[j]->node_index});
                    break;
                }
            }
            for (std::size_t j = i; j-- > 0;) {
                if (occs[j]->is_write) {
                    forward.push_back({cur.node_index, EdgeType::LastWrite, occs[j]->node_index});
                    break;
                }
            }
        }
    }

    // ComputedFrom: assignment/init LHS identifier -> RHS identifiers.
    std::unordered_map<const void*, std::uint32_t> ts_to_index;
    for (const auto& n : cst) ts_to_index[n.ts.id] = n.id;
    auto identifiers_under = [&](TSNode root) {
        std::vector<std::uint32_t> found;
        std::vector<TSNode> stack{root};
        while (!stack.empty()) {
            TSNode cur = stack.back();
            stack.pop_back();
            if (std::string(ts_node_type(cur)) == "identifier") {
                auto it = ts_to_index.find(cur.id);
                if (it != ts_to_index.end()) found.push_back(it->second);
            }
            for (std::uint32_t i = ts_node_child_count(cur); i > 0; --i)
                stack.push_back(ts_node_child(cur, i - 1));
        }
        std::sort(found.begin(), found.end());
        return found;
    };
    for (const auto& n : cst) {
        TSNode lhs{}, rhs{};
        if (n.kind == "assignment_expression") {
            lhs = ts_node_child_by_field_name(n.ts, "left", 4);
            rhs = ts_node_child_by_field_name(n.ts, "right", 5);
        } else if (n.kind == "init_declarator") {
            lhs = ts_node_child_by_field_name(n.ts, "declarator", 10);
            rhs = ts_node_child_by_field_name(n.ts, "value", 5);
        } else {
            continue;
        }
        if (ts_node_is_null(lhs) || ts_node_is_null(rhs)) continue;
        auto lhs_ids = identifiers_under(lhs);
        auto rhs_ids = identifiers_under(rhs);
        for (auto l : lhs_ids)
            for (auto r : rhs_ids) forward.push_back({l, EdgeType::ComputedFrom, r});
    }

    // ReturnsTo: return statement -> enclosing function definition.
    for (const auto& n : cst) {
        if (n.kind != "return_statement") continue;
        std::uint32_t scope = detail::enclosing_scope(cst, n.id);
        if (scope != 0) forward.push_back({n.id, EdgeType::ReturnsTo, scope});
    }

    // GuardedBy / GuardedByNegation: identifier uses in then/else branches
    // whose variable also occurs in the condition.
    for (const auto& n : cst) {
        if (n.kind != "if_statement") continue;
        TSNode cond = ts_node_child_by_field_name(n.ts, "condition", 9);
        TSNode cons = ts_node_child_by_field_name(n.ts, "consequence", 11);
        TSNode alt = ts_node_child_by_field_name(n.ts, "alternative", 11);
        if (ts_node_is_null(cond)) continue;
        auto cond_idx = ts_to_index.at(cond.id);
        std::set<std::string> cond_vars;
        for (auto id : identifiers_under(cond)) cond_vars.insert(*g.nodes[id].token_text);
        auto link = [&](TSNode branch, EdgeType type) {
            if (ts_node_is_null(branch)) return;
            for (auto id : identifiers_under(branch))
                if (cond_vars.count(*g.nodes[id].token_text))
                    forward.push_back({id, type, cond_idx});
        };
        link(cons, EdgeType::GuardedBy);
        link(alt, EdgeType::GuardedByNegation);
    }

    // Reversed counterparts, then the sink.
    g.edges = forward;
    for (const auto& e : forward) g.edges.push_back({e.target, reversed(e.type), e.source});

    GraphNode sink;
    sink.id = static_cast<std::uint32_t>(g.nodes.size());
    sink.kind = "sink";
    g.sink_id = sink.id;
    g.nodes.push_back(std::move(sink));
    for (std::uint32_t i = 0; i < g.sink_id; ++i) {
        g.edges.push_back({i, EdgeType::ToSink, g.sink_id});
        g.edges.push_back({g.sink_id, EdgeType::ToSinkReversed, i});
    }
    return g;
}

inline ProgramGraph build_program_graph(std::string source) {
    SyntaxTree tree = parse_to_ast(std::move(source));
    return build_graph(tree);
}

// ---------------------------------------------------------------------------
// validation
// ---------------------------------------------------------------------------

inline std::vector<std::string> ProgramGraph::validate() const {
    std::vector<std::string> bad;
    auto complain = [&](std::string msg) { bad.push_back(std::move(msg)); };

    if (sink_id != nodes.size() - 1) complain("sink is not the last node");
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].id != i) complain("node ids not dense at " + std::to_string(i));

    std::vector<std::size_t> to_sink_out(nodes.size(), 0);
    std::vector<std::size_t> child_in(nodes.size(), 0);
    std::vector<std::size_t> next_in(nodes.size(), 0), next_out(nodes.size(), 0);
    std::map<std::tuple<std::uint32_t, std::uint8_t, std::uint32_t>, int> balance;
    for (const auto& e : edges) {
        if (e.source >= nodes.size() || e.target >= nodes.size()) {
            complain("edge endpoint out of range");
            continue;
        }
        balance[{e.source, static_cast<std::uint8_t>(e.type), e.target}] += 1;
        balance[{e.target, static_cast<std::uint8_t>(reversed(e.type)), e.source}] -= 1;
        switch (e.type) {
            case EdgeType::ToSink:
                ++to_sink_out[e.source];
                if (e.target != sink_id) complain("ToSink edge not targeting sink");
                break;
            case EdgeType::Child:
                ++child_in[e.target];
                if (e.source >= e.target) complain("Child edge must go from parent to later child");
                break;
            case EdgeType::NextToken:
                ++next_out[e.source];
                ++next_in[e.target];
                break;
            case EdgeType::LastRead:
            case EdgeType::LastWrite:
            case EdgeType::LastLexicalUse:
                if (e.source <= e.target)
                    complain(std::string(edge_type_name(e.type)) + " edge must point backwards");
                break;
            default:
                break;
        }
    }
    for (const auto& [key, count] : balance)
        if (count != 0) {
            complain("unpaired reversed edge");
            break;
        }

    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (i == sink_id) {
            if (to_sink_out[i] != 0) complain("sink must have no ToSink edge");
        } else if (to_sink_out[i] != 1) {
            complain("node " + std::to_string(i) + " must have exactly one ToSink edge");
        }
    }

    // Child edges form a tree over non-sink nodes: root has no parent, every
    // other non-sink node exactly one.
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (i == sink_id) continue;
        std::size_t expected = i == 0 ? 0 : 1;
        if (child_in[i] != expected)
            complain("node " + std::to_string(i) + " has " + std::to_string(child_in[i]) +
                     " Child parents");
    }

    // NextToken forms one simple path over all token leaves in id order.
    std::vector<std::uint32_t> leaves;
    for (const auto& n : nodes)
        if (n.token_text) leaves.push_back(n.id);
    std::size_t next_edges = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) next_edges += next_out[i];
    if (!leaves.empty() && next_edges != leaves.size() - 1)
        complain("NextToken edge count must be token count - 1");
    for (auto id : leaves)
        if (next_out[id] > 1 || next_in[id] > 1) complain("NextToken path is not simple");
    for (const auto& n : nodes) {
        bool is_leaf = n.token_text.has_value();
        if (!is_leaf && (next_out[n.id] || next_in[n.id]))
            complain("NextToken edge touches a non-leaf node");
        if (n.variable_type && n.kind != "identifier")
            complain("variable_type on a non-identifier node");
    }
    return bad;
}

// ---------------------------------------------------------------------------
// serialization: versioned binary with interned strings
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kGraphMagic[4] = {'T', 'K', 'P', 'G'};
constexpr std::uint32_t kGraphVersion = 1;

struct ByteWriter {
    std::string out;
    void u8(std::uint8_t v) { out.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        out += s;
    }
};

struct ByteReader {
    std::string_view in;
    std::size_t pos = 0;
    void need(std::size_t n) {
        if (pos + n > in.size()) throw DataError("program graph: truncated payload");
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(in[pos++]);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos++])) << (8 * i);
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos++])) << (8 * i);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str() {
        std::uint32_t n = u32();
        need(n);
        std::string s(in.substr(pos, n));
        pos += n;
        return s;
    }
};

}  // namespace detail

inline std::string serialize_graph(const ProgramGraph& g) {
    detail::ByteWriter w;
    w.out.append(detail::kGraphMagic, 4);
    w.u32(detail::kGraphVersion);

    // intern strings in first-use order for deterministic bytes
    std::vector<std::string> strings;
    std::unordered_map<std::string, std::uint32_t> intern;
    auto id_of = [&](const std::string& s) {
        auto it = intern.find(s);
        if (it != intern.end()) return it->second;
        std::uint32_t id = static_cast<std::uint32_t>(strings.size());
        strings.push_back(s);
        intern.emplace(s, id);
        return id;
    };
    struct PackedNode {
        std::uint32_t kind;
        std::uint32_t token;  // intern id + 1, 0 = none
        std::uint32_t type;
    };
    std::vector<PackedNode> packed;
    for (const auto& n : g.nodes) {
        PackedNode p;
        p.kind = id_of(n.kind);
        p.token = n.token_text ? id_of(*n.token_text) + 1 : 0;
        p.type = n.variable_type ? id_of(*n.variable_type) + 1 : 0;
        packed.push_back(p);
    }

    w.u32(static_cast<std::uint32_t>(g.nodes.size()));
    w.u32(g.sink_id);
    w.f64(g.parse_error_fraction);
    w.u32(static_cast<std::uint32_t>(strings.size()));
    for (const auto& s : strings) w.str(s);
    for (const auto& p : packed) {
        w.u32(p.kind);
        w.u32(p.token);
        w.u32(p.type);
    }
    w.u32(static_cast<std::uint32_t>(g.edges.size()));
    for (const auto& e : g.edges) {
        w.u32(e.source);
        w.u8(static_cast<std::uint8_t>(e.type));
        w.u32(e.target);
    }
    return std::move(w.out);
}

inline ProgramGraph deserialize_graph(std::string_view bytes) {
    detail::ByteReader r{bytes};
    r.need(4);
    if (std::memcmp(bytes.data(), detail::kGraphMagic, 4) != 0)
        throw DataError("program graph: bad magic");
    r.pos = 4;
    auto version = r.u32();
    if (version != detail::kGraphVersion)
        throw DataError("program graph: unsupported version " + std::to_string(version));
    ProgramGraph g;
    auto node_count = r.u32();
    g.sink_id = r.u32();
    g.parse_error_fraction = r.f64();
    auto string_count = r.u32();
    std::vector<std::string> strings;
    strings.reserve(string_count);
    for (std::uint32_t i = 0; i < string_count; ++i) strings.push_back(r.str());
    auto str_at = [&](std::uint32_t idx) -> const std::string& {
        if (idx >= strings.size()) throw DataError("program graph: string index out of range");
        return strings[idx];
    };
    for (std::uint32_t i = 0; i < node_count; ++i) {
        GraphNode n;
        n.id = i;
        n.kind = str_at(r.u32());
        auto token = r.u32();
        if (token) n.token_text = str_at(token - 1);
        auto type = r.u32();
        if (type) n.variable_type = str_at(type - 1);
        g.nodes.push_back(std::move(n));
    }
    auto edge_count = r.u32();
    for (std::uint32_t i = 0; i < edge_count; ++i) {
        GraphEdge e;
        e.source = r.u32();
        e.type = static_cast<EdgeType>(r.u8());
        e.target = r.u32();
        if (static_cast<std::size_t>(e.type) >= kEdgeTypeCount)
            throw DataError("program graph: invalid edge type");
        g.edges.push_back(e);
    }
    if (r.pos != bytes.size()) throw DataError("program graph: trailing bytes");
    return g;
}

// ---------------------------------------------------------------------------
// graph dataset: length-prefixed graphs with a JSON index sidecar
// ---------------------------------------------------------------------------

struct GraphDatasetEntry {
    std::string problem_id;
    std::string solution_id;
    std::uint64_t offset = 0;
    std::uint64_t length = 0;
};

class GraphDatasetWriter {
public:
    explicit GraphDatasetWriter(std::filesystem::path base_path)
        : base_(std::move(base_path)), out_(bin_path(), std::ios::binary | std::ios::trunc) {
        if (!out_) throw DataError("cannot write graph dataset: " + bin_path().string());
    }

    void add(const std::string& problem_id, const std::string& solution_id,
             const ProgramGraph& graph) {
        std::string bytes = serialize_graph(graph);
        GraphDatasetEntry e;
        e.problem_id = problem_id;
        e.solution_id = solution_id;
        e.offset = offset_;
        e.length = bytes.size();
        std::uint64_t len = bytes.size();
        char prefix[8];
        for (int i = 0; i < 8; ++i) prefix[i] = static_cast<char>((len >> (8 * i)) & 0xff);
        out_.write(prefix, 8);
        out_.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        offset_ += 8 + bytes.size();
        entries_.push_back(std::move(e));
    }

    void finish() {
        out_.flush();
        nlohmann::json j = nlohmann::json::array();
        for (const auto& e : entries_) {
            j.push_back({{"problem_id", e.problem_id},
                         {"solution_id", e.solution_id},
                         {"offset", e.offset},
                         {"length", e.length}});
        }
        write_text_file(index_path(), j.dump(2) + "\n");
    }

    std::filesystem::path bin_path() const { return base_.string() + ".bin"; }
    std::filesystem::path index_path() const { return base_.string() + ".index.json"; }

private:
    std::filesystem::path base_;
    std::ofstream out_;
    std::uint64_t offset_ = 0;
    std::vector<GraphDatasetEntry> entries_;
};

class GraphDataset {
public:
    static GraphDataset load(const std::filesystem::path& base_path) {
        GraphDataset ds;
        ds.base_ = base_path;
        auto index_path = base_path.string() + ".index.json";
        if (!std::filesystem::exists(index_path))
            throw MissingArtifactError("missing graph dataset index: " + index_path);
        auto j = nlohmann::json::parse(read_text_file(index_path));
        for (const auto& item : j) {
            GraphDatasetEntry e;
            e.problem_id = item.at("problem_id").get<std::string>();
            e.solution_id = item.at("solution_id").get<std::string>();
            e.offset = item.at("offset").get<std::uint64_t>();
            e.length = item.at("length").get<std::uint64_t>();
            ds.entries_.push_back(std::move(e));
        }
        ds.blob_ = read_text_file(base_path.string() + ".bin");
        return ds;
    }

    std::size_t size() const { return entries_.size(); }
    const GraphDatasetEntry& entry(std::size_t i) const { return entries_.at(i); }
    const std::vector<GraphDatasetEntry>& entries() const { return entries_; }

    ProgramGraph graph(std::size_t i) const {
        const auto& e = entries_.at(i);
        if (e.offset + 8 + e.length > blob_.size())
            throw DataError("graph dataset: entry beyond end of file");
        return deserialize_graph(std::string_view(blob_).substr(e.offset + 8, e.length));
    }

private:
    std::filesystem::path base_;
    std::string blob_;
    std::vector<GraphDatasetEntry> entries_;
};

}  // namespace tagkit
