#include "tagkit/codegraph.hpp"

#include <filesystem>

#include "catch_amalgamated.hpp"

using namespace tagkit;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint32_t> identifier_nodes(const ProgramGraph& g, const std::string& name) {
    std::vector<std::uint32_t> out;
    for (const auto& n : g.nodes)
        if (n.kind == "identifier" && n.token_text == name) out.push_back(n.id);
    return out;
}

bool has_edge(const ProgramGraph& g, std::uint32_t s, EdgeType t, std::uint32_t d) {
    for (const auto& e : g.edges)
        if (e.source == s && e.type == t && e.target == d) return true;
    return false;
}

std::size_t count_edges(const ProgramGraph& g, EdgeType t) {
    std::size_t n = 0;
    for (const auto& e : g.edges) n += e.type == t;
    return n;
}

bool graphs_equal(const ProgramGraph& a, const ProgramGraph& b) {
    if (a.sink_id != b.sink_id || a.parse_error_fraction != b.parse_error_fraction) return false;
    if (a.nodes.size() != b.nodes.size() || a.edges.size() != b.edges.size()) return false;
    for (std::size_t i = 0; i < a.nodes.size(); ++i) {
        if (a.nodes[i].id != b.nodes[i].id || a.nodes[i].kind != b.nodes[i].kind ||
            a.nodes[i].token_text != b.nodes[i].token_text ||
            a.nodes[i].variable_type != b.nodes[i].variable_type)
            return false;
    }
    for (std::size_t i = 0; i < a.edges.size(); ++i) {
        if (a.edges[i].source != b.edges[i].source || a.edges[i].type != b.edges[i].type ||
            a.edges[i].target != b.edges[i].target)
            return false;
    }
    return true;
}

const char* kSnippets[] = {
    "int main(){return 0;}",
    "int main(){int x=1;x=x+1;return x;}",
    "#include-free code\n",  // parse errors allowed
    "int f(int a,int b){return a+b;}\nint main(){return f(1,2);}",
    "int main(){for(int i=0;i<10;i++){if(i%2==0){i--;}}}",
    "int g;\nint main(){g=5;int y=g*2;return y;}",
    "int main(){vector<int> v;v.push_back(1);sort(v.begin(),v.end());return v[0];}",
    "int fact(int n){if(n<2)return 1;return n*fact(n-1);}",
    "int main(){int s=0;while(s<100){s+=3;}do{s--;}while(s>0);return s;}",
    "",
};

}  // namespace

TEST_CASE("parse_to_ast produces a translation unit root") {
    SyntaxTree tree = parse_to_ast("int main(){return 0;}");
    CHECK(std::string(ts_node_type(tree.root())) == "translation_unit");
}

TEST_CASE("empty source has zero token leaves") {
    ProgramGraph g = build_program_graph("");
    std::size_t leaves = 0;
    for (const auto& n : g.nodes) leaves += n.token_text.has_value();
    CHECK(leaves == 0);
    CHECK(g.parse_error_fraction == 0.0);
    CHECK(g.validate().empty());
}

TEST_CASE("syntax errors are flagged through parse_error_fraction") {
    ProgramGraph g = build_program_graph("int x = ;");
    CHECK(g.parse_error_fraction > 0.0);
    CHECK(build_program_graph("int x = 1;").parse_error_fraction == 0.0);
}

TEST_CASE("assignment snippet gets LastWrite and ComputedFrom edges") {
    ProgramGraph g = build_program_graph("int x=1;x=x+1;");
    auto xs = identifier_nodes(g, "x");
    REQUIRE(xs.size() == 3);  // declaration, assignment lhs, rhs use
    std::uint32_t decl = xs[0], lhs = xs[1], rhs = xs[2];
    CHECK(has_edge(g, lhs, EdgeType::LastWrite, decl));
    CHECK(has_edge(g, lhs, EdgeType::ComputedFrom, rhs));
    // reversed counterparts exist
    CHECK(has_edge(g, decl, EdgeType::LastWriteReversed, lhs));
    CHECK(has_edge(g, rhs, EdgeType::ComputedFromReversed, lhs));
    // lexical chain walks backwards
    CHECK(has_edge(g, rhs, EdgeType::LastLexicalUse, lhs));
    CHECK(has_edge(g, lhs, EdgeType::LastLexicalUse, decl));
    CHECK(g.validate().empty());
}

TEST_CASE("LastRead connects a use to the previous read") {
    ProgramGraph g = build_program_graph("int a=1;int b=a;int c=a;");
    auto as = identifier_nodes(g, "a");
    REQUIRE(as.size() == 3);
    CHECK(has_edge(g, as[2], EdgeType::LastRead, as[1]));  // second use reads after first use
    CHECK(has_edge(g, as[1], EdgeType::LastWrite, as[0]));
    CHECK(has_edge(g, as[2], EdgeType::LastWrite, as[0]));
}

TEST_CASE("single-token program has no NextToken edges") {
    ProgramGraph g = build_program_graph(";");
    std::size_t leaves = 0;
    for (const auto& n : g.nodes) leaves += n.token_text.has_value();
    REQUIRE(leaves == 1);
    CHECK(count_edges(g, EdgeType::NextToken) == 0);
    CHECK(count_edges(g, EdgeType::Child) > 0);
    CHECK(count_edges(g, EdgeType::ToSink) == g.node_count() - 1);
    CHECK(g.validate().empty());
}

TEST_CASE("every node except the sink has exactly one ToSink edge") {
    for (const char* src : kSnippets) {
        ProgramGraph g = build_program_graph(src);
        INFO(src);
        CHECK(count_edges(g, EdgeType::ToSink) == g.node_count() - 1);
    }
}

TEST_CASE("ReturnsTo links return statements to the function definition") {
    ProgramGraph g = build_program_graph("int main(){return 0;}");
    std::uint32_t ret = 0, fn = 0;
    for (const auto& n : g.nodes) {
        if (n.kind == "return_statement") ret = n.id;
        if (n.kind == "function_definition") fn = n.id;
    }
    REQUIRE(ret != 0);
    CHECK(has_edge(g, ret, EdgeType::ReturnsTo, fn));
}

TEST_CASE("branch uses of condition variables are guarded") {
    ProgramGraph g =
        build_program_graph("int main(){int x=0;int y=0;if(x>0){x=1;y=2;}else{x=3;}return x;}");
    std::uint32_t cond = 0;
    for (const auto& n : g.nodes)
        if (n.kind == "condition_clause") cond = n.id;
    REQUIRE(cond != 0);
    auto xs = identifier_nodes(g, "x");
    REQUIRE(xs.size() == 5);  // decl, condition, then-branch, else-branch, return
    CHECK(has_edge(g, xs[2], EdgeType::GuardedBy, cond));
    CHECK(has_edge(g, xs[3], EdgeType::GuardedByNegation, cond));
    // y does not occur in the condition, so its branch use is not guarded
    auto ys = identifier_nodes(g, "y");
    REQUIRE(ys.size() == 2);
    CHECK_FALSE(has_edge(g, ys[1], EdgeType::GuardedBy, cond));
    CHECK(g.validate().empty());
}

TEST_CASE("variable types are canonicalized and propagated to uses") {
    SyntaxTree tree = parse_to_ast("int x; x=1;");
    auto types = extract_variable_types(tree);
    REQUIRE(types.size() == 2);
    for (const auto& [pos, type] : types) CHECK(type == "int");

    SyntaxTree tree2 = parse_to_ast("vector<int> v;");
    auto types2 = extract_variable_types(tree2);
    REQUIRE(types2.size() == 1);
    CHECK(types2.begin()->second == "vector<int>");

    SyntaxTree tree3 = parse_to_ast("int main(){q=1;}");
    auto types3 = extract_variable_types(tree3);
    REQUIRE(types3.size() == 1);
    CHECK(types3.begin()->second == kUnknownType);
}

TEST_CASE("type canonicalization keeps qualifiers as suffix tokens") {
    SyntaxTree tree = parse_to_ast("const long long& r = q;");
    auto types = extract_variable_types(tree);
    bool found = false;
    for (const auto& [pos, type] : types)
        if (type == "long long const &") found = true;
    CHECK(found);
}

TEST_CASE("graph nodes carry variable types for resolved identifiers only") {
    ProgramGraph g = build_program_graph("int main(){int x=2;x=undeclared+x;}");
    auto xs = identifier_nodes(g, "x");
    for (auto id : xs) CHECK(g.nodes[id].variable_type == "int");
    auto other = identifier_nodes(g, "undeclared");
    REQUIRE(other.size() == 1);
    CHECK_FALSE(g.nodes[other[0]].variable_type.has_value());
}

TEST_CASE("global declarations resolve inside functions") {
    ProgramGraph g = build_program_graph("long long g;\nint main(){g=5;}");
    auto gs = identifier_nodes(g, "g");
    REQUIRE(gs.size() == 2);
    CHECK(g.nodes[gs[1]].variable_type == "long long");
}

TEST_CASE("serialization round-trips every snippet") {
    for (const char* src : kSnippets) {
        ProgramGraph g = build_program_graph(src);
        std::string bytes = serialize_graph(g);
        ProgramGraph back = deserialize_graph(bytes);
        INFO(src);
        CHECK(graphs_equal(g, back));
    }
}

TEST_CASE("deserialization rejects corruption") {
    ProgramGraph g = build_program_graph("int main(){}");
    std::string bytes = serialize_graph(g);
    CHECK_THROWS_AS(deserialize_graph(bytes.substr(0, bytes.size() - 3)), DataError);
    CHECK_THROWS_AS(deserialize_graph("XXXX" + bytes.substr(4)), DataError);
    CHECK_THROWS_AS(deserialize_graph(bytes.substr(0, 9)), DataError);
    std::string trailing = bytes + "junk";
    CHECK_THROWS_AS(deserialize_graph(trailing), DataError);
}

TEST_CASE("empty graph (sink only) round-trips") {
    ProgramGraph g = build_program_graph("");
    REQUIRE(g.node_count() >= 1);
    ProgramGraph back = deserialize_graph(serialize_graph(g));
    CHECK(graphs_equal(g, back));
}

TEST_CASE("graph construction is byte-deterministic") {
    const char* src = "int main(){int a=3;for(int i=0;i<a;i++){a+=i;}return a;}";
    CHECK(serialize_graph(build_program_graph(src)) == serialize_graph(build_program_graph(src)));
}

TEST_CASE("all snippets satisfy the graph invariants") {
    for (const char* src : kSnippets) {
        ProgramGraph g = build_program_graph(src);
        INFO(src);
        auto violations = g.validate();
        for (const auto& v : violations) INFO(v);
        CHECK(violations.empty());
    }
}

TEST_CASE("reversed edge mapping is an involution") {
    for (std::size_t i = 0; i < kEdgeTypeCount; ++i) {
        auto t = static_cast<EdgeType>(i);
        CHECK(reversed(reversed(t)) == t);
        CHECK(reversed(t) != t);
    }
}

TEST_CASE("graph dataset stores and reloads graphs by entry") {
    auto base = fs::temp_directory_path() / "tagkit_graphset_test";
    {
        GraphDatasetWriter writer(base);
        writer.add("p1", "s1", build_program_graph("int main(){return 1;}"));
        writer.add("p1", "s2", build_program_graph("int main(){return 2;}"));
        writer.add("p2", "s3", build_program_graph("int x;"));
        writer.finish();
    }
    GraphDataset ds = GraphDataset::load(base);
    REQUIRE(ds.size() == 3);
    CHECK(ds.entry(0).problem_id == "p1");
    CHECK(ds.entry(2).solution_id == "s3");
    ProgramGraph g = ds.graph(1);
    CHECK(graphs_equal(g, build_program_graph("int main(){return 2;}")));
    fs::remove(fs::path(base.string() + ".bin"));
    fs::remove(fs::path(base.string() + ".index.json"));
}

TEST_CASE("loading a dataset without its index fails with a named artifact") {
    auto base = fs::temp_directory_path() / "tagkit_graphset_missing";
    CHECK_THROWS_AS(GraphDataset::load(base), MissingArtifactError);
}
