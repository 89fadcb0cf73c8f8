#include "tagkit/preprocess.hpp"

#include "catch_amalgamated.hpp"

using namespace tagkit;

TEST_CASE("strip_includes removes include lines only") {
    CHECK(strip_includes("#include <vector>\nint main(){}") == "int main(){}");
    CHECK(strip_includes("  #include \"my.h\"\nint x;") == "int x;");
    CHECK(strip_includes("int a;\nint b;\n") == "int a;\nint b;\n");
    CHECK(strip_includes("# include <map>\nint y;") == "int y;");
}

TEST_CASE("strip_includes is idempotent") {
    std::string src = "#include <set>\nint a; // #include <x>\n#include <map>\nint b;\n";
    std::string once = strip_includes(src);
    CHECK(strip_includes(once) == once);
}

TEST_CASE("expand_macros substitutes object-like macros") {
    CHECK(expand_macros("#define N 10\nint a[N];") == "int a[10];");
}

TEST_CASE("expand_macros substitutes function-like macros") {
    CHECK(expand_macros("#define SQ(x) ((x)*(x))\nint y=SQ(3);") == "int y=((3)*(3));");
    CHECK(expand_macros("#define ADD(a,b) (a+b)\nint z=ADD(1, 2);") == "int z=(1+ 2);");
}

TEST_CASE("expand_macros terminates on self-referential definitions") {
    CHECK(expand_macros("#define A A\nA") == "A");
}

TEST_CASE("expand_macros respects #undef ordering") {
    CHECK(expand_macros("#define N 1\nint a=N;\n#undef N\nint b=N;") == "int a=1;\nint b=N;");
}

TEST_CASE("expand_macros handles nested expansion") {
    CHECK(expand_macros("#define A B\n#define B 7\nint x=A;") == "int x=7;");
}

TEST_CASE("expand_macros leaves string literals alone") {
    CHECK(expand_macros("#define N 10\nchar* s=\"N\";") == "char* s=\"N\";");
}

TEST_CASE("expand_macros warns on unterminated invocation") {
    Warnings w;
    std::string out = expand_macros("#define SQ(x) ((x)*(x))\nint y=SQ(3", 16, &w);
    CHECK(out == "int y=SQ(3");
    REQUIRE(w.size() == 1);
    CHECK(w[0].find("SQ") != std::string::npos);
}

TEST_CASE("expand_macros drops conditional directives but keeps branch text") {
    std::string src = "#ifdef LOCAL\nint dbg;\n#endif\nint main(){}";
    CHECK(expand_macros(src) == "int dbg;\nint main(){}");
}

TEST_CASE("expand_macros handles continuation lines in defines") {
    std::string src = "#define BIG(x) \\\n  ((x)+(x))\nint q=BIG(2);";
    CHECK(expand_macros(src) == "int q=((2)+(2));");
}

TEST_CASE("expand_macros is idempotent") {
    std::string src = "#define SQ(x) ((x)*(x))\nint y=SQ(3);\n#define N 4\nint a[N];\n";
    std::string once = expand_macros(src);
    CHECK(expand_macros(once) == once);
}

TEST_CASE("strip_comments replaces comments with a space") {
    CHECK(strip_comments("int a; // hi") == "int a;  ");
    CHECK(strip_comments("a/*x*/b") == "a b");
    CHECK(strip_comments("int x; /* multi\nline */ int y;") == "int x;   int y;");
}

TEST_CASE("strip_comments respects string and char literals") {
    CHECK(strip_comments("char*s=\"//not a comment\";") == "char*s=\"//not a comment\";");
    CHECK(strip_comments("char c='/'; char d='*';") == "char c='/'; char d='*';");
    CHECK(strip_comments("char*s=\"/*nope*/\";int z;") == "char*s=\"/*nope*/\";int z;");
}

TEST_CASE("strip_comments keeps newline after line comment") {
    CHECK(strip_comments("int a; // c\nint b;") == "int a;  \nint b;");
}

TEST_CASE("strip_comments warns on unterminated block comment") {
    Warnings w;
    CHECK(strip_comments("int a; /* oops", &w) == "int a;  ");
    REQUIRE(w.size() == 1);
}

TEST_CASE("strip_comments is idempotent") {
    std::string src = "int a; // x\n/*y*/int b; char* s = \"//z\";\n";
    std::string once = strip_comments(src);
    CHECK(strip_comments(once) == once);
}

TEST_CASE("latex_to_text removes math delimiters keeping content") {
    CHECK(latex_to_text("Find $n$ numbers") == "Find n numbers");
    CHECK(latex_to_text("sum $$x + y$$ here") == "sum x + y here");
    CHECK(latex_to_text("inline \\(a\\) and display \\[b\\]") == "inline a and display b");
}

TEST_CASE("latex_to_text replaces commands with their argument text") {
    CHECK(latex_to_text("\\textbf{bold} text") == "bold text");
    CHECK(latex_to_text("\\textit{\\textbf{deep}} nesting") == "deep nesting");
    CHECK(latex_to_text("a \\quad b") == "a b");
}

TEST_CASE("latex_to_text drops figure/table/tabular environments") {
    CHECK(latex_to_text("see \\begin{figure}junk $x$\\end{figure} below") == "see below");
    CHECK(latex_to_text("x \\begin{tabular}{ll}a&b\\end{tabular} y") == "x y");
    CHECK(latex_to_text("keep \\begin{center}inner\\end{center} text") == "keep inner text");
}

TEST_CASE("latex_to_text leaves unbalanced braces verbatim") {
    CHECK(latex_to_text("broken {group") == "broken {group");
}

TEST_CASE("latex_to_text output has no dollar signs or commands on balanced input") {
    std::string out = latex_to_text("Given $n \\le 10^5$ find \\emph{any} answer in \\textbf{$k$} steps.");
    CHECK(out.find('$') == std::string::npos);
    CHECK(out.find('\\') == std::string::npos);
}

TEST_CASE("word_tokens lowercases and splits on punctuation") {
    auto t = word_tokens("Hello, World! x2");
    REQUIRE(t.size() == 3);
    CHECK(t[0] == "hello");
    CHECK(t[1] == "world");
    CHECK(t[2] == "x2");
}

TEST_CASE("basic_tokens keeps punctuation as separate tokens") {
    auto t = basic_tokens("He said: go!");
    REQUIRE(t.size() == 5);
    CHECK(t[0] == "he");
    CHECK(t[1] == "said");
    CHECK(t[2] == ":");
    CHECK(t[3] == "go");
    CHECK(t[4] == "!");
}
