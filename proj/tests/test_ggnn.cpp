#include "tagkit/ggnn.hpp"

#include <chrono>
#include <cmath>

#include "catch_amalgamated.hpp"

using namespace tagkit;
using nn::Tensor;

namespace {

SubwordVocabulary tiny_subwords() {
    return SubwordVocabulary::from_tokens(
        {"[PAD]", "[UNK]", "[CLS]", "a", "b", "k", "x", "y", "##a", "##b"});
}

// Two real nodes plus a sink: root "k" with one identifier leaf "a".
ProgramGraph two_node_graph() {
    ProgramGraph g;
    g.nodes.resize(3);
    g.nodes[0].id = 0;
    g.nodes[0].kind = "k";
    g.nodes[1].id = 1;
    g.nodes[1].kind = "identifier";
    g.nodes[1].token_text = "a";
    g.nodes[2].id = 2;
    g.nodes[2].kind = "sink";
    g.sink_id = 2;
    g.edges.push_back({0, EdgeType::Child, 1});
    g.edges.push_back({1, EdgeType::ChildReversed, 0});
    g.edges.push_back({0, EdgeType::ToSink, 2});
    g.edges.push_back({1, EdgeType::ToSink, 2});
    g.edges.push_back({2, EdgeType::ToSinkReversed, 0});
    g.edges.push_back({2, EdgeType::ToSinkReversed, 1});
    return g;
}

GgnnConfig tiny_config(std::size_t hidden, std::size_t token, std::size_t type,
                       std::size_t rounds) {
    GgnnConfig c;
    c.hidden_dim = hidden;
    c.token_embedding_dim = token;
    c.type_embedding_dim = type;
    c.rounds = rounds;
    return c;
}

std::vector<double> row_of(const Tensor& t, std::size_t r) {
    std::vector<double> out(t.cols());
    for (std::size_t c = 0; c < t.cols(); ++c) out[c] = t.at(r, c);
    return out;
}

}  // namespace

TEST_CASE("config validation rejects inconsistent dimensions") {
    CHECK_THROWS_AS(tiny_config(8, 7, 2, 1).validate(), ConfigError);
    CHECK_THROWS_AS(tiny_config(8, 4, 2, 0).validate(), ConfigError);
    CHECK_NOTHROW(tiny_config(8, 4, 2, 1).validate());
}

TEST_CASE("type vocabulary keeps the most frequent canonical types") {
    ProgramGraph a = build_program_graph("int x=1; int y=2; double z=3.0;");
    ProgramGraph b = build_program_graph("int q=4;");
    TypeVocabulary tv = TypeVocabulary::build({&a, &b}, 1);
    CHECK(tv.size_with_unknown() == 2);
    CHECK(tv.id_of("int") == 1);
    CHECK(tv.id_of("double") == 0);  // capacity 1 keeps only "int"
    CHECK(tv.id_of("never seen") == 0);

    auto path = std::filesystem::temp_directory_path() / "tagkit_types_test.json";
    tv.save(path);
    TypeVocabulary back = TypeVocabulary::load(path);
    CHECK(back.id_of("int") == 1);
    std::filesystem::remove(path);
}

TEST_CASE("initial states follow the construction rule") {
    auto subwords = tiny_subwords();
    ProgramGraph g = two_node_graph();
    TypeVocabulary types = TypeVocabulary::build({}, 4);
    GgnnModel model = GgnnModel::create(tiny_config(6, 2, 2, 1), subwords.size(),
                                        subwords.content_hash(), types.size_with_unknown(), 3, 7);
    auto gt = GraphTensors::from_graphs({&g}, subwords, types);
    Tensor states = model.init_node_states(gt);
    REQUIRE(states.rows() == 3);
    REQUIRE(states.cols() == 6);

    // inner node: token slice = embedding of its kind name, type slice zero
    auto kind_id = static_cast<std::size_t>(*subwords.id_of("k"));
    CHECK(states.at(0, 0) == model.token_table.at(kind_id, 0));
    CHECK(states.at(0, 1) == model.token_table.at(kind_id, 1));
    CHECK(states.at(0, 2) == 0.0);
    CHECK(states.at(0, 3) == 0.0);
    CHECK(states.at(0, 4) == 0.0);  // padding
    CHECK(states.at(0, 5) == 0.0);

    // identifier leaf without a resolved declaration: unknown-type embedding
    auto tok_id = static_cast<std::size_t>(*subwords.id_of("a"));
    CHECK(states.at(1, 0) == model.token_table.at(tok_id, 0));
    CHECK(states.at(1, 2) == model.type_table.at(0, 0));
    CHECK(states.at(1, 3) == model.type_table.at(0, 1));

    // sink row = learned sink vector
    CHECK(row_of(states, 2) == model.sink_init.values());
}

TEST_CASE("identical token and type give identical initial states") {
    auto subwords = tiny_subwords();
    ProgramGraph g = build_program_graph("int a=1;int b=a;int c=a;");
    TypeVocabulary types = TypeVocabulary::build({&g}, 4);
    GgnnModel model = GgnnModel::create(tiny_config(8, 4, 2, 1), subwords.size(),
                                        subwords.content_hash(), types.size_with_unknown(), 2, 3);
    auto gt = GraphTensors::from_graphs({&g}, subwords, types);
    Tensor states = model.init_node_states(gt);
    std::vector<std::size_t> a_nodes;
    for (const auto& n : g.nodes)
        if (n.kind == "identifier" && n.token_text == "a") a_nodes.push_back(n.id);
    REQUIRE(a_nodes.size() == 3);
    CHECK(row_of(states, a_nodes[0]) == row_of(states, a_nodes[1]));
    CHECK(row_of(states, a_nodes[1]) == row_of(states, a_nodes[2]));
}

TEST_CASE("zero message and GRU parameters halve every state") {
    auto subwords = tiny_subwords();
    ProgramGraph g = two_node_graph();
    TypeVocabulary types = TypeVocabulary::build({}, 4);
    GgnnModel model = GgnnModel::create(tiny_config(6, 2, 2, 1), subwords.size(),
                                        subwords.content_hash(), types.size_with_unknown(), 3, 7);
    for (auto& p : model.store.all()) {
        if (p->name.rfind("msg.", 0) == 0 || p->name.rfind("gru.", 0) == 0)
            std::fill(p->tensor.mutable_values().begin(), p->tensor.mutable_values().end(), 0.0);
    }
    auto gt = GraphTensors::from_graphs({&g}, subwords, types);
    Tensor before = model.init_node_states(gt);
    Tensor after = model.message_round(before, gt);
    for (std::size_t r = 0; r < before.rows(); ++r)
        for (std::size_t c = 0; c < before.cols(); ++c)
            CHECK(after.at(r, c) == Catch::Approx(0.5 * before.at(r, c)).margin(1e-15));
}

namespace {

// Scalar reference for one message round on the two-node graph.
std::vector<std::vector<double>> round_oracle(const GgnnModel& m,
                                              const std::vector<std::vector<double>>& states,
                                              const ProgramGraph& g) {
    const std::size_t h = m.config.hidden_dim;
    auto mat = [&](const Tensor& t, std::size_t r, std::size_t c) { return t.at(r, c); };
    std::vector<std::vector<double>> messages(states.size(), std::vector<double>(h, 0.0));
    for (const auto& e : g.edges) {
        const auto& w = m.msg_weight[static_cast<std::size_t>(e.type)];
        const auto& b = m.msg_bias[static_cast<std::size_t>(e.type)];
        for (std::size_t j = 0; j < h; ++j) {
            double acc = b.at(0, j);
            for (std::size_t i = 0; i < h; ++i) acc += states[e.source][i] * mat(w, i, j);
            messages[e.target][j] += acc;
        }
    }
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    std::vector<std::vector<double>> out(states.size(), std::vector<double>(h));
    for (std::size_t v = 0; v < states.size(); ++v) {
        for (std::size_t j = 0; j < h; ++j) {
            double az = m.gru.b_update.at(0, j), ar = m.gru.b_reset.at(0, j);
            for (std::size_t i = 0; i < h; ++i) {
                az += messages[v][i] * m.gru.w_update.at(i, j) + states[v][i] * m.gru.u_update.at(i, j);
                ar += messages[v][i] * m.gru.w_reset.at(i, j) + states[v][i] * m.gru.u_reset.at(i, j);
            }
            double z = sig(az), r = sig(ar);
            (void)r;
            double ah = m.gru.b_cand.at(0, j);
            for (std::size_t i = 0; i < h; ++i) {
                double ri = 0;
                {
                    double ari = m.gru.b_reset.at(0, i);
                    for (std::size_t k = 0; k < h; ++k)
                        ari += messages[v][k] * m.gru.w_reset.at(k, i) +
                               states[v][k] * m.gru.u_reset.at(k, i);
                    ri = sig(ari);
                }
                ah += messages[v][i] * m.gru.w_cand.at(i, j) + ri * states[v][i] * m.gru.u_cand.at(i, j);
            }
            double cand = std::tanh(ah);
            out[v][j] = (1.0 - z) * states[v][j] + z * cand;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("a message round matches the scalar oracle on a 2-node graph") {
    auto subwords = tiny_subwords();
    ProgramGraph g = two_node_graph();
    TypeVocabulary types = TypeVocabulary::build({}, 4);
    GgnnModel model = GgnnModel::create(tiny_config(2, 1, 1, 1), subwords.size(),
                                        subwords.content_hash(), types.size_with_unknown(), 2, 49);
    auto gt = GraphTensors::from_graphs({&g}, subwords, types);
    Tensor init = model.init_node_states(gt);
    std::vector<std::vector<double>> states;
    for (std::size_t r = 0; r < init.rows(); ++r) states.push_back(row_of(init, r));

    Tensor got = model.message_round(init, gt);
    auto want = round_oracle(model, states, g);
    for (std::size_t r = 0; r < got.rows(); ++r)
        for (std::size_t c = 0; c < got.cols(); ++c)
            CHECK(got.at(r, c) == Catch::Approx(want[r][c]).epsilon(1e-12));
}

TEST_CASE("solution_vector with zero rounds returns the learned sink vector") {
    auto subwords = tiny_subwords();
    ProgramGraph g = two_node_graph();
    TypeVocabulary types = TypeVocabulary::build({}, 4);
    GgnnModel model = GgnnModel::create(tiny_config(6, 2, 2, 1), subwords.size(),
                                        subwords.content_hash(), types.size_with_unknown(), 2, 11);
    model.config.rounds = 0;
    CHECK(model.solution_vector(g, subwords, types) == model.sink_init.values());
}

TEST_CASE("solution_vector is deterministic") {
    auto subwords = tiny_subwords();
    ProgramGraph g = build_program_graph("int main(){int a=1;a=a+2;return a;}");
    TypeVocabulary types = TypeVocabulary::build({&g}, 8);
    GgnnModel model = GgnnModel::create(tiny_config(16, 6, 2, 3), subwords.size(),
                                        subwords.content_hash(), types.size_with_unknown(), 2, 5);
    CHECK(model.solution_vector(g, subwords, types) == model.solution_vector(g, subwords, types));
}

TEST_CASE("solution_vector is invariant under node relabeling") {
    auto subwords = tiny_subwords();
    ProgramGraph g = build_program_graph("int main(){int a=1;int b=a+2;return b;}");
    TypeVocabulary types = TypeVocabulary::build({&g}, 8);
    GgnnModel model = GgnnModel::create(tiny_config(12, 4, 2, 3), subwords.size(),
                                        subwords.content_hash(), types.size_with_unknown(), 2, 23);

    // permute non-sink node ids with a deterministic shuffle, sink kept last
    std::vector<std::uint32_t> perm(g.node_count() - 1);
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<std::uint32_t>(i);
    Rng rng(99);
    rng.shuffle(perm);
    std::vector<std::uint32_t> to_new(g.node_count());
    for (std::size_t i = 0; i < perm.size(); ++i) to_new[perm[i]] = static_cast<std::uint32_t>(i);
    to_new[g.sink_id] = g.sink_id;

    ProgramGraph permuted;
    permuted.sink_id = g.sink_id;
    permuted.parse_error_fraction = g.parse_error_fraction;
    permuted.nodes.resize(g.node_count());
    for (const auto& n : g.nodes) {
        GraphNode copy = n;
        copy.id = to_new[n.id];
        permuted.nodes[copy.id] = copy;
    }
    for (const auto& e : g.edges)
        permuted.edges.push_back({to_new[e.source], e.type, to_new[e.target]});

    auto a = model.solution_vector(g, subwords, types);
    auto b = model.solution_vector(permuted, subwords, types);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == Catch::Approx(b[i]).margin(1e-9));
}

TEST_CASE("predict_solution outputs one probability per tag in (0,1)") {
    auto subwords = tiny_subwords();
    ProgramGraph g = build_program_graph("int main(){return 0;}");
    TypeVocabulary types = TypeVocabulary::build({&g}, 8);
    GgnnModel model = GgnnModel::create(tiny_config(8, 4, 2, 2), subwords.size(),
                                        subwords.content_hash(), types.size_with_unknown(), 5, 31);
    auto probs = model.predict_solution(g, subwords, types);
    REQUIRE(probs.size() == 5);
    for (double p : probs) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }
    std::fill(model.store.at("head.weight").tensor.mutable_values().begin(),
              model.store.at("head.weight").tensor.mutable_values().end(), 0.0);
    std::fill(model.store.at("head.bias").tensor.mutable_values().begin(),
              model.store.at("head.bias").tensor.mutable_values().end(), 0.0);
    for (double p : model.predict_solution(g, subwords, types)) CHECK(p == Catch::Approx(0.5));
}

TEST_CASE("full GGNN passes the gradient check on a 3-node graph") {
    auto subwords = tiny_subwords();
    ProgramGraph g = two_node_graph();  // 2 real nodes + sink
    TypeVocabulary types = TypeVocabulary::build({}, 4);
    GgnnModel model = GgnnModel::create(tiny_config(8, 4, 2, 2), subwords.size(),
                                        subwords.content_hash(), types.size_with_unknown(), 3, 77);
    auto gt = GraphTensors::from_graphs({&g}, subwords, types);
    std::vector<double> labels{1.0, 0.0, 1.0};
    auto forward = [&] {
        Rng dummy(0);
        Tensor sink = model.sink_states(gt, 2);
        Tensor probs = model.head.forward(sink, /*train=*/false, dummy);
        return nn::bce_loss(probs, labels);
    };
    auto report = nn::grad_check(forward, model.store, 1e-4, Rng(5), 6);
    INFO("max rel error " << report.max_rel_error << " at " << report.worst_parameter);
    CHECK(report.passed);
}

TEST_CASE("checkpoints enforce the tag vocabulary hash") {
    auto subwords = tiny_subwords();
    TypeVocabulary types = TypeVocabulary::build({}, 4);
    GgnnModel model = GgnnModel::create(tiny_config(6, 2, 2, 1), subwords.size(),
                                        subwords.content_hash(), types.size_with_unknown(), 2, 3);
    auto path = std::filesystem::temp_directory_path() / "tagkit_ggnn_ckpt.bin";
    model.save(path, 1234);
    GgnnModel other = GgnnModel::create(tiny_config(6, 2, 2, 1), subwords.size(),
                                        subwords.content_hash(), types.size_with_unknown(), 2, 4);
    CHECK_NOTHROW(other.load(path, 1234));
    CHECK(other.store.at("sink_init").tensor.values() ==
          model.store.at("sink_init").tensor.values());
    CHECK_THROWS_AS(other.load(path, 999), DataError);
    std::filesystem::remove(path);
}

namespace {

std::vector<GraphItem> memorization_items(const SubwordVocabulary& subwords, std::size_t count) {
    std::vector<GraphItem> items;
    for (std::size_t i = 0; i < count; ++i) {
        std::string src;
        std::vector<double> labels(2, 0.0);
        if (i % 2 == 0) {
            src = "int main(){int a=0;for(int i=0;i<10;i++){a+=i;}return a;}";
            labels[0] = 1.0;
        } else {
            src = "int f(int n){if(n<2)return 1;return n*f(n-1);}";
            labels[1] = 1.0;
        }
        GraphItem item;
        item.graph = std::make_shared<ProgramGraph>(build_program_graph(src + "//" +
                                                                        std::to_string(i)));
        item.labels = labels;
        item.problem_id = "p" + std::to_string(i);
        item.solution_id = "s" + std::to_string(i);
        items.push_back(std::move(item));
    }
    return items;
}

}  // namespace

TEST_CASE("training on a small memorization task reduces the loss") {
    auto subwords = build_subword_vocab({"int main for if return a i n f"}, 60);
    auto items = memorization_items(subwords, 10);
    std::vector<const ProgramGraph*> graphs;
    for (auto& it : items) graphs.push_back(it.graph.get());
    TypeVocabulary types = TypeVocabulary::build(graphs, 16);

    GgnnModel model = GgnnModel::create(tiny_config(16, 6, 2, 2), subwords.size(),
                                        subwords.content_hash(), types.size_with_unknown(), 2, 42);
    TrainHyper hyper;
    hyper.lr = 5e-3;
    hyper.batch = 4;
    hyper.max_epochs = 8;
    hyper.patience = 8;
    hyper.seed = 42;
    TrainHistory history = train_ggnn(model, items, items, subwords, types, hyper);
    REQUIRE(history.epochs.size() >= 2);
    CHECK(history.epochs.back().train_loss < history.epochs.front().train_loss);
}

TEST_CASE("training restores the best-epoch parameters and is seed-deterministic") {
    auto subwords = build_subword_vocab({"int main for if return a i n f"}, 60);
    auto items = memorization_items(subwords, 8);
    std::vector<const ProgramGraph*> graphs;
    for (auto& it : items) graphs.push_back(it.graph.get());
    TypeVocabulary types = TypeVocabulary::build(graphs, 16);

    auto run = [&](std::uint64_t seed) {
        GgnnModel model =
            GgnnModel::create(tiny_config(12, 4, 2, 2), subwords.size(), subwords.content_hash(),
                              types.size_with_unknown(), 2, seed);
        TrainHyper hyper;
        hyper.lr = 5e-3;
        hyper.batch = 4;
        hyper.max_epochs = 6;
        hyper.patience = 2;
        hyper.seed = seed;
        TrainHistory history = train_ggnn(model, items, items, subwords, types, hyper);
        // recomputed validation metric must equal the recorded best
        std::vector<std::vector<double>> scores, labels;
        for (const auto& item : items) {
            scores.push_back(model.predict_solution(*item.graph, subwords, types));
            labels.push_back(item.labels);
        }
        CHECK(macro_pr_auc(scores, labels) == Catch::Approx(history.best_metric).margin(1e-12));
        return history;
    };

    TrainHistory h1 = run(7);
    TrainHistory h2 = run(7);
    CHECK(h1.to_csv() == h2.to_csv());

    TrainHistory h3 = run(8);
    CHECK(h1.to_csv() != h3.to_csv());
}

TEST_CASE("empty training set is rejected") {
    auto subwords = tiny_subwords();
    TypeVocabulary types = TypeVocabulary::build({}, 4);
    GgnnModel model = GgnnModel::create(tiny_config(6, 2, 2, 1), subwords.size(),
                                        subwords.content_hash(), types.size_with_unknown(), 2, 3);
    CHECK_THROWS_AS(train_ggnn(model, {}, {}, subwords, types, {}), DataError);
}

TEST_CASE("message round cost grows about linearly with edge count") {
    auto subwords = tiny_subwords();
    std::string small_src, big_src;
    for (int i = 0; i < 20; ++i) small_src += "int v" + std::to_string(i) + "=" + std::to_string(i) + ";";
    for (int i = 0; i < 80; ++i) big_src += "int w" + std::to_string(i) + "=" + std::to_string(i) + ";";
    ProgramGraph small_g = build_program_graph(small_src);
    ProgramGraph big_g = build_program_graph(big_src);
    TypeVocabulary types = TypeVocabulary::build({&small_g, &big_g}, 8);
    GgnnModel model = GgnnModel::create(tiny_config(32, 8, 4, 1), subwords.size(),
                                        subwords.content_hash(), types.size_with_unknown(), 2, 3);
    auto gt_small = GraphTensors::from_graphs({&small_g}, subwords, types);
    auto gt_big = GraphTensors::from_graphs({&big_g}, subwords, types);
    double edge_ratio =
        static_cast<double>(big_g.edges.size()) / static_cast<double>(small_g.edges.size());

    auto time_round = [&](const GraphTensors& gt) {
        Tensor states = model.init_node_states(gt);
        auto t0 = std::chrono::steady_clock::now();
        for (int rep = 0; rep < 20; ++rep) states = model.message_round(states, gt);
        auto t1 = std::chrono::steady_clock::now();
        return std::chrono::duration<double>(t1 - t0).count();
    };
    time_round(gt_small);  // warm-up
    double ratio = time_round(gt_big) / time_round(gt_small);
    // linear scaling with slack for constant overheads and timer noise
    CHECK(ratio < 4.0 * edge_ratio);
}
