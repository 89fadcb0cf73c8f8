#pragma once

#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "tagkit/codegraph.hpp"
#include "tagkit/corpus.hpp"
#include "tagkit/eval.hpp"
#include "tagkit/nn/layers.hpp"
#include "tagkit/nn/module.hpp"
#include "tagkit/training.hpp"
#include "tagkit/wordpiece.hpp"

// Gated graph neural network over program graphs: per-edge-type linear
// messages, a shared GRU state update, and sink-node readout through the
// TagPredictor head.

namespace tagkit {

struct GgnnConfig {
    std::size_t hidden_dim = 128;
    std::size_t token_embedding_dim = 32;
    std::size_t type_embedding_dim = 8;
    std::size_t rounds = 5;
    std::size_t type_vocab_capacity = 64;  // top canonical types; unknown is extra
    double dropout_rate = 0.2;
    double max_parse_error_fraction = 0.2;  // graphs above this are rejected from training

    void validate() const {
        if (token_embedding_dim + type_embedding_dim > hidden_dim)
            throw ConfigError("ggnn: token+type embedding dims exceed hidden_dim");
        if (rounds < 1) throw ConfigError("ggnn: rounds must be >= 1");
        if (hidden_dim == 0) throw ConfigError("ggnn: hidden_dim must be positive");
    }
};

// Top canonical variable types from the train split; id 0 is the unknown type.
class TypeVocabulary {
public:
    static TypeVocabulary build(const std::vector<const ProgramGraph*>& graphs,
                                std::size_t capacity) {
        std::map<std::string, std::size_t> freq;
        for (const auto* g : graphs)
            for (const auto& n : g->nodes)
                if (n.variable_type) ++freq[*n.variable_type];
        std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        TypeVocabulary v;
        for (const auto& [type, n] : ranked) {
            if (v.types_.size() >= capacity) break;
            v.index_.emplace(type, static_cast<int>(v.types_.size()) + 1);
            v.types_.push_back(type);
        }
        return v;
    }

    // 0 = unknown
    int id_of(const std::string& type) const {
        auto it = index_.find(type);
        return it == index_.end() ? 0 : it->second;
    }
    std::size_t size_with_unknown() const { return types_.size() + 1; }

    void save(const std::filesystem::path& path) const {
        nlohmann::json j;
        j["types"] = types_;
        write_text_file(path, j.dump(2) + "\n");
    }
    static TypeVocabulary load(const std::filesystem::path& path) {
        TypeVocabulary v;
        auto j = nlohmann::json::parse(read_text_file(path));
        for (auto& t : j.at("types")) {
            v.index_.emplace(t.get<std::string>(), static_cast<int>(v.types_.size()) + 1);
            v.types_.push_back(t.get<std::string>());
        }
        return v;
    }

private:
    std::vector<std::string> types_;
    std::map<std::string, int> index_;
};

// Precomputed per-graph features: subword pieces per node, type ids, and edge
// lists grouped by type. Supports disjoint unions for batched training.
struct GraphTensors {
    std::size_t node_count = 0;  // includes sinks
    std::vector<std::size_t> piece_ids;       // flattened subword ids
    std::vector<std::size_t> piece_node;      // owning (non-sink) node row
    std::vector<double> piece_inv_count;      // 1 / pieces(node), aligned with rows
    std::vector<std::size_t> type_ids;        // per non-sink node (0 = unknown)
    std::vector<double> type_mask;            // 1 for identifier leaves, else 0
    std::vector<std::size_t> sink_rows;       // one per graph in the union
    std::array<std::vector<std::size_t>, kEdgeTypeCount> edge_src;
    std::array<std::vector<std::size_t>, kEdgeTypeCount> edge_dst;
    std::vector<std::size_t> non_sink_rows;   // rows holding real nodes
    std::vector<std::size_t> real_counts;     // non-sink node count per graph

    static GraphTensors from_graphs(const std::vector<const ProgramGraph*>& graphs,
                                    const SubwordVocabulary& subwords,
                                    const TypeVocabulary& types) {
        GraphTensors gt;
        std::size_t offset = 0;
        for (const auto* g : graphs) {
            if (g->sink_id + 1 != g->node_count())
                throw DataError("graph sink must be the last node");
            gt.real_counts.push_back(g->node_count() - 1);
            for (const auto& n : g->nodes) {
                std::size_t row = offset + n.id;
                if (n.id == g->sink_id) {
                    gt.sink_rows.push_back(row);
                    continue;
                }
                gt.non_sink_rows.push_back(row);
                const std::string& text = n.token_text ? *n.token_text : n.kind;
                auto pieces = subword_pieces(text, subwords);
                for (auto p : pieces) {
                    gt.piece_ids.push_back(p);
                    gt.piece_node.push_back(gt.non_sink_rows.size() - 1);
                }
                gt.piece_inv_count.push_back(1.0 / static_cast<double>(pieces.size()));
                bool is_identifier = n.kind == "identifier" && n.token_text.has_value();
                gt.type_ids.push_back(
                    n.variable_type ? static_cast<std::size_t>(types.id_of(*n.variable_type)) : 0);
                gt.type_mask.push_back(is_identifier ? 1.0 : 0.0);
            }
            for (const auto& e : g->edges) {
                auto t = static_cast<std::size_t>(e.type);
                gt.edge_src[t].push_back(offset + e.source);
                gt.edge_dst[t].push_back(offset + e.target);
            }
            offset += g->node_count();
        }
        gt.node_count = offset;
        return gt;
    }

    // Subword segmentation of a node's token text or kind name; [UNK] when the
    // word cannot be covered.
    static std::vector<std::size_t> subword_pieces(const std::string& text,
                                                   const SubwordVocabulary& subwords) {
        std::vector<std::size_t> out;
        auto ids = wordpiece_tokenize(text, subwords, 64);
        for (std::size_t i = 1; i < ids.size(); ++i)  // drop the leading [CLS]
            out.push_back(static_cast<std::size_t>(ids[i]));
        if (out.empty()) out.push_back(static_cast<std::size_t>(subwords.unk_id()));
        return out;
    }
};

struct GgnnModel {
    GgnnConfig config;
    std::size_t tag_count = 0;
    std::uint64_t subword_hash = 0;
    nn::ParameterStore store;
    nn::Tensor token_table;  // (|subwords| x token_embedding_dim)
    nn::Tensor type_table;   // (types+unknown x type_embedding_dim)
    nn::Tensor sink_init;    // (1 x hidden_dim)
    std::array<nn::Tensor, kEdgeTypeCount> msg_weight;  // (hidden x hidden) each
    std::array<nn::Tensor, kEdgeTypeCount> msg_bias;    // (1 x hidden) each
    nn::GruCell gru;
    nn::TagPredictor head;

    static GgnnModel create(const GgnnConfig& config, std::size_t subword_vocab_size,
                            std::uint64_t subword_hash, std::size_t type_vocab_size,
                            std::size_t tag_count, std::uint64_t seed) {
        GgnnModel m;
        m.config = config;
        m.tag_count = tag_count;
        m.subword_hash = subword_hash;
        Rng rng = Rng(seed).stream("ggnn-init");
        m.token_table =
            m.store.create("token_table", subword_vocab_size, config.token_embedding_dim, rng)
                .tensor;
        m.type_table =
            m.store.create("type_table", type_vocab_size, config.type_embedding_dim, rng).tensor;
        m.sink_init = m.store.create("sink_init", 1, config.hidden_dim, rng).tensor;
        for (std::size_t t = 0; t < kEdgeTypeCount; ++t) {
            std::string name = std::string("msg.") + edge_type_name(static_cast<EdgeType>(t));
            m.msg_weight[t] =
                m.store.create(name + ".weight", config.hidden_dim, config.hidden_dim, rng).tensor;
            m.msg_bias[t] = m.store.create_zeros(name + ".bias", 1, config.hidden_dim).tensor;
        }
        m.gru = nn::GruCell::create(m.store, "gru", config.hidden_dim, config.hidden_dim, rng);
        m.head = nn::TagPredictor::create(m.store, "head", config.hidden_dim, tag_count,
                                          config.dropout_rate, rng);
        return m;
    }

    // Initial states: leaves embed the mean of their token's subword
    // embeddings, identifier leaves additionally their variable-type
    // embedding; inner nodes embed their kind name; zero padding fills the
    // rest; sinks start from the learned sink vector.
    nn::Tensor init_node_states(const GraphTensors& gt) const {
        using namespace nn;
        const std::size_t real = gt.non_sink_rows.size();
        Tensor token_part;
        if (real > 0) {
            Tensor gathered = gather_rows(token_table, gt.piece_ids);
            Tensor summed = scatter_add_rows(gathered, gt.piece_node, real);
            token_part = scale_rows(summed, gt.piece_inv_count);
        }
        Tensor type_part;
        if (real > 0) {
            Tensor type_rows = gather_rows(type_table, gt.type_ids);
            std::vector<double> mask(real * config.type_embedding_dim);
            for (std::size_t r = 0; r < real; ++r)
                for (std::size_t c = 0; c < config.type_embedding_dim; ++c)
                    mask[r * config.type_embedding_dim + c] = gt.type_mask[r];
            type_part = mul(type_rows, Tensor::matrix(real, config.type_embedding_dim, mask));
        }
        const std::size_t pad = config.hidden_dim - config.token_embedding_dim -
                                config.type_embedding_dim;
        Tensor real_states;
        if (real > 0) {
            std::vector<Tensor> parts{token_part, type_part};
            if (pad > 0) parts.push_back(Tensor::zeros(real, pad));
            real_states = concat_cols(parts);
        }

        // per-graph segments: real node rows, then that graph's sink row
        std::vector<Tensor> pieces;
        std::size_t real_offset = 0;
        for (std::size_t count : gt.real_counts) {
            if (count > 0) {
                std::vector<std::size_t> idx(count);
                for (std::size_t i = 0; i < count; ++i) idx[i] = real_offset + i;
                pieces.push_back(gather_rows(real_states, idx));
                real_offset += count;
            }
            pieces.push_back(sink_init);
        }
        return stack_rows(pieces);
    }

    // One simultaneous message-exchange round: per edge type t, every edge
    // (u -> v) contributes M_t * state_u + b_t to v's message; states update
    // through the shared GRU.
    nn::Tensor message_round(const nn::Tensor& states, const GraphTensors& gt) const {
        using namespace nn;
        Tensor total;
        for (std::size_t t = 0; t < kEdgeTypeCount; ++t) {
            if (gt.edge_src[t].empty()) continue;
            Tensor gathered = gather_rows(states, gt.edge_src[t]);
            Tensor transformed = add_rowvec(matmul(gathered, msg_weight[t]), msg_bias[t]);
            Tensor scattered = scatter_add_rows(transformed, gt.edge_dst[t], gt.node_count);
            total = total.defined() ? add(total, scattered) : scattered;
        }
        if (!total.defined()) total = Tensor::zeros(gt.node_count, config.hidden_dim);
        return gru.forward(total, states);
    }

    // Final sink states after `rounds` message rounds, one row per graph.
    nn::Tensor sink_states(const GraphTensors& gt, std::size_t rounds) const {
        nn::Tensor states = init_node_states(gt);
        for (std::size_t r = 0; r < rounds; ++r) states = message_round(states, gt);
        return nn::gather_rows(states, gt.sink_rows);
    }

    std::vector<double> solution_vector(const ProgramGraph& graph,
                                        const SubwordVocabulary& subwords,
                                        const TypeVocabulary& types) const {
        auto gt = GraphTensors::from_graphs({&graph}, subwords, types);
        return sink_states(gt, config.rounds).values();
    }

    std::vector<double> predict_solution(const ProgramGraph& graph,
                                         const SubwordVocabulary& subwords,
                                         const TypeVocabulary& types) const {
        auto gt = GraphTensors::from_graphs({&graph}, subwords, types);
        nn::Tensor sink = sink_states(gt, config.rounds);
        Rng dummy(0);
        return head.forward(sink, /*train=*/false, dummy).values();
    }

    void save(const std::filesystem::path& path, std::uint64_t tag_vocab_hash) const {
        nn::save_checkpoint(path, store, tag_vocab_hash);
    }

    void load(const std::filesystem::path& path, std::uint64_t expected_tag_vocab_hash) {
        nn::Checkpoint ck = nn::load_checkpoint(path);
        if (ck.vocab_hash != expected_tag_vocab_hash)
            throw DataError("ggnn checkpoint was trained with a different tag vocabulary");
        nn::assign_from_checkpoint(store, ck);
    }
};

// One labeled training item: a program graph plus its problem's multi-hot
// label vector.
struct GraphItem {
    std::shared_ptr<ProgramGraph> graph;
    std::vector<double> labels;
    std::string problem_id;
    std::string solution_id;
};

// Adam + BCE training with per-epoch validation macro PR-AUC and early
// stopping; returns the best-epoch parameters in the model.
inline TrainHistory train_ggnn(GgnnModel& model, const std::vector<GraphItem>& train_items,
                               const std::vector<GraphItem>& val_items,
                               const SubwordVocabulary& subwords, const TypeVocabulary& types,
                               const TrainHyper& hyper) {
    if (train_items.empty()) throw DataError("train_ggnn: empty training set");
    using namespace nn;

    std::vector<GraphTensors> train_gt, val_gt;
    train_gt.reserve(train_items.size());
    for (const auto& item : train_items)
        train_gt.push_back(GraphTensors::from_graphs({item.graph.get()}, subwords, types));
    val_gt.reserve(val_items.size());
    for (const auto& item : val_items)
        val_gt.push_back(GraphTensors::from_graphs({item.graph.get()}, subwords, types));

    AdamConfig adam;
    adam.lr = hyper.lr;
    EarlyStopper stopper(hyper.patience);
    TrainHistory history;
    auto best = model.store.snapshot_values();

    Rng root(hyper.seed);
    for (std::size_t epoch = 0; epoch < hyper.max_epochs; ++epoch) {
        Rng epoch_rng = root.stream("ggnn-epoch").stream(std::to_string(epoch));
        std::vector<std::size_t> order(train_items.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        epoch_rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        Rng dropout_rng = root.stream("ggnn-dropout").stream(std::to_string(epoch));
        for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
            std::size_t end = std::min(order.size(), start + hyper.batch);
            std::vector<const ProgramGraph*> graphs;
            std::vector<double> labels;
            for (std::size_t k = start; k < end; ++k) {
                graphs.push_back(train_items[order[k]].graph.get());
                labels.insert(labels.end(), train_items[order[k]].labels.begin(),
                              train_items[order[k]].labels.end());
            }
            GraphTensors gt = GraphTensors::from_graphs(graphs, subwords, types);
            Tensor sinks = model.sink_states(gt, model.config.rounds);
            Tensor probs = model.head.forward(sinks, /*train=*/true, dropout_rng);
            Tensor loss = bce_loss(probs, labels);
            loss_sum += loss.item();
            ++batches;
            backward(loss);
            adam_step(model.store, adam);
        }

        double metric = 0.0;
        if (!val_items.empty()) {
            std::vector<std::vector<double>> scores, labels;
            for (std::size_t i = 0; i < val_items.size(); ++i) {
                Rng dummy(0);
                Tensor sink = model.sink_states(val_gt[i], model.config.rounds);
                scores.push_back(model.head.forward(sink, false, dummy).values());
                labels.push_back(val_items[i].labels);
            }
            metric = macro_pr_auc(scores, labels);
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
        stats.val_metric = metric;
        history.epochs.push_back(stats);

        if (stopper.observe(metric)) {
            best = model.store.snapshot_values();
            history.best_epoch = epoch;
            history.best_metric = metric;
        }
        if (stopper.should_stop()) break;
    }
    model.store.restore_values(best);
    return history;
}

}  // namespace tagkit
