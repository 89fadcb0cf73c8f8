#pragma once

#include <memory>
#include <string>
#include <vector>

#include "tagkit/eval.hpp"
#include "tagkit/ggnn.hpp"
#include "tagkit/nn/layers.hpp"
#include "tagkit/training.hpp"

// Problem-level aggregation of per-solution GGNN vectors: additive attention
// pooling with a TagPredictor head, plus the per-tag majority-vote baseline.

namespace tagkit {

constexpr std::size_t kDefaultSampleCap = 50;

struct AggregatorModel {
    std::size_t hidden_dim = 0;
    std::size_t tag_count = 0;
    std::size_t sample_cap = kDefaultSampleCap;  // training-time solutions per problem
    nn::ParameterStore store;
    nn::Tensor query;       // (1 x hidden)
    nn::Tensor projection;  // (hidden x hidden)
    nn::TagPredictor head;

    static AggregatorModel create(std::size_t hidden_dim, std::size_t tag_count,
                                  double dropout_rate, std::uint64_t seed,
                                  std::size_t sample_cap = kDefaultSampleCap) {
        AggregatorModel m;
        m.hidden_dim = hidden_dim;
        m.tag_count = tag_count;
        m.sample_cap = sample_cap;
        Rng rng = Rng(seed).stream("aggregator-init");
        m.query = m.store.create("attention.query", 1, hidden_dim, rng).tensor;
        m.projection = m.store.create("attention.projection", hidden_dim, hidden_dim, rng).tensor;
        m.head =
            nn::TagPredictor::create(m.store, "head", hidden_dim, tag_count, dropout_rate, rng);
        return m;
    }

    // score_i = q . tanh(P v_i); weights = softmax(scores); out = sum w_i v_i.
    nn::Tensor attention_pool(const nn::Tensor& vectors) const {
        using namespace nn;
        if (vectors.rows() == 0) throw DataError("attention_pool: empty input");
        Tensor projected = tanh(matmul_nt(vectors, projection));          // (k x h), rows P*v_i
        Tensor scores = reshape(matmul_nt(projected, query), 1, vectors.rows());
        Tensor weights = softmax_rows(scores);                            // (1 x k)
        return matmul(weights, vectors);                                  // (1 x h)
    }

    nn::Tensor forward(const nn::Tensor& vectors, bool train, Rng& rng) const {
        return head.forward(attention_pool(vectors), train, rng);
    }

    std::vector<double> predict(const std::vector<std::vector<double>>& solution_vectors) const {
        nn::Tensor stacked = stack_vectors(solution_vectors);
        Rng dummy(0);
        return forward(stacked, /*train=*/false, dummy).values();
    }

    static nn::Tensor stack_vectors(const std::vector<std::vector<double>>& vectors) {
        if (vectors.empty()) throw DataError("attention_pool: empty input");
        std::vector<double> flat;
        flat.reserve(vectors.size() * vectors.front().size());
        for (const auto& v : vectors) flat.insert(flat.end(), v.begin(), v.end());
        return nn::Tensor::matrix(vectors.size(), vectors.front().size(), std::move(flat));
    }

    void save(const std::filesystem::path& path, std::uint64_t tag_vocab_hash) const {
        nn::save_checkpoint(path, store, tag_vocab_hash);
    }
    void load(const std::filesystem::path& path, std::uint64_t expected_tag_vocab_hash) {
        nn::Checkpoint ck = nn::load_checkpoint(path);
        if (ck.vocab_hash != expected_tag_vocab_hash)
            throw DataError("aggregator checkpoint was trained with a different tag vocabulary");
        nn::assign_from_checkpoint(store, ck);
    }
};

// Frozen-GGNN encodings of a problem's solutions. Graphs above the parse-error
// threshold are skipped; a problem with no usable graph is an error.
inline std::vector<std::vector<double>> encode_solutions(
    const std::string& problem_id, const std::vector<const ProgramGraph*>& graphs,
    const GgnnModel& ggnn, const SubwordVocabulary& subwords, const TypeVocabulary& types) {
    std::vector<std::vector<double>> vectors;
    for (const auto* g : graphs) {
        if (g->parse_error_fraction > ggnn.config.max_parse_error_fraction) continue;
        vectors.push_back(ggnn.solution_vector(*g, subwords, types));
    }
    if (vectors.empty())
        throw DataError("problem " + problem_id + " has no usable solution graphs");
    return vectors;
}

// One training item: a problem's solution vectors (frozen GGNN outputs) and
// its label vector.
struct ProblemItem {
    std::string problem_id;
    std::vector<std::vector<double>> solution_vectors;
    std::vector<double> labels;
};

inline std::vector<double> predict_problem_code(const ProblemItem& item,
                                                const AggregatorModel& model) {
    return model.predict(item.solution_vectors);
}

// Adam + BCE over attention-pooled problems; each epoch resamples up to
// sample_cap solutions per problem from the seed; early stopping on validation
// macro PR-AUC.
inline TrainHistory train_aggregator(AggregatorModel& model,
                                     const std::vector<ProblemItem>& train_items,
                                     const std::vector<ProblemItem>& val_items,
                                     const TrainHyper& hyper) {
    if (train_items.empty()) throw DataError("train_aggregator: empty training set");
    using namespace nn;
    AdamConfig adam;
    adam.lr = hyper.lr;
    EarlyStopper stopper(hyper.patience);
    TrainHistory history;
    auto best = model.store.snapshot_values();

    Rng root(hyper.seed);
    for (std::size_t epoch = 0; epoch < hyper.max_epochs; ++epoch) {
        Rng epoch_rng = root.stream("agg-epoch").stream(std::to_string(epoch));
        std::vector<std::size_t> order(train_items.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        epoch_rng.shuffle(order);
        Rng dropout_rng = root.stream("agg-dropout").stream(std::to_string(epoch));

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
            std::size_t end = std::min(order.size(), start + hyper.batch);
            Tensor loss;
            for (std::size_t k = start; k < end; ++k) {
                const ProblemItem& item = train_items[order[k]];
                // per-epoch resampling of at most sample_cap solutions
                std::vector<std::size_t> idx(item.solution_vectors.size());
                for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
                Rng sample_rng = root.stream("agg-sample")
                                     .stream(std::to_string(epoch))
                                     .stream(item.problem_id);
                auto chosen = sample_rng.sample(idx, model.sample_cap);
                std::vector<std::vector<double>> vectors;
                for (auto i : chosen) vectors.push_back(item.solution_vectors[i]);
                Tensor probs =
                    model.forward(AggregatorModel::stack_vectors(vectors), true, dropout_rng);
                Tensor item_loss = bce_loss(probs, item.labels);
                loss = loss.defined() ? add(loss, item_loss) : item_loss;
            }
            loss = affine(loss, 1.0 / static_cast<double>(end - start), 0.0);
            loss_sum += loss.item();
            ++batches;
            backward(loss);
            adam_step(model.store, adam);
        }

        double metric = 0.0;
        if (!val_items.empty()) {
            std::vector<std::vector<double>> scores, labels;
            for (const auto& item : val_items) {
                scores.push_back(model.predict(item.solution_vectors));
                labels.push_back(item.labels);
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

// ---------------------------------------------------------------------------
// majority-vote baseline
// ---------------------------------------------------------------------------

struct MajorityVote {
    std::vector<int> decisions;      // per tag, strict majority
    std::vector<double> fractions;   // per tag, positive-vote share (PR-AUC score)
};

// Binarizes each solution's probabilities at the per-tag threshold; a tag is
// positive iff strictly more than half the solutions vote for it.
inline MajorityVote majority_vote_aggregate(
    const std::vector<std::vector<double>>& solution_probs, const ThresholdVector& thresholds) {
    if (solution_probs.empty()) throw DataError("majority_vote_aggregate: empty input");
    const std::size_t tags = thresholds.values.size();
    MajorityVote out;
    out.decisions.assign(tags, 0);
    out.fractions.assign(tags, 0.0);
    for (const auto& probs : solution_probs) {
        if (probs.size() != tags)
            throw DataError("majority_vote_aggregate: probability length mismatch");
        for (std::size_t t = 0; t < tags; ++t)
            out.fractions[t] += decide(probs[t], thresholds.values[t]);
    }
    const double n = static_cast<double>(solution_probs.size());
    for (std::size_t t = 0; t < tags; ++t) {
        out.fractions[t] /= n;
        out.decisions[t] = out.fractions[t] > 0.5 ? 1 : 0;
    }
    return out;
}

}  // namespace tagkit
