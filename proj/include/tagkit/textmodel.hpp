#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tagkit/eval.hpp"
#include "tagkit/nn/layers.hpp"
#include "tagkit/nn/module.hpp"
#include "tagkit/training.hpp"
#include "tagkit/wordpiece.hpp"

// Transformer encoder over WordPiece-tokenized statements: learned positional
// embeddings, pre-norm blocks with bidirectional multi-head self-attention,
// initial-token readout into the TagPredictor head. Trained from scratch at
// desk scale; loading pretrained weights is an extension point.

namespace tagkit {

struct TextModelConfig {
    std::size_t layers = 4;
    std::size_t model_dim = 128;
    std::size_t heads = 4;
    std::size_t ff_dim = 512;
    std::size_t max_len = 256;
    double dropout_rate = 0.2;

    std::size_t head_dim() const { return model_dim / heads; }

    void validate() const {
        if (heads == 0 || model_dim % heads != 0)
            throw ConfigError("textmodel: model_dim must be divisible by heads");
        if (max_len < 2) throw ConfigError("textmodel: max_len must be >= 2");
        if (layers == 0) throw ConfigError("textmodel: need at least one layer");
    }
};

struct TextModel {
    struct Layer {
        std::vector<nn::Tensor> wq, wk, wv;  // per head, (D x head_dim)
        nn::Tensor wo, bo;                   // (D x D), (1 x D)
        nn::Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
        nn::Tensor ff_w1, ff_b1, ff_w2, ff_b2;
    };

    TextModelConfig config;
    std::size_t tag_count = 0;
    std::uint64_t subword_hash = 0;
    nn::ParameterStore store;
    nn::Tensor token_table;  // (|subwords| x D)
    nn::Tensor pos_table;    // (max_len x D)
    std::vector<Layer> layers;
    nn::Tensor final_gain, final_bias;
    nn::TagPredictor head;

    static TextModel create(const TextModelConfig& config, std::size_t subword_vocab_size,
                            std::uint64_t subword_hash, std::size_t tag_count,
                            std::uint64_t seed) {
        config.validate();
        TextModel m;
        m.config = config;
        m.tag_count = tag_count;
        m.subword_hash = subword_hash;
        Rng rng = Rng(seed).stream("textmodel-init");
        const std::size_t d = config.model_dim;
        m.token_table = m.store.create("token_table", subword_vocab_size, d, rng).tensor;
        m.pos_table = m.store.create("pos_table", config.max_len, d, rng).tensor;
        for (std::size_t l = 0; l < config.layers; ++l) {
            std::string p = "layer" + std::to_string(l);
            Layer layer;
            for (std::size_t h = 0; h < config.heads; ++h) {
                std::string hp = p + ".head" + std::to_string(h);
                layer.wq.push_back(m.store.create(hp + ".wq", d, config.head_dim(), rng).tensor);
                layer.wk.push_back(m.store.create(hp + ".wk", d, config.head_dim(), rng).tensor);
                layer.wv.push_back(m.store.create(hp + ".wv", d, config.head_dim(), rng).tensor);
            }
            layer.wo = m.store.create(p + ".wo", d, d, rng).tensor;
            layer.bo = m.store.create_zeros(p + ".bo", 1, d).tensor;
            layer.ln1_gain = m.store.create_with(p + ".ln1_gain", 1, d, std::vector<double>(d, 1.0)).tensor;
            layer.ln1_bias = m.store.create_zeros(p + ".ln1_bias", 1, d).tensor;
            layer.ln2_gain = m.store.create_with(p + ".ln2_gain", 1, d, std::vector<double>(d, 1.0)).tensor;
            layer.ln2_bias = m.store.create_zeros(p + ".ln2_bias", 1, d).tensor;
            layer.ff_w1 = m.store.create(p + ".ff_w1", d, config.ff_dim, rng).tensor;
            layer.ff_b1 = m.store.create_zeros(p + ".ff_b1", 1, config.ff_dim).tensor;
            layer.ff_w2 = m.store.create(p + ".ff_w2", config.ff_dim, d, rng).tensor;
            layer.ff_b2 = m.store.create_zeros(p + ".ff_b2", 1, d).tensor;
            m.layers.push_back(std::move(layer));
        }
        m.final_gain = m.store.create_with("final_gain", 1, d, std::vector<double>(d, 1.0)).tensor;
        m.final_bias = m.store.create_zeros("final_bias", 1, d).tensor;
        m.head = nn::TagPredictor::create(m.store, "head", d, tag_count, config.dropout_rate, rng);
        return m;
    }

    // Final state of position 0 ([CLS]) after all blocks; [PAD] positions are
    // masked out of every attention distribution.
    nn::Tensor encode(const std::vector<int>& ids, int pad_id, bool train, Rng& rng) const {
        using namespace nn;
        if (ids.empty()) throw DataError("encode: empty token sequence");
        if (ids.size() > config.max_len)
            throw DataError("encode: sequence length " + std::to_string(ids.size()) +
                            " exceeds max_len " + std::to_string(config.max_len));
        const std::size_t t_len = ids.size();
        std::vector<std::size_t> token_ids(t_len), positions(t_len);
        std::vector<char> valid(t_len);
        for (std::size_t i = 0; i < t_len; ++i) {
            if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= token_table.rows())
                throw DataError("encode: token id out of vocabulary range");
            token_ids[i] = static_cast<std::size_t>(ids[i]);
            positions[i] = i;
            valid[i] = ids[i] != pad_id;
        }

        Tensor x = add(gather_rows(token_table, token_ids), gather_rows(pos_table, positions));
        const double scale = 1.0 / std::sqrt(static_cast<double>(config.head_dim()));
        for (const auto& layer : layers) {
            Tensor normed = layer_norm_rows(x, layer.ln1_gain, layer.ln1_bias);
            std::vector<Tensor> heads;
            for (std::size_t h = 0; h < config.heads; ++h) {
                Tensor q = matmul(normed, layer.wq[h]);
                Tensor k = matmul(normed, layer.wk[h]);
                Tensor v = matmul(normed, layer.wv[h]);
                Tensor scores = affine(matmul_nt(q, k), scale, 0.0);
                Tensor attn = softmax_rows(scores, valid);
                heads.push_back(matmul(attn, v));
            }
            Tensor merged = add_rowvec(matmul(concat_cols(heads), layer.wo), layer.bo);
            merged = dropout(merged, config.dropout_rate, train, rng);
            x = add(x, merged);

            Tensor normed2 = layer_norm_rows(x, layer.ln2_gain, layer.ln2_bias);
            Tensor ff = add_rowvec(
                matmul(gelu(add_rowvec(matmul(normed2, layer.ff_w1), layer.ff_b1)), layer.ff_w2),
                layer.ff_b2);
            ff = dropout(ff, config.dropout_rate, train, rng);
            x = add(x, ff);
        }
        x = layer_norm_rows(x, final_gain, final_bias);
        return gather_rows(x, {0});
    }

    std::vector<double> predict_statement(const std::string& statement,
                                          const SubwordVocabulary& vocab) const {
        auto ids = wordpiece_tokenize(statement, vocab, config.max_len);
        Rng dummy(0);
        nn::Tensor cls = encode(ids, vocab.pad_id(), /*train=*/false, dummy);
        return head.forward(cls, /*train=*/false, dummy).values();
    }

    void save(const std::filesystem::path& path, std::uint64_t tag_vocab_hash) const {
        nn::save_checkpoint(path, store, tag_vocab_hash);
    }
    void load(const std::filesystem::path& path, std::uint64_t expected_tag_vocab_hash) {
        nn::Checkpoint ck = nn::load_checkpoint(path);
        if (ck.vocab_hash != expected_tag_vocab_hash)
            throw DataError("text checkpoint was trained with a different tag vocabulary");
        nn::assign_from_checkpoint(store, ck);
    }
};

struct StatementItem {
    std::string problem_id;
    std::vector<int> token_ids;  // [CLS]-prefixed, <= max_len
    std::vector<double> labels;
};

// Adam + BCE; per-epoch validation macro PR-AUC with early stopping.
inline TrainHistory train_textmodel(TextModel& model, const std::vector<StatementItem>& train_items,
                                    const std::vector<StatementItem>& val_items, int pad_id,
                                    const TrainHyper& hyper) {
    if (train_items.empty()) throw DataError("train_textmodel: empty training set");
    using namespace nn;
    AdamConfig adam;
    adam.lr = hyper.lr;
    EarlyStopper stopper(hyper.patience);
    TrainHistory history;
    auto best = model.store.snapshot_values();

    Rng root(hyper.seed);
    for (std::size_t epoch = 0; epoch < hyper.max_epochs; ++epoch) {
        Rng epoch_rng = root.stream("text-epoch").stream(std::to_string(epoch));
        std::vector<std::size_t> order(train_items.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        epoch_rng.shuffle(order);
        Rng dropout_rng = root.stream("text-dropout").stream(std::to_string(epoch));

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
            std::size_t end = std::min(order.size(), start + hyper.batch);
            Tensor loss;
            for (std::size_t k = start; k < end; ++k) {
                const StatementItem& item = train_items[order[k]];
                Tensor cls = model.encode(item.token_ids, pad_id, /*train=*/true, dropout_rng);
                Tensor probs = model.head.forward(cls, /*train=*/true, dropout_rng);
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
            Rng dummy(0);
            for (const auto& item : val_items) {
                Tensor cls = model.encode(item.token_ids, pad_id, false, dummy);
                scores.push_back(model.head.forward(cls, false, dummy).values());
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

}  // namespace tagkit
