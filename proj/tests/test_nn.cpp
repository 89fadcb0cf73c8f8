#include <cmath>
#include <filesystem>

#include "catch_amalgamated.hpp"
#include "tagkit/nn/layers.hpp"
#include "tagkit/nn/module.hpp"
#include "tagkit/nn/tensor.hpp"

using namespace tagkit;
using namespace tagkit::nn;
namespace fs = std::filesystem;

TEST_CASE("sigmoid of zero is one half") {
    Tensor x = Tensor::row({0.0});
    CHECK(sigmoid(x).item() == Catch::Approx(0.5));
}

TEST_CASE("softmax of a single element is one") {
    Tensor x = Tensor::row({3.7});
    CHECK(softmax_rows(x).item() == Catch::Approx(1.0));
}

TEST_CASE("softmax rows are nonnegative and sum to one within 1e-12") {
    Rng rng(7);
    std::vector<double> vals(24);
    for (auto& v : vals) v = rng.next_normal() * 3;
    Tensor x = Tensor::matrix(4, 6, vals);
    Tensor s = softmax_rows(x);
    for (std::size_t r = 0; r < 4; ++r) {
        double sum = 0;
        for (std::size_t c = 0; c < 6; ++c) {
            CHECK(s.at(r, c) >= 0.0);
            sum += s.at(r, c);
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("masked softmax puts exactly zero on invalid columns") {
    Tensor x = Tensor::matrix(1, 3, {5.0, 1.0, 2.0});
    Tensor s = softmax_rows(x, {1, 0, 1});
    CHECK(s.at(0, 1) == 0.0);
    CHECK(s.at(0, 0) + s.at(0, 2) == Catch::Approx(1.0));
}

TEST_CASE("dropout with rate zero is the identity in both modes") {
    Rng rng(3);
    Tensor x = Tensor::row({1.0, -2.0, 3.0});
    for (bool train : {true, false}) {
        Tensor y = dropout(x, 0.0, train, rng);
        CHECK(y.values() == x.values());
    }
}

TEST_CASE("dropout contract: train varies across seeds, eval does not") {
    std::vector<double> vals(64, 1.0);
    Tensor x = Tensor::row(vals);
    Rng r1(1), r2(2);
    Tensor a = dropout(x, 0.5, true, r1);
    Tensor b = dropout(x, 0.5, true, r2);
    CHECK(a.values() != b.values());
    Rng r3(1), r4(2);
    CHECK(dropout(x, 0.5, false, r3).values() == dropout(x, 0.5, false, r4).values());
}

TEST_CASE("shape mismatches report the operation and both shapes") {
    Tensor a = Tensor::matrix(2, 3, std::vector<double>(6, 0.0));
    Tensor b = Tensor::matrix(2, 2, std::vector<double>(4, 0.0));
    CHECK_THROWS_WITH(add(a, b), Catch::Matchers::ContainsSubstring("add") &&
                                     Catch::Matchers::ContainsSubstring("2x3") &&
                                     Catch::Matchers::ContainsSubstring("2x2"));
    CHECK_THROWS_WITH(matmul(a, b), Catch::Matchers::ContainsSubstring("matmul"));
}

TEST_CASE("matmul matches a hand computation") {
    Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
    Tensor b = Tensor::matrix(2, 2, {5, 6, 7, 8});
    Tensor c = matmul(a, b);
    CHECK(c.at(0, 0) == 19);
    CHECK(c.at(0, 1) == 22);
    CHECK(c.at(1, 0) == 43);
    CHECK(c.at(1, 1) == 50);
    Tensor d = matmul_nt(a, b);  // a * b^T
    CHECK(d.at(0, 0) == 17);
    CHECK(d.at(0, 1) == 23);
    CHECK(d.at(1, 0) == 39);
    CHECK(d.at(1, 1) == 53);
}

TEST_CASE("gru cell with zero parameters halves the state") {
    ParameterStore store;
    Rng rng(5);
    GruCell cell = GruCell::create(store, "gru", 3, 3, rng);
    for (auto& p : store.all())
        std::fill(p->tensor.mutable_values().begin(), p->tensor.mutable_values().end(), 0.0);
    Tensor x = Tensor::row({0.3, -0.4, 2.0});
    Tensor h = Tensor::row({1.0, -2.0, 0.5});
    Tensor out = cell.forward(x, h);
    for (std::size_t c = 0; c < 3; ++c) CHECK(out.at(0, c) == Catch::Approx(0.5 * h.at(0, c)));

    Tensor h0 = Tensor::row({0.0, 0.0, 0.0});
    Tensor out0 = cell.forward(x, h0);
    for (std::size_t c = 0; c < 3; ++c) CHECK(out0.at(0, c) == Catch::Approx(0.0).margin(1e-15));
}

namespace {

// Independent scalar evaluation of the GRU formulas.
std::vector<double> gru_scalar_oracle(const std::vector<std::vector<double>>& wz,
                                      const std::vector<std::vector<double>>& uz,
                                      const std::vector<double>& bz,
                                      const std::vector<std::vector<double>>& wr,
                                      const std::vector<std::vector<double>>& ur,
                                      const std::vector<double>& br,
                                      const std::vector<std::vector<double>>& wh,
                                      const std::vector<std::vector<double>>& uh,
                                      const std::vector<double>& bh, const std::vector<double>& x,
                                      const std::vector<double>& h) {
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    std::size_t n = h.size();
    std::vector<double> z(n), r(n), cand(n), out(n);
    for (std::size_t j = 0; j < n; ++j) {
        double az = bz[j], ar = br[j];
        for (std::size_t i = 0; i < x.size(); ++i) az += x[i] * wz[i][j];
        for (std::size_t i = 0; i < n; ++i) az += h[i] * uz[i][j];
        for (std::size_t i = 0; i < x.size(); ++i) ar += x[i] * wr[i][j];
        for (std::size_t i = 0; i < n; ++i) ar += h[i] * ur[i][j];
        z[j] = sig(az);
        r[j] = sig(ar);
    }
    for (std::size_t j = 0; j < n; ++j) {
        double ah = bh[j];
        for (std::size_t i = 0; i < x.size(); ++i) ah += x[i] * wh[i][j];
        for (std::size_t i = 0; i < n; ++i) ah += r[i] * h[i] * uh[i][j];
        cand[j] = std::tanh(ah);
        out[j] = (1.0 - z[j]) * h[j] + z[j] * cand[j];
    }
    return out;
}

}  // namespace

TEST_CASE("gru cell matches a scalar oracle on a random 2-dim case") {
    ParameterStore store;
    Rng rng(11);
    GruCell cell = GruCell::create(store, "gru", 2, 2, rng);

    auto grid = [&](const Tensor& t) {
        std::vector<std::vector<double>> m(t.rows(), std::vector<double>(t.cols()));
        for (std::size_t r = 0; r < t.rows(); ++r)
            for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
        return m;
    };
    std::vector<double> x{0.7, -1.2}, h{0.4, 0.9};
    auto expected = gru_scalar_oracle(
        grid(cell.w_update), grid(cell.u_update), cell.b_update.values(), grid(cell.w_reset),
        grid(cell.u_reset), cell.b_reset.values(), grid(cell.w_cand), grid(cell.u_cand),
        cell.b_cand.values(), x, h);
    Tensor out = cell.forward(Tensor::row(x), Tensor::row(h));
    for (std::size_t j = 0; j < 2; ++j)
        CHECK(out.at(0, j) == Catch::Approx(expected[j]).epsilon(1e-12));
}

TEST_CASE("bce loss hand values") {
    CHECK(bce_loss(Tensor::row({0.5}), {1.0}).item() ==
          Catch::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(bce_loss(Tensor::row({0.9, 0.1}), {1.0, 0.0}).item() ==
          Catch::Approx(-(std::log(0.9) + std::log(0.9)) / 2.0).epsilon(1e-12));
    CHECK(bce_loss(Tensor::row({0.9, 0.1}), {1.0, 0.0}).item() ==
          Catch::Approx(0.105361).margin(1e-6));
    // exact predictions clamp to eps
    CHECK(bce_loss(Tensor::row({1.0, 0.0}), {1.0, 0.0}).item() <= 1.1e-7);
}

TEST_CASE("bce loss rejects length mismatch") {
    CHECK_THROWS_AS(bce_loss(Tensor::row({0.5, 0.5}), {1.0}), std::invalid_argument);
}

TEST_CASE("backward of a sum gives all-ones gradient") {
    ParameterStore store;
    auto& w = store.create_with("w", 1, 4, {0.1, 0.2, 0.3, 0.4});
    Tensor loss = sum_all(w.tensor);
    backward(loss);
    for (double g : w.tensor.grad()) CHECK(g == 1.0);
}

TEST_CASE("unreachable parameters get zero gradient") {
    ParameterStore store;
    auto& w = store.create_with("w", 1, 2, {0.5, 0.5});
    auto& unused = store.create_with("unused", 1, 2, {0.5, 0.5});
    backward(sum_all(mul(w.tensor, w.tensor)));
    CHECK(unused.tensor.grad() == std::vector<double>{0.0, 0.0});
    CHECK(w.tensor.grad() == std::vector<double>{1.0, 1.0});
}

TEST_CASE("calling backward twice without a new forward throws") {
    ParameterStore store;
    auto& w = store.create_with("w", 1, 2, {1.0, 2.0});
    Tensor loss = sum_all(w.tensor);
    backward(loss);
    CHECK_THROWS_AS(backward(loss), std::logic_error);
}

TEST_CASE("first adam step moves by about lr against the gradient sign") {
    ParameterStore store;
    auto& w = store.create_with("w", 1, 1, {1.0});
    AdamConfig cfg;
    cfg.lr = 0.01;
    backward(sum_all(affine(w.tensor, 3.0, 0.0)));  // d/dw = 3
    adam_step(store, cfg);
    CHECK(w.tensor.values()[0] == Catch::Approx(1.0 - 0.01).epsilon(1e-6));
}

TEST_CASE("adam leaves parameters with zero gradient unchanged") {
    ParameterStore store;
    auto& w = store.create_with("w", 1, 1, {0.7});
    AdamConfig cfg;
    adam_step(store, cfg);
    adam_step(store, cfg);
    CHECK(w.tensor.values()[0] == 0.7);
}

TEST_CASE("second adam step with constant gradient also moves by about lr") {
    ParameterStore store;
    auto& w = store.create_with("w", 1, 1, {0.0});
    AdamConfig cfg;
    cfg.lr = 0.004;
    backward(sum_all(affine(w.tensor, 2.5, 0.0)));
    adam_step(store, cfg);
    double after_first = w.tensor.values()[0];
    backward(sum_all(affine(w.tensor, 2.5, 0.0)));
    adam_step(store, cfg);
    double second_delta = w.tensor.values()[0] - after_first;
    CHECK(std::abs(std::abs(second_delta) - cfg.lr) < 1e-6);
}

TEST_CASE("gradients are zeroed after an adam step") {
    ParameterStore store;
    auto& w = store.create_with("w", 1, 2, {1.0, 2.0});
    backward(sum_all(w.tensor));
    adam_step(store, {});
    CHECK(w.tensor.grad() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("grad check on a linear model is essentially exact") {
    ParameterStore store;
    Rng rng(21);
    store.create("w", 1, 5, rng);
    Tensor x = Tensor::row({0.1, -0.3, 0.5, 0.7, -0.9});
    auto forward = [&] { return sum_all(mul(store.at("w").tensor, x)); };
    auto report = grad_check(forward, store, 1e-9, Rng(1));
    CHECK(report.passed);
    CHECK(report.max_rel_error < 1e-9);
}

TEST_CASE("grad check detects a corrupted gradient") {
    ParameterStore store;
    store.create_with("w", 1, 3, {0.2, 0.4, 0.6});
    Tensor x = Tensor::row({1.0, 2.0, 3.0});
    auto forward = [&]() -> Tensor {
        Tensor t = mul(store.at("w").tensor, x);
        // sabotage: an op whose recorded backward doubles the true gradient
        Tensor bad = nn::detail::make_result(1, 3, t.values(), {t.node()}, "bad");
        auto tn = t.node().get();
        auto on = bad.node().get();
        bad.node()->backprop = [tn, on] {
            for (std::size_t i = 0; i < on->grad.size(); ++i) tn->grad[i] += 2.0 * on->grad[i];
        };
        return sum_all(bad);
    };
    auto report = grad_check(forward, store, 1e-4, Rng(1));
    CHECK_FALSE(report.passed);
}

TEST_CASE("every differentiable op passes grad check on random instances") {
    Rng seed_rng(99);
    ParameterStore store;
    Rng init(31);
    auto& a = store.create("a", 3, 4, init);
    auto& b = store.create("b", 3, 4, init);
    auto& w = store.create("w", 4, 3, init);
    auto& g = store.create("g", 1, 4, init);
    auto& bias = store.create("bias", 1, 4, init);

    std::vector<std::pair<const char*, std::function<Tensor()>>> cases = {
        {"add", [&] { return mean_all(add(a.tensor, b.tensor)); }},
        {"add_rowvec", [&] { return mean_all(add_rowvec(a.tensor, g.tensor)); }},
        {"mul", [&] { return mean_all(mul(a.tensor, b.tensor)); }},
        {"affine", [&] { return mean_all(affine(a.tensor, -2.5, 0.75)); }},
        {"reshape", [&] { return mean_all(mul(reshape(a.tensor, 4, 3), w.tensor)); }},
        {"tanh", [&] { return mean_all(tanh(a.tensor)); }},
        {"sigmoid", [&] { return mean_all(sigmoid(a.tensor)); }},
        {"gelu", [&] { return mean_all(gelu(a.tensor)); }},
        {"matmul", [&] { return mean_all(matmul(a.tensor, w.tensor)); }},
        {"matmul_nt", [&] { return mean_all(matmul_nt(a.tensor, b.tensor)); }},
        {"softmax", [&] { return mean_all(mul(softmax_rows(a.tensor), b.tensor)); }},
        {"masked_softmax",
         [&] { return mean_all(mul(softmax_rows(a.tensor, {1, 1, 0, 1}), b.tensor)); }},
        {"layer_norm",
         [&] {
             return mean_all(mul(layer_norm_rows(a.tensor, g.tensor, bias.tensor), b.tensor));
         }},
        {"mean_rows", [&] { return mean_all(mul(mean_rows(a.tensor), g.tensor)); }},
        {"scale_rows", [&] { return mean_all(scale_rows(a.tensor, {0.5, -2.0, 3.0})); }},
        {"sum_all", [&] { return sum_all(mul(a.tensor, b.tensor)); }},
        {"gather", [&] { return mean_all(gather_rows(a.tensor, {2, 0, 2, 1})); }},
        {"scatter",
         [&] {
             return mean_all(
                 mul(scatter_add_rows(a.tensor, {1, 0, 1}, 2), gather_rows(b.tensor, {0, 1})));
         }},
        {"concat_cols", [&] { return mean_all(concat_cols({a.tensor, b.tensor, a.tensor})); }},
        {"stack_rows",
         [&] {
             return mean_all(
                 mul(stack_rows({a.tensor, b.tensor}), stack_rows({b.tensor, a.tensor})));
         }},
        {"bce",
         [&] {
             return bce_loss(sigmoid(a.tensor),
                             std::vector<double>{1, 0, 0, 1, 1, 0, 1, 0, 0, 1, 1, 0});
         }},
    };
    for (auto& [name, fn] : cases) {
        INFO(name);
        auto report = grad_check(fn, store, 1e-4, Rng(seed_rng.next_u64()));
        INFO("max rel error " << report.max_rel_error << " at " << report.worst_parameter);
        CHECK(report.passed);
    }
}

TEST_CASE("tag predictor with zero weights outputs one half everywhere") {
    ParameterStore store;
    Rng rng(13);
    TagPredictor head = TagPredictor::create(store, "head", 6, 4, 0.2, rng);
    std::fill(store.at("head.weight").tensor.mutable_values().begin(),
              store.at("head.weight").tensor.mutable_values().end(), 0.0);
    Tensor x = Tensor::row({1, 2, 3, 4, 5, 6});
    Rng fwd(1);
    Tensor probs = head.forward(x, /*train=*/false, fwd);
    REQUIRE(probs.cols() == 4);
    for (std::size_t c = 0; c < 4; ++c) CHECK(probs.at(0, c) == Catch::Approx(0.5));
}

TEST_CASE("tag predictor eval mode is deterministic, train mode varies") {
    ParameterStore store;
    Rng rng(13);
    TagPredictor head = TagPredictor::create(store, "head", 8, 3, 0.5, rng);
    std::vector<double> x(8, 1.0);
    Rng e1(5), e2(6);
    CHECK(head.forward(Tensor::row(x), false, e1).values() ==
          head.forward(Tensor::row(x), false, e2).values());
    Rng t1(5), t2(6);
    CHECK(head.forward(Tensor::row(x), true, t1).values() !=
          head.forward(Tensor::row(x), true, t2).values());
}

TEST_CASE("checkpoint round-trip reproduces values bit-exactly in f64 mode") {
    ParameterStore store;
    Rng rng(17);
    store.create("layer.w", 3, 5, rng);
    store.create("layer.b", 1, 5, rng);
    auto path = fs::temp_directory_path() / "tagkit_ckpt_test.bin";
    save_checkpoint(path, store, /*vocab_hash=*/0xabcdef, CheckpointMode::Float64);

    Checkpoint ck = load_checkpoint(path);
    CHECK(ck.vocab_hash == 0xabcdef);
    ParameterStore restored;
    restored.create_zeros("layer.w", 3, 5);
    restored.create_zeros("layer.b", 1, 5);
    assign_from_checkpoint(restored, ck);
    CHECK(restored.at("layer.w").tensor.values() == store.at("layer.w").tensor.values());
    CHECK(restored.at("layer.b").tensor.values() == store.at("layer.b").tensor.values());
    fs::remove(path);
}

TEST_CASE("f32 checkpoints reload to identical values across loads") {
    ParameterStore store;
    Rng rng(19);
    store.create("w", 2, 2, rng);
    auto path = fs::temp_directory_path() / "tagkit_ckpt_f32.bin";
    save_checkpoint(path, store, 1, CheckpointMode::Float32);
    Checkpoint a = load_checkpoint(path);
    Checkpoint b = load_checkpoint(path);
    CHECK(a.entries.at("w").values == b.entries.at("w").values);
    fs::remove(path);
}

TEST_CASE("checkpoint loading rejects corruption") {
    ParameterStore store;
    Rng rng(23);
    store.create("w", 4, 4, rng);
    auto path = fs::temp_directory_path() / "tagkit_ckpt_bad.bin";
    save_checkpoint(path, store, 7);

    auto bytes = read_text_file(path);
    write_text_file(path, bytes.substr(0, bytes.size() / 2));  // truncate
    CHECK_THROWS_AS(load_checkpoint(path), DataError);

    write_text_file(path, "XXXX" + bytes.substr(4));  // bad magic
    CHECK_THROWS_AS(load_checkpoint(path), DataError);

    std::string bad_version = bytes;
    bad_version[4] = 99;  // version field
    write_text_file(path, bad_version);
    CHECK_THROWS_AS(load_checkpoint(path), DataError);
    fs::remove(path);
}

TEST_CASE("checkpoint rejects shape mismatches") {
    ParameterStore store;
    Rng rng(29);
    store.create("w", 2, 3, rng);
    auto path = fs::temp_directory_path() / "tagkit_ckpt_shape.bin";
    save_checkpoint(path, store, 7);
    ParameterStore other;
    other.create_zeros("w", 3, 2);
    Checkpoint ck = load_checkpoint(path);
    CHECK_THROWS_AS(assign_from_checkpoint(other, ck), DataError);
    fs::remove(path);
}
