#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "tagkit/common.hpp"
#include "tagkit/nn/tensor.hpp"

// Named parameters with Adam state, checkpoint serialization, and the
// finite-difference gradient checker.

namespace tagkit::nn {

struct Parameter {
    std::string name;
    Tensor tensor;          // leaf with requires_grad; gradient lives on its node
    std::vector<double> m;  // Adam first moment
    std::vector<double> v;  // Adam second moment
    std::int64_t step = 0;
};

class ParameterStore {
public:
    // Glorot-uniform initialized parameter.
    Parameter& create(const std::string& name, std::size_t rows, std::size_t cols, Rng& rng) {
        double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
        std::vector<double> values(rows * cols);
        for (double& x : values) x = (2.0 * rng.next_double() - 1.0) * bound;
        return create_with(name, rows, cols, std::move(values));
    }

    Parameter& create_zeros(const std::string& name, std::size_t rows, std::size_t cols) {
        return create_with(name, rows, cols, std::vector<double>(rows * cols, 0.0));
    }

    Parameter& create_with(const std::string& name, std::size_t rows, std::size_t cols,
                           std::vector<double> values) {
        if (index_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
        auto p = std::make_shared<Parameter>();
        p->name = name;
        p->tensor = Tensor::matrix(rows, cols, std::move(values), /*requires_grad=*/true);
        p->m.assign(rows * cols, 0.0);
        p->v.assign(rows * cols, 0.0);
        index_.emplace(name, params_.size());
        params_.push_back(std::move(p));
        return *params_.back();
    }

    Parameter& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::logic_error("unknown parameter: " + name);
        return *params_[it->second];
    }
    const Parameter& at(const std::string& name) const {
        return const_cast<ParameterStore*>(this)->at(name);
    }
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    std::vector<std::shared_ptr<Parameter>>& all() { return params_; }
    const std::vector<std::shared_ptr<Parameter>>& all() const { return params_; }

    void zero_grads() {
        for (auto& p : params_) p->tensor.zero_grad();
    }

    // Deep copy of values and optimizer state (for best-epoch retention).
    std::map<std::string, std::vector<double>> snapshot_values() const {
        std::map<std::string, std::vector<double>> snap;
        for (const auto& p : params_) snap[p->name] = p->tensor.values();
        return snap;
    }

    void restore_values(const std::map<std::string, std::vector<double>>& snap) {
        for (auto& p : params_) {
            auto it = snap.find(p->name);
            if (it == snap.end() || it->second.size() != p->tensor.size())
                throw std::logic_error("parameter snapshot mismatch for " + p->name);
            p->tensor.mutable_values() = it->second;
        }
    }

private:
    std::vector<std::shared_ptr<Parameter>> params_;
    std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam update over all parameters; gradients are zeroed.
inline void adam_step(ParameterStore& store, const AdamConfig& cfg) {
    for (auto& p : store.all()) {
        auto& value = p->tensor.mutable_values();
        const auto& grad = p->tensor.grad();
        p->step += 1;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->step));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->step));
        for (std::size_t i = 0; i < value.size(); ++i) {
            double g = grad[i];
            p->m[i] = cfg.beta1 * p->m[i] + (1.0 - cfg.beta1) * g;
            p->v[i] = cfg.beta2 * p->v[i] + (1.0 - cfg.beta2) * g * g;
            double m_hat = p->m[i] / bc1;
            double v_hat = p->v[i] / bc2;
            value[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
        }
        p->tensor.zero_grad();
    }
}

// ---------------------------------------------------------------------------
// checkpoints: versioned binary map name -> shape + raw values, keyed to the
// tag vocabulary hash so checkpoints cannot be mixed across tag orders.
// ---------------------------------------------------------------------------

enum class CheckpointMode : std::uint8_t { Float64 = 0, Float32 = 1 };

struct CheckpointEntry {
    std::size_t rows = 0, cols = 0;
    std::vector<double> values;
};

struct Checkpoint {
    CheckpointMode mode = CheckpointMode::Float64;
    std::uint64_t vocab_hash = 0;
    std::map<std::string, CheckpointEntry> entries;
};

namespace detail {

constexpr char kCheckpointMagic[4] = {'T', 'K', 'C', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("checkpoint: truncated payload");
    return v;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const ParameterStore& store,
                            std::uint64_t vocab_hash,
                            CheckpointMode mode = CheckpointMode::Float64) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint: " + path.string());
    out.write(detail::kCheckpointMagic, 4);
    detail::write_pod(out, detail::kCheckpointVersion);
    detail::write_pod(out, static_cast<std::uint8_t>(mode));
    detail::write_pod(out, vocab_hash);
    detail::write_pod(out, static_cast<std::uint32_t>(store.all().size()));
    for (const auto& p : store.all()) {
        detail::write_pod(out, static_cast<std::uint32_t>(p->name.size()));
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        detail::write_pod(out, static_cast<std::uint32_t>(p->tensor.rows()));
        detail::write_pod(out, static_cast<std::uint32_t>(p->tensor.cols()));
        if (mode == CheckpointMode::Float64) {
            for (double v : p->tensor.values()) detail::write_pod(out, v);
        } else {
            for (double v : p->tensor.values()) detail::write_pod(out, static_cast<float>(v));
        }
    }
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("cannot open checkpoint: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
        throw DataError("checkpoint: bad magic in " + path.string());
    auto version = detail::read_pod<std::uint32_t>(in);
    if (version != detail::kCheckpointVersion)
        throw DataError("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ck;
    ck.mode = static_cast<CheckpointMode>(detail::read_pod<std::uint8_t>(in));
    ck.vocab_hash = detail::read_pod<std::uint64_t>(in);
    auto count = detail::read_pod<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < count; ++i) {
        auto name_len = detail::read_pod<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw DataError("checkpoint: truncated payload");
        CheckpointEntry e;
        e.rows = detail::read_pod<std::uint32_t>(in);
        e.cols = detail::read_pod<std::uint32_t>(in);
        e.values.resize(e.rows * e.cols);
        for (auto& v : e.values)
            v = ck.mode == CheckpointMode::Float64
                    ? detail::read_pod<double>(in)
                    : static_cast<double>(detail::read_pod<float>(in));
        ck.entries.emplace(std::move(name), std::move(e));
    }
    return ck;
}

// Fills an already-constructed store (shapes fixed by the model config).
inline void assign_from_checkpoint(ParameterStore& store, const Checkpoint& ck) {
    for (auto& p : store.all()) {
        auto it = ck.entries.find(p->name);
        if (it == ck.entries.end()) throw DataError("checkpoint: missing parameter " + p->name);
        if (it->second.rows != p->tensor.rows() || it->second.cols != p->tensor.cols())
            throw DataError("checkpoint: shape mismatch for " + p->name);
        p->tensor.mutable_values() = it->second.values;
    }
}

// ---------------------------------------------------------------------------
// finite-difference gradient check
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    bool passed = true;
    std::string worst_parameter;
};

// Compares reverse-mode gradients against central differences (step 1e-5) on
// sampled coordinates. The forward closure must be deterministic.
inline GradCheckReport grad_check(const std::function<Tensor()>& forward, ParameterStore& store,
                                  double tolerance, Rng rng,
                                  std::size_t max_coords_per_param = 16) {
    constexpr double kStep = 1e-5;
    store.zero_grads();
    Tensor loss = forward();
    backward(loss);

    GradCheckReport report;
    for (auto& p : store.all()) {
        std::vector<std::size_t> coords;
        if (p->tensor.size() <= max_coords_per_param) {
            for (std::size_t i = 0; i < p->tensor.size(); ++i) coords.push_back(i);
        } else {
            for (std::size_t i = 0; i < max_coords_per_param; ++i)
                coords.push_back(static_cast<std::size_t>(rng.next_below(p->tensor.size())));
        }
        for (std::size_t i : coords) {
            const double analytic = p->tensor.grad()[i];
            double& slot = p->tensor.mutable_values()[i];
            const double saved = slot;
            slot = saved + kStep;
            double up = forward().item();
            slot = saved - kStep;
            double down = forward().item();
            slot = saved;
            const double fd = (up - down) / (2.0 * kStep);
            const double denom = std::max(1e-8, std::abs(analytic) + std::abs(fd));
            const double rel = std::abs(analytic - fd) / denom;
            ++report.checked;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_parameter = p->name;
            }
        }
    }
    store.zero_grads();
    report.passed = report.max_rel_error < tolerance;
    return report;
}

}  // namespace tagkit::nn
