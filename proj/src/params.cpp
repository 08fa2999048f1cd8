#include "pssl/params.hpp"

#include <cmath>

namespace pssl {

Tensor ParamStore::create(const std::string& name, Shape shape, std::vector<double> values,
                          bool trainable) {
    if (params_.count(name)) throw InternalError("parameter already exists: " + name);
    for (double& v : values) v = round_to_f32(v);
    Tensor t = Tensor::from_values(std::move(shape), std::move(values), trainable);
    t.zero_grad();
    Slot slot;
    slot.tensor = t;
    slot.m.assign(t.values().size(), 0.0);
    slot.v.assign(t.values().size(), 0.0);
    params_.emplace(name, std::move(slot));
    return t;
}

Tensor ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw InternalError("unknown parameter: " + name);
    return it->second.tensor;
}

void ParamStore::set_trainable(const std::string& name, bool trainable) {
    auto it = params_.find(name);
    if (it == params_.end()) throw InternalError("unknown parameter: " + name);
    it->second.tensor.set_requires_grad(trainable);
    if (trainable) it->second.tensor.zero_grad();
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [k, _] : params_) out.push_back(k);
    return out;
}

void ParamStore::adam_step(const AdamConfig& cfg) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
    for (auto& [name, slot] : params_) {
        Tensor& t = slot.tensor;
        if (!t.requires_grad()) continue;
        TensorNode* n = t.raw();
        if (n->grad.size() != n->value.size()) {
            throw InternalError("adam_step: missing gradient for parameter " + name);
        }
        for (std::size_t i = 0; i < n->value.size(); ++i) {
            const double g = n->grad[i];
            slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g;
            slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = slot.m[i] / bc1;
            const double vhat = slot.v[i] / bc2;
            const double updated = n->value[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
            n->value[i] = round_to_f32(updated);
        }
        n->grad.assign(n->value.size(), 0.0);
    }
}

void ParamStore::zero_grads() {
    for (auto& [name, slot] : params_) {
        (void)name;
        slot.tensor.zero_grad();
    }
}

std::vector<double> init_uniform(Rng& rng, std::int64_t n, double lo, double hi) {
    std::vector<double> out(static_cast<std::size_t>(n));
    for (double& v : out) v = rng.uniform(lo, hi);
    return out;
}

std::vector<double> init_xavier(Rng& rng, std::int64_t fan_in, std::int64_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return init_uniform(rng, fan_in * fan_out, -bound, bound);
}

}  // namespace pssl
