#pragma once

// Named parameter tensors plus Adam state. Parameter values are kept
// f32-representable at all times (initialization and every optimizer step
// round through float) so the 32-bit checkpoint format round-trips
// bit-exactly.

#include <map>
#include <string>
#include <vector>

#include "pssl/tensor.hpp"

namespace pssl {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class ParamStore {
public:
    // Creates a trainable tensor; name must be fresh.
    Tensor create(const std::string& name, Shape shape, std::vector<double> values,
                  bool trainable = true);
    Tensor get(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) > 0; }
    void set_trainable(const std::string& name, bool trainable);

    // Deterministic iteration order (lexicographic by name).
    std::vector<std::string> names() const;

    // Bias-corrected Adam over every trainable parameter, then zero grads.
    // Throws if a trainable parameter has no gradient buffer.
    void adam_step(const AdamConfig& cfg);

    void zero_grads();
    std::int64_t step_count() const { return step_; }
    double round_to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

private:
    struct Slot {
        Tensor tensor;
        std::vector<double> m;
        std::vector<double> v;
    };
    std::map<std::string, Slot> params_;
    std::int64_t step_ = 0;
};

// Parameter initializers (deterministic given the Rng).
std::vector<double> init_uniform(Rng& rng, std::int64_t n, double lo, double hi);
std::vector<double> init_xavier(Rng& rng, std::int64_t fan_in, std::int64_t fan_out);

}  // namespace pssl
