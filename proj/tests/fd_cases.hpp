#pragma once

// Per-primitive gradient probes shared by the unit suite and the acceptance
// runner: each case builds a scalar from var inputs so autodiff can be
// compared against central finite differences.

#include <functional>
#include <memory>
#include <vector>

#include "bitraj/graph.hpp"
#include "bitraj/rng.hpp"
#include "bitraj/tensor.hpp"

namespace fd_cases {

struct Case {
    const char* name;
    std::vector<bitraj::Tensor> inputs;
    std::function<double(bitraj::Graph&, std::vector<bitraj::Value>&)> build;
};

inline bitraj::Tensor random_tensor(bitraj::Rng& rng, std::size_t r, std::size_t c,
                                    double lo = -1.0, double hi = 1.0) {
    bitraj::Tensor t(r, c);
    for (auto& x : t.data()) x = lo + (hi - lo) * rng.uniform();
    return t;
}

inline std::vector<Case> all_primitives(std::uint64_t seed) {
    using bitraj::Graph;
    using bitraj::Tensor;
    using bitraj::Value;

    bitraj::Rng rng(seed);
    auto w23 = random_tensor(rng, 2, 3);
    auto w32 = random_tensor(rng, 3, 2);
    auto w22 = random_tensor(rng, 2, 2);
    auto w41 = random_tensor(rng, 4, 1);
    auto w43 = random_tensor(rng, 4, 3);
    auto w33 = random_tensor(rng, 3, 3);
    auto w31 = random_tensor(rng, 3, 1);
    auto idx = std::make_shared<std::vector<std::int32_t>>(std::vector<std::int32_t>{2, 0, 2});

    auto weigh = [](Graph& g, Value v, const Tensor& w) {
        return g.scalar(g.sum_all(g.hadamard(v, g.constant(w))));
    };

    std::vector<Case> cases;
    cases.push_back({"matmul",
                     {random_tensor(rng, 2, 3), random_tensor(rng, 3, 2)},
                     [=](Graph& g, std::vector<Value>& in) {
                         return weigh(g, g.matmul(in[0], in[1]), w22);
                     }});
    cases.push_back({"add",
                     {random_tensor(rng, 2, 3), random_tensor(rng, 2, 3)},
                     [=](Graph& g, std::vector<Value>& in) {
                         return weigh(g, g.add(in[0], in[1]), w23);
                     }});
    cases.push_back({"sub",
                     {random_tensor(rng, 2, 3), random_tensor(rng, 2, 3)},
                     [=](Graph& g, std::vector<Value>& in) {
                         return weigh(g, g.sub(in[0], in[1]), w23);
                     }});
    cases.push_back({"hadamard",
                     {random_tensor(rng, 2, 3), random_tensor(rng, 2, 3)},
                     [=](Graph& g, std::vector<Value>& in) {
                         return weigh(g, g.hadamard(in[0], in[1]), w23);
                     }});
    cases.push_back({"div",
                     {random_tensor(rng, 2, 3), random_tensor(rng, 2, 3, 0.5, 1.5)},
                     [=](Graph& g, std::vector<Value>& in) {
                         return weigh(g, g.div(in[0], in[1]), w23);
                     }});
    cases.push_back({"scale",
                     {random_tensor(rng, 2, 3)},
                     [=](Graph& g, std::vector<Value>& in) {
                         return weigh(g, g.scale(in[0], -2.5), w23);
                     }});
    cases.push_back({"exp",
                     {random_tensor(rng, 2, 3)},
                     [=](Graph& g, std::vector<Value>& in) {
                         return weigh(g, g.exp(in[0]), w23);
                     }});
    cases.push_back({"log",
                     {random_tensor(rng, 2, 3, 0.2, 1.0)},
                     [=](Graph& g, std::vector<Value>& in) {
                         return weigh(g, g.log(in[0]), w23);
                     }});
    cases.push_back({"tanh",
                     {random_tensor(rng, 2, 3)},
                     [=](Graph& g, std::vector<Value>& in) {
                         return weigh(g, g.tanh(in[0]), w23);
                     }});
    cases.push_back({"sqrt",
                     {random_tensor(rng, 2, 3, 0.3, 1.0)},
                     [=](Graph& g, std::vector<Value>& in) {
                         return weigh(g, g.sqrt(in[0]), w23);
                     }});
    cases.push_back({"clamp_min", // entries kept away from the kink
                     {random_tensor(rng, 2, 3)},
                     [=](Graph& g, std::vector<Value>& in) {
                         return weigh(g, g.clamp_min(in[0], 0.05), w23);
                     }});
    cases.push_back({"transpose",
                     {random_tensor(rng, 2, 3)},
                     [=](Graph& g, std::vector<Value>& in) {
                         return weigh(g, g.transpose(in[0]), w32);
                     }});
    cases.push_back({"sum_all",
                     {random_tensor(rng, 2, 3)},
                     [=](Graph& g, std::vector<Value>& in) {
                         return g.scalar(g.scale(g.sum_all(in[0]), 1.7));
                     }});
    cases.push_back({"row_sum",
                     {random_tensor(rng, 4, 3)},
                     [=](Graph& g, std::vector<Value>& in) {
                         return weigh(g, g.row_sum(in[0]), w41);
                     }});
    cases.push_back({"broadcast_scalar",
                     {random_tensor(rng, 1, 1)},
                     [=](Graph& g, std::vector<Value>& in) {
                         return weigh(g, g.broadcast_scalar(in[0], 2, 3), w23);
                     }});
    cases.push_back({"broadcast_col",
                     {random_tensor(rng, 4, 1)},
                     [=](Graph& g, std::vector<Value>& in) {
                         return weigh(g, g.broadcast_col(in[0], 3), w43);
                     }});
    cases.push_back({"take_rows",
                     {random_tensor(rng, 4, 3)},
                     [=](Graph& g, std::vector<Value>& in) {
                         return weigh(g, g.take_rows(in[0], *idx), w33);
                     }});
    cases.push_back({"scatter_rows",
                     {random_tensor(rng, 3, 3)},
                     [=](Graph& g, std::vector<Value>& in) {
                         return weigh(g, g.scatter_rows(in[0], *idx, 4), w43);
                     }});
    cases.push_back({"take_diag",
                     {random_tensor(rng, 3, 3)},
                     [=](Graph& g, std::vector<Value>& in) {
                         return weigh(g, g.take_diag(in[0]), w31);
                     }});
    cases.push_back({"put_diag",
                     {random_tensor(rng, 3, 1)},
                     [=](Graph& g, std::vector<Value>& in) {
                         return weigh(g, g.put_diag(in[0]), w33);
                     }});
    cases.push_back({"row_logsumexp",
                     {random_tensor(rng, 4, 3)},
                     [=](Graph& g, std::vector<Value>& in) {
                         return weigh(g, g.row_logsumexp(in[0]), w41);
                     }});
    cases.push_back({"l2_normalize_rows",
                     {random_tensor(rng, 4, 3)},
                     [=](Graph& g, std::vector<Value>& in) {
                         return weigh(g, g.l2_normalize_rows(in[0]), w43);
                     }});
    return cases;
}

} // namespace fd_cases
