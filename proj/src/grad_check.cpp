// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "aligncruse/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace acrs::ad {
namespace {

double evaluate(const ScalarFn& fn, const std::vector<Tensor>& inputs) {
  Graph g;
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(g.constant(t));
  return fn(g, leaves).value()[0];
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, scale);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

// Random linear probe so every output element carries a distinct weight.
ScalarFn probed(std::function<Var(Graph&, const std::vector<Var>&)> op, std::uint64_t seed) {
  return [op, seed](Graph& g, const std::vector<Var>& in) {
    Var y = op(g, in);
    std::mt19937_64 rng(seed);
    return weighted_sum(y, random_tensor(y.shape(), rng));
  };
}

}  // namespace

std::string GradCheckResult::describe() const {
  std::ostringstream os;
  os << "max_rel_error=" << max_rel_error << " input=" << worst_input << " index=" << worst_index
     << " analytic=" << analytic << " numeric=" << numeric << " checked=" << checked;
  return os.str();
}

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

GradCheckResult grad_check(const ScalarFn& fn, const std::vector<Tensor>& inputs,
                           const GradCheckOptions& opts) {
  std::vector<Tensor> analytic;
  {
    Graph g;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(g.variable(t));
    Var out = fn(g, leaves);
    require(out.value().size() == 1, ErrorKind::kContract, "grad_check: function must be scalar");
    g.backward(out);
    for (Var v : leaves) analytic.push_back(g.grad(v));
  }

  GradCheckResult result;
  std::mt19937_64 rng(opts.seed);
  std::vector<Tensor> probe = inputs;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<Index> coords(static_cast<std::size_t>(inputs[i].size()));
    std::iota(coords.begin(), coords.end(), Index{0});
    if (opts.samples_per_input > 0 && static_cast<Index>(coords.size()) > opts.samples_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(opts.samples_per_input));
    }
    for (Index c : coords) {
      const double x0 = inputs[i][c];
      probe[i][c] = x0 + opts.step;
      const double up = evaluate(fn, probe);
      probe[i][c] = x0 - opts.step;
      const double down = evaluate(fn, probe);
      probe[i][c] = x0;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double a = analytic[i][c];
      const double err = relative_error(a, numeric, opts.floor);
      ++result.checked;
      if (err > result.max_rel_error || result.worst_input < 0) {
        result.max_rel_error = std::max(err, result.max_rel_error);
        if (err >= result.max_rel_error) {
          result.worst_input = static_cast<int>(i);
          result.worst_index = c;
          result.analytic = a;
          result.numeric = numeric;
        }
      }
    }
  }
  return result;
}

std::vector<OpCheck> check_all_ops(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<OpCheck> out;
  auto check_grad = [&](const char* name, const ScalarFn& fn, const std::vector<Tensor>& inputs) {
    out.push_back({name, grad_check(fn, inputs)});
  };
  check_grad("conv2d_causal",
             probed([](Graph&, const std::vector<Var>& v) { return conv2d_causal(v[0], v[1], v[2], {2, 1, 1}); }, 1),
             {random_tensor({2, 2, 4, 9}, rng), random_tensor({3, 2, 2, 3}, rng), random_tensor({3}, rng)});
  check_grad("conv2d_transpose",
             probed([](Graph&, const std::vector<Var>& v) { return conv2d_transpose(v[0], v[1], v[2], {2, 1, 0}); }, 2),
             {random_tensor({2, 2, 3, 5}, rng), random_tensor({2, 3, 1, 3}, rng), random_tensor({3}, rng)});
  check_grad("batch_norm_train",
             probed([](Graph&, const std::vector<Var>& v) { return batch_norm_train(v[0], v[1], v[2]); }, 3),
             {random_tensor({2, 3, 3, 4}, rng), random_tensor({3}, rng), random_tensor({3}, rng)});
  const Tensor rm = random_tensor({3}, rng);
  Tensor rv({3}, 0.7);
  check_grad("batch_norm_infer",
             probed([=](Graph&, const std::vector<Var>& v) { return batch_norm_infer(v[0], v[1], v[2], rm, rv); }, 4),
             {random_tensor({2, 3, 3, 4}, rng), random_tensor({3}, rng), random_tensor({3}, rng)});
  check_grad("elu", probed([](Graph&, const std::vector<Var>& v) { return elu(v[0]); }, 5),
             {random_tensor({3, 7}, rng)});
  check_grad("sigmoid", probed([](Graph&, const std::vector<Var>& v) { return sigmoid(v[0]); }, 6),
             {random_tensor({3, 7}, rng, 3.0)});
  check_grad("tanh", probed([](Graph&, const std::vector<Var>& v) { return ad::tanh(v[0]); }, 7),
             {random_tensor({3, 7}, rng)});
  check_grad("softmax", probed([](Graph&, const std::vector<Var>& v) { return softmax_lastdim(v[0]); }, 8),
             {random_tensor({3, 7}, rng, 2.0)});
  check_grad("max_pool_freq", probed([](Graph&, const std::vector<Var>& v) { return max_pool_freq(v[0], 4); }, 9),
             {random_tensor({2, 2, 3, 10}, rng)});
  check_grad("linear", probed([](Graph&, const std::vector<Var>& v) { return linear(v[0], v[1], v[2]); }, 10),
             {random_tensor({2, 3, 5}, rng), random_tensor({4, 5}, rng), random_tensor({4}, rng)});
  check_grad("flatten_cf", probed([](Graph&, const std::vector<Var>& v) { return flatten_cf(v[0]); }, 11),
             {random_tensor({2, 3, 4, 5}, rng)});
  check_grad("unflatten_cf", probed([](Graph&, const std::vector<Var>& v) { return unflatten_cf(v[0], 3); }, 12),
             {random_tensor({2, 4, 15}, rng)});
  check_grad("concat_channels",
             probed([](Graph&, const std::vector<Var>& v) { return concat_channels(v[0], v[1]); }, 13),
             {random_tensor({2, 3, 4, 5}, rng), random_tensor({2, 2, 4, 5}, rng)});
  check_grad("add", probed([](Graph&, const std::vector<Var>& v) { return add(v[0], v[1]); }, 14),
             {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
  check_grad("mul", probed([](Graph&, const std::vector<Var>& v) { return mul(v[0], v[1]); }, 15),
             {random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
  check_grad("scale", probed([](Graph&, const std::vector<Var>& v) { return scale(v[0], v[1]); }, 16),
             {random_tensor({2, 3}, rng), random_tensor({1}, rng)});
  check_grad("gru",
             probed([](Graph&, const std::vector<Var>& v) { return gru(v[0], {v[1], v[2], v[3]}); }, 17),
             {random_tensor({2, 5, 4}, rng), random_tensor({9, 4}, rng, 0.5), random_tensor({9, 3}, rng, 0.5),
              random_tensor({9}, rng, 0.5)});
  const Tensor h0 = random_tensor({2, 3}, rng);
  check_grad("gru_h0",
             probed([=](Graph&, const std::vector<Var>& v) { return gru(v[0], {v[1], v[2], v[3]}, h0); }, 18),
             {random_tensor({2, 4, 4}, rng), random_tensor({9, 4}, rng, 0.5), random_tensor({9, 3}, rng, 0.5),
              random_tensor({9}, rng, 0.5)});
  check_grad("delay_scores", probed([](Graph&, const std::vector<Var>& v) { return delay_scores(v[0], v[1], 4); }, 19),
             {random_tensor({2, 6, 3}, rng), random_tensor({2, 6, 3}, rng)});
  check_grad("causal_delay_scores",
             probed([](Graph&, const std::vector<Var>& v) { return causal_delay_scores(v[0], v[1], 4, 0.9); }, 20),
             {random_tensor({2, 6, 3}, rng), random_tensor({2, 6, 3}, rng)});
  check_grad("soft_shift", probed([](Graph&, const std::vector<Var>& v) { return soft_shift(v[0], v[1]); }, 21),
             {random_tensor({2, 2, 6, 3}, rng), random_tensor({2, 4}, rng)});
  check_grad("soft_shift_causal",
             probed([](Graph&, const std::vector<Var>& v) { return soft_shift_causal(v[0], v[1]); }, 22),
             {random_tensor({2, 2, 6, 3}, rng), random_tensor({2, 6, 4}, rng)});
  const Tensor spec = random_tensor({2, 2, 3, 5}, rng);
  check_grad("mask_spectrum", probed([=](Graph&, const std::vector<Var>& v) { return mask_spectrum(v[0], spec); }, 23),
             {random_tensor({2, 1, 3, 5}, rng)});
  const dsp::StftConfig small(16);
  Tensor s_in = random_tensor({2, 2, 4, 9}, rng);
  check_grad("istft", probed([=](Graph&, const std::vector<Var>& v) { return ad::istft(v[0], small); }, 24), {s_in});
  check_grad("stft", probed([=](Graph&, const std::vector<Var>& v) { return ad::stft(v[0], small); }, 25),
             {random_tensor({2, 56}, rng)});
  const Tensor ref = random_tensor({2, 2, 3, 5}, rng);
  check_grad("compressed_mse",
             [=](Graph&, const std::vector<Var>& v) { return compressed_mse(v[0], ref, {}); },
             {random_tensor({2, 2, 3, 5}, rng)});
  check_grad("compressed_mse_beta0",
             [=](Graph&, const std::vector<Var>& v) { return compressed_mse(v[0], ref, {0.3, 0.0, 1e-12}); },
             {random_tensor({2, 2, 3, 5}, rng)});
  check_grad("sum", [](Graph&, const std::vector<Var>& v) { return sum(v[0]); }, {random_tensor({4}, rng)});
  return out;
}

}  // namespace acrs::ad
