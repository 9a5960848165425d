#include "test_util.hpp"

#include <algorithm>
#include <numeric>

namespace sct::testing {

GradReport check_gradients(ParamStore<double>& store, const std::vector<Tensor<double>>& inputs,
                           const ForwardFn& forward, bool training, std::uint64_t seed, int max_entries,
                           const std::string& prefix) {
  std::vector<Tensor<double>> xs = inputs;
  auto constants = [&] {
    std::vector<Var<double>> v;
    for (const auto& x : xs) v.push_back(Var<double>::constant(x));
    return v;
  };
  const Context<double> plain{nullptr, training, nullptr};
  const Shape out_shape = forward(plain, constants()).shape();
  const Tensor<double> weights = random_tensor<double>(out_shape, seed ^ 0x5bd1e995ULL);
  auto loss_value = [&] { return dot(forward(plain, constants()), weights).value()[0]; };

  GradTape<double> tape;
  std::vector<Var<double>> leaves;
  for (const auto& x : xs) leaves.push_back(tape.leaf(x));
  const Context<double> ctx{&tape, training, nullptr};
  const Var<double> loss = dot(forward(ctx, leaves), weights);
  store.zero_grad();
  tape.backward(loss);

  GradReport report;
  std::mt19937_64 rng(seed);
  auto pick = [&](Index n) {
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    if (n > max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(max_entries));
    }
    return idx;
  };
  auto compare = [&](Tensor<double>& target, const Tensor<double>& analytic, const std::string& name) {
    for (Index i : pick(target.numel())) {
      const std::function<double(const oracle::Vec&)> f = [&](const oracle::Vec& v) {
        target[i] = v[0];
        return loss_value();
      };
      const double saved = target[i];
      const double fd = oracle::finite_diff_entry(f, oracle::Vec{saved}, 0, 1e-5);
      target[i] = saved;
      const double ga = analytic.numel() > 0 ? analytic[i] : 0.0;
      const double rel = std::abs(ga - fd) / (std::abs(fd) + 1e-4);
      ++report.checked;
      if (rel > report.max_rel) {
        report.max_rel = rel;
        report.worst = name + "[" + std::to_string(i) + "] analytic " + std::to_string(ga) + " fd " +
                       std::to_string(fd);
      }
    }
  };
  for (Parameter<double>& p : store) {
    if (!p.trainable || p.name.rfind(prefix, 0) != 0) continue;
    const Tensor<double> g = p.grad;
    compare(p.value, g, p.name);
  }
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Tensor<double> g = leaves[k].grad();
    compare(xs[k], g, "input" + std::to_string(k));
  }
  return report;
}

}  // namespace sct::testing
