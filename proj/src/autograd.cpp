#include "pal/autograd.hpp"

#include <cmath>
#include <string>

#include "pal/error.hpp"
#include "pal/ops.hpp"
#include "pal/tape.hpp"

namespace pal {

std::vector<Tensor> backward(const Tensor& output, std::span<const Tensor> wrt, bool create_graph) {
  if (!output.defined() || output.size() != 1)
    throw TapeError("backward: output must be a single-element tensor");
  if (!output.tracked()) throw TapeError("backward: output is not tracked on a tape");
  Tape& tape = *output.tape();
  const std::size_t root = output.node();

  std::vector<char> is_target(root + 1, 0);
  for (const Tensor& w : wrt) {
    if (!w.tracked() || w.tape() != &tape) throw TapeError("backward: wrt tensor is not on the output's tape");
    if (w.node() <= root) is_target[w.node()] = 1;
  }

  // A node is relevant when some target is reachable through its inputs.
  std::vector<char> relevant(root + 1, 0);
  for (std::size_t i = 0; i <= root; ++i) {
    if (is_target[i]) {
      relevant[i] = 1;
      continue;
    }
    for (const Tensor& in : tape.node(i).inputs)
      if (in.tracked() && relevant[in.node()]) {
        relevant[i] = 1;
        break;
      }
  }

  std::vector<Tensor> grads(root + 1);
  grads[root] = Tensor::full(output.shape(), 1.0);

  GradModeGuard mode(create_graph);
  for (std::size_t i = root + 1; i-- > 0;) {
    if (!relevant[i] || !grads[i].defined()) continue;
    const Node& node = tape.node(i);  // deque: stays valid while the tape grows
    if (!node.backward) continue;
    const std::vector<Tensor> input_grads = node.backward(node.inputs, tape.tensor(i), grads[i]);
    if (input_grads.size() != node.inputs.size())
      throw TapeError("backward rule of '" + node.kind + "' returned the wrong arity");
    for (std::size_t j = 0; j < node.inputs.size(); ++j) {
      const Tensor& in = node.inputs[j];
      if (!in.tracked() || !relevant[in.node()]) continue;
      if (!input_grads[j].defined())
        throw TapeError("op '" + node.kind + "' has no derivative for input " + std::to_string(j));
      if (input_grads[j].shape() != in.shape())
        throw TapeError("backward rule of '" + node.kind + "' produced a misshapen gradient");
      Tensor& acc = grads[in.node()];
      acc = acc.defined() ? ops::add(acc, input_grads[j]) : input_grads[j];
    }
    if (!is_target[i]) grads[i] = Tensor();  // release intermediate gradients early
  }

  std::vector<Tensor> result;
  result.reserve(wrt.size());
  for (const Tensor& w : wrt) {
    Tensor g = w.node() <= root ? grads[w.node()] : Tensor();
    if (!g.defined()) g = Tensor::zeros(w.shape());
    result.push_back(create_graph ? g : g.detach());
  }
  return result;
}

Tensor finite_diff(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw NumericError("finite_diff: eps must be positive");
  Buffer base(x.values().begin(), x.values().end());
  Buffer out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    Buffer plus = base, minus = base;
    plus[i] += eps;
    minus[i] -= eps;
    const double fp = f(Tensor(x.shape(), std::move(plus)));
    const double fm = f(Tensor(x.shape(), std::move(minus)));
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff: non-finite function value at coordinate " + std::to_string(i));
    out[i] = (fp - fm) / (2.0 * eps);
  }
  return Tensor(x.shape(), std::move(out));
}

}  // namespace pal
