#include "pal/tape.hpp"

#include "pal/error.hpp"

namespace pal {

namespace {
thread_local bool grad_mode_enabled = true;
}

bool GradMode::enabled() { return grad_mode_enabled; }
void GradMode::set(bool enabled) { grad_mode_enabled = enabled; }

Tensor Tape::leaf(const Tensor& value) {
  if (!value.defined()) throw TapeError("cannot register an undefined tensor as a leaf");
  nodes_.push_back(Node{"leaf", {}, value.shape(), value.buffer(), {}, {}});
  return tensor(nodes_.size() - 1);
}

Tensor Tape::record(std::string kind, std::vector<Tensor> inputs, Shape shape, Buffer values,
                    ForwardFn forward, BackwardFn backward) {
  for (const Tensor& in : inputs)
    if (in.tracked() && (in.tape() != this || in.node() >= nodes_.size()))
      throw TapeError("input of '" + kind + "' belongs to a different tape");
  auto value = std::make_shared<const Buffer>(std::move(values));
  nodes_.push_back(Node{std::move(kind), std::move(inputs), std::move(shape), std::move(value),
                        std::move(forward), std::move(backward)});
  return tensor(nodes_.size() - 1);
}

Tensor Tape::tensor(std::size_t id) const {
  const Node& n = nodes_.at(id);
  Tensor t(n.shape, n.value);
  t.tape_ = const_cast<Tape*>(this);
  t.node_ = id;
  return t;
}

std::vector<Buffer> Tape::replay() const {
  std::vector<Buffer> out;
  out.reserve(nodes_.size());
  for (const Node& n : nodes_) {
    if (!n.forward) {
      out.push_back(*n.value);
      continue;
    }
    // Rebuild inputs from replayed values so the whole chain is re-executed.
    std::vector<Tensor> inputs;
    inputs.reserve(n.inputs.size());
    for (const Tensor& in : n.inputs)
      inputs.push_back(in.tracked() ? Tensor(in.shape(), out[in.node()]) : in.detach());
    out.push_back(n.forward(inputs));
  }
  return out;
}

void Tape::reset() {
  nodes_.clear();
  ++generation_;
}

}  // namespace pal
