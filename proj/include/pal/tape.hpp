#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pal/tensor.hpp"

namespace pal {

/// Recomputes a node's output values from its input tensors.
using ForwardFn = std::function<Buffer(std::span<const Tensor> inputs)>;

/// Maps the gradient of a node's output to gradients of its inputs. The result
/// has one entry per input; an undefined tensor means "no gradient". The rule
/// is written in terms of differentiable ops, so when it runs with recording
/// enabled the backward pass itself lands on the tape.
using BackwardFn = std::function<std::vector<Tensor>(
    std::span<const Tensor> inputs, const Tensor& output, const Tensor& grad)>;

struct Node {
  std::string kind;
  std::vector<Tensor> inputs;
  Shape shape;
  std::shared_ptr<const Buffer> value;
  ForwardFn forward;    // empty for leaves
  BackwardFn backward;  // empty for leaves
};

/// Append-only record of one differentiation episode.
///
/// Nodes are kept in a deque so references stay valid while the backward pass
/// appends new nodes. Not thread-safe; use one tape per thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers `value` as a differentiable leaf.
  Tensor leaf(const Tensor& value);

  Tensor record(std::string kind, std::vector<Tensor> inputs, Shape shape, Buffer values,
                ForwardFn forward, BackwardFn backward);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  /// Tracked tensor for an existing node.
  Tensor tensor(std::size_t id) const;

  /// Re-executes every forward record from the stored leaf values and returns
  /// the recomputed output of each node.
  std::vector<Buffer> replay() const;

  /// Drops all nodes and starts a new episode. Tensors from earlier episodes
  /// must not be used afterwards.
  void reset();
  std::uint64_t generation() const { return generation_; }

 private:
  std::deque<Node> nodes_;
  std::uint64_t generation_ = 0;
};

/// Recording switch consulted by every op (thread-local).
class GradMode {
 public:
  static bool enabled();
  static void set(bool enabled);
};

/// Scoped override of GradMode.
class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled) : previous_(GradMode::enabled()) {
    GradMode::set(enabled);
  }
  ~GradModeGuard() { GradMode::set(previous_); }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace pal
