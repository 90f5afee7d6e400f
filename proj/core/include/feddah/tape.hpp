#ifndef FEDDAH_TAPE_HPP
#define FEDDAH_TAPE_HPP

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "feddah/tensor.hpp"

namespace feddah {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape
/// lives.
class Var {
 public:
  Var() = default;

  [[nodiscard]] const Tensor& value() const;
  [[nodiscard]] const Shape& shape() const { return value().shape(); }
  [[nodiscard]] std::size_t id() const noexcept { return id_; }
  [[nodiscard]] Tape* tape() const noexcept { return tape_; }
  [[nodiscard]] bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Result of a backward sweep: one gradient per tracked parameter. Constants
/// are absent.
class Gradients {
 public:
  [[nodiscard]] bool contains(Var v) const;
  [[nodiscard]] const Tensor& operator[](Var v) const;
  [[nodiscard]] Tensor take(Var v);

 private:
  friend class Tape;
  std::vector<std::optional<Tensor>> grads_;
};

/// Ordered record of primitive operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so reverse insertion order is a
/// valid topological order for the backward sweep. Leaves created with the
/// *_view functions alias caller-owned tensors, which must outlive the tape.
/// A tape is single-threaded; concurrent callers need their own.
class Tape {
 public:
  using Adjoints = std::vector<Tensor>;
  using BackwardFn = std::function<void(const Tape&, const Tensor& grad_out, Adjoints&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var param(Tensor value);
  Var param_view(const Tensor& value);
  Var constant(Tensor value);
  Var constant_view(const Tensor& value);

  /// Appends an operation node. `backward` receives the adjoint of the new
  /// node and accumulates into the adjoints of `inputs`.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  [[nodiscard]] const Tensor& value(std::size_t id) const;
  [[nodiscard]] bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

  /// d(loss)/d(p) for every parameter leaf p. Parameters that do not reach
  /// the loss get exact zeros. Throws UsageError if `loss` is not a scalar.
  [[nodiscard]] Gradients backward(Var loss) const;

  /// Adjoint slot for node `id`, zero-initialized on first use.
  static Tensor& adjoint(const Tape& tape, Adjoints& adjoints, std::size_t id);

 private:
  struct Node {
    Tensor owned;
    const Tensor* view = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool is_param = false;
    bool requires_grad = false;

    [[nodiscard]] const Tensor& value() const { return view ? *view : owned; }
  };

  Var push_leaf(Tensor owned, const Tensor* view, bool is_param);

  std::vector<Node> nodes_;
};

}  // namespace feddah

#endif  // FEDDAH_TAPE_HPP
