#ifndef FEDDAH_OPS_HPP
#define FEDDAH_OPS_HPP

#include <cstddef>
#include <span>

#include "feddah/tape.hpp"

// Differentiable primitives recorded on a Tape.
namespace feddah::ad {

/// W x. A tensor of rank > 2 is read as a matrix whose columns are its last
/// axis, so stacked heads [k, d, c] multiply as [k*d, c].
Var matvec(Var W, Var x);
/// W x + b.
Var linear(Var W, Var x, Var b);
/// A B^T for A [m x k], B [n x k]. Operands of higher rank are read as
/// matrices over their last axis, like matvec.
Var matmul_nt(Var A, Var B);
/// A + 1 b^T, broadcasting b [n] over the rows of A [m x n].
Var add_rows(Var A, Var b);

/// Elementwise ops; operands must have equal element counts. The result takes
/// the shape of the first operand.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var tanh(Var a);

Var reshape(Var a, Shape shape);
Var transpose(Var A);
/// Rows [begin, end) of a rank-2 tensor.
Var slice_rows(Var A, std::size_t begin, std::size_t end);
/// Flattened concatenation into a rank-1 tensor.
Var concat(std::span<const Var> parts);
/// [A | B] for A [m x p], B [m x q].
Var concat_cols(Var A, Var B);

Var sum(Var a);
Var sum_squares(Var a);
/// sum((a - b)^2) as a scalar.
Var squared_distance(Var a, Var b);
/// mean((a - b)^2) as a scalar.
Var mean_squared_error(Var prediction, Var target);
/// -sum(target * log_softmax(logits)).
Var softmax_cross_entropy(Var logits, Var target);

}  // namespace feddah::ad

namespace feddah {

inline Var operator+(Var a, Var b) { return ad::add(a, b); }
inline Var operator-(Var a, Var b) { return ad::sub(a, b); }
inline Var operator*(Var a, Var b) { return ad::mul(a, b); }
inline Var operator*(double s, Var a) { return ad::scale(a, s); }
inline Var operator*(Var a, double s) { return ad::scale(a, s); }

}  // namespace feddah

#endif  // FEDDAH_OPS_HPP
