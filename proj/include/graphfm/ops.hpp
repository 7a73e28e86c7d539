#pragma once

#include <vector>

#include "graphfm/tape.hpp"
#include "graphfm/tensor.hpp"

namespace graphfm {

// Elementwise. Operands must agree in shape exactly; no implicit broadcast.
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double c);
Tensor hadamard(Tape& tape, const Tensor& a, const Tensor& b);

// Activations. relu uses subgradient 0 at exactly 0; sigmoid uses the
// two-branch form that never evaluates exp on a positive argument.
Tensor relu(Tape& tape, const Tensor& x);
Tensor leaky_relu(Tape& tape, const Tensor& x, double slope = 0.2);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor elu(Tape& tape, const Tensor& x, double alpha = 1.0);

// matmul: rank-2 only, a is M x K, b is K x N.
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

// linear: treats the last axis of x as features. w is Dout x Din; bias is
// Dout or an undefined Tensor for none. Leading axes pass through.
Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& bias = Tensor());

// Dot of each last-axis row with vector p (length D); output drops that axis.
Tensor project_lastdim(Tape& tape, const Tensor& x, const Tensor& p);

// Removes a trailing axis of extent 1.
Tensor squeeze_lastdim(Tape& tape, const Tensor& x);

// Concatenates along the last axis; all other axes must match.
Tensor concat_lastdim(Tape& tape, const std::vector<Tensor>& parts);

// Reductions.
Tensor sum_all(Tape& tape, const Tensor& x);
Tensor mean_all(Tape& tape, const Tensor& x);
Tensor sum_lastdim(Tape& tape, const Tensor& x);
// B x n x F -> B x F over the middle (field) axis.
Tensor sum_fields(Tape& tape, const Tensor& x);
Tensor mean_fields(Tape& tape, const Tensor& x);

// B x n x d -> B x n x n x d with out[b,i,j,:] = e[b,i,:] * e[b,j,:].
Tensor pair_hadamard(Tape& tape, const Tensor& e);

// Softmax over the last axis restricted to positions where mask != 0; masked
// positions come out exactly 0. mask must match x's shape, must not require
// grad, and every row must keep at least one position.
Tensor masked_softmax(Tape& tape, const Tensor& x, const Tensor& mask);

// out[b,i,:] = sum_j w[b,i,j] * t[b,i,j,:]  (w: B x n x n, t: B x n x n x F)
Tensor attend_pairs(Tape& tape, const Tensor& w, const Tensor& t);
// out[b,i,:] = sum_j w[b,i,j] * t[b,j,:]    (w: B x n x n, t: B x n x F)
Tensor attend_nodes(Tape& tape, const Tensor& w, const Tensor& t);

// x + b broadcast over every element; b is a scalar parameter.
Tensor add_scalar_param(Tape& tape, const Tensor& x, const Tensor& b);

// Forward-only: per last-axis row, 1.0 at the m largest entries (ties broken
// toward the smaller index), 0.0 elsewhere. Never recorded on the tape; the
// discrete selection is a constant as far as gradients are concerned.
Tensor topm_row_mask(const Tensor& x, int64_t m);

}  // namespace graphfm
