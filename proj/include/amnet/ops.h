#pragma once

#include <cstddef>
#include <vector>

#include "amnet/tape.h"

namespace amnet {

// Recorded operations. FLOP convention: one multiply-accumulate counts as two
// FLOPs; every elementwise add, multiply or activation counts one FLOP per
// output element; reshaping (slice, concat, transpose) is free.

Var matmul(Var a, Var b);
Var transpose(Var a);

// a + b where b has the shape of a, or is a 1 x cols row broadcast over rows.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
// a * s for a 1x1 variable s.
Var scale_by(Var a, Var s);

enum class Activation { sigmoid, tanh, relu };
Var activate(Activation kind, Var a);
inline Var sigmoid(Var a) { return activate(Activation::sigmoid, a); }
inline Var tanh(Var a) { return activate(Activation::tanh, a); }
inline Var relu(Var a) { return activate(Activation::relu, a); }

Var sum(Var a);
Var mean(Var a);

Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var stack_rows(const std::vector<Var>& rows);
Var row_of(Var a, std::size_t r);
// Single element as a 1x1 variable.
Var element(Var a, std::size_t r, std::size_t c);

// Row-wise, max-shifted.
Var softmax_rows(Var logits);
Var log_softmax_rows(Var logits);
Var logsumexp_rows(Var logits);

// Plain helpers shared with non-recorded code paths.
double sigmoid_value(double x);
void softmax_inplace(std::span<double> v);
double logsumexp(std::span<const double> v);
double log_add_exp(double a, double b);

}  // namespace amnet
