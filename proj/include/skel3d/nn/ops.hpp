#pragma once

#include "skel3d/nn/graph.hpp"

// Differentiable tensor operations. Image-like tensors are NCHW. Every op
// that contracts over features does so per leading-axis item, so the value
// computed for one batch row never depends on the other rows.
namespace skel3d::nn {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);

// x [N, C, H, W] plus bias [N, C] broadcast over space.
Var add_channel_bias(const Var& x, const Var& bias);

Var silu(const Var& x);
Var relu(const Var& x);

// x [N, Ci, H, W], weight [Co, Ci, k, k], optional bias [Co].
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding);

// weight [O, I], optional bias [O]. x is [R, I] (rows independent) or
// [N, T, I] (one product per leading item).
Var linear(const Var& x, const Var& weight, const Var& bias);

// Normalizes each (sample, group) slab of x [N, C, H, W] to zero mean and unit
// variance: (x - mean) / sqrt(var + eps), population variance. No affine.
Var group_norm(const Var& x, int groups, double eps);

// x * (1 + gamma) + beta, all the same shape.
Var modulate(const Var& x, const Var& gamma, const Var& beta);

Var concat_channels(const Var& a, const Var& b);
Var slice_channels(const Var& x, int start, int count);

Var upsample_nearest(const Var& x, int factor);
Var avg_pool(const Var& x, int factor);

Var reshape(const Var& x, Shape shape);
// [N, C, H, W] -> [N, H*W, C] and back.
Var to_tokens(const Var& x);
Var from_tokens(const Var& x, int height, int width);

// a [B, M, K] times b [B, K, N] (or b [B, N, K] when transpose_b).
Var bmm(const Var& a, const Var& b, bool transpose_b);

// Softmax over the last axis.
Var softmax(const Var& x);

// Mean of squared differences over all elements.
Var mse(const Var& a, const Var& b);
Var mean(const Var& x);

}  // namespace skel3d::nn
