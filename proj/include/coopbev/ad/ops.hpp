#pragma once

#include <vector>

#include "coopbev/ad/tape.hpp"
#include "coopbev/ad/tensor.hpp"

namespace coopbev::ad {

// Elementwise binary ops broadcast right-aligned (missing leading dims and
// extent-1 dims repeat). Backward sums over the broadcast axes.
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& x, double s);

TensorPtr relu(const TensorPtr& x);
TensorPtr gelu(const TensorPtr& x);
TensorPtr sigmoid(const TensorPtr& x);

// Batched matrix product [..,m,k] x [..,k,n] -> [..,m,n]; batch dims
// broadcast right-aligned.
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
TensorPtr transpose_last2(const TensorPtr& x);

// x: [..,in], w: [in,out], optional bias [out].
TensorPtr linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b = nullptr);

// Softmax over the last axis restricted to unmasked entries. Masked entries
// are exactly zero in the output and receive exactly zero gradient. Rows with
// no unmasked entry come back all-zero and are counted in fully_masked_rows.
TensorPtr masked_softmax(const TensorPtr& logits, const MaskPtr& mask, int* fully_masked_rows = nullptr);

// Per-token normalization over the last axis, then affine with gamma/beta [C].
TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta, double eps = 1e-5);

// x: [H,W,Cin], kernel: [k,k,Cin,Cout] with odd k in {1,3}, zero padding
// (k-1)/2, stride 1; spatial extent preserved. Optional bias [Cout].
TensorPtr conv2d(const TensorPtr& x, const TensorPtr& kernel, const TensorPtr& bias = nullptr);

// Per-channel normalization of one BEV map [H,W,C]. Training mode uses batch
// statistics and updates running stats in place (unbiased variance, momentum
// blend); eval mode reads the running stats.
TensorPtr batch_norm2d(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                       const TensorPtr& running_mean, const TensorPtr& running_var, bool training,
                       double momentum = 0.1, double eps = 1e-5);

TensorPtr reshape(const TensorPtr& x, Shape s);
TensorPtr slice_axis(const TensorPtr& x, int axis, int start, int len);
TensorPtr concat(const std::vector<TensorPtr>& xs, int axis);

// [..,T,C] -> [..,h,T,C/h] and back; pure permutation copies, bitwise inverse.
TensorPtr split_heads(const TensorPtr& x, int heads);
TensorPtr merge_heads(const TensorPtr& x);

TensorPtr sum_all(const TensorPtr& x);
TensorPtr mean_all(const TensorPtr& x);

// Broadcast shape of two shapes, right-aligned; throws DimError on conflict.
Shape broadcast_shape(const Shape& a, const Shape& b);

}  // namespace coopbev::ad
