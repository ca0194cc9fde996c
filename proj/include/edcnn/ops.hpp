#pragma once

#include <span>
#include <vector>

#include "edcnn/tensor.hpp"

namespace edcnn {

enum class PadMode { zero };

/// Convolution parameters. The kernel is (out_channels, in_channels, kh, kw); the
/// bias is either empty or holds out_channels values. Non-owning.
template <typename T>
struct ConvSpec {
  const BasicTensor<T>& kernel;
  std::span<const T> bias{};
  int stride = 1;
  int padding = 0;
  PadMode pad_mode = PadMode::zero;
};

/// floor((h + 2p - kh)/s) + 1 per spatial axis; throws ShapeError if the window does not fit.
Shape conv2d_output_shape(const Shape& input, const Shape& kernel, int stride, int padding);

/// Cross-correlation (no kernel flip) plus bias.
template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const ConvSpec<T>& spec);

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> kernel;
  std::vector<T> bias;
};

/// Which gradients conv2d_backward should produce. Skipped outputs are left empty.
struct ConvBackwardNeeds {
  bool input = true;
  bool params = true;
};

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& x, const ConvSpec<T>& spec,
                             const BasicTensor<T>& grad_out, ConvBackwardNeeds needs = {});

/// 1x1 convolution of the channel concatenation of `parts` without building it:
/// the kernel's input columns are consumed part by part, in order.
template <typename T>
BasicTensor<T> pointwise_conv_forward(std::span<const BasicTensor<T>* const> parts, const BasicTensor<T>& kernel,
                                      std::span<const T> bias);

template <typename T>
struct PointwiseGrads {
  std::vector<BasicTensor<T>> inputs;  // one per part; empty where not requested
  BasicTensor<T> kernel;
  std::vector<T> bias;
};

template <typename T>
PointwiseGrads<T> pointwise_conv_backward(std::span<const BasicTensor<T>* const> parts, const BasicTensor<T>& kernel,
                                          const BasicTensor<T>& grad_out, const std::vector<bool>& need_input);

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& x);

template <typename T>
void relu_inplace(BasicTensor<T>& x);

/// grad_x = grad_out where x > 0, else 0. `x` may be the forward input or output:
/// both have the same sign pattern.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& x, const BasicTensor<T>& grad_out);

template <typename T>
void relu_backward_inplace(const BasicTensor<T>& x, BasicTensor<T>& grad);

/// Stacks parts along the channel axis in argument order.
template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>* const> parts);

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// Backward of concat_channels: slices grad along channels by the given widths.
template <typename T>
std::vector<BasicTensor<T>> split_channels(const BasicTensor<T>& grad, std::span<const int> widths);

/// Adds channels [first, first + dst.c) of src into dst.
template <typename T>
void accumulate_channel_slice(BasicTensor<T>& dst, const BasicTensor<T>& src, int first);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& x, const BasicTensor<T>& y);

template <typename T>
void add_inplace(BasicTensor<T>& x, const BasicTensor<T>& y);

/// x += scale * y
template <typename T>
void axpy_inplace(BasicTensor<T>& x, T scale, const BasicTensor<T>& y);

/// Zero padding on all four sides.
template <typename T>
BasicTensor<T> zero_pad(const BasicTensor<T>& x, int pad);

template <typename T>
BasicTensor<T> zero_pad_backward(const BasicTensor<T>& grad, int pad);

/// Mirror padding (edge sample excluded) on the bottom and right. Requires pad < extent.
template <typename T>
BasicTensor<T> reflect_pad(const BasicTensor<T>& x, int bottom, int right);

template <typename T>
BasicTensor<T> reflect_pad_backward(const BasicTensor<T>& grad, const Shape& original);

/// Sets the thread count used inside primitives. 1 keeps every result bit-reproducible.
void set_num_threads(int threads);
int num_threads();

}  // namespace edcnn
