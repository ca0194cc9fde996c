#include "edcnn/extractor.hpp"

#include <cmath>

#include "edcnn/checkpoint.hpp"
#include "edcnn/ops.hpp"
#include "edcnn/rng.hpp"

namespace edcnn {

int extractor_pad(int extent) { return (16 - extent % 16) % 16; }

template <typename T>
BasicExtractor<T> BasicExtractor<T>::seeded(std::uint64_t seed) {
  BasicExtractor e;
  e.source_ = ExtractorSource::seeded;
  int in = 1;
  std::uint64_t index = 0;
  for (int s = 0; s < kStages; ++s) {
    const int out = kChannels[static_cast<std::size_t>(s)];
    ExtractorStage<T> stage{ConvParams<T>{BasicTensor<T>(Shape{out, in, 3, 3}), std::vector<T>(static_cast<std::size_t>(out), T(0))},
                            ConvParams<T>{BasicTensor<T>(Shape{out, out, 3, 3}), std::vector<T>(static_cast<std::size_t>(out), T(0))}};
    for (BasicTensor<T>* k : {&stage.down.kernel, &stage.conv.kernel}) {
      const double bound = std::sqrt(1.0 / static_cast<double>(k->c() * 9));
      Rng rng(derive_seed(seed, 0x65787472ULL, index++));
      for (T& v : k->data()) v = static_cast<T>(static_cast<float>(rng.uniform(-bound, bound)));
    }
    e.stages_.push_back(std::move(stage));
    in = out;
  }
  return e;
}

namespace {

std::string stage_name(int s, const char* part) { return "stage" + std::to_string(s) + "." + part; }

}  // namespace

template <typename T>
void BasicExtractor<T>::save(const std::filesystem::path& path) const {
  Container c;
  c.magic = kExtractorMagic;
  c.header.fields = {static_cast<std::uint32_t>(kStages), static_cast<std::uint32_t>(kChannels[0]), 1u};
  auto push = [&](std::string name, const ConvParams<T>& p) {
    const Shape& s = p.kernel.shape();
    c.arrays.push_back(NamedArray{name,
                                  {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c), static_cast<std::uint32_t>(s.h),
                                   static_cast<std::uint32_t>(s.w)},
                                  std::vector<float>(p.kernel.data().begin(), p.kernel.data().end())});
    c.arrays.push_back(NamedArray{name + ".bias", {static_cast<std::uint32_t>(p.bias.size())},
                                  std::vector<float>(p.bias.begin(), p.bias.end())});
  };
  for (int s = 0; s < kStages; ++s) {
    push(stage_name(s + 1, "down"), stages_[static_cast<std::size_t>(s)].down);
    push(stage_name(s + 1, "conv"), stages_[static_cast<std::size_t>(s)].conv);
  }
  write_container(path, c);
}

template <typename T>
BasicExtractor<T> BasicExtractor<T>::load(const std::filesystem::path& path) {
  const Container c = read_container(path, kExtractorMagic);
  if (c.header.fields[0] != static_cast<std::uint32_t>(kStages) || c.header.fields[1] != static_cast<std::uint32_t>(kChannels[0]) ||
      c.header.fields[2] != 1u) {
    throw CheckpointError(CheckpointErrorKind::shape_mismatch, "extractor header does not describe the 4-stage, 16-channel, 1-input layout");
  }
  BasicExtractor e = seeded(0);
  e.source_ = ExtractorSource::file;
  if (c.arrays.size() != static_cast<std::size_t>(kStages) * 4) {
    throw CheckpointError(CheckpointErrorKind::shape_mismatch, "extractor file holds " + std::to_string(c.arrays.size()) + " records, expected 16");
  }
  std::size_t i = 0;
  auto take = [&](const std::string& name, ConvParams<T>& p) {
    const NamedArray& k = c.arrays[i++];
    const NamedArray& b = c.arrays[i++];
    const Shape& s = p.kernel.shape();
    const std::vector<std::uint32_t> kd = {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c), static_cast<std::uint32_t>(s.h),
                                           static_cast<std::uint32_t>(s.w)};
    if (k.name != name || k.dims != kd || b.name != name + ".bias" || b.dims != std::vector<std::uint32_t>{static_cast<std::uint32_t>(s.n)}) {
      throw CheckpointError(CheckpointErrorKind::shape_mismatch, "extractor record \"" + k.name + "\" does not match \"" + name + "\"");
    }
    std::copy(k.values.begin(), k.values.end(), p.kernel.data().begin());
    std::copy(b.values.begin(), b.values.end(), p.bias.begin());
  };
  for (int s = 0; s < kStages; ++s) {
    take(stage_name(s + 1, "down"), e.stages_[static_cast<std::size_t>(s)].down);
    take(stage_name(s + 1, "conv"), e.stages_[static_cast<std::size_t>(s)].conv);
  }
  return e;
}

template <typename T>
typename BasicExtractor<T>::Trace BasicExtractor<T>::trace(const BasicTensor<T>& x, int last_stage) const {
  if (x.c() != 1) throw ShapeError("extractor: expected 1 input channel, got c=" + std::to_string(x.c()));
  if (x.h() < kMinExtent) throw ShapeError("extractor: image too small, height h=" + std::to_string(x.h()) + " below 16");
  if (x.w() < kMinExtent) throw ShapeError("extractor: image too small, width w=" + std::to_string(x.w()) + " below 16");
  if (last_stage < 1 || last_stage > kStages) throw std::invalid_argument("extractor: stage out of range");

  Trace t;
  t.input_shape = x.shape();
  t.padded = reflect_pad(x, extractor_pad(x.h()), extractor_pad(x.w()));
  t.down.reserve(static_cast<std::size_t>(last_stage));
  t.out.reserve(static_cast<std::size_t>(last_stage));
  const BasicTensor<T>* in = &t.padded;
  for (int s = 0; s < last_stage; ++s) {
    const ExtractorStage<T>& st = stages_[static_cast<std::size_t>(s)];
    BasicTensor<T> d = conv2d_forward(*in, ConvSpec<T>{.kernel = st.down.kernel, .bias = st.down.bias, .stride = 2, .padding = 1});
    relu_inplace(d);
    BasicTensor<T> o = conv2d_forward(d, ConvSpec<T>{.kernel = st.conv.kernel, .bias = st.conv.bias, .stride = 1, .padding = 1});
    relu_inplace(o);
    t.down.push_back(std::move(d));
    t.out.push_back(std::move(o));
    in = &t.out.back();
  }
  return t;
}

template <typename T>
std::vector<BasicTensor<T>> BasicExtractor<T>::forward(const BasicTensor<T>& x) const {
  return trace(x, kStages).out;
}

template <typename T>
BasicTensor<T> BasicExtractor<T>::backward(const Trace& t, std::span<const BasicTensor<T>> stage_grads) const {
  const int last = static_cast<int>(t.out.size());
  if (static_cast<int>(stage_grads.size()) > last) throw ShapeError("extractor backward: more stage gradients than traced stages");
  BasicTensor<T> grad;
  for (int s = last - 1; s >= 0; --s) {
    const std::size_t si = static_cast<std::size_t>(s);
    if (grad.empty()) grad = BasicTensor<T>(t.out[si].shape());
    if (si < stage_grads.size() && !stage_grads[si].empty()) add_inplace(grad, stage_grads[si]);
    const ExtractorStage<T>& st = stages_[si];
    relu_backward_inplace(t.out[si], grad);
    BasicTensor<T> g = conv2d_backward(t.down[si], ConvSpec<T>{.kernel = st.conv.kernel, .bias = st.conv.bias, .stride = 1, .padding = 1},
                                       grad, ConvBackwardNeeds{.input = true, .params = false})
                           .input;
    relu_backward_inplace(t.down[si], g);
    const BasicTensor<T>& in = s == 0 ? t.padded : t.out[si - 1];
    grad = conv2d_backward(in, ConvSpec<T>{.kernel = st.down.kernel, .bias = st.down.bias, .stride = 2, .padding = 1}, g,
                           ConvBackwardNeeds{.input = true, .params = false})
               .input;
  }
  if (grad.empty()) return BasicTensor<T>(t.input_shape);
  return reflect_pad_backward(grad, t.input_shape);
}

template class BasicExtractor<float>;
template class BasicExtractor<double>;

}  // namespace edcnn
