#include "edcnn/dataset.hpp"

#include <algorithm>
#include <set>

#include "edcnn/image_io.hpp"

namespace edcnn {

namespace fs = std::filesystem;

namespace {

std::set<std::string> list_pgm(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DatasetError(DatasetErrorKind::io, "missing directory " + dir.string());
  std::set<std::string> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".pgm") out.insert(entry.path().filename().string());
  }
  return out;
}

}  // namespace

PairedDataset PairedDataset::open(const fs::path& root, Split split) {
  if (!fs::is_directory(root)) throw DatasetError(DatasetErrorKind::io, "dataset directory " + root.string() + " does not exist");
  const std::set<std::string> low = list_pgm(root / "low");
  const std::set<std::string> high = list_pgm(root / "high");
  for (const std::string& n : low)
    if (!high.count(n)) throw DatasetError(DatasetErrorKind::validation, "low/" + n + " has no high/ partner in " + root.string());
  for (const std::string& n : high)
    if (!low.count(n)) throw DatasetError(DatasetErrorKind::validation, "high/" + n + " has no low/ partner in " + root.string());
  if (low.empty()) throw DatasetError(DatasetErrorKind::validation, "dataset " + root.string() + " holds no image pairs");
  return PairedDataset{root, split, std::vector<std::string>(low.begin(), low.end())};
}

std::vector<ImagePair> PairedDataset::load() const {
  std::vector<ImagePair> pairs;
  pairs.reserve(names.size());
  for (const std::string& n : names) {
    ImagePair p{n, read_pgm(low_path(n)), read_pgm(high_path(n))};
    if (!(p.low.shape() == p.high.shape())) {
      throw DatasetError(DatasetErrorKind::validation, n + ": low " + to_string(p.low.shape()) + " and high " + to_string(p.high.shape()) +
                                                           " differ in size");
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void crop_into(const Tensor& src, int top, int left, Tensor& dst, int dn) {
  const int size_h = dst.h();
  const int size_w = dst.w();
  if (top < 0 || left < 0 || top + size_h > src.h() || left + size_w > src.w()) {
    throw ShapeError("crop_into: window outside the source image");
  }
  for (int y = 0; y < size_h; ++y) {
    const float* s = src.plane(0, 0) + static_cast<std::size_t>(top + y) * src.w() + left;
    std::copy_n(s, size_w, dst.plane(dn, 0) + static_cast<std::size_t>(y) * size_w);
  }
}

PatchBatch sample_patches(const ImagePair& pair, int n_patches, int patch_size, Rng& rng) {
  require_same_shape(pair.low.shape(), pair.high.shape(), "sample_patches pair");
  if (patch_size <= 0 || n_patches < 0) throw std::invalid_argument("sample_patches: invalid patch request");
  if (pair.low.h() < patch_size || pair.low.w() < patch_size) {
    throw ShapeError("sample_patches: image " + std::to_string(pair.low.h()) + "x" + std::to_string(pair.low.w()) + " smaller than patch " +
                     std::to_string(patch_size));
  }
  PatchBatch b{Tensor(Shape{n_patches, 1, patch_size, patch_size}), Tensor(Shape{n_patches, 1, patch_size, patch_size}), {}};
  const std::uint64_t rows = static_cast<std::uint64_t>(pair.low.h() - patch_size + 1);
  const std::uint64_t cols = static_cast<std::uint64_t>(pair.low.w() - patch_size + 1);
  for (int i = 0; i < n_patches; ++i) {
    const int top = static_cast<int>(rng.uniform_index(rows));
    const int left = static_cast<int>(rng.uniform_index(cols));
    crop_into(pair.low, top, left, b.input, i);
    crop_into(pair.high, top, left, b.target, i);
    b.corners.push_back({top, left});
  }
  return b;
}

}  // namespace edcnn
