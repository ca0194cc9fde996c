#pragma once

#include <array>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "edcnn/rng.hpp"
#include "edcnn/tensor.hpp"

namespace edcnn {

enum class Split { train, test };

enum class DatasetErrorKind { io, validation };

class DatasetError : public std::runtime_error {
 public:
  DatasetError(DatasetErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  DatasetErrorKind kind() const { return kind_; }

 private:
  DatasetErrorKind kind_;
};

struct ImagePair {
  std::string name;
  Tensor low;   // low-dose input
  Tensor high;  // normal-dose target
};

/// Paired images on disk: <root>/low/NAME.pgm matched with <root>/high/NAME.pgm.
struct PairedDataset {
  std::filesystem::path root;
  Split split = Split::train;
  std::vector<std::string> names;  // sorted file names

  /// Lists and pairs the files. Throws DatasetError (io) for a missing directory,
  /// (validation) when a file has no partner or the set is empty.
  static PairedDataset open(const std::filesystem::path& root, Split split);

  std::filesystem::path low_path(const std::string& name) const { return root / "low" / name; }
  std::filesystem::path high_path(const std::string& name) const { return root / "high" / name; }

  /// Reads every pair; throws DatasetError (validation) on a dimension mismatch.
  std::vector<ImagePair> load() const;
};

struct PatchBatch {
  Tensor input;
  Tensor target;
  std::vector<std::array<int, 2>> corners;  // (top, left)
};

/// Crops n_patches patch_size x patch_size windows at uniformly drawn corners; the
/// same corner crops both images of the pair.
PatchBatch sample_patches(const ImagePair& pair, int n_patches, int patch_size, Rng& rng);

/// Copies the window at (top, left) of plane (n, c) of src into plane (dn, 0) of dst.
void crop_into(const Tensor& src, int top, int left, Tensor& dst, int dn);

}  // namespace edcnn
