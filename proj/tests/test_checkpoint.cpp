#include <doctest.h>

#include <fstream>
#include <cmath>
#include <cstring>
#include <iterator>
#include <set>
#include <utility>

#include "edcnn/checkpoint.hpp"
#include "edcnn/extractor.hpp"
#include "helpers.hpp"

using namespace edcnn;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

CheckpointErrorKind load_error(const fs::path& p, const std::optional<ModelConfig>& expected = std::nullopt) {
  try {
    (void)load_checkpoint(p, expected);
  } catch (const CheckpointError& e) {
    return e.kind();
  }
  FAIL("load succeeded");
  return CheckpointErrorKind::io;
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("save, load, save is byte-identical") {
  const fs::path dir = testing::scratch_dir("ckpt_roundtrip");
  ModelConfig cfg;
  cfg.seed = 77;
  Model m = init_model(cfg);
  m.bank.factors[3] = 1.25f;
  m.touch();
  save_checkpoint(m, dir / "a.edc");
  const Model back = load_checkpoint(dir / "a.edc");
  CHECK(back.config.same_topology(cfg));
  const auto pa = std::as_const(m).parameters();
  const auto pb = back.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(std::memcmp(pa[i].values.data(), pb[i].values.data(), pa[i].values.size_bytes()) == 0);
  }
  save_checkpoint(back, dir / "b.edc");
  CHECK(slurp(dir / "a.edc") == slurp(dir / "b.edc"));
}

TEST_CASE("file layout follows the container description") {
  const fs::path dir = testing::scratch_dir("ckpt_layout");
  ModelConfig cfg = ModelConfig::bcnn();
  cfg.n_blocks = 1;
  cfg.block_filters = 4;
  save_checkpoint(init_model(cfg), dir / "m.edc");
  const auto b = slurp(dir / "m.edc");
  REQUIRE(b.size() > 25);
  CHECK(std::string(b.begin(), b.begin() + 4) == "EDC1");
  CHECK(b[4] == 1);  // version, little-endian
  CHECK(b[8] == 1);  // n_blocks
  CHECK(b[12] == 4);  // block_filters
  CHECK(b[20] == 0);  // flags
  CHECK(b[21] == 4);  // record count
  // name_len u16 + "block0.conv1x1" + rank + 4 dims + 4 floats
  CHECK(b[25] == 14);
  CHECK(std::string(b.begin() + 27, b.begin() + 41) == "block0.conv1x1");
  CHECK(b[41] == 4);
  const std::size_t records = (2 + 14 + 1 + 16 + 16) + (2 + 19 + 1 + 4 + 16) + (2 + 14 + 1 + 16 + 144) + (2 + 19 + 1 + 4 + 4);
  CHECK(b.size() == 25 + records);
}

TEST_CASE("corrupted files give distinct errors") {
  const fs::path dir = testing::scratch_dir("ckpt_corrupt");
  save_checkpoint(init_model(ModelConfig{}), dir / "good.edc");
  const auto good = slurp(dir / "good.edc");

  auto bad = good;
  bad[0] = 'X';
  spit(dir / "magic.edc", bad);
  CHECK(load_error(dir / "magic.edc") == CheckpointErrorKind::bad_magic);

  bad = good;
  bad[4] = 9;
  spit(dir / "version.edc", bad);
  CHECK(load_error(dir / "version.edc") == CheckpointErrorKind::version_mismatch);

  spit(dir / "short.edc", std::vector<std::uint8_t>(good.begin(), good.begin() + static_cast<long>(good.size() / 2)));
  CHECK(load_error(dir / "short.edc") == CheckpointErrorKind::truncated);
  spit(dir / "tiny.edc", std::vector<std::uint8_t>(good.begin(), good.begin() + 6));
  CHECK(load_error(dir / "tiny.edc") == CheckpointErrorKind::truncated);

  // Header claims 16 filters per block while the records hold 32.
  bad = good;
  bad[12] = 16;
  spit(dir / "shape.edc", bad);
  CHECK(load_error(dir / "shape.edc") == CheckpointErrorKind::shape_mismatch);

  bad = good;
  bad.push_back(0);
  spit(dir / "trailing.edc", bad);
  CHECK(load_error(dir / "trailing.edc") == CheckpointErrorKind::malformed);

  CHECK(load_error(dir / "missing.edc") == CheckpointErrorKind::io);

  std::vector<CheckpointErrorKind> kinds = {CheckpointErrorKind::io, CheckpointErrorKind::bad_magic,
                                            CheckpointErrorKind::version_mismatch, CheckpointErrorKind::shape_mismatch,
                                            CheckpointErrorKind::truncated, CheckpointErrorKind::malformed};
  std::set<std::string> labels;
  for (auto k : kinds) labels.insert(to_string(k));
  CHECK(labels.size() == kinds.size());
}

TEST_CASE("topology demanded by the caller is enforced") {
  const fs::path dir = testing::scratch_dir("ckpt_expected");
  save_checkpoint(init_model(ModelConfig::bcnn()), dir / "bcnn.edc");
  CHECK(load_error(dir / "bcnn.edc", ModelConfig::edcnn()) == CheckpointErrorKind::shape_mismatch);
  CHECK_NOTHROW((void)load_checkpoint(dir / "bcnn.edc", ModelConfig::bcnn()));
}

TEST_CASE("container codec round trip") {
  Container c;
  c.magic = kExtractorMagic;
  c.header.fields = {4, 16, 0};
  c.header.flags = 3;
  c.arrays.push_back(NamedArray{"a", {2, 3}, {1, 2, 3, 4, 5, 6}});
  c.arrays.push_back(NamedArray{"scalar", {1}, {-0.0f}});
  const auto bytes = encode_container(c);
  const Container d = decode_container(bytes, kExtractorMagic);
  CHECK(d.header.fields == c.header.fields);
  CHECK(d.header.flags == 3);
  REQUIRE(d.arrays.size() == 2);
  CHECK(d.arrays[0].values == c.arrays[0].values);
  CHECK(std::signbit(d.arrays[1].values[0]));
  CHECK(encode_container(d) == bytes);
  try {
    (void)decode_container(bytes, kModelMagic);
    FAIL("magic accepted");
  } catch (const CheckpointError& e) {
    CHECK(e.kind() == CheckpointErrorKind::bad_magic);
  }
  Container wrong = c;
  wrong.arrays[0].values.pop_back();
  CHECK_THROWS_AS((void)encode_container(wrong), CheckpointError);
}

TEST_CASE("extractor weights round trip") {
  const fs::path dir = testing::scratch_dir("ckpt_extractor");
  const FrozenExtractor e = FrozenExtractor::seeded(9);
  e.save(dir / "x.edx");
  const FrozenExtractor back = FrozenExtractor::load(dir / "x.edx");
  CHECK(back.source() == ExtractorSource::file);
  for (std::size_t s = 0; s < 4; ++s) {
    CHECK(bit_equal(back.stages()[s].down.kernel, e.stages()[s].down.kernel));
    CHECK(bit_equal(back.stages()[s].conv.kernel, e.stages()[s].conv.kernel));
  }
  back.save(dir / "y.edx");
  CHECK(slurp(dir / "x.edx") == slurp(dir / "y.edx"));
  save_checkpoint(init_model(ModelConfig{}), dir / "m.edc");
  CHECK_THROWS_AS((void)FrozenExtractor::load(dir / "m.edc"), CheckpointError);
}

}  // TEST_SUITE
