#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "dreamnet/data.hpp"
#include "test_support.hpp"

using namespace dreamnet;
using Catch::Matchers::ContainsSubstring;

namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "dreamnet_data_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SynthSpec small_spec() {
  SynthSpec spec;
  spec.dim = 6;
  spec.num_classes = 3;
  spec.sets_per_class = 4;
  spec.frames_per_set = 20;
  spec.separation = 1.0;
  spec.seed = 5;
  return spec;
}

}  // namespace

TEST_CASE("synth_generate honors the shape contract and yields SPD samples") {
  SynthSpec spec;  // defaults: dim 20, 3 classes, 100 sets/class, 80 frames
  spec.sets_per_class = 5;
  const SampleSet set = synth_generate(spec);
  REQUIRE(set.size() == 15);
  CHECK(set.dim == 20);
  CHECK(set.num_classes == 3);
  for (const Sample& s : set.samples) {
    CHECK(s.x.dim() == 20);
    CHECK(is_spd(s.x.sym(), 0.0));
  }
}

TEST_CASE("synth_generate is bit-deterministic per spec") {
  const SynthSpec spec = small_spec();
  const SampleSet a = synth_generate(spec);
  const SampleSet b = synth_generate(spec);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.samples[i].label == b.samples[i].label);
    CHECK(std::memcmp(a.samples[i].x.mat().data(), b.samples[i].x.mat().data(),
                      sizeof(double) * 36) == 0);
  }
}

TEST_CASE("null separation is tagged in the provenance") {
  SynthSpec spec = small_spec();
  spec.separation = 0.0;
  CHECK(synth_generate(spec).provenance == "null-separation");
  CHECK_THAT(synth_generate(small_spec()).provenance, ContainsSubstring("sep=1"));
}

TEST_CASE("dataset round-trips through the matrix manifest format bit-exactly") {
  const fs::path dir = temp_dir("roundtrip");
  const SampleSet set = synth_generate(small_spec());
  const fs::path manifest = save_dataset(dir, set);
  const SampleSet loaded = load_dataset(manifest);
  REQUIRE(loaded.size() == set.size());
  CHECK(loaded.dim == set.dim);
  CHECK(loaded.num_classes == set.num_classes);
  CHECK(loaded.provenance == set.provenance);
  for (std::size_t i = 0; i < set.size(); ++i) {
    CHECK(loaded.samples[i].label == set.samples[i].label);
    CHECK(std::memcmp(loaded.samples[i].x.mat().data(), set.samples[i].x.mat().data(),
                      sizeof(double) * 36) == 0);
  }
}

TEST_CASE("frames mode applies covariance pooling at load time") {
  const fs::path dir = temp_dir("frames");
  // The 2-frame worked example: descriptor [[2.004, 2], [2, 2.004]].
  Eigen::MatrixXd frames(2, 2);
  frames << 1.0, 0.0, 3.0, 2.0;
  FrameData fd;
  fd.dim = 2;
  fd.num_classes = 2;
  fd.sets.emplace_back(frames);
  fd.labels.push_back(1);
  const fs::path manifest = save_frames_dataset(dir, fd);
  const SampleSet loaded = load_dataset(manifest);
  REQUIRE(loaded.size() == 1);
  CHECK(loaded.samples[0].label == 1);
  const double diag = 2.0 + 4.0 * 1e-3;
  CHECK(std::abs(loaded.samples[0].x.mat()(0, 0) - diag) < 1e-15);
  CHECK(std::abs(loaded.samples[0].x.mat()(0, 1) - 2.0) < 1e-15);
}

TEST_CASE("manifest parse errors name the offending record") {
  const fs::path dir = temp_dir("parse");
  fs::create_directories(dir / "samples");
  write_matrix_sample(dir / "samples" / "s0.bin", oracle::random_spd(2, 1));

  SECTION("label out of range") {
    std::ofstream os(dir / "m.txt");
    os << "mode: matrix\ndim: 2\nclasses: 2\nsamples/s0.bin,5\n";
    os.close();
    CHECK_THROWS_WITH(load_dataset(dir / "m.txt"),
                      ContainsSubstring("samples/s0.bin") && ContainsSubstring("label 5"));
  }
  SECTION("record before header") {
    std::ofstream os(dir / "m.txt");
    os << "samples/s0.bin,0\nmode: matrix\ndim: 2\nclasses: 2\n";
    os.close();
    CHECK_THROWS_AS(load_dataset(dir / "m.txt"), ParseError);
  }
  SECTION("unknown header key") {
    std::ofstream os(dir / "m.txt");
    os << "mode: matrix\ndim: 2\nclasses: 2\nshape: round\nsamples/s0.bin,0\n";
    os.close();
    CHECK_THROWS_AS(load_dataset(dir / "m.txt"), ParseError);
  }
  SECTION("non-integer label") {
    std::ofstream os(dir / "m.txt");
    os << "mode: matrix\ndim: 2\nclasses: 2\nsamples/s0.bin,zebra\n";
    os.close();
    CHECK_THROWS_AS(load_dataset(dir / "m.txt"), ParseError);
  }
  SECTION("missing sample file") {
    std::ofstream os(dir / "m.txt");
    os << "mode: matrix\ndim: 2\nclasses: 2\nsamples/absent.bin,0\n";
    os.close();
    CHECK_THROWS_AS(load_dataset(dir / "m.txt"), IoError);
  }
}

TEST_CASE("truncated sample files raise ShapeError") {
  const fs::path dir = temp_dir("trunc");
  fs::create_directories(dir / "samples");
  std::ofstream(dir / "samples" / "s0.bin", std::ios::binary) << "short";
  std::ofstream os(dir / "m.txt");
  os << "mode: matrix\ndim: 2\nclasses: 2\nsamples/s0.bin,0\n";
  os.close();
  CHECK_THROWS_AS(load_dataset(dir / "m.txt"), ShapeError);
}

TEST_CASE("non-SPD matrix samples are rejected with the sample named") {
  const fs::path dir = temp_dir("notspd");
  fs::create_directories(dir / "samples");
  Eigen::MatrixXd bad(2, 2);
  bad << 1.0, 0.0, 0.0, -1.0;
  write_matrix_sample(dir / "samples" / "s0.bin", bad);
  std::ofstream os(dir / "m.txt");
  os << "mode: matrix\ndim: 2\nclasses: 2\nsamples/s0.bin,0\n";
  os.close();
  CHECK_THROWS_WITH(load_dataset(dir / "m.txt"), ContainsSubstring("samples/s0.bin"));
}

TEST_CASE("degenerate frame sets are rejected with the sample named") {
  const fs::path dir = temp_dir("degenerate");
  fs::create_directories(dir / "samples");
  FrameData fd;
  fd.dim = 2;
  fd.num_classes = 2;
  fd.sets.emplace_back(Eigen::MatrixXd::Constant(3, 2, 4.0));
  fd.labels.push_back(0);
  const fs::path manifest = save_frames_dataset(dir, fd);
  CHECK_THROWS_AS(load_dataset(manifest), DegenerateSet);
}

TEST_CASE("stratified split: 70/30 over balanced classes") {
  SynthSpec spec = small_spec();
  spec.sets_per_class = 10;
  const SampleSet set = synth_generate(spec);
  const auto [train, test] = split(set, 0.7, 11);
  CHECK(train.size() == 21);
  CHECK(test.size() == 9);
  std::vector<int> train_counts(3, 0), test_counts(3, 0);
  for (const Sample& s : train.samples) ++train_counts[s.label];
  for (const Sample& s : test.samples) ++test_counts[s.label];
  for (int k = 0; k < 3; ++k) {
    CHECK(train_counts[k] == 7);
    CHECK(test_counts[k] == 3);
  }
}

TEST_CASE("split keeps both sides non-empty for 2-sample classes") {
  const std::vector<int> labels{0, 0};
  const auto [tr, te] = split_indices(labels, 1, 0.5, 3);
  CHECK(tr.size() == 1);
  CHECK(te.size() == 1);
}

TEST_CASE("split is deterministic per seed and partitions the set") {
  const SampleSet set = synth_generate(small_spec());
  const auto [a_train, a_test] = split(set, 0.7, 42);
  const auto [b_train, b_test] = split(set, 0.7, 42);
  REQUIRE(a_train.size() == b_train.size());
  for (std::size_t i = 0; i < a_train.size(); ++i) {
    CHECK(a_train.samples[i].label == b_train.samples[i].label);
    CHECK(a_train.samples[i].x.mat() == b_train.samples[i].x.mat());
  }
  CHECK(a_train.size() + a_test.size() == set.size());
}

TEST_CASE("split rejects classes with fewer than two samples") {
  const std::vector<int> labels{0, 0, 1};
  CHECK_THROWS_AS(split_indices(labels, 2, 0.7, 1), TooFew);
  CHECK_THROWS_AS(split_indices(labels, 2, 1.5, 1), BadConfig);
}

TEST_CASE("batch_indices covers every index exactly once") {
  const auto batches = batch_indices(300, 30, 7);
  REQUIRE(batches.size() == 10);
  std::set<std::size_t> seen;
  for (const auto& b : batches) {
    CHECK(b.size() == 30);
    seen.insert(b.begin(), b.end());
  }
  CHECK(seen.size() == 300);
}

TEST_CASE("batch_indices with oversized batches yields one batch; short tail kept") {
  CHECK(batch_indices(7, 30, 1).size() == 1);
  const auto batches = batch_indices(7, 3, 1);
  REQUIRE(batches.size() == 3);
  CHECK(batches.back().size() == 1);
  CHECK_THROWS_AS(batch_indices(7, 0, 1), BadConfig);
}

TEST_CASE("batch_indices is deterministic per epoch seed") {
  CHECK(batch_indices(50, 8, 3) == batch_indices(50, 8, 3));
  CHECK(batch_indices(50, 8, 3) != batch_indices(50, 8, 4));
}
