#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "dreamnet/errors.hpp"
#include "dreamnet/spd_core.hpp"
#include "dreamnet/sym_matrix.hpp"

namespace dreamnet {

static_assert(std::endian::native == std::endian::little,
              "sample files are little-endian; this build targets LE hosts");

struct Sample {
  SpdMatrix x;
  int label = 0;
};

/// Labeled collection of SPD descriptors sharing one dimension.
struct SampleSet {
  std::vector<Sample> samples;
  int dim = 0;
  int num_classes = 0;
  std::string provenance;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

/// splitmix64; used to derive independent stream seeds from one master seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Synthetic class-conditional SPD generator. Class k draws frame sets from a
// zero-mean Gaussian with covariance  base + separation * u_k u_k^T, where
// base is a seeded random SPD matrix and u_k a class-specific unit vector.
// ---------------------------------------------------------------------------

struct SynthSpec {
  int dim = 20;
  int num_classes = 3;
  int sets_per_class = 100;
  int frames_per_set = 80;
  double separation = 1.0;
  std::uint64_t seed = 42;

  void validate() const {
    if (dim < 1) throw BadConfig("SynthSpec: dim must be positive");
    if (num_classes < 1) throw BadConfig("SynthSpec: num_classes must be positive");
    if (sets_per_class < 1) throw BadConfig("SynthSpec: sets_per_class must be positive");
    if (frames_per_set < 2) throw BadConfig("SynthSpec: frames_per_set must be >= 2");
    if (separation < 0.0) throw BadConfig("SynthSpec: separation must be >= 0");
  }

  std::string provenance_tag() const {
    if (separation == 0.0) return "null-separation";
    std::ostringstream os;
    os << "synthetic(dim=" << dim << ",classes=" << num_classes << ",sep=" << separation
       << ",seed=" << seed << ")";
    return os.str();
  }
};

/// Frame sets plus labels, before covariance pooling. Kept separate so the
/// CLI can emit either raw frames or pooled descriptors.
struct FrameData {
  std::vector<FrameSet> sets;
  std::vector<int> labels;
  int dim = 0;
  int num_classes = 0;
  std::string provenance;
};

inline FrameData synth_frames(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto draw_matrix = [&](Eigen::Index r, Eigen::Index c) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = gauss(rng);
    return m;
  };

  // Shared SPD base covariance.
  const Eigen::MatrixXd g = draw_matrix(spec.dim, spec.dim);
  const Eigen::MatrixXd base = g * g.transpose() / spec.dim +
                               Eigen::MatrixXd::Identity(spec.dim, spec.dim);

  // Per-class rank-1 bumps.
  std::vector<Eigen::MatrixXd> chol;
  chol.reserve(spec.num_classes);
  for (int k = 0; k < spec.num_classes; ++k) {
    Eigen::VectorXd u = draw_matrix(spec.dim, 1);
    u.normalize();
    const Eigen::MatrixXd cov = base + spec.separation * (u * u.transpose());
    chol.push_back(Eigen::LLT<Eigen::MatrixXd>(cov).matrixL());
  }

  FrameData out;
  out.dim = spec.dim;
  out.num_classes = spec.num_classes;
  out.provenance = spec.provenance_tag();
  for (int k = 0; k < spec.num_classes; ++k) {
    for (int s = 0; s < spec.sets_per_class; ++s) {
      Eigen::MatrixXd frames(spec.frames_per_set, spec.dim);
      for (int f = 0; f < spec.frames_per_set; ++f) {
        frames.row(f) = (chol[k] * draw_matrix(spec.dim, 1)).transpose();
      }
      out.sets.emplace_back(std::move(frames));
      out.labels.push_back(k);
    }
  }
  return out;
}

/// Covariance pooling of every frame set.
inline SampleSet pool_descriptors(const FrameData& frames) {
  SampleSet out;
  out.dim = frames.dim;
  out.num_classes = frames.num_classes;
  out.provenance = frames.provenance;
  out.samples.reserve(frames.sets.size());
  for (std::size_t i = 0; i < frames.sets.size(); ++i) {
    out.samples.push_back({covariance_descriptor(frames.sets[i]), frames.labels[i]});
  }
  return out;
}

inline SampleSet synth_generate(const SynthSpec& spec) { return pool_descriptors(synth_frames(spec)); }

// ---------------------------------------------------------------------------
// On-disk format. Manifest: a header block of `key: value` lines (mode, dim,
// classes, optional provenance) followed by one `path,label` record per
// sample, paths relative to the manifest. Sample files hold raw row-major
// 64-bit little-endian floats; frames mode prefixes an 8-byte LE count.
// ---------------------------------------------------------------------------

namespace io_detail {

inline void write_doubles(std::ofstream& os, const double* data, std::size_t count) {
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 8));
}

inline std::vector<double> read_doubles(std::ifstream& is, std::size_t count,
                                        const std::string& path) {
  std::vector<double> buf(count);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count * 8));
  if (static_cast<std::size_t>(is.gcount()) != count * 8) {
    throw ShapeError("sample file " + path + " is shorter than its declared shape");
  }
  return buf;
}

inline Eigen::MatrixXd to_row_major_matrix(const std::vector<double>& buf, Eigen::Index rows,
                                           Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = buf[i * cols + j];
  return m;
}

inline void write_row_major(std::ofstream& os, const Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      write_doubles(os, &v, 1);
    }
  }
}

}  // namespace io_detail

inline void write_matrix_sample(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  io_detail::write_row_major(os, m);
  if (!os) throw IoError("short write to " + path.string());
}

inline void write_frames_sample(const std::filesystem::path& path, const FrameSet& frames) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  const std::uint64_t n = static_cast<std::uint64_t>(frames.n_frames());
  os.write(reinterpret_cast<const char*>(&n), 8);
  io_detail::write_row_major(os, frames.frames());
  if (!os) throw IoError("short write to " + path.string());
}

enum class DatasetMode { kMatrix, kFrames };

/// Writes one manifest: header block, then `path,label` records.
inline void write_manifest(const std::filesystem::path& path, DatasetMode mode, int dim,
                           int classes, const std::string& provenance,
                           const std::vector<std::pair<std::string, int>>& records) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "mode: " << (mode == DatasetMode::kMatrix ? "matrix" : "frames") << "\n"
     << "dim: " << dim << "\n"
     << "classes: " << classes << "\n";
  if (!provenance.empty()) os << "provenance: " << provenance << "\n";
  for (const auto& [rel, label] : records) os << rel << "," << label << "\n";
  if (!os) throw IoError("short write to " + path.string());
}

/// Writes a manifest plus one sample file per descriptor (matrix mode).
/// Returns the manifest path.
inline std::filesystem::path save_dataset(const std::filesystem::path& dir, const SampleSet& set,
                                          const std::string& manifest_name = "manifest.txt") {
  std::filesystem::create_directories(dir / "samples");
  std::vector<std::pair<std::string, int>> records;
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    std::string name = "samples/s" + std::to_string(i) + ".bin";
    write_matrix_sample(dir / name, set.samples[i].x.mat());
    records.emplace_back(std::move(name), set.samples[i].label);
  }
  const std::filesystem::path manifest = dir / manifest_name;
  write_manifest(manifest, DatasetMode::kMatrix, set.dim, set.num_classes, set.provenance,
                 records);
  return manifest;
}

/// Frames-mode counterpart of save_dataset.
inline std::filesystem::path save_frames_dataset(
    const std::filesystem::path& dir, const FrameData& data,
    const std::string& manifest_name = "manifest.txt") {
  std::filesystem::create_directories(dir / "samples");
  std::vector<std::pair<std::string, int>> records;
  for (std::size_t i = 0; i < data.sets.size(); ++i) {
    std::string name = "samples/s" + std::to_string(i) + ".bin";
    write_frames_sample(dir / name, data.sets[i]);
    records.emplace_back(std::move(name), data.labels[i]);
  }
  const std::filesystem::path manifest = dir / manifest_name;
  write_manifest(manifest, DatasetMode::kFrames, data.dim, data.num_classes, data.provenance,
                 records);
  return manifest;
}

inline SampleSet load_dataset(const std::filesystem::path& manifest_path) {
  std::ifstream is(manifest_path);
  if (!is) throw IoError("cannot open manifest " + manifest_path.string());
  const std::filesystem::path base_dir = manifest_path.parent_path();

  SampleSet set;
  DatasetMode mode = DatasetMode::kMatrix;
  bool have_mode = false, have_dim = false, have_classes = false;
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };

  while (std::getline(is, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto where = [&] { return manifest_path.string() + ":" + std::to_string(line_no); };

    const auto colon = line.find(':');
    const bool looks_like_header =
        colon != std::string::npos &&
        line.find(',') > colon;  // commas may appear inside a header value
    if (looks_like_header) {
      const std::string key = trim(line.substr(0, colon));
      const std::string value = trim(line.substr(colon + 1));
      if (key == "mode") {
        if (value == "matrix") mode = DatasetMode::kMatrix;
        else if (value == "frames") mode = DatasetMode::kFrames;
        else throw ParseError(where() + ": unknown mode '" + value + "'");
        have_mode = true;
      } else if (key == "dim") {
        set.dim = std::stoi(value);
        have_dim = true;
      } else if (key == "classes") {
        set.num_classes = std::stoi(value);
        have_classes = true;
      } else if (key == "provenance") {
        set.provenance = value;
      } else {
        throw ParseError(where() + ": unknown header key '" + key + "'");
      }
      continue;
    }

    // Record line: path,label (label after the last comma).
    if (!have_mode || !have_dim || !have_classes) {
      throw ParseError(where() + ": record before complete header (mode/dim/classes)");
    }
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) {
      throw ParseError(where() + ": expected 'path,label', got '" + line + "'");
    }
    const std::string rel_path = trim(line.substr(0, comma));
    int label = 0;
    try {
      label = std::stoi(trim(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw ParseError(where() + ": label is not an integer in '" + line + "'");
    }
    if (label < 0 || label >= set.num_classes) {
      throw ParseError(where() + ": label " + std::to_string(label) + " outside [0, " +
                       std::to_string(set.num_classes) + ") for record '" + rel_path + "'");
    }
    const std::filesystem::path file = base_dir / rel_path;
    std::ifstream fs(file, std::ios::binary);
    if (!fs) throw IoError(where() + ": cannot open sample file " + file.string());

    const Eigen::Index d = set.dim;
    if (mode == DatasetMode::kMatrix) {
      const auto buf = io_detail::read_doubles(fs, static_cast<std::size_t>(d) * d, file.string());
      SymMatrix sym(io_detail::to_row_major_matrix(buf, d, d));
      if (!is_spd(sym, 0.0)) {
        throw NotSpd("sample '" + rel_path + "' (" + where() + ") is not SPD");
      }
      set.samples.push_back({SpdMatrix(std::move(sym)), label});
    } else {
      std::uint64_t n = 0;
      fs.read(reinterpret_cast<char*>(&n), 8);
      if (fs.gcount() != 8) throw ShapeError("sample file " + file.string() + " lacks frame count");
      if (n < 2) {
        throw ShapeError("sample '" + rel_path + "' declares " + std::to_string(n) +
                         " frames, need >= 2");
      }
      const auto buf =
          io_detail::read_doubles(fs, static_cast<std::size_t>(n) * d, file.string());
      FrameSet frames(io_detail::to_row_major_matrix(buf, static_cast<Eigen::Index>(n), d));
      try {
        set.samples.push_back({covariance_descriptor(frames), label});
      } catch (const DegenerateSet& e) {
        throw DegenerateSet("sample '" + rel_path + "' (" + where() + "): " + e.what());
      }
    }
  }
  return set;
}

// ---------------------------------------------------------------------------
// Splits and batches.
// ---------------------------------------------------------------------------

/// Deterministic in-place Fisher-Yates shuffle.
template <class T>
void seeded_shuffle(std::vector<T>& v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = v.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(v[i - 1], v[pick(rng)]);
  }
}

/// Stratified index split: per class, a seeded shuffle followed by a rounded
/// cut, clamped so both sides stay non-empty.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    const std::vector<int>& labels, int num_classes, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw BadConfig("split: train fraction must lie strictly between 0 and 1");
  }
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    by_class[labels[i]].push_back(i);
  }
  std::pair<std::vector<std::size_t>, std::vector<std::size_t>> out;
  for (int k = 0; k < num_classes; ++k) {
    auto& idx = by_class[k];
    if (idx.size() < 2) {
      throw TooFew("split: class " + std::to_string(k) + " has " + std::to_string(idx.size()) +
                   " samples, need >= 2");
    }
    seeded_shuffle(idx, mix_seed(seed, static_cast<std::uint64_t>(k)));
    const auto n = static_cast<long>(idx.size());
    long n_train = std::lround(train_fraction * static_cast<double>(n));
    n_train = std::clamp(n_train, 1L, n - 1);
    for (long i = 0; i < n; ++i) {
      (i < n_train ? out.first : out.second).push_back(idx[static_cast<std::size_t>(i)]);
    }
  }
  return out;
}

/// Stratified train/test split of a sample set.
inline std::pair<SampleSet, SampleSet> split(const SampleSet& set, double train_fraction,
                                             std::uint64_t seed) {
  std::vector<int> labels;
  labels.reserve(set.samples.size());
  for (const Sample& s : set.samples) labels.push_back(s.label);
  const auto [train_idx, test_idx] = split_indices(labels, set.num_classes, train_fraction, seed);
  SampleSet train, test;
  train.dim = test.dim = set.dim;
  train.num_classes = test.num_classes = set.num_classes;
  train.provenance = test.provenance = set.provenance;
  for (std::size_t i : train_idx) train.samples.push_back(set.samples[i]);
  for (std::size_t i : test_idx) test.samples.push_back(set.samples[i]);
  return {std::move(train), std::move(test)};
}

/// Seeded permutation chunked into batches of size B (last batch possibly
/// short). Every index appears exactly once.
inline std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                           std::uint64_t epoch_seed) {
  if (batch_size < 1) throw BadConfig("batch_indices: batch size must be >= 1");
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  seeded_shuffle(perm, epoch_seed);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(perm.begin() + static_cast<long>(start),
                         perm.begin() + static_cast<long>(end));
  }
  return batches;
}

}  // namespace dreamnet
