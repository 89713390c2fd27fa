#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dreamnet/errors.hpp"
#include "dreamnet/network.hpp"

namespace dreamnet {

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return nlohmann::json{{"backbone_dims", c.backbone_dims},
                        {"num_rae", c.num_rae},
                        {"rae_hidden_dim", c.rae_hidden_dim},
                        {"num_classes", c.num_classes},
                        {"epsilon", c.epsilon},
                        {"lambda_rt", c.lambda_rt},
                        {"shortcuts_enabled", c.shortcuts_enabled},
                        {"heads", to_string(c.heads)},
                        {"rt_mode", to_string(c.rt_mode)},
                        {"rt_metric", to_string(c.rt_metric)},
                        {"seed", c.seed}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.backbone_dims = j.at("backbone_dims").get<std::vector<int>>();
    c.num_rae = j.at("num_rae").get<int>();
    c.rae_hidden_dim = j.at("rae_hidden_dim").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.epsilon = j.at("epsilon").get<double>();
    c.lambda_rt = j.at("lambda_rt").get<double>();
    c.shortcuts_enabled = j.at("shortcuts_enabled").get<bool>();
    const std::string heads = j.at("heads").get<std::string>();
    if (heads == "all-stages") c.heads = HeadMode::kAllStages;
    else if (heads == "final-only") c.heads = HeadMode::kFinalOnly;
    else throw ParseError("config: unknown heads mode '" + heads + "'");
    const std::string rt_mode = j.at("rt_mode").get<std::string>();
    if (rt_mode == "final-only") c.rt_mode = RtMode::kFinalOnly;
    else if (rt_mode == "all-stages") c.rt_mode = RtMode::kAllStages;
    else throw ParseError("config: unknown rt_mode '" + rt_mode + "'");
    const std::string rt_metric = j.at("rt_metric").get<std::string>();
    if (rt_metric == "euclidean") c.rt_metric = RtMetric::kEuclidean;
    else if (rt_metric == "log-euclidean") c.rt_metric = RtMetric::kLogEuclidean;
    else throw ParseError("config: unknown rt_metric '" + rt_metric + "'");
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace ckpt_detail {

constexpr char kMagic[4] = {'D', 'N', 'C', 'P'};
constexpr std::uint32_t kFormatVersion = 1;

struct NamedMatrix {
  std::string name;
  const Eigen::MatrixXd* m;
};

inline std::vector<NamedMatrix> matrix_table(const Model& model) {
  std::vector<NamedMatrix> table;
  for (std::size_t i = 0; i < model.backbone.size(); ++i) {
    table.push_back({"backbone." + std::to_string(i), &model.backbone[i].value});
  }
  for (std::size_t e = 0; e < model.encoders.size(); ++e) {
    table.push_back({"encoder." + std::to_string(e), &model.encoders[e].value});
    table.push_back({"decoder." + std::to_string(e), &model.decoders[e].value});
  }
  for (std::size_t i = 0; i < model.heads.size(); ++i) {
    table.push_back({"head." + std::to_string(i), &model.heads[i].projection});
  }
  return table;
}

inline void write_row_major(std::ofstream& os, const Eigen::MatrixXd& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      os.write(reinterpret_cast<const char*>(&v), 8);
    }
  }
}

inline Eigen::MatrixXd read_row_major(std::ifstream& is, Eigen::Index rows, Eigen::Index cols,
                                      const std::string& name) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      double v = 0;
      is.read(reinterpret_cast<char*>(&v), 8);
      if (is.gcount() != 8) {
        throw ParseError("checkpoint: truncated while reading matrix '" + name + "'");
      }
      m(i, j) = v;
    }
  }
  return m;
}

}  // namespace ckpt_detail

/// Writes a checkpoint: magic, format version, a JSON header echoing the
/// config plus caller metadata and the matrix manifest, then every weight
/// matrix as row-major 64-bit little-endian floats.
inline void save_checkpoint(const std::filesystem::path& path, const Model& model,
                            const nlohmann::json& meta = nlohmann::json::object()) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint " + path.string() + " for writing");

  nlohmann::json header;
  header["format_version"] = ckpt_detail::kFormatVersion;
  header["config"] = config_to_json(model.config);
  header["meta"] = meta;
  auto& matrices = header["matrices"] = nlohmann::json::array();
  const auto table = ckpt_detail::matrix_table(model);
  for (const auto& nm : table) {
    matrices.push_back({{"name", nm.name}, {"rows", nm.m->rows()}, {"cols", nm.m->cols()}});
  }
  const std::string header_str = header.dump();

  os.write(ckpt_detail::kMagic, 4);
  const std::uint32_t version = ckpt_detail::kFormatVersion;
  os.write(reinterpret_cast<const char*>(&version), 4);
  const std::uint64_t len = header_str.size();
  os.write(reinterpret_cast<const char*>(&len), 8);
  os.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& nm : table) ckpt_detail::write_row_major(os, *nm.m);
  if (!os) throw IoError("short write to checkpoint " + path.string());
}

struct LoadedCheckpoint {
  Model model;
  nlohmann::json meta;
};

/// Reads a checkpoint and validates the format version, the shape of every
/// matrix against the config, and the semi-orthogonality of BiMap weights.
inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());

  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, ckpt_detail::kMagic, 4) != 0) {
    throw ParseError("checkpoint " + path.string() + ": bad magic");
  }
  std::uint32_t version = 0;
  is.read(reinterpret_cast<char*>(&version), 4);
  if (version != ckpt_detail::kFormatVersion) {
    throw ParseError("checkpoint " + path.string() + ": unsupported format version " +
                     std::to_string(version));
  }
  std::uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&len), 8);
  std::string header_str(len, '\0');
  is.read(header_str.data(), static_cast<std::streamsize>(len));
  if (static_cast<std::uint64_t>(is.gcount()) != len) {
    throw ParseError("checkpoint " + path.string() + ": truncated header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_str);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint " + path.string() + ": header is not valid JSON: " + e.what());
  }

  LoadedCheckpoint out;
  out.model.config = config_from_json(header.at("config"));
  out.meta = header.value("meta", nlohmann::json::object());

  const ModelConfig& cfg = out.model.config;
  // Expected shapes, in file order.
  struct Expect {
    std::string name;
    Eigen::Index rows, cols;
  };
  std::vector<Expect> expected;
  for (std::size_t i = 0; i + 2 < cfg.backbone_dims.size(); ++i) {
    expected.push_back(
        {"backbone." + std::to_string(i), cfg.backbone_dims[i], cfg.backbone_dims[i + 1]});
  }
  for (int e = 0; e < cfg.num_rae; ++e) {
    expected.push_back({"encoder." + std::to_string(e), cfg.recon_dim(), cfg.hidden_dim()});
    expected.push_back({"decoder." + std::to_string(e), cfg.recon_dim(), cfg.hidden_dim()});
  }
  for (int i = 0; i < cfg.num_heads(); ++i) {
    expected.push_back({"head." + std::to_string(i), cfg.num_classes,
                        static_cast<Eigen::Index>(cfg.hidden_dim()) * cfg.hidden_dim()});
  }

  const auto& manifest = header.at("matrices");
  if (manifest.size() != expected.size()) {
    throw ShapeError("checkpoint " + path.string() + ": " + std::to_string(manifest.size()) +
                     " matrices, config implies " + std::to_string(expected.size()));
  }
  std::vector<Eigen::MatrixXd> loaded;
  for (std::size_t k = 0; k < expected.size(); ++k) {
    const auto& entry = manifest[k];
    const std::string name = entry.at("name").get<std::string>();
    const Eigen::Index rows = entry.at("rows").get<Eigen::Index>();
    const Eigen::Index cols = entry.at("cols").get<Eigen::Index>();
    if (name != expected[k].name || rows != expected[k].rows || cols != expected[k].cols) {
      throw ShapeError("checkpoint " + path.string() + ": matrix " + std::to_string(k) +
                       " is " + name + " " + std::to_string(rows) + "x" + std::to_string(cols) +
                       ", config expects " + expected[k].name + " " +
                       std::to_string(expected[k].rows) + "x" + std::to_string(expected[k].cols));
    }
    loaded.push_back(ckpt_detail::read_row_major(is, rows, cols, name));
  }

  auto take_stiefel = [&](std::size_t k) {
    StiefelParam p;
    p.value = std::move(loaded[k]);
    p.grad = Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols());
    const double gram_err =
        (p.value.transpose() * p.value -
         Eigen::MatrixXd::Identity(p.value.cols(), p.value.cols()))
            .norm();
    if (gram_err > 1e-10) {
      throw NotSpd("checkpoint " + path.string() + ": weight '" + expected[k].name +
                   "' violates semi-orthogonality (||W^T W - I|| = " + std::to_string(gram_err) +
                   ")");
    }
    return p;
  };

  std::size_t k = 0;
  for (std::size_t i = 0; i + 2 < cfg.backbone_dims.size(); ++i) {
    out.model.backbone.push_back(take_stiefel(k++));
  }
  for (int e = 0; e < cfg.num_rae; ++e) {
    out.model.encoders.push_back(take_stiefel(k++));
    out.model.decoders.push_back(take_stiefel(k++));
  }
  for (int i = 0; i < cfg.num_heads(); ++i) {
    out.model.heads.push_back(make_head(std::move(loaded[k++])));
  }
  return out;
}

}  // namespace dreamnet
