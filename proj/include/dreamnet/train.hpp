#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dreamnet/checkpoint.hpp"
#include "dreamnet/data.hpp"
#include "dreamnet/errors.hpp"
#include "dreamnet/network.hpp"
#include "dreamnet/optim.hpp"

namespace dreamnet {

struct EvalResult {
  std::vector<double> head_acc;
  double vote_acc = 0.0;
  double mean_loss = 0.0;
  double mean_rt = 0.0;
  Eigen::MatrixXi confusion;  // rows: true label, cols: voted label
  std::size_t n = 0;
};

/// Frozen-parameter evaluation: per-head accuracy, vote accuracy, mean
/// composite loss and reconstruction term, and the vote confusion matrix.
inline EvalResult evaluate(const Model& model, const SampleSet& set) {
  if (set.empty()) throw TooFew("evaluate: dataset is empty");
  if (set.dim != model.config.input_dim()) {
    throw ShapeError("evaluate: dataset dim " + std::to_string(set.dim) +
                     " != model input dim " + std::to_string(model.config.input_dim()));
  }
  const ModelConfig& cfg = model.config;
  EvalResult r;
  r.n = set.size();
  r.head_acc.assign(cfg.num_heads(), 0.0);
  r.confusion = Eigen::MatrixXi::Zero(cfg.num_classes, cfg.num_classes);

  for (const Sample& s : set.samples) {
    ForwardTrace t = forward(model, s.x, s.label);
    r.mean_loss += t.total_loss;
    r.mean_rt += t.rt;
    std::vector<Eigen::VectorXd> probs;
    for (int i = 0; i < cfg.num_heads(); ++i) {
      const Eigen::VectorXd& p = t.stages[cfg.head_stage(i)].head_probs;
      if (argmax_smallest(p) == s.label) r.head_acc[i] += 1.0;
      probs.push_back(p);
    }
    const VoteResult vote = vote_from_probs(std::move(probs));
    if (vote.label == s.label) r.vote_acc += 1.0;
    r.confusion(s.label, vote.label) += 1;
  }
  const double inv_n = 1.0 / static_cast<double>(r.n);
  for (double& a : r.head_acc) a *= inv_n;
  r.vote_acc *= inv_n;
  r.mean_loss *= inv_n;
  r.mean_rt *= inv_n;
  return r;
}

inline nlohmann::json eval_to_json(const EvalResult& r) {
  std::vector<std::vector<int>> confusion(r.confusion.rows());
  for (Eigen::Index i = 0; i < r.confusion.rows(); ++i) {
    confusion[i].assign(r.confusion.cols(), 0);
    for (Eigen::Index j = 0; j < r.confusion.cols(); ++j) confusion[i][j] = r.confusion(i, j);
  }
  return nlohmann::json{{"head_acc", r.head_acc},  {"vote_acc", r.vote_acc},
                        {"mean_loss", r.mean_loss}, {"rt", r.mean_rt},
                        {"confusion", confusion},   {"n", r.n}};
}

struct TrainOptions {
  std::filesystem::path out_dir;
  ModelConfig model;
  int epochs = 200;
  int batch_size = 30;
  double learning_rate = 0.01;
  double decay_factor = 1.0;   // 1.0 disables the schedule
  long decay_period = 0;       // in epochs
  int eval_every = 1;          // metrics-record period
  std::optional<std::filesystem::path> resume;

  void validate() const {
    model.validate();
    if (epochs < 1) throw BadConfig("train: epochs must be >= 1");
    if (batch_size < 1) throw BadConfig("train: batch size must be >= 1");
    if (learning_rate <= 0.0) throw BadConfig("train: learning rate must be positive");
    if (eval_every < 1) throw BadConfig("train: eval period must be >= 1");
    if (decay_period < 0) throw BadConfig("train: decay period must be >= 0");
  }
};

struct TrainResult {
  Model model;
  std::vector<nlohmann::json> records;
  std::filesystem::path metrics_path;
  std::filesystem::path best_path;
  std::filesystem::path final_path;
  double best_vote_acc = 0.0;
  double total_seconds = 0.0;
};

/// Deterministic stream id for the epoch shuffles, disjoint from the weight
/// initialization streams used by build().
inline std::uint64_t epoch_stream(int epoch) {
  return (1ULL << 32) + static_cast<std::uint64_t>(epoch);
}

/// Runs SGD training on train_set. Emits one JSON-lines metrics record per
/// eval period computed by the same frozen-parameter path as evaluate(), and
/// writes best-by-vote-accuracy and final checkpoints. Per-epoch wall times
/// go to the console stream only, so the metrics log is byte-reproducible
/// for a fixed (config, seed, platform).
inline TrainResult train_run(const TrainOptions& options, const SampleSet& train_set,
                             std::ostream& console) {
  options.validate();
  if (train_set.empty()) throw TooFew("train: dataset is empty");
  if (train_set.dim != options.model.input_dim()) {
    throw ShapeError("train: dataset dim " + std::to_string(train_set.dim) +
                     " != model input dim " + std::to_string(options.model.input_dim()));
  }
  if (train_set.num_classes != options.model.num_classes) {
    throw ShapeError("train: dataset has " + std::to_string(train_set.num_classes) +
                     " classes, model expects " + std::to_string(options.model.num_classes));
  }

  std::filesystem::create_directories(options.out_dir);
  const std::size_t n = train_set.size();
  const long steps_per_epoch =
      static_cast<long>((n + options.batch_size - 1) / static_cast<std::size_t>(options.batch_size));

  TrainResult result;
  int start_epoch = 0;
  OptimState state;
  state.learning_rate = options.learning_rate;
  state.decay_factor = options.decay_factor;
  state.decay_period = options.decay_period * steps_per_epoch;

  if (options.resume) {
    LoadedCheckpoint ck = load_checkpoint(*options.resume);
    result.model = std::move(ck.model);
    start_epoch = ck.meta.value("epoch", 0);
    state.step_count = ck.meta.value("step", 0L);
    result.best_vote_acc = ck.meta.value("best_vote_acc", 0.0);
  } else {
    result.model = build(options.model);
  }
  Model& model = result.model;
  const ParamRefs params = model.params();

  result.metrics_path = options.out_dir / "metrics.jsonl";
  result.best_path = options.out_dir / "best.ckpt";
  result.final_path = options.out_dir / "final.ckpt";
  std::ofstream metrics(result.metrics_path,
                        options.resume ? std::ios::app : std::ios::trunc);
  if (!metrics) throw IoError("cannot open " + result.metrics_path.string());

  const auto run_start = std::chrono::steady_clock::now();
  std::vector<Sample> batch;
  for (int epoch = start_epoch + 1; epoch <= options.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    const auto batches =
        batch_indices(n, static_cast<std::size_t>(options.batch_size),
                      mix_seed(model.config.seed, epoch_stream(epoch)));
    for (const auto& idx : batches) {
      batch.clear();
      for (std::size_t i : idx) batch.push_back(train_set.samples[i]);
      const double batch_loss = loss_and_grads(model, batch, model.config.lambda_rt);
      if (!std::isfinite(batch_loss)) {
        throw NonFinite("train: non-finite loss at epoch " + std::to_string(epoch));
      }
      sgd_step(params, state);
    }

    if (epoch % options.eval_every != 0 && epoch != options.epochs) continue;

    const EvalResult ev = evaluate(model, train_set);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    nlohmann::json rec{{"epoch", epoch},          {"train_loss", ev.mean_loss},
                       {"head_acc", ev.head_acc}, {"vote_acc", ev.vote_acc},
                       {"rt", ev.mean_rt},        {"lr", state.effective_lr()}};
    metrics << rec.dump() << "\n";
    metrics.flush();
    result.records.push_back(std::move(rec));

    console << "epoch " << epoch << "  loss=" << ev.mean_loss << "  vote_acc=" << ev.vote_acc
            << "  rt=" << ev.mean_rt << "  lr=" << state.effective_lr() << "  wall=" << wall
            << "s\n";

    nlohmann::json meta{{"epoch", epoch},
                        {"step", state.step_count},
                        {"best_vote_acc", std::max(result.best_vote_acc, ev.vote_acc)},
                        {"lr", state.effective_lr()}};
    if (ev.vote_acc > result.best_vote_acc) {
      result.best_vote_acc = ev.vote_acc;
      save_checkpoint(result.best_path, model, meta);
    }
    if (epoch == options.epochs) {
      save_checkpoint(result.final_path, model, meta);
    }
  }
  result.total_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - run_start).count();
  return result;
}

/// Per-sample, per-layer nuclear norms as CSV, with one trailing mean row
/// per layer.
inline void write_inspect_csv(const Model& model, const SampleSet& set, std::ostream& os) {
  if (set.empty()) throw TooFew("inspect: dataset is empty");
  os << "sample_id,layer,nuclear_norm\n";
  os << std::setprecision(17);
  std::vector<std::pair<std::string, double>> sums;
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    const auto stats = feature_stats(model, set.samples[i].x);
    if (sums.empty()) {
      sums = stats;
      for (auto& [name, v] : sums) v = 0.0;
    }
    for (std::size_t k = 0; k < stats.size(); ++k) {
      os << i << "," << stats[k].first << "," << stats[k].second << "\n";
      sums[k].second += stats[k].second;
    }
  }
  for (const auto& [name, total] : sums) {
    os << "mean," << name << "," << total / static_cast<double>(set.size()) << "\n";
  }
}

}  // namespace dreamnet
