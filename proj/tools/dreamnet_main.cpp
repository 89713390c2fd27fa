// dreamnet CLI: synthesize data, train, evaluate, gradient-check, and
// inspect feature statistics.
//
// Exit codes: 0 success, 1 usage/config error, 2 runtime failure,
// 3 gradcheck failure.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dreamnet/dreamnet.hpp"

namespace fs = std::filesystem;
using namespace dreamnet;

namespace {

// Errors thrown once a command's inputs have been validated and the main
// computation is underway; mapped to exit code 2 instead of 1.
struct RuntimeFailure {
  std::string message;
};

template <class F>
auto run_phase(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw RuntimeFailure{e.what()};
  }
}

struct ModelFlags {
  std::vector<int> backbone;
  int num_rae = 3;
  int rae_dim = 0;  // 0: use the last backbone dim
  double epsilon = 1e-4;
  double lambda_rt = 1e-4;
  bool no_shortcuts = false;
  std::string heads = "all-stages";
  std::string rt_mode = "final-only";
  std::string rt_metric = "euclidean";

  void add_to(CLI::App& cmd) {
    cmd.add_option("--backbone", backbone, "Backbone dims, input first (e.g. 20,16,12)")
        ->delimiter(',');
    cmd.add_option("--rae-stages", num_rae, "Number of autoencoder stages E");
    cmd.add_option("--rae-dim", rae_dim, "Stage hidden dim d_e (default: last backbone dim)");
    cmd.add_option("--eps", epsilon, "ReEig rectification threshold");
    cmd.add_option("--lambda-rt", lambda_rt, "Reconstruction term weight");
    cmd.add_flag("--no-shortcuts", no_shortcuts, "Disable shortcut connections");
    cmd.add_option("--heads", heads, "Classifier placement: all-stages|final-only")
        ->check(CLI::IsMember({"all-stages", "final-only"}));
    cmd.add_option("--rt-mode", rt_mode, "Reconstruction term scope: final-only|all-stages")
        ->check(CLI::IsMember({"final-only", "all-stages"}));
    cmd.add_option("--rt-metric", rt_metric, "Reconstruction metric: euclidean|log-euclidean")
        ->check(CLI::IsMember({"euclidean", "log-euclidean"}));
  }

  ModelConfig to_config(int num_classes, std::uint64_t seed) const {
    ModelConfig c = afew_preset();  // paper defaults
    if (!backbone.empty()) c.backbone_dims = backbone;
    c.rae_hidden_dim = rae_dim > 0 ? rae_dim : c.backbone_dims.back();
    c.num_rae = num_rae;
    c.num_classes = num_classes;
    c.epsilon = epsilon;
    c.lambda_rt = lambda_rt;
    c.shortcuts_enabled = !no_shortcuts;
    c.heads = heads == "all-stages" ? HeadMode::kAllStages : HeadMode::kFinalOnly;
    c.rt_mode = rt_mode == "final-only" ? RtMode::kFinalOnly : RtMode::kAllStages;
    c.rt_metric = rt_metric == "euclidean" ? RtMetric::kEuclidean : RtMetric::kLogEuclidean;
    c.seed = seed;
    c.validate();
    return c;
  }
};

int cmd_synth(const SynthSpec& spec, const fs::path& out, const std::string& mode,
              double split_fraction, std::uint64_t split_seed) {
  spec.validate();
  return run_phase([&] {
    fs::create_directories(out);
    std::vector<int> labels;
    fs::path manifest;
    if (mode == "frames") {
      const FrameData fd = synth_frames(spec);
      manifest = save_frames_dataset(out, fd);
      labels = fd.labels;
      std::cout << "wrote " << fd.sets.size() << " frame sets, dim " << fd.dim << ", "
                << fd.num_classes << " classes -> " << manifest << "\n";
      if (split_fraction > 0.0) {
        const auto [tr, te] = split_indices(labels, fd.num_classes, split_fraction, split_seed);
        auto subset = [&](const std::vector<std::size_t>& idx) {
          std::vector<std::pair<std::string, int>> recs;
          for (std::size_t i : idx)
            recs.emplace_back("samples/s" + std::to_string(i) + ".bin", labels[i]);
          return recs;
        };
        write_manifest(out / "manifest_train.txt", DatasetMode::kFrames, fd.dim, fd.num_classes,
                       fd.provenance, subset(tr));
        write_manifest(out / "manifest_test.txt", DatasetMode::kFrames, fd.dim, fd.num_classes,
                       fd.provenance, subset(te));
        std::cout << "split " << tr.size() << "/" << te.size() << " -> manifest_train.txt, "
                  << "manifest_test.txt\n";
      }
    } else {
      const SampleSet set = synth_generate(spec);
      manifest = save_dataset(out, set);
      for (const Sample& s : set.samples) labels.push_back(s.label);
      std::cout << "wrote " << set.size() << " samples, dim " << set.dim << ", "
                << set.num_classes << " classes -> " << manifest << "\n";
      if (split_fraction > 0.0) {
        const auto [tr, te] = split_indices(labels, set.num_classes, split_fraction, split_seed);
        auto subset = [&](const std::vector<std::size_t>& idx) {
          std::vector<std::pair<std::string, int>> recs;
          for (std::size_t i : idx)
            recs.emplace_back("samples/s" + std::to_string(i) + ".bin", labels[i]);
          return recs;
        };
        write_manifest(out / "manifest_train.txt", DatasetMode::kMatrix, set.dim,
                       set.num_classes, set.provenance, subset(tr));
        write_manifest(out / "manifest_test.txt", DatasetMode::kMatrix, set.dim, set.num_classes,
                       set.provenance, subset(te));
        std::cout << "split " << tr.size() << "/" << te.size() << " -> manifest_train.txt, "
                  << "manifest_test.txt\n";
      }
    }
    return 0;
  });
}

int cmd_train(const fs::path& data, const fs::path& out, const ModelFlags& flags,
              std::uint64_t seed, int epochs, int batch_size, double lr, double decay_factor,
              long decay_period, int eval_every, const std::optional<fs::path>& resume) {
  const SampleSet train_set = load_dataset(data);
  if (train_set.empty()) throw TooFew("train: dataset " + data.string() + " is empty");

  TrainOptions options;
  options.out_dir = out;
  options.model = flags.to_config(train_set.num_classes, seed);
  options.epochs = epochs;
  options.batch_size = batch_size;
  options.learning_rate = lr;
  options.decay_factor = decay_factor;
  options.decay_period = decay_period;
  options.eval_every = eval_every;
  options.resume = resume;
  options.validate();

  return run_phase([&] {
    const TrainResult result = train_run(options, train_set, std::cout);
    std::cout << "trained " << options.epochs << " epochs in " << result.total_seconds
              << "s; best vote accuracy " << result.best_vote_acc << "\n"
              << "metrics: " << result.metrics_path << "\n"
              << "checkpoints: " << result.best_path << ", " << result.final_path << "\n";
    return 0;
  });
}

int cmd_eval(const fs::path& checkpoint, const fs::path& data,
             const std::optional<fs::path>& out_json) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  const SampleSet set = load_dataset(data);
  if (set.empty()) throw TooFew("eval: dataset " + data.string() + " is empty");
  if (set.dim != ck.model.config.input_dim()) {
    throw ShapeError("eval: dataset dim " + std::to_string(set.dim) + " != model input dim " +
                     std::to_string(ck.model.config.input_dim()));
  }
  return run_phase([&] {
    const EvalResult r = evaluate(ck.model, set);
    std::cout << "n=" << r.n << "  vote_acc=" << r.vote_acc << "\n";
    for (std::size_t i = 0; i < r.head_acc.size(); ++i) {
      std::cout << "head[" << i << "] acc=" << r.head_acc[i] << "\n";
    }
    std::cout << "confusion (rows: true, cols: voted):\n" << r.confusion << "\n";
    const nlohmann::json rec = eval_to_json(r);
    if (out_json) {
      std::ofstream os(*out_json, std::ios::trunc);
      if (!os) throw IoError("cannot open " + out_json->string());
      os << rec.dump() << "\n";
      std::cout << "wrote " << *out_json << "\n";
    } else {
      std::cout << rec.dump() << "\n";
    }
    return 0;
  });
}

int cmd_gradcheck(const std::string& layer_filter, int trials, double tol_override,
                  double model_tol, double h) {
  const std::vector<std::pair<std::string, double>> suites{{"bimap", 1e-7},
                                                           {"reeig", 1e-6},
                                                           {"logeig", 1e-6},
                                                           {"shortcut", 1e-12},
                                                           {"head", 1e-7}};
  bool all_passed = true;
  std::cout << std::left << std::setw(14) << "suite" << std::setw(10) << "blocks"
            << std::setw(14) << "max rel err" << std::setw(12) << "tolerance"
            << "status\n";
  auto print_row = [&](const std::string& name, const gradcheck::CheckReport& r) {
    std::cout << std::left << std::setw(14) << name << std::setw(10) << r.blocks.size()
              << std::setw(14) << std::scientific << std::setprecision(2) << r.max_rel_error
              << std::setw(12) << r.tolerance << (r.passed ? "pass" : "FAIL") << "\n"
              << std::defaultfloat;
    if (!r.passed) {
      for (const auto& b : r.blocks) {
        if (!b.passed) {
          std::cout << "  " << b.name << ": rel err " << std::scientific << b.rel_error
                    << std::defaultfloat << "\n";
        }
      }
    }
  };

  return run_phase([&] {
    for (const auto& [name, default_tol] : suites) {
      if (!layer_filter.empty() && layer_filter != name) continue;
      const double tol = tol_override > 0.0 ? tol_override : default_tol;
      const gradcheck::CheckReport r = gradcheck::check_layer(name, trials, tol, h);
      print_row(name, r);
      all_passed = all_passed && r.passed;
    }
    if (layer_filter.empty()) {
      ModelConfig tiny;
      tiny.backbone_dims = {8, 6, 4};
      tiny.num_rae = 2;
      tiny.rae_hidden_dim = 4;
      tiny.num_classes = 3;
      tiny.lambda_rt = 1e-2;
      tiny.seed = 5;
      const double tol = tol_override > 0.0 ? tol_override : model_tol;
      const gradcheck::CheckReport r = gradcheck::check_model(tiny, 2, tol, h);
      print_row("model", r);
      all_passed = all_passed && r.passed;
    }
    return all_passed ? 0 : 3;
  });
}

int cmd_inspect(const fs::path& checkpoint, const fs::path& data, const fs::path& out_csv) {
  LoadedCheckpoint ck = load_checkpoint(checkpoint);
  const SampleSet set = load_dataset(data);
  if (set.empty()) throw TooFew("inspect: dataset " + data.string() + " is empty");
  if (set.dim != ck.model.config.input_dim()) {
    throw ShapeError("inspect: dataset dim " + std::to_string(set.dim) + " != model input dim " +
                     std::to_string(ck.model.config.input_dim()));
  }
  return run_phase([&] {
    std::ofstream os(out_csv, std::ios::trunc);
    if (!os) throw IoError("cannot open " + out_csv.string());
    write_inspect_csv(ck.model, set, os);
    std::cout << "wrote " << out_csv << " (" << set.size() << " samples, "
              << ck.model.config.num_rae + 2 << " layers)\n";
    return 0;
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dreamnet: deep SPD-manifold networks with stacked Riemannian autoencoders"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic SPD classification dataset");
  synth->set_config("--config");
  SynthSpec spec;
  fs::path synth_out;
  std::string synth_mode = "matrix";
  double split_fraction = 0.0;
  std::uint64_t split_seed = 0;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--dim", spec.dim, "Frame dimension");
  synth->add_option("--classes", spec.num_classes, "Number of classes");
  synth->add_option("--sets-per-class", spec.sets_per_class, "Frame sets per class");
  synth->add_option("--frames", spec.frames_per_set, "Frames per set");
  synth->add_option("--separation", spec.separation, "Class separation (0 = indistinguishable)");
  synth->add_option("--seed", spec.seed, "Generator seed");
  synth->add_option("--mode", synth_mode, "Sample file format: matrix|frames")
      ->check(CLI::IsMember({"matrix", "frames"}));
  synth->add_option("--split", split_fraction,
                    "Also write manifest_train/manifest_test at this train fraction");
  synth->add_option("--split-seed", split_seed, "Seed for the stratified split");

  // train
  auto* train = app.add_subcommand("train", "Train a model on a dataset manifest");
  train->set_config("--config");
  fs::path train_data, train_out;
  ModelFlags train_flags;
  std::uint64_t train_seed = 0;
  int epochs = 200, batch_size = 30, eval_every = 1;
  double lr = 0.01, decay_factor = 1.0;
  long decay_period = 0;
  std::string resume_str;
  train->add_option("--data", train_data, "Dataset manifest")->required();
  train->add_option("--out", train_out, "Output directory")->required();
  train_flags.add_to(*train);
  train->add_option("--seed", train_seed, "Init and shuffling seed");
  train->add_option("--epochs", epochs, "Training epochs");
  train->add_option("--batch-size", batch_size, "Batch size B");
  train->add_option("--lr", lr, "Learning rate eta");
  train->add_option("--decay-factor", decay_factor, "Learning-rate decay factor");
  train->add_option("--decay-period", decay_period, "Decay period in epochs (0 = constant)");
  train->add_option("--eval-every", eval_every, "Metrics-record period in epochs");
  train->add_option("--resume", resume_str, "Resume from a checkpoint");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval->set_config("--config");
  fs::path eval_ckpt, eval_data;
  std::string eval_out;
  eval->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();
  eval->add_option("--data", eval_data, "Dataset manifest")->required();
  eval->add_option("--out", eval_out, "Write the JSON record here (default: stdout)");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference checks of every backward pass");
  gc->set_config("--config");
  std::string gc_layer;
  int gc_trials = 20;
  double gc_tol = 0.0, gc_model_tol = 1e-4, gc_h = 1e-5;
  gc->add_option("--layer", gc_layer, "Run a single suite: bimap|reeig|logeig|shortcut|head")
      ->check(CLI::IsMember({"bimap", "reeig", "logeig", "shortcut", "head"}));
  gc->add_option("--trials", gc_trials, "Random instances per layer suite");
  gc->add_option("--tol", gc_tol, "Override every suite tolerance");
  gc->add_option("--model-tol", gc_model_tol, "Tolerance for the whole-model check");
  gc->add_option("--fd-step", gc_h, "Central-difference step");

  // inspect
  auto* inspect = app.add_subcommand("inspect", "Per-layer nuclear norms of feature maps");
  inspect->set_config("--config");
  fs::path ins_ckpt, ins_data, ins_out;
  inspect->add_option("--checkpoint", ins_ckpt, "Model checkpoint")->required();
  inspect->add_option("--data", ins_data, "Dataset manifest")->required();
  inspect->add_option("--out", ins_out, "Output CSV path")->required();

  try {
    app.parse(argc, argv);
    if (synth->parsed()) {
      return cmd_synth(spec, synth_out, synth_mode, split_fraction, split_seed);
    }
    if (train->parsed()) {
      std::optional<fs::path> resume;
      if (!resume_str.empty()) resume = fs::path(resume_str);
      return cmd_train(train_data, train_out, train_flags, train_seed, epochs, batch_size, lr,
                       decay_factor, decay_period, eval_every, resume);
    }
    if (eval->parsed()) {
      std::optional<fs::path> out;
      if (!eval_out.empty()) out = fs::path(eval_out);
      return cmd_eval(eval_ckpt, eval_data, out);
    }
    if (gc->parsed()) {
      return cmd_gradcheck(gc_layer, gc_trials, gc_tol, gc_model_tol, gc_h);
    }
    if (inspect->parsed()) {
      return cmd_inspect(ins_ckpt, ins_data, ins_out);
    }
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // --help is a success
  } catch (const RuntimeFailure& e) {
    std::cerr << "error: " << e.message << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
