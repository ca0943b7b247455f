#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "viewset/config_io.hpp"
#include "viewset/io.hpp"
#include "viewset/retrieval.hpp"
#include "viewset/synthetic.hpp"
#include "viewset/training.hpp"

namespace viewset::cli {

namespace {

namespace fs = std::filesystem;

/// Bad flags, inconsistent configuration, failed preconditions.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainArgs {
  std::string config;
  std::string features, manifest, out;
  std::optional<std::size_t> views;
  std::optional<std::uint64_t> seed;
  bool freeze_adapter = false;
  bool pos_enc = false;
  bool cls_token = false;
  std::string target = "class";
  std::vector<std::string> settings;
};

struct EvalArgs {
  std::string checkpoint, features, manifest;
  std::string split = "test";
  std::size_t views = 0;
  std::string target = "class";
};

struct RetrieveArgs {
  std::string class_checkpoint, subclass_checkpoint, features, manifest, out;
  std::string split = "test";
};

struct ExportArgs {
  std::string checkpoint, features, manifest, shape_id, out;
};

struct SynthArgs {
  SyntheticConfig cfg;
  std::string features, manifest;
};

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw UsageError(std::string("missing --") + what);
  if (!fs::exists(path)) throw std::runtime_error(std::string(what) + " file '" + path + "' not found");
}

Dataset load_for_target(const std::string& features, const std::string& manifest,
                        const std::string& target) {
  Dataset data = io::load_dataset(features, manifest);
  if (target == "class") return data;
  if (target != "subcategory") throw UsageError("--target must be class or subcategory");
  if (!data.has_sublabels()) throw UsageError("--target subcategory needs a subcategory for every shape");
  return with_subcategory_labels(data);
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunConfig rc;
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw std::runtime_error("cannot open config '" + a.config + "'");
    try {
      parse_run_config(in, rc, a.config);
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
  }
  try {
    for (const auto& s : a.settings) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      apply_setting(rc, s.substr(0, eq), s.substr(eq + 1));
    }
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  if (!a.features.empty()) rc.features = a.features;
  if (!a.manifest.empty()) rc.manifest = a.manifest;
  if (!a.out.empty()) rc.out = a.out;
  if (a.views) {
    if (*a.views == 0) throw UsageError("--views must be at least 1");
    rc.train.views_per_shape = *a.views;
  }
  if (a.seed) rc.train.seed = *a.seed;
  if (a.freeze_adapter) rc.train.freeze_adapter = true;
  if (a.pos_enc) rc.model.use_position_encoding = true;
  if (a.cls_token) rc.model.use_class_token = true;
  if (rc.out.empty()) throw UsageError("missing --out");
  require_file(rc.features, "features");
  require_file(rc.manifest, "manifest");

  Dataset data = load_for_target(rc.features, rc.manifest, a.target);
  rc.model.dim_in = data.dim;
  rc.model.num_classes = data.num_classes();
  try {
    rc.model.validate();
    rc.train.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (data.train.empty()) throw UsageError("manifest has no train split");
  std::size_t min_views = SIZE_MAX;
  for (const auto* split : {&data.train, &data.val, &data.test})
    for (const auto& s : *split) min_views = std::min(min_views, s.num_views());
  if (rc.train.views_per_shape > min_views) {
    throw UsageError("views_per_shape " + std::to_string(rc.train.views_per_shape) +
                     " exceeds the smallest manifest row_count " + std::to_string(min_views));
  }
  if (rc.model.use_position_encoding) {
    const std::size_t m = rc.train.views_per_shape ? rc.train.views_per_shape : min_views;
    if (m > rc.model.max_views) {
      throw UsageError("view count " + std::to_string(m) + " exceeds max_views " +
                       std::to_string(rc.model.max_views));
    }
  }
  const auto& eval_set = !data.val.empty() ? data.val : (!data.test.empty() ? data.test : data.train);

  fs::create_directories(rc.out);
  std::ofstream log(fs::path(rc.out) / "train.log", std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write log in '" + rc.out + "'");
  std::istringstream echo(format_run_config(rc));
  for (std::string line; std::getline(echo, line);) log << "# " << line << '\n';
  log << "# target=" << a.target << '\n';
  log << "# epoch\tlr\ttrain_loss\teval_instance_acc\teval_class_acc\n";

  ViewSetModel model(rc.model, rc.train.seed + 3);
  TrainResult result = train(data.train, eval_set, model, rc.train, [&](const EpochRecord& r) {
    const std::string line = format_epoch_line(r);
    log << line << '\n';
    out << line << '\n';
  });
  log.flush();

  io::save_checkpoint(fs::path(rc.out) / "final.ckpt", model);
  io::save_checkpoint(fs::path(rc.out) / "best.ckpt", io::Checkpoint{rc.model, result.best_state});
  char buf[128];
  std::snprintf(buf, sizeof buf, "best epoch %zu: instance %.4f, best class %.4f\n",
                result.best_epoch, result.best_instance_accuracy, result.best_class_accuracy);
  out << buf;
  return kOk;
}

ViewSetModel load_checked(const std::string& path, std::size_t dim, const char* flag) {
  require_file(path, flag);
  ViewSetModel m = io::load_model(path);
  if (m.config().dim_in != dim) {
    throw UsageError(std::string("--") + flag + " expects feature width " +
                     std::to_string(m.config().dim_in) + " but the features have " +
                     std::to_string(dim));
  }
  return m;
}

Split split_arg(const std::string& s) {
  try {
    return parse_split(s);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Split split = split_arg(a.split);
  require_file(a.checkpoint, "checkpoint");
  require_file(a.features, "features");
  require_file(a.manifest, "manifest");
  Dataset data = load_for_target(a.features, a.manifest, a.target);
  ViewSetModel model = load_checked(a.checkpoint, data.dim, "checkpoint");
  const auto& shapes = data.split(split);
  for (const auto& s : shapes) {
    if (s.label >= model.config().num_classes) {
      throw UsageError("shape '" + s.shape_id + "' label exceeds the checkpoint's class count");
    }
  }
  const AccuracyReport r = evaluate(shapes, model, a.views);
  char buf[160];
  std::snprintf(buf, sizeof buf, "split\t%s\nshapes\t%zu\ninstance_accuracy\t%.4f\nclass_accuracy\t%.4f\n",
                to_string(split), r.total, r.instance_accuracy, r.class_accuracy);
  out << buf;
  return kOk;
}

int cmd_retrieve(const RetrieveArgs& a, std::ostream& out, std::ostream& err) {
  const Split split = split_arg(a.split);
  if (a.out.empty()) throw UsageError("missing --out");
  require_file(a.features, "features");
  require_file(a.manifest, "manifest");
  Dataset data = io::load_dataset(a.features, a.manifest);
  ViewSetModel cls_model = load_checked(a.class_checkpoint, data.dim, "class-checkpoint");
  const auto& shapes = data.split(split);
  if (shapes.empty()) throw UsageError(std::string("split '") + to_string(split) + "' is empty");

  std::vector<retrieval::ScoredShape> scored;
  retrieval::GroundTruth gt;
  for (const auto& s : shapes) {
    scored.push_back({s.shape_id, cls_model.predict(s).probabilities});
    gt[s.shape_id] = {s.label, s.sublabel};
  }

  const bool subs = data.has_sublabels();
  std::map<std::string, std::size_t> sub_pred;
  if (subs) {
    ViewSetModel sub_model = load_checked(a.subclass_checkpoint, data.dim, "subclass-checkpoint");
    for (const auto& s : shapes) sub_pred[s.shape_id] = sub_model.predict(s).argmax();
  } else {
    err << "warning: manifest has no subcategories; emitting L1 rank lists\n";
  }

  std::vector<retrieval::RankList> lists;
  std::vector<retrieval::QueryScores> scores;
  for (const auto& q : scored) {
    retrieval::RankList l = retrieval::build_l1(q, scored);
    if (subs) l = retrieval::rerank_l2(l, sub_pred.at(q.shape_id), sub_pred);
    scores.push_back(retrieval::score_query(l, gt));
    lists.push_back(std::move(l));
  }
  std::ofstream f(a.out, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write '" + a.out + "'");
  retrieval::write_rank_lists(f, lists);
  const auto report = retrieval::aggregate(scores);
  retrieval::write_metrics_table(out, report);
  retrieval::write_metrics_kv(out, report);
  return kOk;
}

int cmd_export(const ExportArgs& a, std::ostream& out) {
  if (a.out.empty()) throw UsageError("missing --out");
  require_file(a.features, "features");
  require_file(a.manifest, "manifest");
  Dataset data = io::load_dataset(a.features, a.manifest);
  ViewSetModel model = load_checked(a.checkpoint, data.dim, "checkpoint");
  const ViewFeatureSet* shape = nullptr;
  for (const auto* split : {&data.train, &data.val, &data.test})
    for (const auto& s : *split)
      if (s.shape_id == a.shape_id) shape = &s;
  if (!shape) throw UsageError("unknown shape id '" + a.shape_id + "'");

  const AttentionMaps maps = model.attention_maps(shape->features);
  std::ofstream f(a.out, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write '" + a.out + "'");
  char buf[32];
  for (std::size_t b = 0; b < maps.size(); ++b) {
    f << "# block " << b + 1 << '\n';
    for (std::size_t i = 0; i < maps[b].rows(); ++i) {
      for (std::size_t j = 0; j < maps[b].cols(); ++j) {
        std::snprintf(buf, sizeof buf, "%.6f", maps[b](i, j));
        f << (j ? " " : "") << buf;
      }
      f << '\n';
    }
  }
  out << "wrote " << maps.size() << " attention maps for '" << a.shape_id << "' to " << a.out << '\n';
  return kOk;
}

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  Dataset d;
  try {
    d = generate_synthetic(a.cfg);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  io::save_dataset(d, a.features, a.manifest);
  out << "wrote " << d.train.size() + d.val.size() + d.test.size() << " shapes to " << a.features
      << " and " << a.manifest << '\n';
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"View-set attention classifier: training, evaluation, retrieval"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a classifier on a feature file + manifest");
  train_cmd->add_option("--config", ta.config, "key=value config file");
  train_cmd->add_option("--features", ta.features, "feature file");
  train_cmd->add_option("--manifest", ta.manifest, "manifest file");
  train_cmd->add_option("--out", ta.out, "output directory for checkpoints and log");
  train_cmd->add_option("--views", ta.views, "views sampled per shape");
  train_cmd->add_option("--seed", ta.seed, "seed for all randomness");
  train_cmd->add_flag("--freeze-adapter", ta.freeze_adapter, "keep the feature adapter fixed");
  train_cmd->add_flag("--pos-enc", ta.pos_enc, "ablation: learned position encodings");
  train_cmd->add_flag("--cls-token", ta.cls_token, "ablation: class token");
  train_cmd->add_option("--target", ta.target, "labels to learn: class|subcategory");
  train_cmd->add_option("--set", ta.settings, "override any config key (key=value)");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Report instance and class accuracy");
  eval_cmd->add_option("--checkpoint", ea.checkpoint)->required();
  eval_cmd->add_option("--features", ea.features)->required();
  eval_cmd->add_option("--manifest", ea.manifest)->required();
  eval_cmd->add_option("--split", ea.split, "train|val|test");
  eval_cmd->add_option("--views", ea.views, "evaluate on a fixed per-shape sample of this many views");
  eval_cmd->add_option("--target", ea.target, "labels to score against: class|subcategory");

  RetrieveArgs ra;
  auto* ret_cmd = app.add_subcommand("retrieve", "Two-step rank lists and retrieval metrics");
  ret_cmd->add_option("--class-checkpoint", ra.class_checkpoint)->required();
  ret_cmd->add_option("--subclass-checkpoint", ra.subclass_checkpoint)->required();
  ret_cmd->add_option("--features", ra.features)->required();
  ret_cmd->add_option("--manifest", ra.manifest)->required();
  ret_cmd->add_option("--split", ra.split, "train|val|test");
  ret_cmd->add_option("--out", ra.out, "rank-list file")->required();

  ExportArgs xa;
  auto* exp_cmd = app.add_subcommand("export-attention", "Write per-block attention maps of one shape");
  exp_cmd->add_option("--checkpoint", xa.checkpoint)->required();
  exp_cmd->add_option("--features", xa.features)->required();
  exp_cmd->add_option("--manifest", xa.manifest)->required();
  exp_cmd->add_option("--shape-id", xa.shape_id)->required();
  exp_cmd->add_option("--out", xa.out)->required();

  SynthArgs sa;
  auto* syn_cmd = app.add_subcommand("synth", "Generate the synthetic multi-view dataset");
  syn_cmd->add_option("--features", sa.features)->required();
  syn_cmd->add_option("--manifest", sa.manifest)->required();
  syn_cmd->add_option("--classes", sa.cfg.num_classes);
  syn_cmd->add_option("--shapes-per-class", sa.cfg.shapes_per_class);
  syn_cmd->add_option("--views", sa.cfg.views);
  syn_cmd->add_option("--dim", sa.cfg.dim);
  syn_cmd->add_option("--noise", sa.cfg.noise);
  syn_cmd->add_option("--seed", sa.cfg.seed);
  syn_cmd->add_option("--subclasses", sa.cfg.subclasses_per_class, "subcategories per class");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  }

  try {
    if (*train_cmd) return cmd_train(ta, out);
    if (*eval_cmd) return cmd_eval(ea, out);
    if (*ret_cmd) return cmd_retrieve(ra, out, err);
    if (*exp_cmd) return cmd_export(xa, out);
    if (*syn_cmd) return cmd_synth(sa, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kUsageError;
}

}  // namespace viewset::cli
