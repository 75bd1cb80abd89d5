#include "prood/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <type_traits>

#include "format.hpp"
#include "json.hpp"
#include "prood/error.hpp"
#include "prood/parallel.hpp"
#include "prood/rng.hpp"

namespace prood {

using nlohmann::json;

namespace {

// Strict reader over one JSON object: every key must be consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be a JSON object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <typename T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    const json& v = j_.at(key);
    out = convert<T>(v, where(key));
  }

  Section child(const char* key) {
    used_.insert(key);
    return Section(j_.at(key), where(key));
  }

  const json& raw(const char* key) {
    used_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!used_.count(item.key())) throw ConfigError("unknown config key " + where(item.key().c_str()));
    }
  }

  std::string where(const char* key = nullptr) const {
    if (!key) return path_.empty() ? "(root)" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  template <typename T>
  static T convert(const json& v, const std::string& at) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(at + ": expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError(at + ": expected a nonnegative integer");
      return v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(at + ": expected an integer");
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(at + ": expected a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(at + ": expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
      if (!v.is_string()) throw ConfigError(at + ": expected a path string");
      return std::filesystem::path(v.get<std::string>());
    } else {
      if (!v.is_array()) throw ConfigError(at + ": expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<typename T::value_type>(v[i], at + "[" + std::to_string(i) + "]"));
      }
      return out;
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

const std::set<std::string> kSyntheticOuts = {"synthetic_out", "uniform_noise", "smooth_noise"};
const std::set<std::string> kIdxOuts = {"idx_out", "uniform_noise", "smooth_noise"};

void emit(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

bool same_parameters(const Network& a, const Network& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!(*pa[i] == *pb[i])) return false;
  }
  return true;
}

std::string delta_name(double delta) {
  std::string s = detail::num(delta);
  std::replace(s.begin(), s.end(), '.', 'p');
  return s;
}

}  // namespace

void ExperimentConfig::finalize() {
  if (task_type != "synthetic" && task_type != "idx") {
    throw ConfigError("task.type must be \"synthetic\" or \"idx\"");
  }
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be >= 0");
  if (deltas.empty()) throw ConfigError("deltas must not be empty");
  for (double d : deltas) {
    if (!std::isfinite(d) || d < 0.0) throw ConfigError("deltas must be finite and >= 0");
  }
  if (eval.n_out == 0) throw ConfigError("eval.n_out must be positive");
  if (!(eval.tpr > 0.0 && eval.tpr <= 1.0)) throw ConfigError("eval.tpr must lie in (0,1]");
  if (eval.out_distributions.empty()) throw ConfigError("eval.out_distributions must not be empty");
  const auto& known = task_type == "synthetic" ? kSyntheticOuts : kIdxOuts;
  for (const auto& name : eval.out_distributions) {
    if (!known.count(name)) throw ConfigError("unknown out-distribution \"" + name + "\"");
  }
  if (task_type == "synthetic" && eval.n_out > synthetic.n_out_test) {
    throw ConfigError("eval.n_out exceeds task.n_out_test");
  }
  if (task_type == "idx") {
    if (idx.train_images.empty() || idx.train_labels.empty() || idx.test_images.empty() ||
        idx.test_labels.empty()) {
      throw ConfigError("idx task needs train/test image and label paths");
    }
    if (std::count(eval.out_distributions.begin(), eval.out_distributions.end(), "idx_out") &&
        !idx.out_test_images) {
      throw ConfigError("out-distribution idx_out needs task.out_test_images");
    }
  }
  if (synthetic.n_out_holdout == 0) throw ConfigError("task.n_out_holdout must be positive");
  if (probe.n_random_directions == 0) throw ConfigError("probe.n_random_directions must be positive");

  discriminator.epsilon_final = epsilon;
  discriminator.seed = derive_seed(seed, "discriminator");
  semi_joint.seed = derive_seed(seed, "semi_joint");
  attack.seed = derive_seed(seed, "attack");
  probe.search.seed = derive_seed(seed, "probe_search");
  discriminator.validate();
  semi_joint.validate();
  attack.validate();
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  Section top(root, "");
  top.get("seed", cfg.seed);
  top.get("epsilon", cfg.epsilon);
  top.get("deltas", cfg.deltas);
  top.get("output_dir", cfg.output_dir);

  if (top.has("task")) {
    Section t = top.child("task");
    t.get("type", cfg.task_type);
    auto& s = cfg.synthetic;
    t.get("num_classes", s.num_classes);
    t.get("channels", s.channels);
    t.get("height", s.height);
    t.get("width", s.width);
    t.get("n_train", s.n_train);
    t.get("n_test", s.n_test);
    t.get("n_out_train", s.n_out_train);
    t.get("n_out_holdout", s.n_out_holdout);
    t.get("n_out_test", s.n_out_test);
    t.get("noise", s.noise);
    t.get("train_images", cfg.idx.train_images);
    t.get("train_labels", cfg.idx.train_labels);
    t.get("test_images", cfg.idx.test_images);
    t.get("test_labels", cfg.idx.test_labels);
    if (t.has("out_train_images")) {
      std::filesystem::path p;
      t.get("out_train_images", p);
      cfg.idx.out_train_images = p;
    }
    if (t.has("out_test_images")) {
      std::filesystem::path p;
      t.get("out_test_images", p);
      cfg.idx.out_test_images = p;
    }
    t.finish();
  }
  if (top.has("classifier")) {
    Section c = top.child("classifier");
    c.get("arch", cfg.classifier_arch);
    c.finish();
  }
  if (top.has("discriminator")) {
    Section d = top.child("discriminator");
    auto& dc = cfg.discriminator;
    d.get("arch", dc.arch);
    d.get("epochs", dc.epochs);
    d.get("lr", dc.lr);
    d.get("lr_drop_fractions", dc.lr_drop_fractions);
    d.get("lr_drop_factor", dc.lr_drop_factor);
    d.get("batch_in", dc.batch_in);
    d.get("batch_out", dc.batch_out);
    d.get("kappa_final", dc.kappa_final);
    d.get("ramp_epochs", dc.ramp_epochs);
    d.get("weight_decay", dc.weight_decay);
    d.get("bias_init", dc.bias_init);
    d.finish();
  }
  if (top.has("semi_joint")) {
    Section s = top.child("semi_joint");
    auto& sc = cfg.semi_joint;
    s.get("epochs", sc.epochs);
    s.get("lr", sc.lr);
    s.get("momentum", sc.momentum);
    s.get("lr_drop_fractions", sc.lr_drop_fractions);
    s.get("lr_drop_factor", sc.lr_drop_factor);
    s.get("batch_in", sc.batch_in);
    s.get("batch_out", sc.batch_out);
    s.get("weight_decay", sc.weight_decay);
    s.finish();
  }
  if (top.has("attack")) {
    Section a = top.child("attack");
    auto& ac = cfg.attack;
    a.get("steps", ac.steps);
    a.get("momentum", ac.momentum);
    a.get("step_init", ac.step_init);
    a.get("backtrack_factor", ac.backtrack_factor);
    a.get("growth_factor", ac.growth_factor);
    a.get("n_uniform_starts", ac.n_uniform_starts);
    a.get("n_gauss_starts", ac.n_gauss_starts);
    a.get("gauss_sigma", ac.gauss_sigma);
    a.get("extra_restarts", ac.extra_restarts);
    a.get("min_step", ac.min_step);
    a.finish();
  }
  if (top.has("eval")) {
    Section e = top.child("eval");
    e.get("n_out", cfg.eval.n_out);
    e.get("out_distributions", cfg.eval.out_distributions);
    e.get("tpr", cfg.eval.tpr);
    e.finish();
  }
  if (top.has("probe")) {
    Section p = top.child("probe");
    p.get("n_random_directions", cfg.probe.n_random_directions);
    p.get("n_search_directions", cfg.probe.search.n_directions);
    p.get("alphas", cfg.probe.search.alphas);
    p.get("ray_alphas", cfg.probe.ray_alphas);
    if (p.has("search_stages")) {
      const json& stages = p.raw("search_stages");
      if (!stages.is_array()) throw ConfigError("probe.search_stages: expected an array");
      cfg.probe.search.stages.clear();
      for (std::size_t i = 0; i < stages.size(); ++i) {
        Section st(stages[i], "probe.search_stages[" + std::to_string(i) + "]");
        SphereStage stage{};
        st.get("radius", stage.radius);
        st.get("steps", stage.steps);
        st.get("step_size", stage.step_size);
        st.finish();
        cfg.probe.search.stages.push_back(stage);
      }
    }
    p.finish();
  }
  top.finish();
  cfg.finalize();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  std::string text;
  try {
    text = read_file_bytes(path);
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  return parse_experiment_config(text);
}

TaskData load_task(const ExperimentConfig& cfg, std::uint64_t eval_round) {
  TaskData data;
  const std::uint64_t data_seed = derive_seed(cfg.seed, "data");
  const std::uint64_t eval_seed = derive_seed(derive_seed(cfg.seed, "eval"), eval_round);
  Dataset out_test;
  if (cfg.task_type == "synthetic") {
    auto task = synthetic_task(cfg.synthetic, data_seed);
    data.in_train = std::move(task.in_train);
    data.in_test = std::move(task.in_test);
    data.out_train = std::move(task.out_train);
    data.out_holdout = std::move(task.out_holdout);
    out_test = std::move(task.out_test);
  } else {
    data.in_train = load_idx(cfg.idx.train_images, cfg.idx.train_labels);
    data.in_test = load_idx(cfg.idx.test_images, cfg.idx.test_labels);
    data.in_test.split = Split::test;
    data.in_test.num_classes = std::max(data.in_test.num_classes, data.in_train.num_classes);
    data.in_train.num_classes = data.in_test.num_classes;
    const std::size_t n_hold = cfg.synthetic.n_out_holdout;
    Dataset pool = cfg.idx.out_train_images
                       ? load_idx(*cfg.idx.out_train_images)
                       : smooth_noise(cfg.synthetic.n_out_train + n_hold,
                                      data.in_train.sample_shape(), derive_seed(data_seed, "out"));
    if (pool.size() <= n_hold) throw ConfigError("training out-distribution too small for holdout");
    const auto perm = fixed_subset(pool, pool.size(), derive_seed(data_seed, "holdout_split"));
    const std::size_t per = shape_size(pool.sample_shape());
    auto slice = [&](std::size_t from, std::size_t to, const char* name) {
      Dataset ds;
      ds.name = name;
      ds.split = Split::train;
      const auto s = pool.sample_shape();
      ds.images = Tensor({to - from, s[0], s[1], s[2]});
      std::copy(perm.images.data() + from * per, perm.images.data() + to * per, ds.images.data());
      return ds;
    };
    data.out_holdout = slice(0, n_hold, "out_holdout");
    data.out_train = slice(n_hold, pool.size(), "out_train");
    if (cfg.idx.out_test_images) {
      out_test = load_idx(*cfg.idx.out_test_images);
      out_test.name = "idx_out";
    }
  }
  const Shape shape = data.in_train.sample_shape();
  for (const auto& name : cfg.eval.out_distributions) {
    Dataset ds;
    if (name == "synthetic_out" || name == "idx_out") {
      ds = fixed_subset(out_test, cfg.eval.n_out, derive_seed(eval_seed, name));
    } else if (name == "uniform_noise") {
      ds = uniform_noise(cfg.eval.n_out, shape, derive_seed(eval_seed, name));
    } else {
      ds = smooth_noise(cfg.eval.n_out, shape, derive_seed(eval_seed, name));
    }
    ds.name = name;
    ds.split = Split::test;
    data.eval_out.push_back(std::move(ds));
  }
  return data;
}

Checkpoint joint_checkpoint(const JointModel& jm) {
  Checkpoint c;
  c.networks.push_back({"classifier", jm.classifier});
  c.networks.push_back({"discriminator", jm.discriminator});
  c.delta = jm.delta;
  return c;
}

JointModel joint_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.delta) throw FormatError("checkpoint has no delta field; not a joint model");
  JointModel jm{ckpt.network("classifier"), ckpt.network("discriminator"), *ckpt.delta};
  try {
    jm.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint holds an invalid joint model: ") + e.what());
  }
  return jm;
}

TrainDiscOutput cmd_train_disc(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                               const Logger& log) {
  const auto data = load_task(cfg);
  emit(log, "training discriminator (" + cfg.discriminator.arch + ", " +
                std::to_string(cfg.discriminator.epochs) + " epochs)");
  auto result = train_discriminator(cfg.discriminator, data.in_train, data.out_train,
                                    [&](const DiscEpochLog& r) {
                                      emit(log, "epoch " + std::to_string(r.epoch) + " eps " +
                                                    detail::num(r.epsilon) + " loss " +
                                                    detail::num(r.total));
                                    });
  TrainDiscOutput out{out_dir / "discriminator.prood", out_dir / "disc_log.csv", std::move(result.g)};
  Checkpoint ckpt;
  ckpt.networks.push_back({"discriminator", out.g});
  write_checkpoint(out.checkpoint, ckpt);
  write_disc_log(out.log_csv, result.log);
  return out;
}

ConfidenceEval evaluate_confidences(const JointModel64& jm, const Dataset& in_test,
                                    const std::vector<Dataset>& outs, const ThreatModel& tm,
                                    const AttackConfig& attack, bool run_attack) {
  ConfidenceEval ev;
  const std::size_t n_in = in_test.size();
  ev.conf_in.resize(n_in);
  std::vector<char> correct(n_in, 0);
  parallel_for(n_in, [&](std::size_t i) {
    const auto p = predict(jm, in_test.sample64(i));
    ev.conf_in[i] = p.conf;
    if (in_test.labelled()) correct[i] = static_cast<int>(p.argmax) == in_test.labels[i];
  });
  ev.accuracy = static_cast<double>(std::count(correct.begin(), correct.end(), 1)) /
                static_cast<double>(n_in);

  const JointConfidence objective(jm);
  std::size_t offset = 0;
  for (const auto& ds : outs) {
    ConfidenceSets sets;
    sets.conf_in = ev.conf_in;
    const std::size_t m = ds.size();
    sets.conf_out_clean.resize(m);
    sets.conf_out_adv.resize(m);
    sets.conf_out_ub.resize(m);
    std::vector<std::vector<TranscriptRow>> rows(m);
    parallel_for(m, [&](std::size_t i) {
      const auto z = ds.sample64(i);
      const double clean = predict(jm, z).conf;
      // A ball of radius zero is certified exactly by the clean confidence.
      const double ub = tm.epsilon == 0.0 ? clean : conf_upper_bound(jm, z, tm);
      double adv = clean;
      if (run_attack) {
        AttackConfig ac = attack;
        ac.seed = derive_seed(attack.seed, static_cast<std::uint64_t>(offset + i));
        const auto res = pgd_max_conf(objective, z, tm, ac);
        adv = res.conf;
        for (const auto& r : res.restarts) rows[i].push_back({offset + i, r.restart_id, r.final_conf});
      }
      if (adv > ub + 1e-6) {
        throw Error(ds.name + " sample " + std::to_string(i) + ": attacked confidence " +
                    detail::num(adv) + " exceeds the certified bound " + detail::num(ub));
      }
      sets.conf_out_clean[i] = clean;
      sets.conf_out_adv[i] = adv;
      // Within tolerance the bound may sit an ulp below the attacked value.
      sets.conf_out_ub[i] = std::max(ub, adv);
    });
    for (auto& r : rows) ev.transcript.insert(ev.transcript.end(), r.begin(), r.end());
    ev.per_out.push_back(std::move(sets));
    offset += m;
  }
  return ev;
}

namespace {

// Discriminator-only confidences: sigmoid(g + delta) on in_test against the
// clean and certified values on an out set.
void discriminator_scores(const Network64& g, const Dataset& in_test, const Dataset& out,
                          const ThreatModel& tm, double& auc_clean, double& auc_certified) {
  std::vector<double> cin(in_test.size()), cout(out.size()), cub(out.size());
  parallel_for(in_test.size(), [&](std::size_t i) { cin[i] = sigmoid(logits(g, in_test.sample64(i))[0]); });
  parallel_for(out.size(), [&](std::size_t i) {
    const auto z = out.sample64(i);
    cout[i] = sigmoid(logits(g, z)[0]);
    cub[i] = std::max(sigmoid(upper_logit(g, z, tm)), cout[i]);
  });
  auc_clean = auc(cin, cout);
  auc_certified = auc(cin, cub);
}

}  // namespace

TrainJointOutput cmd_train_joint(const ExperimentConfig& cfg, const std::filesystem::path& disc_ckpt,
                                 const std::filesystem::path& out_dir, const Logger& log) {
  const Network g = read_checkpoint(disc_ckpt).network("discriminator");
  const auto data = load_task(cfg);
  if (g.input_shape() != data.in_train.sample_shape()) {
    throw ConfigError("discriminator input " + shape_str(g.input_shape()) +
                      " does not match the task images " + shape_str(data.in_train.sample_shape()));
  }
  const std::size_t k = data.in_train.num_classes;
  const ThreatModel tm{cfg.epsilon};
  const Network64 g64 = g.cast<double>();

  TrainJointOutput out{};
  discriminator_scores(g64, data.in_test, data.out_holdout, tm, out.disc_auc, out.disc_gauc);
  emit(log, "discriminator holdout AUC " + detail::num(out.disc_auc) + ", GAUC " +
                detail::num(out.disc_gauc));

  Network f0 = make_classifier(cfg.classifier_arch, data.in_train.sample_shape(), k);
  Rng init_rng(derive_seed(cfg.seed, "classifier_init"));
  init_parameters(f0, init_rng, 0.0f);

  SemiJointConfig oe_cfg = cfg.semi_joint;
  oe_cfg.outlier_exposure = true;
  emit(log, "training outlier-exposure baseline");
  const JointModel oe = train_semi_joint({f0, g, 0.0}, oe_cfg, data.in_train, data.out_train);
  {
    const Network64 f64 = oe.classifier.cast<double>();
    std::vector<double> cin(data.in_test.size()), cout(data.out_holdout.size());
    std::vector<char> correct(data.in_test.size(), 0);
    parallel_for(cin.size(), [&](std::size_t i) {
      const auto sm = softmax_conf(logits(f64, data.in_test.sample64(i)));
      cin[i] = sm.conf;
      correct[i] = static_cast<int>(sm.argmax) == data.in_test.labels[i];
    });
    parallel_for(cout.size(), [&](std::size_t i) {
      cout[i] = softmax_conf(logits(f64, data.out_holdout.sample64(i))).conf;
    });
    out.baseline_auc = auc(cin, cout);
    out.baseline_acc = static_cast<double>(std::count(correct.begin(), correct.end(), 1)) /
                       static_cast<double>(correct.size());
    Checkpoint c;
    c.networks.push_back({"classifier", oe.classifier});
    write_checkpoint(out_dir / "baseline.prood", c);
  }
  emit(log, "baseline holdout AUC " + detail::num(out.baseline_auc) + ", accuracy " +
                detail::num(out.baseline_acc));

  std::vector<SweepCandidate> candidates;
  std::vector<std::filesystem::path> paths;
  for (double delta : cfg.deltas) {
    emit(log, "training semi-joint model, delta " + detail::num(delta));
    JointModel jm = train_semi_joint({f0, g, delta}, cfg.semi_joint, data.in_train, data.out_train);
    if (!same_parameters(jm.discriminator, g) || jm.delta != delta) {
      throw Error("semi-joint training modified the frozen discriminator (delta " +
                  detail::num(delta) + ")");
    }
    const auto ev = evaluate_confidences(jm.cast<double>(), data.in_test, {data.out_holdout}, tm,
                                         cfg.attack, false);
    const auto& s = ev.per_out.front();
    SweepRow row{delta, ev.accuracy, auc(s.conf_in, s.conf_out_clean), gauc(s.conf_in, s.conf_out_ub)};
    out.rows.push_back(row);
    candidates.push_back({delta, row.auc, row.gauc});
    paths.push_back(out_dir / ("joint_delta_" + delta_name(delta) + ".prood"));
    write_checkpoint(paths.back(), joint_checkpoint(jm));
    emit(log, "  accuracy " + detail::num(row.acc) + ", AUC " + detail::num(row.auc) + ", GAUC " +
                  detail::num(row.gauc));
  }
  out.selection = delta_sweep_select(candidates, out.baseline_auc);
  out.selected_checkpoint = out_dir / "joint.prood";
  write_file_bytes(out.selected_checkpoint, read_file_bytes(paths[out.selection.index]));

  std::ostringstream csv;
  csv << "delta,Acc,AUC,GAUC,selected\n";
  json rows = json::array();
  for (std::size_t i = 0; i < out.rows.size(); ++i) {
    const auto& r = out.rows[i];
    csv << detail::num(r.delta) << ',' << detail::num(r.acc) << ',' << detail::num(r.auc) << ','
        << detail::num(r.gauc) << ',' << (i == out.selection.index ? 1 : 0) << '\n';
    rows.push_back({{"delta", r.delta}, {"Acc", r.acc}, {"AUC", r.auc}, {"GAUC", r.gauc}});
  }
  write_file_bytes(out_dir / "sweep.csv", csv.str());
  const json summary = {{"baseline_auc", out.baseline_auc},
                        {"baseline_acc", out.baseline_acc},
                        {"disc_auc", out.disc_auc},
                        {"disc_gauc", out.disc_gauc},
                        {"epsilon", cfg.epsilon},
                        {"rows", rows},
                        {"selected", out.selection.delta},
                        {"beat_baseline", out.selection.beat_baseline}};
  write_file_bytes(out_dir / "sweep.json", summary.dump(2) + "\n");
  emit(log, "selected delta " + detail::num(out.selection.delta));
  return out;
}

EvalReport cmd_eval(const ExperimentConfig& cfg, const std::filesystem::path& joint_ckpt,
                    const std::filesystem::path& out_dir, int seeds, const Logger& log) {
  if (seeds < 1) throw ConfigError("--seeds must be >= 1");
  const JointModel jm = joint_from_checkpoint(read_checkpoint(joint_ckpt));
  const JointModel64 jm64 = jm.cast<double>();
  const ThreatModel tm{cfg.epsilon};
  std::vector<EvalReport> reports;
  for (int s = 0; s < seeds; ++s) {
    const auto data = load_task(cfg, static_cast<std::uint64_t>(s));
    if (jm.classifier.input_shape() != data.in_test.sample_shape()) {
      throw ConfigError("checkpoint input shape does not match the task images");
    }
    AttackConfig ac = cfg.attack;
    ac.seed = derive_seed(cfg.attack.seed, static_cast<std::uint64_t>(s));
    emit(log, "evaluating round " + std::to_string(s));
    const auto ev = evaluate_confidences(jm64, data.in_test, data.eval_out, tm, ac, true);
    EvalReport rep;
    for (std::size_t i = 0; i < data.eval_out.size(); ++i) {
      rep.rows.push_back(metric_row(data.eval_out[i].name, ev.accuracy, ev.per_out[i], cfg.eval.tpr));
    }
    if (s == 0) write_attack_transcript(out_dir / "attack_transcript.csv", ev.transcript);
    reports.push_back(std::move(rep));
  }
  EvalReport report = aggregate_reports(reports);
  write_report(out_dir / "report.csv", out_dir / "report.json", report);
  return report;
}

ProbeOutput cmd_probe(const ExperimentConfig& cfg, const std::filesystem::path& joint_ckpt,
                      const std::filesystem::path& out_dir, const Logger& log) {
  const JointModel64 jm = joint_from_checkpoint(read_checkpoint(joint_ckpt)).cast<double>();
  const Shape shape = jm.classifier.input_shape();
  ProbeOutput out{};

  const auto random = random_directions(cfg.probe.n_random_directions, shape,
                                        derive_seed(cfg.seed, "probe_random"));
  emit(log, "searching " + std::to_string(cfg.probe.search.n_directions) + " adversarial directions");
  out.search = adversarial_direction_search(jm, cfg.probe.search);

  std::vector<std::pair<std::string, const Tensor64*>> dirs;
  for (const auto& d : random) dirs.push_back({"random", &d});
  for (const auto& d : out.search.directions) dirs.push_back({"searched", &d});
  out.checks.resize(dirs.size());
  parallel_for(dirs.size(), [&](std::size_t i) {
    out.checks[i] = {i, dirs[i].first, check_asymptotic_confidence(jm, *dirs[i].second)};
  });
  std::size_t nonzero = 0;
  out.all_passed = true;
  for (const auto& c : out.checks) {
    if (!c.report.ux_nonzero) continue;
    ++nonzero;
    if (!c.report.limit_ok) out.all_passed = false;
  }
  out.fraction_ux_nonzero = static_cast<double>(nonzero) / static_cast<double>(out.checks.size());

  const auto joint_rays = ray_confidence(jm, random, cfg.probe.ray_alphas);
  const auto clf_rays = ray_confidence(jm.classifier, random, cfg.probe.ray_alphas);
  out.joint_rays = summarize_rays(joint_rays);
  out.classifier_rays = summarize_rays(clf_rays);
  write_ray_csv(out_dir / "rays_joint.csv", joint_rays);
  write_ray_csv(out_dir / "rays_classifier.csv", clf_rays);

  std::ostringstream ac;
  ac << "direction_id,kind,ux_nonzero,inner_product,beta_star,logit_at_limit,p_in,conf_gap,limit_ok\n";
  for (const auto& c : out.checks) {
    const auto& r = c.report;
    ac << c.id << ',' << c.kind << ',' << r.ux_nonzero << ',' << detail::num(r.inner_product) << ','
       << detail::num(r.beta_star) << ',' << detail::num(r.logit_at_limit) << ','
       << detail::num(r.p_in_at_limit) << ',' << detail::num(r.conf_gap_at_limit) << ','
       << r.limit_ok << '\n';
  }
  write_file_bytes(out_dir / "asymptotic.csv", ac.str());

  std::ostringstream sc;
  sc << "alpha,max_p_in,max_conf\n";
  for (const auto& p : out.search.curve) {
    sc << detail::num(p.alpha) << ',' << detail::num(p.max_p_in) << ',' << detail::num(p.max_conf) << '\n';
  }
  write_file_bytes(out_dir / "search_curve.csv", sc.str());

  const json summary = {{"directions", out.checks.size()},
                        {"fraction_ux_nonzero", out.fraction_ux_nonzero},
                        {"all_passed", out.all_passed},
                        {"max_radius_error", out.search.max_radius_error}};
  write_file_bytes(out_dir / "probe.json", summary.dump(2) + "\n");
  emit(log, "fraction with U x != 0: " + detail::num(out.fraction_ux_nonzero) +
                (out.all_passed ? ", all passed" : ", FAILURES"));
  return out;
}

}  // namespace prood
