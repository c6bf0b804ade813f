// Command-line front end: dataset synthesis, training, sampling, evaluation,
// surrogate studies, quantile splits, and the gradient self-check.
//
// Exit codes: 0 success, 1 usage, 2 data/config, 3 numeric failure.

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "layerdag/io.hpp"
#include "layerdag/lp.hpp"
#include "layerdag/metrics.hpp"
#include "layerdag/model.hpp"

namespace ld = layerdag;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

ld::LpVariant parse_variant(const std::string& v) {
  if (v == "base") return ld::LpVariant::Base;
  if (v == "multi") return ld::LpVariant::Multi;
  throw ld::ConfigError("variant must be base or multi, got: " + v);
}

std::vector<double> load_labels_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ld::ConfigError("cannot open labels file: " + path);
  std::vector<double> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = line;
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
    if (s.empty()) continue;
    try {
      size_t pos = 0;
      double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument("");
      out.push_back(v);
    } catch (...) {
      if (lineno == 1) continue;  // tolerate a header row
      throw ld::DataError(lineno, "labels file: bad number \"" + s + "\"");
    }
  }
  return out;
}

ld::TrainConfig to_train_config(const ld::RunConfig& rc) {
  ld::TrainConfig tc;
  tc.t_train = rc.t_train;
  tc.epochs = rc.epochs;
  tc.batch_size = rc.batch_size;
  tc.lr = rc.lr;
  tc.beta1 = rc.beta1;
  tc.beta2 = rc.beta2;
  tc.patience = rc.patience;
  tc.seed = rc.seed;
  tc.w_size = rc.w_size;
  tc.w_node = rc.w_node;
  tc.w_edge = rc.w_edge;
  tc.conditional = rc.conditional;
  tc.s_offset = rc.s_offset;
  tc.arch.hidden_dim = rc.hidden_dim;
  tc.arch.mpnn_layers = rc.mpnn_layers;
  tc.arch.attn_blocks = rc.attn_blocks;
  tc.arch.attn_heads = rc.attn_heads;
  tc.arch.shared_encoder = rc.shared_encoder;
  return tc;
}

int run_gradcheck() {
  using ld::Tape;
  ld::Rng rng(424242);
  ld::ParamStore params;
  int d = 8;
  params.add("w", ld::xavier_uniform(d, d, rng));
  params.add("b", ld::Tensor({1, d}));
  params.add("wf", ld::xavier_uniform(d, d, rng));
  params.add("wr", ld::xavier_uniform(d, d, rng));
  params.add("ws", ld::xavier_uniform(d, d, rng));
  ld::add_attention_block_params(params, "attn", d, 2 * d, rng);
  params.add("head_w", ld::xavier_uniform(d, 3, rng));
  params.add("head_b", ld::Tensor({1, 3}));

  int n = 5;
  ld::Tensor x = ld::xavier_uniform(n, d, rng);
  ld::Tensor adj({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) adj.at(i, j) = rng.bernoulli(0.5);
  std::vector<int> targets = {0, 2, 1, 2, 0};

  struct Case {
    const char* name;
    ld::LossBuilder build;
  };
  std::vector<Case> cases;
  cases.push_back({"affine", [&](Tape& t, const ld::ParamVars& pv) {
                     Tape::VarId h =
                         ld::affine(t, t.input(x, false), pv["w"], pv["b"]);
                     return t.mse_loss(t.mean_rows(h),
                                       std::vector<double>(d, 0.3));
                   }});
  cases.push_back({"bimpnn", [&](Tape& t, const ld::ParamVars& pv) {
                     Tape::VarId h = t.relu(ld::bimpnn_linear(
                         t, t.input(adj, false), t.input(x, false), pv["wf"],
                         pv["wr"], pv["ws"]));
                     return t.mse_loss(t.mean_rows(h),
                                       std::vector<double>(d, 0.1));
                   }});
  cases.push_back({"attention", [&](Tape& t, const ld::ParamVars& pv) {
                     Tape::VarId h = ld::attention_block(
                         t, t.input(x, false),
                         ld::bind_attention_block(pv, "attn"), 2);
                     return t.mse_loss(t.mean_rows(h),
                                       std::vector<double>(d, 0.0));
                   }});
  cases.push_back({"pool_head_ce", [&](Tape& t, const ld::ParamVars& pv) {
                     Tape::VarId h = t.relu(ld::bimpnn_linear(
                         t, t.input(adj, false), t.input(x, false), pv["wf"],
                         pv["wr"], pv["ws"]));
                     Tape::VarId logits =
                         ld::affine(t, h, pv["head_w"], pv["head_b"]);
                     return t.softmax_cross_entropy(logits, targets);
                   }});
  cases.push_back({"bce_head", [&](Tape& t, const ld::ParamVars& pv) {
                     Tape::VarId h =
                         ld::affine(t, t.input(x, false), pv["w"], pv["b"]);
                     Tape::VarId logits = t.slice_cols(h, 0, 1);
                     return t.bce_with_logits(
                         logits, std::vector<double>{1, 0, 1, 1, 0});
                   }});

  bool ok = true;
  for (const auto& c : cases) {
    ld::Rng crng(7);
    double rel = ld::grad_check(c.build, params, 1e-6, 40, crng);
    bool pass = rel <= 1e-5;
    ok = ok && pass;
    std::cout << "gradcheck " << c.name << ": max rel err " << rel << " "
              << (pass ? "PASS" : "FAIL") << "\n";
  }
  return ok ? 0 : kExitNumeric;
}

int run(int argc, char** argv) {
  CLI::App app{"Layerwise autoregressive diffusion model for attributed DAGs"};
  app.require_subcommand(1);

  // lp-gen
  auto* gen = app.add_subcommand("lp-gen", "Generate a synthetic LP dataset");
  double rho = 1.0;
  int count = 100;
  uint64_t seed = 0;
  std::string variant = "base", out_path;
  gen->add_option("--rho", rho, "Balance threshold");
  gen->add_option("--count", count, "Number of graphs")->required();
  gen->add_option("--seed", seed, "RNG seed");
  gen->add_option("--variant", variant, "base or multi");
  gen->add_option("--out", out_path, "Output dataset file")->required();
  bool label_size = false;
  gen->add_flag("--labeled", label_size,
                "Attach label y = |V| + 0.1 |E| to each graph");

  // train
  auto* tr = app.add_subcommand("train", "Train a generative model");
  std::string data_path, val_path, config_path, ckpt_path, log_path;
  bool conditional_flag = false;
  int threads = 8;
  tr->add_option("--data", data_path, "Training dataset")->required();
  tr->add_option("--val", val_path, "Validation dataset")->required();
  tr->add_option("--config", config_path, "Run configuration file");
  tr->add_option("--out", ckpt_path, "Output checkpoint")->required();
  tr->add_option("--log", log_path, "Loss log CSV (default <out>.loss.csv)");
  tr->add_flag("--conditional", conditional_flag, "Condition on labels");
  tr->add_option("--threads", threads, "Worker threads");

  // sample
  auto* sa = app.add_subcommand("sample", "Sample graphs from a checkpoint");
  std::string model_path, labels_path, timing_path;
  int s_count = 100, t_min = -1, t_max = -1, t_const = -1;
  uint64_t s_seed = 0;
  sa->add_option("--model", model_path, "Checkpoint file")->required();
  sa->add_option("--count", s_count, "Number of samples")->required();
  sa->add_option("--seed", s_seed, "RNG seed");
  sa->add_option("--labels", labels_path, "CSV with one label per sample");
  sa->add_option("--t-min", t_min, "Schedule start");
  sa->add_option("--t-max", t_max, "Schedule end");
  sa->add_option("--t-const", t_const, "Constant schedule (sets both)");
  sa->add_option("--out", out_path, "Output dataset file")->required();
  sa->add_option("--timing", timing_path,
                 "Per-sample timing CSV (default <out>.timing.csv)");
  sa->add_option("--threads", threads, "Worker threads");

  // eval
  auto* ev = app.add_subcommand("eval", "Compare generated against real");
  std::string real_path, gen_path;
  double ev_rho = -1;
  ev->add_option("--real", real_path, "Reference dataset")->required();
  ev->add_option("--gen", gen_path, "Generated dataset")->required();
  ev->add_option("--rho", ev_rho, "Check LP validity at this threshold");
  ev->add_option("--variant", variant, "base or multi");
  ev->add_option("--out", out_path, "Metrics CSV")->required();

  // surrogate
  auto* su = app.add_subcommand("surrogate", "Train and test a label regressor");
  std::string su_train, su_val, su_test;
  int su_epochs = 100, su_hidden = 64, su_mpnn = 2;
  uint64_t su_seed = 0;
  su->add_option("--train", su_train, "Training dataset")->required();
  su->add_option("--val", su_val, "Validation dataset")->required();
  su->add_option("--test", su_test, "Test dataset")->required();
  su->add_option("--epochs", su_epochs, "Training epochs");
  su->add_option("--hidden-dim", su_hidden, "Hidden width");
  su->add_option("--mpnn-layers", su_mpnn, "Message passing depth");
  su->add_option("--seed", su_seed, "RNG seed");
  su->add_option("--threads", threads, "Worker threads");
  su->add_option("--out", out_path, "Pearson/MAE CSV")->required();

  // split
  auto* sp = app.add_subcommand("split", "Quantile split by label");
  std::string sp_data, out_dev, out_held;
  int quantiles = 5, hold = 5;
  sp->add_option("--data", sp_data, "Labeled dataset")->required();
  sp->add_option("--quantiles", quantiles, "Number of blocks");
  sp->add_option("--hold", hold, "1-based block to hold out");
  sp->add_option("--out-dev", out_dev, "Remaining blocks")->required();
  sp->add_option("--out-held", out_held, "Held-out block")->required();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Gradient self-check");
  (void)gc;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  if (gen->parsed()) {
    ld::LpConfig cfg;
    cfg.rho = rho;
    cfg.variant = parse_variant(variant);
    cfg.count = count;
    cfg.seed = seed;
    std::vector<ld::Dag> graphs = ld::generate_lp(cfg);
    if (label_size)
      for (ld::Dag& g : graphs)
        g.label = g.num_nodes + 0.1 * static_cast<double>(g.edges.size());
    ld::save_dataset(graphs, out_path);
    std::cout << "wrote " << graphs.size() << " graphs to " << out_path << "\n";
    return 0;
  }

  if (tr->parsed()) {
    ld::RunConfig rc;
    if (!config_path.empty()) rc = ld::parse_run_config(config_path);
    if (conditional_flag) rc.conditional = true;
    ld::TrainConfig tc = to_train_config(rc);
    tc.threads = threads;
    std::vector<ld::Dag> data = ld::load_dataset(data_path);
    std::vector<ld::Dag> val = ld::load_dataset(val_path);
    ld::TrainResult res = ld::train(data, val, tc);
    ld::save_checkpoint(res.params, ckpt_path);
    std::vector<std::vector<std::string>> rows;
    for (const auto& e : res.log)
      rows.push_back({std::to_string(e.epoch), ld::format_double(e.train_loss),
                      ld::format_double(e.val_loss)});
    if (log_path.empty()) log_path = ckpt_path + ".loss.csv";
    ld::write_csv(log_path, {"epoch", "train_loss", "val_loss"}, rows);
    std::cout << "trained " << res.log.size() << " epochs (best "
              << res.best_epoch << "), checkpoint: " << ckpt_path << "\n";
    return 0;
  }

  if (sa->parsed()) {
    ld::ModelParams p = ld::load_checkpoint(model_path);
    ld::SampleConfig cfg;
    cfg.count = s_count;
    cfg.seed = s_seed;
    cfg.threads = threads;
    if (t_const > 0) {
      cfg.schedule = {t_const, t_const, p.l_max};
    } else if (t_min > 0 && t_max > 0) {
      cfg.schedule = {t_min, t_max, p.l_max};
    } else if (t_min > 0 || t_max > 0) {
      std::cerr << "error: --t-min and --t-max must be given together\n";
      return kExitUsage;
    } else {
      cfg.schedule = {p.t_train, p.t_train, p.l_max};
    }
    if (!labels_path.empty()) {
      std::vector<double> labels = load_labels_csv(labels_path);
      if (static_cast<int>(labels.size()) < s_count)
        throw ld::DataError(0, "labels file has fewer rows than --count");
      labels.resize(s_count);
      cfg.labels = std::move(labels);
    }
    if (p.conditional && !cfg.labels)
      throw ld::ConfigError("conditional checkpoint requires --labels");
    std::vector<ld::SampleResult> results = ld::sample(p, cfg);
    std::vector<ld::Dag> graphs;
    std::vector<std::vector<std::string>> rows;
    for (size_t i = 0; i < results.size(); ++i) {
      const auto& r = results[i];
      graphs.push_back(r.dag);
      rows.push_back({std::to_string(i), std::to_string(r.dag.num_nodes),
                      std::to_string(r.dag.edges.size()),
                      std::to_string(r.node_steps), std::to_string(r.edge_steps),
                      std::to_string(r.scheduled_steps),
                      ld::format_double(r.wall_seconds),
                      r.cap_exceeded ? "1" : "0"});
    }
    ld::save_dataset(graphs, out_path);
    if (timing_path.empty()) timing_path = out_path + ".timing.csv";
    ld::write_csv(timing_path,
                  {"sample", "nodes", "edges", "node_steps", "edge_steps",
                   "scheduled_steps", "wall_seconds", "cap_exceeded"},
                  rows);
    std::cout << "wrote " << graphs.size() << " samples to " << out_path
              << "\n";
    return 0;
  }

  if (ev->parsed()) {
    std::vector<ld::Dag> real = ld::load_dataset(real_path);
    std::vector<ld::Dag> gen_set = ld::load_dataset(gen_path);
    if (real.empty() || gen_set.empty())
      throw ld::DataError(0, "eval needs nonempty datasets");

    std::vector<double> real_l, gen_l;
    std::vector<ld::Histogram> real_h, gen_h;
    for (const auto& g : real) {
      real_l.push_back(ld::layer_partition(g).num_layers());
      real_h.push_back(ld::layer_size_histogram(g));
    }
    for (const auto& g : gen_set) {
      gen_l.push_back(ld::layer_partition(g).num_layers());
      gen_h.push_back(ld::layer_size_histogram(g));
    }
    double w1 = ld::wasserstein1(real_l, gen_l);
    ld::MmdResult m = ld::mmd(real_h, gen_h);

    std::vector<std::vector<std::string>> rows;
    rows.push_back({"w1_layer_count", ld::format_double(w1)});
    rows.push_back({"mmd_layer_size", ld::format_double(m.mmd)});
    rows.push_back({"mmd_layer_size_sq", ld::format_double(m.mmd_sq)});
    rows.push_back({"mmd_sigma", ld::format_double(m.sigma)});

    ld::LpVariant var = parse_variant(variant);
    int channels = var == ld::LpVariant::Multi ? 3 : 1;
    bool channels_ok = true;
    for (const auto* set : {&real, &gen_set})
      for (const auto& g : *set)
        if (g.num_nodes > 0 && g.num_channels() != channels) channels_ok = false;
    if (var == ld::LpVariant::Multi && channels_ok) {
      std::vector<int> cs(3, 2);
      std::vector<ld::Histogram> ra, ga;
      for (const auto& g : real) ra.push_back(ld::attribute_histogram(g, cs));
      for (const auto& g : gen_set)
        ga.push_back(ld::attribute_histogram(g, cs));
      ld::MmdResult ma = ld::mmd(ra, ga);
      rows.push_back({"mmd_attribute", ld::format_double(ma.mmd)});
    }
    if (ev_rho >= 0) {
      if (!channels_ok)
        throw ld::DataError(0, "channel count does not match --variant");
      ld::LpConfig cfg;
      cfg.rho = ev_rho;
      cfg.variant = var;
      ld::ValidityBreakdown v = ld::validity_rate(gen_set, cfg);
      rows.push_back({"validity_full", ld::format_double(v.full)});
      rows.push_back({"validity_balance", ld::format_double(v.balance)});
      rows.push_back({"validity_attr", ld::format_double(v.attrs)});
      rows.push_back({"validity_indegree", ld::format_double(v.indegree)});
    }
    ld::write_csv(out_path, {"metric", "value"}, rows);
    for (const auto& r : rows) std::cout << r[0] << " = " << r[1] << "\n";
    return 0;
  }

  if (su->parsed()) {
    std::vector<ld::Dag> train = ld::load_dataset(su_train);
    std::vector<ld::Dag> val = ld::load_dataset(su_val);
    std::vector<ld::Dag> test = ld::load_dataset(su_test);
    ld::SurrogateConfig cfg;
    cfg.arch.hidden_dim = su_hidden;
    cfg.arch.mpnn_layers = su_mpnn;
    cfg.epochs = su_epochs;
    cfg.seed = su_seed;
    cfg.threads = threads;
    ld::Surrogate s = ld::train_surrogate(train, val, cfg);
    ld::SurrogateEval e = ld::eval_surrogate(s, test);
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"pearson",
                    e.pearson ? ld::format_double(*e.pearson) : "undefined"});
    rows.push_back({"mae", ld::format_double(e.mae)});
    ld::write_csv(out_path, {"metric", "value"}, rows);
    std::cout << "pearson = " << rows[0][1] << ", mae = " << rows[1][1] << "\n";
    return 0;
  }

  if (sp->parsed()) {
    std::vector<ld::Dag> data = ld::load_dataset(sp_data);
    auto [dev, held] = ld::quantile_split(data, quantiles, hold);
    ld::save_dataset(dev, out_dev);
    ld::save_dataset(held, out_held);
    std::cout << "dev: " << dev.size() << " graphs, held: " << held.size()
              << " graphs\n";
    return 0;
  }

  return run_gradcheck();
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ld::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ld::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitData;
  } catch (const ld::VersionMismatch& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitData;
  } catch (const ld::CorruptFile& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::underflow_error& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::runtime_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::string msg = e.what();
    return msg.find("non-finite") != std::string::npos ? kExitNumeric
                                                       : kExitData;
  }
}
