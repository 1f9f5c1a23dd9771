#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "macd/data.hpp"
#include "macd/errors.hpp"
#include "macd/evaluator.hpp"
#include "macd/gradient_suite.hpp"
#include "macd/trainer.hpp"

namespace macd::cli {

namespace {

using nlohmann::ordered_json;

constexpr const char* kAblationNote =
    "Ablations: --no-local zeroes the local NCE weight and --no-anchor zeroes the anchor\n"
    "weight. The surviving coefficients are rescaled to sum to 1, e.g. the defaults\n"
    "(gamma=1/3, beta=1/3, anchor=1/3) become (1/2, 0, 1/2) under --no-local and\n"
    "(1/2, 1/2, 0) under --no-anchor; both flags together leave the global term alone.";

struct WeightFlags {
  LossWeights w;
  bool no_local = false;
  bool no_anchor = false;
  std::string anchor_direction = "teacher-target";

  void attach(CLI::App& app) {
    app.add_option("--gamma", w.gamma, "Global NCE weight")->capture_default_str();
    app.add_option("--beta", w.beta, "Local NCE weight")->capture_default_str();
    app.add_option("--epsilon", w.epsilon, "Cross-entropy share of the anchor loss")
        ->capture_default_str();
    app.add_option("--tau-sigma", w.tau_sigma, "Energy temperature")->capture_default_str();
    app.add_option("--tau-c", w.tau_c, "Context temperature")->capture_default_str();
    app.add_option("--tau-prime", w.tau_prime, "Distillation temperature")->capture_default_str();
    app.add_option("--anchor-direction", anchor_direction,
                   "teacher-target (-sum t log s) or student-outer (-sum s log t)")
        ->capture_default_str();
    app.add_flag("--no-local", no_local, "Drop the local NCE term");
    app.add_flag("--no-anchor", no_anchor, "Drop the anchor term");
  }

  LossWeights resolve() const {
    LossWeights out = w;
    out.anchor_direction = parse_anchor_direction(anchor_direction);
    out = apply_ablation(out, no_local, no_anchor);
    out.validate();
    return out;
  }
};

void echo(std::ostream& out, const std::string& command, ordered_json config) {
  out << ordered_json{{"command", command}, {"config", std::move(config)}}.dump() << '\n';
}

// Fills options of `sub` that were not given on the command line from an INI/TOML
// file. Keys are long option names; an optional [<subcommand>] section is accepted.
void apply_config_file(CLI::App& sub, const std::string& path) {
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_file(path);
  } catch (const CLI::FileError& e) {
    throw ConfigError(e.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section delimiters
    if (!item.parents.empty() && item.parents != std::vector<std::string>{sub.get_name()})
      throw ConfigError(path + ": section '" + item.parents.front() + "' does not belong to '" +
                        sub.get_name() + "'");
    std::string key = item.name;
    std::replace(key.begin(), key.end(), '_', '-');
    CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (opt == nullptr || key == "config" || key == "help")
      throw ConfigError(path + ": unknown option '" + item.name + "'");
    if (opt->count() > 0) continue;
    try {
      opt->add_result(item.inputs);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw ConfigError(path + ": " + item.name + ": " + e.what());
    }
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open " + path + " for writing");
  return f;
}

TokenSequence parse_tokens(const std::string& text) {
  TokenSequence out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw InputError("bad token id in query: '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw InputError("query has no tokens");
  return out;
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
  SynthConfig cfg;
  std::string out;
  std::string sts_out;
  std::size_t sts_pairs = 256;
  std::string nli_out;
  std::size_t nli_per_label = 100;

  void attach(CLI::App& app) {
    app.add_option("--out", out, "Corpus JSON-lines output")->required();
    app.add_option("--seed", cfg.seed, "Generator seed")->capture_default_str();
    app.add_option("--contexts", cfg.num_contexts, "Number of latent contexts K")->capture_default_str();
    app.add_option("--pairs-per-context", cfg.pairs_per_context)->capture_default_str();
    app.add_option("--vocab", cfg.vocab_size, "Vocabulary size")->capture_default_str();
    app.add_option("--length", cfg.tokens_per_sentence, "Tokens per sentence L")->capture_default_str();
    app.add_option("--grid-side", cfg.grid_side, "Patch grid side M")->capture_default_str();
    app.add_option("--patch-width", cfg.patch_width, "Raw patch feature width")->capture_default_str();
    app.add_option("--noise", cfg.noise_scale, "Patch noise scale")->capture_default_str();
    app.add_option("--context-vocab", cfg.context_vocab, "Private tokens per context")
        ->capture_default_str();
    app.add_option("--context-mass", cfg.context_mass, "Probability mass on private tokens")
        ->capture_default_str();
    app.add_option("--sts-out", sts_out, "Also write a similarity eval set");
    app.add_option("--sts-pairs", sts_pairs)->capture_default_str();
    app.add_option("--nli-out", nli_out, "Also write a three-way inference eval set");
    app.add_option("--nli-per-label", nli_per_label)->capture_default_str();
  }

  int execute(std::ostream& out_stream) const {
    cfg.validate();
    echo(out_stream, "synth",
         {{"seed", cfg.seed},
          {"contexts", cfg.num_contexts},
          {"pairs_per_context", cfg.pairs_per_context},
          {"vocab", cfg.vocab_size},
          {"length", cfg.tokens_per_sentence},
          {"grid_side", cfg.grid_side},
          {"patch_width", cfg.patch_width},
          {"noise", cfg.noise_scale},
          {"context_vocab", cfg.context_vocab},
          {"context_mass", cfg.context_mass},
          {"out", out},
          {"sts_out", sts_out},
          {"sts_pairs", sts_pairs},
          {"nli_out", nli_out},
          {"nli_per_label", nli_per_label}});
    const SyntheticWorld world = make_world(cfg);
    const Corpus corpus = gen_synthetic(cfg);
    save_corpus(out, corpus);
    out_stream << "wrote " << corpus.samples.size() << " samples to " << out << '\n';
    if (!sts_out.empty()) {
      save_eval(sts_out, gen_synthetic_sts(world, sts_pairs, cfg.seed + 1));
      out_stream << "wrote " << sts_pairs << " similarity pairs to " << sts_out << '\n';
    }
    if (!nli_out.empty()) {
      save_eval(nli_out, gen_synthetic_nli(world, nli_per_label, cfg.seed + 2));
      out_stream << "wrote " << 3 * nli_per_label << " inference pairs to " << nli_out << '\n';
    }
    return 0;
  }
};

// ---- train -----------------------------------------------------------------

struct TrainArgs {
  TrainConfig cfg;
  WeightFlags weights;
  std::string corpus;
  std::string out;
  std::string log;
  std::string optimizer = "adam";
  std::string mixing = "self-attention";
  std::string aggregation = "slot";
  std::string pooling = "mean";
  bool keep_last = false;

  void attach(CLI::App& app) {
    app.add_option("--corpus", corpus, "Training corpus (JSON lines)")->required();
    app.add_option("--out", out, "Checkpoint output path")->required();
    app.add_option("--log", log, "Per-batch loss log (default: stdout)");
    app.add_option("--seed", cfg.seed)->capture_default_str();
    app.add_option("--batch-size", cfg.batch_size)->capture_default_str();
    app.add_option("--lr", cfg.learning_rate, "Learning rate")->capture_default_str();
    app.add_option("--epochs", cfg.epochs)->capture_default_str();
    app.add_option("--grad-acc", cfg.grad_accumulation_steps, "Batches averaged per update")
        ->capture_default_str();
    app.add_option("--optimizer", optimizer, "adam or sgd")->capture_default_str();
    app.add_flag("--keep-last", keep_last, "Keep a trailing short batch each epoch");
    weights.attach(app);
    app.add_option("--vocab", cfg.encoder.text.vocab_size, "Text vocabulary size")
        ->capture_default_str();
    app.add_option("--embed-dim", cfg.encoder.text.embed_dim)->capture_default_str();
    app.add_option("--shared-dim", cfg.encoder.text.shared_dim, "Shared feature dimension")
        ->capture_default_str();
    app.add_option("--mixing", mixing, "none, mean-residual or self-attention")->capture_default_str();
    app.add_option("--aggregation", aggregation, "slot or mean")->capture_default_str();
    app.add_flag("--positional", cfg.encoder.text.positional, "Add positional embeddings");
    app.add_option("--pooling", pooling, "Image pooling: mean or max")->capture_default_str();
  }

  int execute(std::ostream& out_stream) {
    const Corpus data = load_corpus(corpus);
    if (data.samples.empty()) throw ContractError("corpus " + corpus + " is empty");
    cfg.weights = weights.resolve();
    cfg.optimizer = parse_optimizer(optimizer);
    cfg.drop_last = !keep_last;
    cfg.checkpoint_path = out;
    cfg.encoder.text.mixing = parse_mixing(mixing);
    cfg.encoder.text.aggregation = parse_aggregation(aggregation);
    cfg.encoder.image.pooling = parse_pooling(pooling);
    cfg.encoder.image.shared_dim = cfg.encoder.text.shared_dim;
    cfg.encoder.image.patch_width = data.samples.front().image.width();
    std::size_t longest = 1;
    for (const auto& s : data.samples) longest = std::max(longest, s.text.size());
    cfg.encoder.text.max_length = std::max(cfg.encoder.text.max_length, longest);
    cfg.validate();

    echo(out_stream, "train",
         {{"corpus", corpus}, {"log", log}, {"train", ordered_json::parse(to_json(cfg))}});
    std::ofstream log_file;
    std::ostream* log_stream = &out_stream;
    if (!log.empty()) {
      log_file = open_out(log);
      log_stream = &log_file;
    }
    const TrainResult r = train(data, cfg, log_stream);
    out_stream << "trained " << r.history.size() << " batches; checkpoint written to " << out << '\n';
    return 0;
  }
};

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string dev;
  std::string mode = "sts";
  Thresholds thresholds;
  std::string out;
  std::string csv;
  CLI::Option* psi1_opt = nullptr;
  CLI::Option* psi2_opt = nullptr;

  void attach(CLI::App& app) {
    app.add_option("--checkpoint", checkpoint)->required();
    app.add_option("--data", data, "Evaluation pairs (JSON lines)")->required();
    app.add_option("--mode", mode, "sts or nli")->capture_default_str();
    psi1_opt = app.add_option("--psi1", thresholds.psi1, "Entailment threshold")->capture_default_str();
    psi2_opt =
        app.add_option("--psi2", thresholds.psi2, "Contradiction threshold")->capture_default_str();
    app.add_option("--dev", dev, "Dev pairs for threshold grid search when --psi1/--psi2 are absent");
    app.add_option("--out", out, "Write the report JSON here instead of stdout");
    app.add_option("--csv", csv, "Write per-label five-number summaries as CSV");
  }

  int execute(std::ostream& out_stream) const {
    const EvalMode m = parse_eval_mode(mode);
    const bool explicit_thresholds = psi1_opt->count() > 0 || psi2_opt->count() > 0;
    const bool search = m == EvalMode::Nli && !explicit_thresholds && !dev.empty();
    ordered_json echo_cfg{{"checkpoint", checkpoint}, {"data", data}, {"mode", mode}};
    if (m == EvalMode::Nli) {
      if (search)
        echo_cfg["thresholds"] = "grid search on " + dev;
      else
        echo_cfg["thresholds"] = {{"psi1", thresholds.psi1}, {"psi2", thresholds.psi2}};
    }
    echo_cfg["out"] = out;
    echo_cfg["csv"] = csv;
    echo(out_stream, "eval", echo_cfg);

    const Checkpoint ck = load_checkpoint(checkpoint);
    const std::vector<EvalPair> pairs = load_eval(data);
    EvalOptions opts;
    if (search)
      opts.dev_pairs = load_eval(dev);
    else
      opts.thresholds = thresholds;
    const EvalReport report = evaluate(pairs, ck.params.text, m, opts);
    if (out.empty()) {
      out_stream << to_json(report) << '\n';
    } else {
      open_out(out) << to_json(report) << '\n';
    }
    if (!csv.empty()) open_out(csv) << per_label_csv(report);
    return 0;
  }
};

// ---- nn --------------------------------------------------------------------

struct NnArgs {
  std::string checkpoint;
  std::string corpus;
  std::string query;
  std::size_t k = 5;

  void attach(CLI::App& app) {
    app.add_option("--checkpoint", checkpoint)->required();
    app.add_option("--corpus", corpus, "Corpus whose sentences are searched")->required();
    app.add_option("--query", query, "Comma-separated token ids, e.g. 3,17,5")->required();
    app.add_option("-k,--k", k, "Number of neighbours")->capture_default_str();
  }

  int execute(std::ostream& out_stream) const {
    echo(out_stream, "nn", {{"checkpoint", checkpoint}, {"corpus", corpus}, {"query", query}, {"k", k}});
    const TokenSequence q = parse_tokens(query);
    const Checkpoint ck = load_checkpoint(checkpoint);
    const Corpus data = load_corpus(corpus);
    std::vector<TokenSequence> sentences;
    for (const auto& s : data.samples) sentences.push_back(s.text);
    const auto ranked = nearest_neighbors(q, sentences, k, ck.params.text);
    ordered_json list = ordered_json::array();
    for (std::size_t r = 0; r < ranked.size(); ++r)
      list.push_back({{"rank", r + 1},
                      {"index", ranked[r].index},
                      {"distance", ranked[r].distance},
                      {"text", sentences[ranked[r].index]}});
    out_stream << list.dump(2) << '\n';
    return 0;
  }
};

// ---- gradcheck -------------------------------------------------------------

struct GradcheckArgs {
  GradSuiteOptions opts;

  void attach(CLI::App& app) {
    app.add_option("--instances", opts.instances, "Random instances")->capture_default_str();
    app.add_option("--seed", opts.base_seed, "Seed of the first instance")->capture_default_str();
    app.add_option("--step", opts.check.step, "Finite-difference step")->capture_default_str();
    app.add_option("--tolerance", opts.check.tolerance, "Max relative error")->capture_default_str();
  }

  int execute(std::ostream& out_stream) const {
    if (opts.instances == 0) throw ConfigError("--instances must be at least 1");
    echo(out_stream, "gradcheck",
         {{"instances", opts.instances},
          {"seed", opts.base_seed},
          {"step", opts.check.step},
          {"tolerance", opts.check.tolerance},
          {"denominator_floor", opts.check.denominator_floor}});
    const GradSuiteResult r = run_gradient_suite(opts);
    std::map<std::string, double> worst;
    for (const auto& e : r.entries) {
      worst[e.name] = std::max(worst[e.name], e.report.max_rel_error);
      if (!e.report.passed)
        out_stream << "FAIL " << e.name << " seed " << e.seed << ": " << e.report.diagnostic << '\n';
    }
    for (const auto& [name, err] : worst)
      out_stream << std::left << std::setw(28) << name << " max_rel_error " << err << '\n';
    out_stream << (r.passed ? "gradcheck passed" : "gradcheck FAILED") << " (" << r.entries.size()
               << " checks, max_rel_error " << r.max_rel_error << ")\n";
    return r.passed ? 0 : 1;
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Decoupled multimodal contrastive training and unsupervised evaluation", "macd"};
  app.require_subcommand(1);
  app.footer(kAblationNote);

  SynthArgs synth;
  TrainArgs train_args;
  EvalArgs eval_args;
  NnArgs nn;
  GradcheckArgs gradcheck;

  std::map<CLI::App*, std::string> config_files;
  auto add = [&](const char* name, const char* desc, auto& target) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->footer("");
    sub->add_option("--config", config_files[sub],
                    "INI/TOML file keyed by long option names; flags override it");
    target.attach(*sub);
    return sub;
  };
  CLI::App* synth_cmd = add("synth", "Generate a synthetic paired corpus", synth);
  CLI::App* train_cmd = add("train", "Train encoders on a corpus and write a checkpoint", train_args);
  train_cmd->footer(kAblationNote);
  CLI::App* eval_cmd = add("eval", "Evaluate the text encoder on similarity or inference pairs", eval_args);
  CLI::App* nn_cmd = add("nn", "Nearest neighbours of a query sentence by L1 distance", nn);
  CLI::App* grad_cmd = add("gradcheck", "Run the finite-difference gradient suite", gradcheck);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    for (auto& [sub, path] : config_files)
      if (sub->parsed() && !path.empty()) apply_config_file(*sub, path);
    if (synth_cmd->parsed()) return synth.execute(out);
    if (train_cmd->parsed()) return train_args.execute(out);
    if (eval_cmd->parsed()) return eval_args.execute(out);
    if (nn_cmd->parsed()) return nn.execute(out);
    if (grad_cmd->parsed()) return gradcheck.execute(out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace macd::cli
