#include "prf/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <vector>

#include "CLI11.hpp"
#include "prf/encoder.hpp"
#include "prf/error.hpp"
#include "prf/evaluator.hpp"
#include "prf/index.hpp"
#include "prf/pipeline.hpp"
#include "prf/run.hpp"
#include "prf/synthetic.hpp"
#include "prf/util.hpp"

namespace prf::cli {
namespace {

using nlohmann::json;

template <typename T>
T field(const json& j, const char* key, T fallback) {
  const auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw InputError(std::string("config field '") + key + "' has the wrong type");
  }
}

enum class Kind { String, Int, Real, Flag };

struct Override {
  const char* flag;
  const char* key;  // "train.x" addresses the nested train block
  Kind kind;
  const char* help;
};

constexpr Override kOverrides[] = {
    {"--vocab", "vocab", Kind::String, "vocabulary file"},
    {"--corpus", "corpus", Kind::String, "corpus TSV (doc_id<TAB>text)"},
    {"--queries", "queries", Kind::String, "queries TSV (query_id<TAB>text)"},
    {"--qrels", "qrels", Kind::String, "qrels file (qid 0 docid grade)"},
    {"--index", "index", Kind::String, "index file"},
    {"--params", "params", Kind::String, "base encoder params"},
    {"--prf-params", "prf_params", Kind::String, "PRF query encoder params"},
    {"--template", "template", Kind::String, "ance|tct|dbert"},
    {"--case", "case", Kind::String, "preserve|lower"},
    {"--prf-depth", "prf_depth", Kind::Int, "feedback documents k"},
    {"--topk", "topk", Kind::Int, "results per query"},
    {"--seed", "seed", Kind::Int, "root seed"},
    {"--optimizer", "train.optimizer", Kind::String, "adamw|lamb"},
    {"--lr", "train.learning_rate", Kind::Real, "learning rate"},
    {"--batch-size", "train.batch_size", Kind::Int, "examples per microbatch"},
    {"--grad-accum", "train.grad_accum_steps", Kind::Int, "microbatches per step"},
    {"--epochs", "train.epochs", Kind::Int, "training epochs"},
    {"--negatives", "train.negatives_per_query", Kind::Int, "hard negatives per query"},
    {"--pool-depth", "train.negative_pool_depth", Kind::Int, "negative sampling depth"},
    {"--in-batch", "train.in_batch_negatives", Kind::Flag, "add in-batch negatives"},
    {"--head-policy", "train.head_policy", Kind::String, "inherit|reinit"},
};

// Which overrides a subcommand accepts.
using FlagSet = std::set<std::string_view>;

class Workspace {
 public:
  void attach(CLI::App& app, const FlagSet& flags) {
    app.add_option("--config", config_path_, "JSON workspace config")->check(CLI::ExistingFile);
    for (const auto& o : kOverrides) {
      if (!flags.contains(o.flag)) continue;
      if (o.kind == Kind::Flag) {
        app.add_flag(o.flag, flags_[o.key], o.help);
      } else {
        app.add_option(o.flag, raw_[o.key], o.help);
      }
    }
  }

  WorkspaceConfig resolve() const {
    json j = json::object();
    if (!config_path_.empty()) {
      std::ifstream in(config_path_);
      if (!in) throw InputError("no such file: " + config_path_);
      try {
        j = json::parse(in);
      } catch (const json::exception& e) {
        throw InputError("malformed config " + config_path_ + ": " + e.what());
      }
      if (!j.is_object()) throw InputError("config must be a JSON object");
    }
    for (const auto& o : kOverrides) {
      json value;
      if (o.kind == Kind::Flag) {
        const auto it = flags_.find(o.key);
        if (it == flags_.end() || !it->second) continue;
        value = true;
      } else {
        const auto it = raw_.find(o.key);
        if (it == raw_.end() || it->second.empty()) continue;
        value = convert(o, it->second);
      }
      const std::string_view key = o.key;
      if (key.starts_with("train.")) {
        if (!j.contains("train")) j["train"] = json::object();
        j["train"][std::string(key.substr(6))] = value;
      } else {
        j[std::string(key)] = value;
      }
    }
    return WorkspaceConfig::from_json(j);
  }

 private:
  static json convert(const Override& o, const std::string& text) {
    try {
      std::size_t used = 0;
      if (o.kind == Kind::Int) {
        const long long v = std::stoll(text, &used);
        if (used == text.size()) return v;
      } else if (o.kind == Kind::Real) {
        const double v = std::stod(text, &used);
        if (used == text.size()) return v;
      } else {
        return text;
      }
    } catch (const std::logic_error&) {
    }
    throw InputError(std::string("invalid value for ") + o.flag + ": " + text);
  }

  std::string config_path_;
  std::map<std::string, std::string> raw_;
  std::map<std::string, bool> flags_;
};

std::string require(const std::string& value, const char* what) {
  if (value.empty()) throw InputError(std::string("missing ") + what);
  return value;
}

void check_depth(const WorkspaceConfig& ws) {
  if (static_cast<std::size_t>(ws.prf_depth) > ws.topk) {
    throw InputError("prf depth " + std::to_string(ws.prf_depth) + " exceeds topk " +
                     std::to_string(ws.topk));
  }
}

void ensure_parent(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

int cmd_build_vocab(const WorkspaceConfig& ws, const std::string& out_path, int min_count,
                    std::ostream& out) {
  const auto corpus = read_tsv(require(ws.corpus, "--corpus"));
  std::vector<std::string> texts;
  texts.reserve(corpus.size());
  for (const auto& r : corpus) texts.push_back(r.text);
  if (!ws.queries.empty()) {
    for (const auto& r : read_tsv(ws.queries)) texts.push_back(r.text);
  }
  const Vocab vocab = build_vocab(texts, min_count);
  ensure_parent(out_path);
  vocab.save(out_path);
  out << "vocab: " << vocab.size() << " tokens -> " << out_path << "\n";
  return kOk;
}

int cmd_init_encoder(const WorkspaceConfig& ws, EncoderConfig shape,
                     const std::string& out_path, std::ostream& out) {
  const Vocab vocab = Vocab::load(require(ws.vocab, "--vocab"));
  shape.vocab_size = static_cast<std::int32_t>(vocab.size());
  shape.validate();
  const EncoderParams p = random_encoder(shape, derive_seed(ws.seed.value_or(42), "init"));
  ensure_parent(out_path);
  save_params(p, out_path);
  out << "encoder: " << p.parameter_count() << " parameters -> " << out_path << "\n";
  return kOk;
}

int cmd_make_synthetic(const WorkspaceConfig& ws, const std::string& dir, std::ostream& out) {
  synthetic::CollectionConfig cc;
  synthetic::EncoderRecipe recipe;
  if (ws.seed) {
    cc.seed = *ws.seed;
    recipe.seed = derive_seed(*ws.seed, "encoder");
  }
  const auto col = synthetic::make_collection(cc);
  std::filesystem::create_directories(dir);
  const std::filesystem::path root(dir);
  write_tsv(col.corpus, root / "corpus.tsv");
  write_tsv(col.train_queries, root / "train_queries.tsv");
  write_tsv(col.eval_queries, root / "eval_queries.tsv");
  col.qrels.save(root / "qrels.txt");

  std::vector<std::string> texts;
  for (const auto& r : col.corpus) texts.push_back(r.text);
  for (const auto& r : col.train_queries) texts.push_back(r.text);
  for (const auto& r : col.eval_queries) texts.push_back(r.text);
  const Vocab vocab = build_vocab(texts, 1);
  vocab.save(root / "vocab.txt");
  save_params(synthetic::make_topic_encoder(vocab, recipe), root / "base.params");
  out << "synthetic collection: " << col.corpus.size() << " docs, "
      << col.train_queries.size() << " train / " << col.eval_queries.size()
      << " eval queries -> " << dir << "\n";
  return kOk;
}

int cmd_encode_corpus(const WorkspaceConfig& ws, const std::string& out_path,
                      std::ostream& out) {
  const Vocab vocab = Vocab::load(require(ws.vocab, "--vocab"));
  const EncoderParams params = load_params(require(ws.params, "--params"));
  const auto corpus = read_tsv(require(ws.corpus, "--corpus"));
  const PrfTemplate tmpl(ws.template_kind, static_cast<std::size_t>(params.config.max_len));
  const VectorIndex index = encode_corpus(corpus, vocab, params, tmpl, ws.case_policy);
  ensure_parent(out_path);
  index.save(out_path);
  char checksum[32];
  std::snprintf(checksum, sizeof checksum, "%016llx",
                static_cast<unsigned long long>(index.checksum()));
  out << "index: " << index.size() << " documents, checksum " << checksum << " -> "
      << out_path << "\n";
  return kOk;
}

int cmd_search(const WorkspaceConfig& ws, const std::string& out_path, std::string tag,
               std::ostream& out) {
  const Vocab vocab = Vocab::load(require(ws.vocab, "--vocab"));
  const EncoderParams params = load_params(require(ws.params, "--params"));
  const VectorIndex index = VectorIndex::load(require(ws.index, "--index"));
  const auto queries = read_tsv(require(ws.queries, "--queries"));
  if (tag.empty()) tag = "first";
  const RunList run = run_first_round(queries, vocab, params, index, ws.topk, ws.case_policy, tag);
  ensure_parent(out_path);
  write_run(run, out_path);
  out << "search: " << queries.size() << " queries -> " << out_path << "\n";
  return kOk;
}

int cmd_search_prf(const WorkspaceConfig& ws, const std::string& out_path, std::string tag,
                   std::ostream& out) {
  check_depth(ws);
  const PrfDepth depth(ws.prf_depth);
  const Vocab vocab = Vocab::load(require(ws.vocab, "--vocab"));
  const EncoderParams base = load_params(require(ws.params, "--params"));
  const EncoderParams prf = ws.prf_params.empty() ? base : load_params(ws.prf_params);
  const VectorIndex index = VectorIndex::load(require(ws.index, "--index"));
  const DocumentStore docs(read_tsv(require(ws.corpus, "--corpus")));
  const auto queries = read_tsv(require(ws.queries, "--queries"));
  const PrfTemplate tmpl(ws.template_kind, static_cast<std::size_t>(prf.config.max_len));
  if (tag.empty()) tag = default_run_tag(depth);
  const RunList run = run_prf(queries, vocab, base, prf, index, docs, depth, tmpl, ws.topk,
                              ws.case_policy, tag);
  ensure_parent(out_path);
  write_run(run, out_path);
  out << "search-prf: " << queries.size() << " queries, depth " << depth.k() << " -> "
      << out_path << "\n";
  return kOk;
}

int cmd_train(const WorkspaceConfig& ws, const std::string& out_path,
              const std::string& log_path, std::ostream& out) {
  const PrfDepth depth(ws.prf_depth);
  const TrainConfig& cfg = ws.train;
  const Vocab vocab = Vocab::load(require(ws.vocab, "--vocab"));
  const EncoderParams base = load_params(require(ws.params, "--params"));
  const VectorIndex index = VectorIndex::load(require(ws.index, "--index"));
  const DocumentStore docs(read_tsv(require(ws.corpus, "--corpus")));
  const auto queries = read_tsv(require(ws.queries, "--queries"));
  const Qrels qrels = Qrels::load(require(ws.qrels, "--qrels"));
  const PrfTemplate tmpl(ws.template_kind, static_cast<std::size_t>(base.config.max_len));

  const auto pool = static_cast<std::size_t>(std::max(cfg.negative_pool_depth, depth.k()));
  const RunList first = run_first_round(queries, vocab, base, index, pool, ws.case_policy, "first");
  auto examples = build_training_examples(queries, first, qrels, vocab, docs, depth, tmpl,
                                          ws.case_policy, cfg);
  if (examples.empty()) throw InputError("no training queries with relevant documents");
  const TrainResult result =
      train(std::move(examples), base, index, cfg, resample_negatives_each_epoch(first, qrels, cfg));

  ensure_parent(out_path);
  save_params(result.params, out_path);
  if (!log_path.empty()) {
    ensure_parent(log_path);
    write_train_log(result.log, log_path);
  }
  for (std::size_t e = 0; e < result.epoch_mean_loss.size(); ++e) {
    char line[64];
    std::snprintf(line, sizeof line, "epoch %zu loss %.6f\n", e + 1, result.epoch_mean_loss[e]);
    out << line;
  }
  out << "train: " << result.log.size() << " steps -> " << out_path << "\n";
  return kOk;
}

struct EvalOptions {
  std::string run;
  std::string baseline;
  std::string gain = "linear";
  int recall_threshold = 0;  // 0 picks the qrels default
};

int cmd_eval(const WorkspaceConfig& ws, const EvalOptions& opt, std::ostream& out) {
  const Qrels qrels = Qrels::load(require(ws.qrels, "--qrels"));
  const RunList run = read_run(require(opt.run, "--run"));
  GainKind gain = GainKind::Linear;
  if (opt.gain == "exp" || opt.gain == "exponential") {
    gain = GainKind::Exponential;
  } else if (opt.gain != "linear") {
    throw InputError("unknown gain '" + opt.gain + "'");
  }
  const int threshold =
      opt.recall_threshold > 0 ? opt.recall_threshold : default_recall_threshold(qrels);

  using Metric = std::function<MetricReport(const RunList&)>;
  const std::vector<Metric> metrics = {
      [&](const RunList& r) { return mrr_at_k(r, qrels, 10); },
      [&](const RunList& r) { return ndcg_at_k(r, qrels, 10, gain); },
      [&](const RunList& r) { return recall_at_k(r, qrels, 1000, threshold); },
  };
  std::optional<RunList> baseline;
  if (!opt.baseline.empty()) baseline = read_run(opt.baseline);

  char line[128];
  std::snprintf(line, sizeof line, "%-8s %6s %8s %s\n", "metric", "cutoff", "mean",
                baseline ? "p<0.05" : "");
  out << line;
  for (const auto& metric : metrics) {
    const MetricReport report = metric(run);
    std::string mark;
    if (baseline) {
      try {
        if (paired_t_test(report.per_query, metric(*baseline).per_query).p < 0.05) mark = "†";
      } catch (const Error&) {
        // identical or too few paired queries: nothing to flag
      }
    }
    std::snprintf(line, sizeof line, "%-8s %6d %8.4f %s\n", report.metric_name.c_str(),
                  report.cutoff, report.mean, mark.c_str());
    out << line;
  }
  return kOk;
}

}  // namespace

WorkspaceConfig WorkspaceConfig::from_json(const json& j) {
  if (!j.is_object()) throw InputError("config must be a JSON object");
  static const std::set<std::string> kKnown = {
      "vocab", "corpus", "queries", "qrels", "index", "params", "prf_params",
      "template", "case", "prf_depth", "topk", "seed", "train"};
  for (const auto& [key, value] : j.items()) {
    if (!kKnown.contains(key)) throw InputError("unknown config field '" + key + "'");
  }
  WorkspaceConfig c;
  c.vocab = field<std::string>(j, "vocab", "");
  c.corpus = field<std::string>(j, "corpus", "");
  c.queries = field<std::string>(j, "queries", "");
  c.qrels = field<std::string>(j, "qrels", "");
  c.index = field<std::string>(j, "index", "");
  c.params = field<std::string>(j, "params", "");
  c.prf_params = field<std::string>(j, "prf_params", "");
  c.template_kind = parse_template_kind(field<std::string>(j, "template", "ance"));
  c.case_policy = parse_case_policy(field<std::string>(j, "case", "preserve"));
  c.prf_depth = field<int>(j, "prf_depth", c.prf_depth);
  PrfDepth{c.prf_depth};  // validates the range
  const auto topk = field<long long>(j, "topk", static_cast<long long>(c.topk));
  if (topk < 1) throw InputError("topk must be >= 1");
  c.topk = static_cast<std::size_t>(topk);
  if (j.contains("seed")) {
    const auto seed = field<long long>(j, "seed", 0);
    if (seed < 0) throw InputError("seed must be >= 0");
    c.seed = static_cast<std::uint64_t>(seed);
  }
  if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
  if (c.seed) c.train.seed = *c.seed;
  return c;
}

json WorkspaceConfig::to_json() const {
  json j = {{"vocab", vocab},         {"corpus", corpus},
            {"queries", queries},     {"qrels", qrels},
            {"index", index},         {"params", params},
            {"prf_params", prf_params},
            {"template", std::string(to_string(template_kind))},
            {"case", std::string(to_string(case_policy))},
            {"prf_depth", prf_depth}, {"topk", topk},
            {"train", train.to_json()}};
  if (seed) j["seed"] = *seed;
  return j;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app("Dense retrieval with pseudo-relevance feedback", "prf");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  const FlagSet retrieval = {"--vocab", "--params", "--index", "--queries", "--case", "--topk"};
  auto with = [](FlagSet base, std::initializer_list<std::string_view> extra) {
    base.insert(extra.begin(), extra.end());
    return base;
  };

  std::string out_path;
  std::string tag;
  std::string log_path;
  int min_count = 1;
  EncoderConfig shape;
  EvalOptions eval_opt;
  std::map<CLI::App*, Workspace> spaces;
  std::map<CLI::App*, std::function<int(const WorkspaceConfig&)>> actions;

  auto add = [&](const char* name, const char* about, const FlagSet& flags,
                 std::function<int(const WorkspaceConfig&)> action) {
    CLI::App* sub = app.add_subcommand(name, about);
    spaces[sub].attach(*sub, flags);
    actions[sub] = std::move(action);
    return sub;
  };

  auto* build_vocab_cmd = add("build-vocab", "Build a vocabulary from a corpus TSV",
                              {"--corpus", "--queries"}, [&](const WorkspaceConfig& ws) {
                                return cmd_build_vocab(ws, out_path, min_count, out);
                              });
  build_vocab_cmd->add_option("--out", out_path, "vocabulary output")->required();
  build_vocab_cmd->add_option("--min-count", min_count, "minimum token frequency");

  auto* init_cmd = add("init-encoder", "Write a randomly initialised encoder",
                       {"--vocab", "--seed"}, [&](const WorkspaceConfig& ws) {
                         return cmd_init_encoder(ws, shape, out_path, out);
                       });
  init_cmd->add_option("--out", out_path, "params output")->required();
  init_cmd->add_option("--dim", shape.dim, "embedding width");
  init_cmd->add_option("--layers", shape.layers, "attention blocks");
  init_cmd->add_option("--heads", shape.heads, "attention heads");
  init_cmd->add_option("--max-len", shape.max_len, "positions");

  auto* synth_cmd = add("make-synthetic", "Write a synthetic topic collection and base encoder",
                        {"--seed"}, [&](const WorkspaceConfig& ws) {
                          return cmd_make_synthetic(ws, out_path, out);
                        });
  synth_cmd->add_option("--out-dir", out_path, "output directory")->required();

  auto* encode_cmd = add("encode-corpus", "Encode a corpus and build the index",
                         {"--vocab", "--params", "--corpus", "--template", "--case"},
                         [&](const WorkspaceConfig& ws) {
                           return cmd_encode_corpus(ws, out_path, out);
                         });
  encode_cmd->add_option("--out", out_path, "index output")->required();

  auto* search_cmd = add("search", "First-round retrieval", retrieval,
                         [&](const WorkspaceConfig& ws) {
                           return cmd_search(ws, out_path, tag, out);
                         });
  search_cmd->add_option("--out", out_path, "run output")->required();
  search_cmd->add_option("--tag", tag, "run tag");

  auto* prf_cmd = add("search-prf", "Two-round retrieval with pseudo-relevance feedback",
                      with(retrieval, {"--prf-params", "--corpus", "--prf-depth", "--template"}),
                      [&](const WorkspaceConfig& ws) {
                        return cmd_search_prf(ws, out_path, tag, out);
                      });
  prf_cmd->add_option("--out", out_path, "run output")->required();
  prf_cmd->add_option("--tag", tag, "run tag (default prf<k>)");

  auto* train_cmd = add(
      "train", "Train a PRF query encoder",
      with(retrieval, {"--corpus", "--qrels", "--prf-depth", "--template", "--seed",
                       "--optimizer", "--lr", "--batch-size", "--grad-accum", "--epochs",
                       "--negatives", "--pool-depth", "--in-batch", "--head-policy"}),
      [&](const WorkspaceConfig& ws) { return cmd_train(ws, out_path, log_path, out); });
  train_cmd->add_option("--out", out_path, "trained params output")->required();
  train_cmd->add_option("--log", log_path, "per-step loss CSV");

  auto* eval_cmd = add("eval", "Evaluate a run against qrels", {"--qrels"},
                       [&](const WorkspaceConfig& ws) { return cmd_eval(ws, eval_opt, out); });
  eval_cmd->add_option("--run", eval_opt.run, "run file")->required();
  eval_cmd->add_option("--baseline", eval_opt.baseline, "baseline run for significance marks");
  eval_cmd->add_option("--gain", eval_opt.gain, "nDCG gain: linear|exp");
  eval_cmd->add_option("--recall-threshold", eval_opt.recall_threshold,
                       "minimum grade counted by recall (default from qrels)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }

  CLI::App* chosen = app.get_subcommands().front();
  try {
    const WorkspaceConfig ws = spaces.at(chosen).resolve();
    return actions.at(chosen)(ws);
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
}

}  // namespace prf::cli
