#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rhia/rhia.hpp"

namespace fs = std::filesystem;
using namespace rhia;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

const char* kFormats = R"(File formats:
  corpus      one sentence per line, 6 tab-separated fields:
              head-id, tail-id, head surface, tail surface, relation, tokens
              (space separated). Plain text or gzip. Relations are slash paths;
              NA marks no relation.
  --data      a corpus file, or a directory holding train.txt / test.txt
              (optionally .gz).
  config      key = value lines, '#' comments. Keys are the flags listed under
              train; a flag overrides the file, the file overrides defaults.
  embeddings  one word per line followed by its vector; an optional
              word2vec "count dim" header is skipped.
  metrics.tsv epoch, L_re, L_hier, L_ord, reg, val_AUC (tab separated).
  PR file     precision, recall per ranked prediction (tab separated).
  plan        key = value synthetic corpus recipe (relations, bags, skew,
              noise_rate, seed, ...).
Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.)";

// Streams a file through FNV-1a so large corpora are not held in memory.
std::pair<std::uint64_t, std::uintmax_t> file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::uint64_t h = 1469598103934665603ull;
  std::uintmax_t n = 0;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    n += static_cast<std::uintmax_t>(in.gcount());
  }
  return {h, n};
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// `data` may be a corpus file or a directory with <split>.txt[.gz].
std::string resolve_split(const std::string& data, const std::string& split) {
  if (fs::is_regular_file(data)) return data;
  if (fs::is_directory(data)) {
    for (const char* ext : {".txt", ".txt.gz"}) {
      const fs::path p = fs::path(data) / (split + ext);
      if (fs::is_regular_file(p)) return p.string();
    }
    throw DataError("'" + data + "' has no " + split + ".txt or " + split + ".txt.gz");
  }
  throw DataError("data path '" + data + "' does not exist");
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write '" + path + "'");
  return f;
}

struct ConfigFlags {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void add(CLI::App* app) {
    const RunConfig defaults;
    for (const auto& k : config_keys()) {
      options[k.name] = app->add_option("--" + k.name, values[k.name], k.help + " (default " + k.get(defaults) + ")");
    }
  }

  // defaults < config file < flags
  RunConfig resolve(const std::string& config_path) const {
    RunConfig c;
    if (!config_path.empty()) apply_config_text(c, read_text_file(config_path), config_path);
    for (const auto& [name, opt] : options)
      if (opt->count() > 0) set_config_value(c, name, values.at(name));
    validate_config(c);
    return c;
  }
};

// train

struct TrainArgs {
  std::string data, embeddings, config, out;
  ConfigFlags flags;
};

template <class T>
void run_training(const TrainData& data, const RunConfig& cfg, const std::string& out) {
  auto metrics = open_out((fs::path(out) / "metrics.tsv").string());
  const auto ckpt = (fs::path(out) / "model.ckpt").string();
  const auto result = train<T>(data, cfg, ckpt, &metrics);
  std::cout << "trained " << result.history.size() << " epochs; best epoch " << result.best_epoch;
  if (result.best_val_auc >= 0) std::cout << " val_AUC " << result.best_val_auc;
  std::cout << "\nwrote " << ckpt << '\n';
}

int cmd_train(const TrainArgs& a) {
  const RunConfig cfg = a.flags.resolve(a.config);

  // everything is read before the output directory is touched
  const std::string train_path = resolve_split(a.data, "train");
  std::optional<EmbeddingTable> table;
  if (!a.embeddings.empty()) table = load_embeddings(a.embeddings);
  const auto records = read_corpus(train_path);
  if (records.empty()) throw DataError("'" + train_path + "' holds no records");

  TrainData data;
  data.vocab = table ? table->vocab : vocabulary_from_records(records);
  data.hierarchy = RelationHierarchy::build(relation_names(records), cfg.model.levels);
  auto set = build_bags(records, data.vocab, data.hierarchy, BagMode::Train, cfg.model.max_len);
  if (set.bags.empty()) throw DataError("no usable training bags in '" + train_path + "'");
  data.bags = std::move(set.bags);
  data.relation_instances = set.stats.relation_instances;
  data.embeddings = table ? &*table : nullptr;

  nlohmann::ordered_json manifest;
  manifest["version"] = std::string(kVersion);
  manifest["command"] = "train";
  nlohmann::ordered_json jc = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config_values(cfg)) jc[k] = v;
  manifest["config"] = jc;
  manifest["seed"] = cfg.train.seed;
  auto digest = [](const std::string& path) {
    const auto [h, n] = file_digest(path);
    nlohmann::ordered_json j;
    j["path"] = path;
    j["bytes"] = n;
    j["fnv1a"] = hex64(h);
    return j;
  };
  manifest["data"]["train"] = digest(train_path);
  if (!a.embeddings.empty()) manifest["data"]["embeddings"] = digest(a.embeddings);
  manifest["corpus"]["records"] = set.stats.records;
  manifest["corpus"]["sentences"] = set.stats.sentences;
  manifest["corpus"]["bags"] = data.bags.size();
  manifest["corpus"]["relations"] = data.hierarchy.num_relations();
  manifest["corpus"]["vocabulary"] = data.vocab.size();

  fs::create_directories(a.out);
  open_out((fs::path(a.out) / "manifest.json").string()) << manifest.dump(2) << '\n';
  {
    auto stats = open_out((fs::path(a.out) / "corpus_stats.txt").string());
    write_stats(stats, set.stats, data.hierarchy);
  }
  std::cout << data.bags.size() << " bags, " << set.stats.sentences << " sentences, "
            << data.hierarchy.num_relations() << " relations (" << set.stats.rejected() << " records rejected)\n";

  if (cfg.train.precision == "double") run_training<double>(data, cfg, a.out);
  else run_training<float>(data, cfg, a.out);
  return 0;
}

// eval and curves

template <class T>
struct EvalInput {
  LoadedCheckpoint<T> ckpt;
  std::vector<Bag> bags;
};

template <class T>
EvalInput<T> load_eval_input(const std::string& checkpoint, const std::string& data) {
  EvalInput<T> in{load_checkpoint<T>(checkpoint), {}};
  const std::string test_path = resolve_split(data, "test");
  const auto records = read_corpus(test_path);
  for (const auto& name : relation_names(records)) {
    if (!in.ckpt.hierarchy.find(name)) {
      throw DataError("hierarchy mismatch: test relation '" + name + "' is unknown to checkpoint '" + checkpoint +
                      "'");
    }
  }
  auto set = build_bags(records, in.ckpt.vocab, in.ckpt.hierarchy, BagMode::Test, in.ckpt.meta.config.model.max_len);
  if (set.stats.rejected() > 0) {
    std::cerr << "note: " << set.stats.rejected() << " test records rejected (entity not found or beyond max_len)\n";
  }
  if (set.bags.empty()) throw DataError("no usable test bags in '" + test_path + "'");
  in.bags = std::move(set.bags);
  return in;
}

struct EvalArgs {
  std::string checkpoint, data, retention = "all", report, pr, trace;
  std::size_t trace_bags = 20;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
};

template <class T>
int run_eval(const EvalArgs& a) {
  const Retention retention = parse_retention(a.retention);
  auto in = load_eval_input<T>(a.checkpoint, a.data);
  const auto& cfg = in.ckpt.meta.config.model;
  const auto rep = evaluate(in.ckpt.params, cfg, in.ckpt.hierarchy, in.bags, in.ckpt.meta.train_relation_instances,
                            retention, a.seed, a.threads);
  if (a.report.empty()) {
    write_report(std::cout, rep, in.ckpt.hierarchy);
  } else {
    auto f = open_out(a.report);
    write_report(f, rep, in.ckpt.hierarchy);
  }
  if (!a.pr.empty()) {
    auto f = open_out(a.pr);
    write_pr_points(f, rep.pr);
  }
  if (!a.trace.empty()) {
    auto f = open_out(a.trace);
    write_attention_trace(f, in.ckpt.params, cfg, in.ckpt.hierarchy, in.bags, a.trace_bags);
  }
  return 0;
}

int cmd_eval(const EvalArgs& a) {
  parse_retention(a.retention);
  return checkpoint_width(a.checkpoint) == 8 ? run_eval<double>(a) : run_eval<float>(a);
}

struct CurvesArgs {
  std::vector<std::string> checkpoints;
  std::string data, out;
  std::size_t threads = 1;
};

template <class T>
std::pair<PrCurve, std::size_t> curve_for(const std::string& checkpoint, const std::string& data, std::size_t threads) {
  auto in = load_eval_input<T>(checkpoint, data);
  const auto probs = score_bags(in.ckpt.params, in.ckpt.meta.config.model, in.ckpt.hierarchy, in.bags, threads);
  const std::size_t facts = total_positive_facts(in.bags);
  return {pr_curve(rank_predictions(probs, in.bags), facts), facts};
}

int cmd_curves(const CurvesArgs& a) {
  for (const auto& c : a.checkpoints) checkpoint_width(c);
  resolve_split(a.data, "test");
  fs::create_directories(a.out);
  auto summary = open_out((fs::path(a.out) / "summary.tsv").string());
  summary << "curve\tcheckpoint\tAUC\tMax_F1\n";
  for (std::size_t i = 0; i < a.checkpoints.size(); ++i) {
    const auto& c = a.checkpoints[i];
    const auto [curve, facts] = checkpoint_width(c) == 8 ? curve_for<double>(c, a.data, a.threads)
                                                         : curve_for<float>(c, a.data, a.threads);
    const std::string name = "curve_" + std::to_string(i + 1) + ".tsv";
    auto f = open_out((fs::path(a.out) / name).string());
    write_pr_points(f, curve);
    summary << name << '\t' << c << '\t' << std::fixed << std::setprecision(4) << curve.auc << '\t' << curve.max_f1
            << '\n';
    summary.unsetf(std::ios::floatfield);
    std::cout << name << '\t' << c << "\tAUC " << curve.auc << "\tMax_F1 " << curve.max_f1 << '\n';
  }
  return 0;
}

// gradcheck

struct GradcheckArgs {
  std::string dims = "toy";
  double tol = 1e-4;
  double step = 1e-5;
  std::size_t max_coords = 0;
  std::uint64_t seed = 1;
  std::string corrupt_op;
};

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

int cmd_gradcheck(const GradcheckArgs& a) {
  if (a.dims != "toy" && a.dims != "default") throw UsageError("--dims must be toy or default");
  GradCheckOptions opt;
  opt.tolerance = a.tol;
  opt.step = a.step;
  opt.seed = a.seed;
  // the published sizes have ~10^6 coordinates; sample them
  opt.max_coords = a.max_coords > 0 ? a.max_coords : (a.dims == "default" ? 4 : 0);
  fault_hook().op = a.corrupt_op;

  const auto checks = check_primitives(opt, a.seed + 4);
  if (!a.corrupt_op.empty() &&
      std::none_of(checks.begin(), checks.end(), [&](const auto& c) { return c.recorded.count(a.corrupt_op) > 0; })) {
    fault_hook().op.clear();
    throw UsageError("--corrupt-op '" + a.corrupt_op + "' names no recorded op");
  }
  bool ok = true;
  for (const auto& c : checks) {
    ok = ok && c.report.passed;
    std::cout << "primitive " << c.op << ' ' << first_line(c.report.summary()) << '\n';
    if (!c.report.passed && !c.report.worst.empty()) {
      const auto& w = c.report.worst.front();
      std::cout << "  worst " << w.param << '[' << w.index << "] analytic=" << w.analytic << " numeric=" << w.numeric
                << '\n';
    }
  }
  const auto toy = toy_problem(a.dims == "default");
  const auto composed = check_composed(toy, opt, a.seed);
  ok = ok && composed.passed;
  std::cout << "composed loss (" << a.dims << " dims, |R|=" << toy.hierarchy.num_relations() << ", bags of "
            << toy.bags[0].instances.size() << " and " << toy.bags[1].instances.size() << " sentences) "
            << composed.summary() << '\n';
  std::cout << "gradcheck " << (ok ? "PASS" : "FAIL") << " tol=" << a.tol << " step=" << a.step << '\n';
  fault_hook().op.clear();
  return ok ? 0 : kExitNumeric;
}

// gensynth and convert-nyt

struct GensynthArgs {
  std::string plan, out;
  std::optional<std::uint64_t> seed;
};

int cmd_gensynth(const GensynthArgs& a) {
  SyntheticPlan plan = parse_plan(read_text_file(a.plan), a.plan);
  if (a.seed) plan.seed = *a.seed;
  const auto corpus = generate_synthetic(plan);
  write_synthetic(a.out, plan, corpus);
  std::cout << "wrote " << corpus.train.size() << " training and " << corpus.test.size() << " test sentences to "
            << a.out << '\n';
  return 0;
}

struct ConvertArgs {
  std::string in, out;
};

int cmd_convert(const ConvertArgs& a) {
  std::vector<RawRecord> records;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(a.in)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    records.push_back(parse_nyt_line(line, a.in + ":" + std::to_string(lineno)));
  }
  write_corpus(a.out, records);
  std::cout << "converted " << records.size() << " records\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relation extraction with hierarchical relation-augmented attention"};
  app.footer(kFormats);
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "train a model; writes manifest.json, corpus_stats.txt, metrics.tsv "
                                                 "and model.ckpt under --out");
  train_cmd->add_option("--data", ta.data, "corpus file or directory with train.txt")->required();
  train_cmd->add_option("--embeddings", ta.embeddings, "pre-trained word vectors (text)");
  train_cmd->add_option("--config", ta.config, "key = value config file");
  train_cmd->add_option("--out", ta.out, "output directory")->required();
  ta.flags.add(train_cmd);

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "held-out evaluation of a checkpoint on test.txt");
  eval_cmd->add_option("--checkpoint", ea.checkpoint, "model.ckpt from train")->required();
  eval_cmd->add_option("--data", ea.data, "corpus file or directory with test.txt")->required();
  eval_cmd->add_option("--retention", ea.retention, "sentences kept per multi-sentence bag: one, two or all")
      ->capture_default_str();
  eval_cmd->add_option("--report", ea.report, "metrics report path (stdout if omitted)");
  eval_cmd->add_option("--pr", ea.pr, "write PR points (precision, recall) here");
  eval_cmd->add_option("--trace", ea.trace, "write per-sentence attention over hierarchy levels here");
  eval_cmd->add_option("--trace-bags", ea.trace_bags, "bags to include in the trace")->capture_default_str();
  eval_cmd->add_option("--seed", ea.seed, "retention sampling seed")->capture_default_str();
  eval_cmd->add_option("--threads", ea.threads, "scoring threads")->capture_default_str()->check(CLI::PositiveNumber);

  CurvesArgs ca;
  auto* curves_cmd = app.add_subcommand("curves", "PR curve data for several checkpoints on one test set; writes "
                                                   "curve_<i>.tsv and summary.tsv under --out");
  curves_cmd->add_option("--checkpoint", ca.checkpoints, "checkpoint (repeatable)")->required();
  curves_cmd->add_option("--data", ca.data, "corpus file or directory with test.txt")->required();
  curves_cmd->add_option("--out", ca.out, "output directory")->required();
  curves_cmd->add_option("--threads", ca.threads, "scoring threads")->capture_default_str()->check(CLI::PositiveNumber);

  GradcheckArgs ga;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of every primitive and of the full loss");
  gc_cmd->add_option("--dims", ga.dims, "toy or default layer sizes")->capture_default_str();
  gc_cmd->add_option("--tol", ga.tol, "maximum relative error")->capture_default_str();
  gc_cmd->add_option("--step", ga.step, "central-difference half width")->capture_default_str();
  gc_cmd->add_option("--max-coords", ga.max_coords, "coordinates per tensor, 0 for all (default dims: 4)");
  gc_cmd->add_option("--seed", ga.seed, "parameter seed")->capture_default_str();
  gc_cmd->add_option("--corrupt-op", ga.corrupt_op, "")->group("");

  GensynthArgs sa;
  auto* gs_cmd = app.add_subcommand("gensynth", "generate a synthetic corpus; writes train.txt, test.txt, stats.txt");
  gs_cmd->add_option("--plan", sa.plan, "plan file")->required();
  gs_cmd->add_option("--out", sa.out, "output directory")->required();
  gs_cmd->add_option("--seed", sa.seed, "overrides the plan seed");

  ConvertArgs na;
  auto* cv_cmd = app.add_subcommand("convert-nyt", "convert the whitespace NYT release to the corpus format");
  cv_cmd->add_option("--in", na.in, "NYT file (plain or gzip)")->required();
  cv_cmd->add_option("--out", na.out, "output corpus file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(ta);
    if (*eval_cmd) return cmd_eval(ea);
    if (*curves_cmd) return cmd_curves(ca);
    if (*gc_cmd) return cmd_gradcheck(ga);
    if (*gs_cmd) return cmd_gensynth(sa);
    if (*cv_cmd) return cmd_convert(na);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
