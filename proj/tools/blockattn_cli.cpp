// Command-line front end: segmentation, cut-head training, block
// distillation, cache simulation, and prefill benchmarking.

#include <algorithm>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "blockattn/cache_sim.hpp"
#include "blockattn/checkpoint.hpp"
#include "blockattn/distill.hpp"
#include "blockattn/model.hpp"
#include "blockattn/rng.hpp"
#include "blockattn/segment.hpp"
#include "blockattn/synthetic.hpp"

using namespace blockattn;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;

constexpr std::uint32_t kModelFormatVersion = 1;
constexpr std::uint32_t kCacheFormatVersion = 1;
constexpr std::uint32_t kScenarioFormatVersion = 1;
constexpr std::uint32_t kHeadFormatVersion = 1;

struct GlobalArgs {
  std::uint64_t seed = 0;
  std::string out = ".";
  std::string config;
};

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ContractError("cannot read input file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_manifest(const GlobalArgs& g, const std::string& subcommand) {
  std::filesystem::create_directories(g.out);
  json m;
  m["subcommand"] = subcommand;
  m["config"] = g.config;
  m["seed"] = g.seed;
  m["out"] = g.out;
  m["formats"]["model_checkpoint"] = kModelFormatVersion;
  m["formats"]["kv_cache"] = kCacheFormatVersion;
  m["formats"]["scenario"] = kScenarioFormatVersion;
  m["formats"]["cut_head"] = kHeadFormatVersion;
  std::ofstream f(std::filesystem::path(g.out) / "manifest.json", std::ios::trunc);
  if (!f) throw ContractError("cannot write manifest under: " + g.out);
  f << m.dump(2) << "\n";
}

void save_cut_head(const CutHead& head, int hidden_dim, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ContractError("cannot write cut head file: " + path);
  f.write("BKVH", 4);
  f.write(reinterpret_cast<const char*>(&kHeadFormatVersion), 4);
  const std::int32_t h = hidden_dim;
  f.write(reinterpret_cast<const char*>(&h), 4);
  auto put = [&f](const double* p, std::size_t n) {
    f.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
  };
  put(head.w1.a.data(), head.w1.a.size());
  put(head.b1.data(), head.b1.size());
  put(head.w2.data(), head.w2.size());
  put(&head.b2, 1);
}

CutHead load_cut_head(const std::string& path, int expected_hidden) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ContractError("cannot read cut head file: " + path);
  char magic[4];
  f.read(magic, 4);
  if (f.gcount() != 4 || std::memcmp(magic, "BKVH", 4) != 0)
    throw FormatError("bad cut head magic");
  std::uint32_t version;
  f.read(reinterpret_cast<char*>(&version), 4);
  if (!f || version != kHeadFormatVersion) throw FormatError("unsupported cut head version");
  std::int32_t h;
  f.read(reinterpret_cast<char*>(&h), 4);
  if (!f || h <= 0) throw FormatError("bad cut head dims");
  if (h != expected_hidden) throw StalenessError("cut head does not match the model width");
  CutHead head;
  head.w1 = Mat(h, h);
  head.b1.assign(h, 0.0);
  head.w2.assign(h, 0.0);
  auto get = [&f](double* p, std::size_t n) {
    f.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
    if (f.gcount() != static_cast<std::streamsize>(n * sizeof(double)))
      throw FormatError("cut head file truncated");
  };
  get(head.w1.a.data(), head.w1.a.size());
  get(head.b1.data(), head.b1.size());
  get(head.w2.data(), head.w2.size());
  get(&head.b2, 1);
  return head;
}

ModelConfig text_model_config(int max_seq_len, std::uint64_t seed) {
  ModelConfig c;
  c.num_layers = 1;
  c.num_heads = 2;
  c.head_dim = 4;
  c.hidden_dim = 8;
  c.vocab_size = tok::kReservedVocab;
  c.max_seq_len = max_seq_len;
  c.seed = seed;
  return c;
}

json partition_json(const BlockPartition& p) {
  json blocks = json::array();
  for (const auto& [lo, hi] : p.ranges)
    blocks.push_back({{"start", lo}, {"end", hi}, {"length", hi - lo}});
  return blocks;
}

// ---------------------------------------------------------------- segment

int cmd_segment(const GlobalArgs& g, const std::string& input, const std::string& rule_name,
                int depth, std::vector<double> thresholds, const std::string& scorer,
                int parallel_degree, int min_blocks, const std::string& model_path,
                const std::string& head_path) {
  const std::string text = read_text_file(input);
  if (text.empty()) throw ContractError("input file is empty: " + input);
  const std::vector<int> tokens = tok::encode_text(text);
  const RngSplitter split(g.seed);

  BlockPartition part;
  if (scorer == "neural") {
    SegmenterConfig cfg;
    cfg.recursion_depth = depth;
    if (static_cast<int>(thresholds.size()) == 1 && depth > 1)
      thresholds.assign(depth, thresholds[0]);
    cfg.thresholds = thresholds;
    cfg.min_blocks = min_blocks;
    cfg.rule = parse_rule(rule_name);
    cfg.validate();
    const int needed = 2 * static_cast<int>(tokens.size()) + 16;
    Model model = model_path.empty()
                      ? Model(text_model_config(needed, split.stream_seed("init")))
                      : load_model(model_path);
    CutHead head = head_path.empty()
                       ? CutHead::init(model.config().hidden_dim, split.stream_seed("head"))
                       : load_cut_head(head_path, model.config().hidden_dim);
    part = recursive_segment(model, head, tokens, cfg);
  } else if (scorer == "loss" || scorer == "entropy") {
    const int needed = static_cast<int>(tokens.size()) + 1;
    Model model = model_path.empty()
                      ? Model(text_model_config(needed, split.stream_seed("init")))
                      : load_model(model_path);
    part = statistical_segment(model, tokens,
                               scorer == "loss" ? StatisticalMethod::kLoss
                                                : StatisticalMethod::kEntropy,
                               parallel_degree);
  } else {
    part = heuristic_segment(tokens, parse_heuristic(scorer), parallel_degree,
                             split.stream_seed("heuristic"));
  }

  json out;
  out["input"] = input;
  out["scorer"] = scorer;
  out["rule"] = rule_name;
  out["seed"] = g.seed;
  out["parallel_degree"] = part.parallel_degree();
  out["blocks"] = partition_json(part);
  std::cout << out.dump(2) << "\n";
  write_manifest(g, "segment");
  return 0;
}

// ---------------------------------------------------------- train-segmenter

int cmd_train_segmenter(const GlobalArgs& g, int examples, int segments, double mark_rate,
                        int epochs, double lr, bool freeze, int pretrain_epochs) {
  if (examples < 2) throw ContractError("need at least two examples");
  if (pretrain_epochs < 0) throw ContractError("pretrain epochs must be non-negative");
  const RngSplitter split(g.seed);
  auto corpus = make_planted_segmentation_corpus(examples, segments, mark_rate,
                                                 split.stream_seed("corpus"));
  const int held = std::max(1, examples / 5);
  std::vector<SegmentationExample> train(corpus.begin(), corpus.end() - held);
  std::vector<SegmentationExample> heldout(corpus.end() - held, corpus.end());

  int max_len = 0;
  for (const auto& ex : corpus)
    max_len = std::max(max_len, 2 * static_cast<int>(ex.text_tokens.size()) + 16);
  Model model(text_model_config(max_len, split.stream_seed("init")));
  CutHead head = CutHead::init(model.config().hidden_dim, split.stream_seed("head"));

  // language-model warmup so candidate-position hidden states carry context
  Adam lm_opt;
  for (int ep = 0; ep < pretrain_epochs; ++ep) {
    double ce = 0.0;
    for (const auto& ex : train)
      ce += lm_train_step(model, insert_candidates(ex.text_tokens, ex.rule).tokens, lm_opt, 3e-3);
    std::cerr << "pretrain epoch " << ep << " ce " << ce / train.size() << "\n";
  }

  CutHeadTrainConfig cfg;
  cfg.epochs = epochs;
  cfg.lr = lr;
  cfg.backbone_lr = 2e-3;
  cfg.freeze_backbone = freeze;
  cfg.seed = split.stream_seed("train");
  std::cerr << "training cut head: " << train.size() << " examples, " << epochs << " epochs\n";
  const auto result = train_cut_head(model, head, train, cfg);

  long tp_all = 0;
  double f1_sum = 0.0;
  for (const auto& ex : heldout) {
    const auto aug = insert_candidates(ex.text_tokens, ex.rule);
    const auto probs = score_candidates_neural(model, head, aug);
    std::vector<int> pred;
    for (double p : probs) pred.push_back(p >= 0.5 ? 1 : 0);
    f1_sum += score_boundaries(pred, ex.gold_cuts).f1;
    for (std::size_t i = 0; i < pred.size(); ++i) tp_all += pred[i] && ex.gold_cuts[i];
  }

  std::filesystem::create_directories(g.out);
  const auto out_dir = std::filesystem::path(g.out);
  save_model(model, (out_dir / "segmenter_backbone.bkvm").string());
  save_cut_head(head, model.config().hidden_dim, (out_dir / "cut_head.bkvh").string());

  json out;
  out["seed"] = g.seed;
  out["examples"] = examples;
  out["epochs"] = epochs;
  out["initial_loss"] = result.initial_loss;
  out["final_loss"] = result.final_loss;
  out["heldout_f1"] = f1_sum / static_cast<double>(heldout.size());
  out["heldout_true_positives"] = tp_all;
  out["backbone"] = (out_dir / "segmenter_backbone.bkvm").string();
  out["cut_head"] = (out_dir / "cut_head.bkvh").string();
  std::cout << out.dump(2) << "\n";
  write_manifest(g, "train-segmenter");
  return 0;
}

// ----------------------------------------------------------------- distill

struct DistillRunConfig {
  int steps = 200;
  double lr_max = 5e-3;
  double lr_min = 5e-4;
  double alpha = 0.2;
  double beta = 0.1;
  double dropout_rate = 0.6;
  int sinks_per_block = 4;
  int content_vocab = 16;
  int seq_len = 24;
  int block_len = 8;
  int train_examples = 8;
  int layers = 1;
  int heads = 2;
  int head_dim = 4;
};

DistillRunConfig parse_distill_config(const std::string& path) {
  DistillRunConfig c;
  if (path.empty()) return c;
  std::ifstream f(path);
  if (!f) throw ContractError("cannot read config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (eq == std::string::npos)
      throw ContractError("config line " + std::to_string(lineno) + " is not key=value");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "steps") c.steps = std::stoi(val);
      else if (key == "lr_max") c.lr_max = std::stod(val);
      else if (key == "lr_min") c.lr_min = std::stod(val);
      else if (key == "alpha") c.alpha = std::stod(val);
      else if (key == "beta") c.beta = std::stod(val);
      else if (key == "dropout_rate") c.dropout_rate = std::stod(val);
      else if (key == "sinks_per_block") c.sinks_per_block = std::stoi(val);
      else if (key == "content_vocab") c.content_vocab = std::stoi(val);
      else if (key == "seq_len") c.seq_len = std::stoi(val);
      else if (key == "block_len") c.block_len = std::stoi(val);
      else if (key == "train_examples") c.train_examples = std::stoi(val);
      else if (key == "layers") c.layers = std::stoi(val);
      else if (key == "heads") c.heads = std::stoi(val);
      else if (key == "head_dim") c.head_dim = std::stoi(val);
      else throw ContractError("unknown config key: " + key);
    } catch (const std::invalid_argument&) {
      throw ContractError("config value for " + key + " is not a number: " + val);
    } catch (const std::out_of_range&) {
      throw ContractError("config value for " + key + " is out of range: " + val);
    }
  }
  if (c.steps < 0) throw ContractError("steps must be non-negative");
  if (c.dropout_rate < 0.0 || c.dropout_rate > 1.0)
    throw ContractError("dropout_rate outside [0,1]");
  return c;
}

int cmd_distill(const GlobalArgs& g) {
  const DistillRunConfig rc = parse_distill_config(g.config);
  const RngSplitter split(g.seed);

  auto corpus = make_markov_corpus(rc.content_vocab, rc.seq_len, rc.block_len,
                                   rc.train_examples, 0, split.stream_seed("corpus"));

  DistillConfig dc;
  dc.alpha = rc.alpha;
  dc.beta = rc.beta;
  dc.dropout_rate = rc.dropout_rate;
  dc.sinks_per_block = rc.sinks_per_block;
  dc.sink_token_id = rc.content_vocab;  // outside the content range

  ModelConfig mc;
  mc.num_layers = rc.layers;
  mc.num_heads = rc.heads;
  mc.head_dim = rc.head_dim;
  mc.hidden_dim = rc.heads * rc.head_dim;
  mc.vocab_size = rc.content_vocab + 1;
  mc.max_seq_len =
      rc.seq_len + rc.sinks_per_block * (corpus.partition.parallel_degree() + 1);
  mc.seed = split.stream_seed("teacher");
  Model teacher(mc);
  Model student(mc, teacher.params());  // distillation starts from the teacher

  SinkLayout layout{dc.sink_token_id, dc.sinks_per_block};
  std::vector<AugmentedSequence> samples;
  std::vector<TeacherCache> caches;
  for (const auto& seq : corpus.train) {
    samples.push_back(insert_sink_tokens(seq, corpus.partition, layout));
    caches.push_back(teacher_pass(teacher, samples.back()));
  }

  Adam opt;
  const std::uint64_t plan_seed = split.stream_seed("dropout");
  for (int step = 0; step < rc.steps; ++step) {
    const std::size_t k = step % samples.size();
    const auto plan = sample_dropout_plan(samples[k].partition, rc.dropout_rate,
                                          plan_seed + static_cast<std::uint64_t>(step));
    const double lr = cosine_lr(step, rc.steps, rc.lr_max, rc.lr_min);
    const auto m = train_step(student, teacher, samples[k], plan, dc, opt, lr, &caches[k]);

    std::cerr << "step " << step << " corrupted=[";
    bool first = true;
    for (int b : plan.corrupted) {
      if (!first) std::cerr << ",";
      std::cerr << b;
      first = false;
    }
    std::cerr << "]\n";

    json line;
    line["step"] = step;
    line["lr"] = lr;
    line["teacher_full_ce"] = m.teacher_full_ce;
    line["teacher_block_ce"] = m.teacher_block_ce;
    line["student_block_ce"] = m.student_block_ce;
    line["weighted_ce"] = m.weighted_ce;
    line["kl"] = m.kl;
    line["total"] = m.total;
    std::cout << line.dump() << "\n";
  }

  std::filesystem::create_directories(g.out);
  const auto ckpt = (std::filesystem::path(g.out) / "student.bkvm").string();
  save_model(student, ckpt);
  std::cerr << "wrote " << ckpt << "\n";
  write_manifest(g, "distill");
  return 0;
}

// ----------------------------------------------------------- simulate-cache

int cmd_simulate_cache(const GlobalArgs& g, const std::string& scenario_path,
                       const std::string& mode) {
  if (mode != "block" && mode != "prefix") throw ContractError("mode must be block or prefix");
  const auto scenario = CacheScenario::from_json_text(read_text_file(scenario_path));
  const auto stats =
      mode == "block" ? simulate_block_cache(scenario) : simulate_prefix_cache(scenario);

  json out;
  out["mode"] = mode;
  out["scenario"] = scenario_path;
  out["requests"] = json::array();
  std::int64_t hit = 0, miss = 0;
  for (const auto& r : stats) {
    out["requests"].push_back({{"hit_tokens", r.hit_tokens},
                               {"miss_tokens", r.miss_tokens},
                               {"hit_rate", r.hit_rate()}});
    hit += r.hit_tokens;
    miss += r.miss_tokens;
  }
  out["aggregate"]["hit_tokens"] = hit;
  out["aggregate"]["miss_tokens"] = miss;
  out["aggregate"]["hit_rate"] =
      hit + miss == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(hit + miss);
  // steady state: the trace replayed once more against the warm cache
  {
    CacheScenario warm = scenario;
    for (const auto& r : scenario.requests) warm.requests.push_back(r);
    const auto warm_stats =
        mode == "block" ? simulate_block_cache(warm) : simulate_prefix_cache(warm);
    std::int64_t whit = 0, wmiss = 0;
    for (std::size_t i = scenario.requests.size(); i < warm_stats.size(); ++i) {
      whit += warm_stats[i].hit_tokens;
      wmiss += warm_stats[i].miss_tokens;
    }
    out["steady_state"]["hit_rate"] =
        whit + wmiss == 0 ? 0.0
                          : static_cast<double>(whit) / static_cast<double>(whit + wmiss);
  }
  std::cout << out.dump(2) << "\n";
  write_manifest(g, "simulate-cache");
  return 0;
}

// ------------------------------------------------------------------- bench

int cmd_bench(const GlobalArgs& g, std::vector<std::int64_t> lengths, int blocks,
              std::int64_t query_len) {
  if (lengths.empty()) lengths = {1024, 2048, 4096, 8192};
  for (auto l : lengths)
    if (l <= 0) throw ContractError("context lengths must be positive");
  if (blocks < 1) throw ContractError("block count must be positive");
  if (query_len <= 0) throw ContractError("query length must be positive");

  const RngSplitter split(g.seed);
  ModelConfig mc;
  mc.num_layers = 1;
  mc.num_heads = 2;
  mc.head_dim = 4;
  mc.hidden_dim = 8;
  mc.vocab_size = 32;
  mc.max_seq_len = static_cast<int>(*std::max_element(lengths.begin(), lengths.end()) +
                                    query_len + 1);
  mc.seed = split.stream_seed("init");
  Model model(mc);
  auto rng = split.stream("bench");

  json rows = json::array();
  for (const auto L : lengths) {
    if (L < blocks) throw ContractError("context shorter than the block count");
    BlockPartition ctx;
    for (int b = 0; b < blocks; ++b)
      ctx.ranges.emplace_back(static_cast<int>(b * L / blocks),
                              static_cast<int>((b + 1) * L / blocks));
    const auto cm = prefill_cost(L, ctx, query_len);

    const int n = static_cast<int>(L + query_len);
    std::vector<int> tokens(n);
    for (auto& t : tokens) t = static_cast<int>(rng() % mc.vocab_size);
    std::vector<int> pos(n);
    for (int i = 0; i < n; ++i) pos[i] = i;
    BlockPartition combined = ctx;
    combined.ranges.emplace_back(static_cast<int>(L), n);

    const auto full_mask = build_full_causal(n);
    const auto block_mask = build_block_mask(combined);
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    forward(model, tokens, full_mask, pos);
    const auto t1 = clock::now();
    forward(model, tokens, block_mask, pos);
    const auto t2 = clock::now();
    const double full_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    const double block_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();

    std::cerr << "length " << L << ": full " << full_ms << " ms, block " << block_ms
              << " ms\n";
    rows.push_back({{"context_len", L},
                    {"query_len", query_len},
                    {"blocks", blocks},
                    {"full_pairs", cm.full_pairs},
                    {"block_pairs", cm.block_pairs},
                    {"reduction_abs", cm.reduction_abs()},
                    {"reduction_rel", cm.reduction_rel()},
                    {"ttft_proxy_block", cm.ttft_proxy(1.0)},
                    {"full_ms", full_ms},
                    {"block_ms", block_ms}});
  }
  json out;
  out["seed"] = g.seed;
  out["rows"] = rows;
  std::cout << out.dump(2) << "\n";
  write_manifest(g, "bench");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"block attention toolkit"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--seed", g.seed, "root seed for all random streams");
  app.add_option("--out", g.out, "output directory for artifacts and the run manifest");
  app.add_option("--config", g.config, "configuration file path");

  // segment
  auto* seg = app.add_subcommand("segment", "split a text file into blocks");
  std::string seg_input, seg_rule = "newline", seg_scorer = "neural";
  std::string seg_model, seg_head;
  int seg_depth = 1, seg_degree = 4, seg_min_blocks = 1;
  std::vector<double> seg_thresholds{0.5};
  seg->add_option("--input", seg_input, "text file to segment")->required();
  seg->add_option("--rule", seg_rule, "candidate insertion rule: newline|space|punctuation");
  seg->add_option("--depth", seg_depth, "recursion depth for the neural scorer");
  seg->add_option("--thresholds", seg_thresholds, "acceptance threshold per recursion level");
  seg->add_option("--scorer", seg_scorer,
                  "neural|average|random|punctuation|random_candidate|average_candidate|"
                  "loss|entropy");
  seg->add_option("--parallel-degree", seg_degree, "target block count for non-neural scorers");
  seg->add_option("--min-blocks", seg_min_blocks, "minimum blocks for the neural scorer");
  seg->add_option("--model", seg_model, "backbone checkpoint (default: seeded init)");
  seg->add_option("--head", seg_head, "cut head file (default: seeded init)");

  // train-segmenter
  auto* ts = app.add_subcommand("train-segmenter", "train the cut head on planted boundaries");
  int ts_examples = 200, ts_segments = 6, ts_epochs = 30, ts_pretrain = 6;
  double ts_mark_rate = 0.5, ts_lr = 1e-2;
  bool ts_freeze = false;
  ts->add_option("--examples", ts_examples, "number of synthetic examples");
  ts->add_option("--segments", ts_segments, "segments per example");
  ts->add_option("--mark-rate", ts_mark_rate, "probability a segment carries a boundary marker");
  ts->add_option("--epochs", ts_epochs, "training epochs");
  ts->add_option("--pretrain-epochs", ts_pretrain, "language-model warmup epochs");
  ts->add_option("--lr", ts_lr, "cut head learning rate");
  ts->add_flag("--freeze-backbone", ts_freeze, "train only the head, not the backbone");

  // distill
  auto* dist = app.add_subcommand("distill", "block distillation on a synthetic corpus");

  // simulate-cache
  auto* sim = app.add_subcommand("simulate-cache", "replay a cache scenario");
  std::string sim_scenario, sim_mode = "block";
  sim->add_option("--scenario", sim_scenario, "scenario JSON file")->required();
  sim->add_option("--mode", sim_mode, "block|prefix");

  // bench
  auto* bench = app.add_subcommand("bench", "analytic and measured prefill costs");
  std::vector<std::int64_t> bench_lengths;
  int bench_blocks = 8;
  std::int64_t bench_query = 200;
  bench->add_option("--lengths", bench_lengths, "context lengths to test");
  bench->add_option("--blocks", bench_blocks, "context block count");
  bench->add_option("--query", bench_query, "query length");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (seg->parsed())
      return cmd_segment(g, seg_input, seg_rule, seg_depth, seg_thresholds, seg_scorer,
                         seg_degree, seg_min_blocks, seg_model, seg_head);
    if (ts->parsed())
      return cmd_train_segmenter(g, ts_examples, ts_segments, ts_mark_rate, ts_epochs, ts_lr,
                                 ts_freeze, ts_pretrain);
    if (dist->parsed()) return cmd_distill(g);
    if (sim->parsed()) return cmd_simulate_cache(g, sim_scenario, sim_mode);
    if (bench->parsed()) return cmd_bench(g, bench_lengths, bench_blocks, bench_query);
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const StalenessError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const RangeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
