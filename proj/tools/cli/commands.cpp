#include "cli/commands.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "saddlekv/errors.hpp"
#include "saddlekv/metrics.hpp"
#include "saddlekv/policy.hpp"
#include "saddlekv/replay.hpp"
#include "saddlekv/rng.hpp"
#include "saddlekv/session.hpp"
#include "saddlekv/synth.hpp"
#include "saddlekv/trace.hpp"

namespace saddlekv::cli {

namespace {

namespace fs = std::filesystem;

constexpr std::uint64_t kVocab = 32000;
constexpr std::uint64_t kPromptSalt = 0x70726f6d7074ULL;

// Raised while turning flags into configs; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PolicyFlags {
  std::string policy;
  std::size_t recent = 32;
  std::size_t relevant = 2016;
  float bias = 0.1F;
  std::size_t sink = 4;
  std::string head_agg = "mean";
  CLI::Option* bias_opt = nullptr;
  CLI::Option* sink_opt = nullptr;
};

struct EngineFlags {
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t head_dim = 8;
  std::uint32_t rounds = 10;
  std::uint32_t prompt_len = 64;
  std::uint32_t decode_len = 16;
  std::uint64_t seed = 0;
  bool oracle = false;
  std::string position_mode = "cache_relative";
  std::size_t workers = 1;
  CLI::Option* seed_opt = nullptr;
};

struct OutputFlags {
  std::string metrics;
  std::string format;
};

void add_policy_flags(CLI::App& app, PolicyFlags& f) {
  app.add_option("--recent", f.recent, "Recent tokens kept / retrieval window length l")
      ->capture_default_str();
  app.add_option("--relevant", f.relevant, "Relevant tokens kept by score r")
      ->capture_default_str();
  f.bias_opt = app.add_option("--bias", f.bias, "Attention bias b (inf-mllm only)")
                   ->capture_default_str();
  f.sink_opt = app.add_option("--sink", f.sink, "Sink tokens (sink-recent only)")
                   ->capture_default_str();
  app.add_option("--head-agg", f.head_agg, "Head aggregation: mean|max")->capture_default_str();
}

void add_engine_flags(CLI::App& app, EngineFlags& f, bool seed_required) {
  app.add_option("--layers", f.layers, "Decoder layers")->capture_default_str();
  app.add_option("--heads", f.heads, "Attention heads per layer")->capture_default_str();
  app.add_option("--head-dim", f.head_dim, "Head dimension (even)")->capture_default_str();
  app.add_option("--rounds", f.rounds, "Rounds in the session")->capture_default_str();
  app.add_option("--prompt-len", f.prompt_len, "Prompt tokens per round")->capture_default_str();
  app.add_option("--decode-len", f.decode_len, "Decoded tokens per round")->capture_default_str();
  f.seed_opt = app.add_option("--seed", f.seed, "Seed for weights, embeddings and tokens");
  if (seed_required) f.seed_opt->required();
  app.add_flag("--oracle", f.oracle, "Keep a shadow full cache for quality metrics");
  app.add_option("--position-mode", f.position_mode, "cache_relative|original")
      ->capture_default_str();
  app.add_option("--workers", f.workers, "Threads for per-layer eviction")->capture_default_str();
}

void add_output_flags(CLI::App& app, OutputFlags& f) {
  app.add_option("--metrics", f.metrics, "Metrics output path (stdout when omitted)");
  app.add_option("--format", f.format, "csv|json (default: from the file extension)")
      ->check(CLI::IsMember({"csv", "json"}));
}

PolicyConfig to_config(const PolicyFlags& f) {
  PolicyConfig cfg;
  cfg.recent_len = f.recent;
  cfg.relevant_budget = f.relevant;
  cfg.bias = f.bias;
  cfg.sink_count = f.sink;
  cfg.head_agg = parse_head_agg(f.head_agg);
  cfg.validate();
  return cfg;
}

void check_compatible(PolicyKind kind, const PolicyFlags& f) {
  if (f.bias_opt->count() > 0 && kind != PolicyKind::inf_mllm) {
    throw UsageError("--bias only applies to --policy inf-mllm");
  }
  if (f.sink_opt->count() > 0 && kind != PolicyKind::sink_recent) {
    throw UsageError("--sink only applies to --policy sink-recent");
  }
}

void check_budget(PolicyKind kind, const PolicyConfig& cfg) {
  if (kind == PolicyKind::sink_recent && cfg.budget() <= cfg.sink_count) {
    throw UsageError("sink-recent needs --recent + --relevant > --sink");
  }
}

std::vector<PolicyKind> parse_policy_list(const std::string& list) {
  std::vector<PolicyKind> out;
  std::stringstream ss(list);
  std::string name;
  while (std::getline(ss, name, ',')) {
    if (name.empty()) continue;
    out.push_back(parse_policy(name));
  }
  if (out.empty()) throw UsageError("--policies: no policy names given");
  return out;
}

TinyDecoderSpec to_spec(const EngineFlags& f) {
  TinyDecoderSpec spec;
  spec.layers = f.layers;
  spec.heads = f.heads;
  spec.head_dim = f.head_dim;
  spec.seed = f.seed;
  spec.position_mode = parse_position_mode(f.position_mode);
  spec.validate();
  return spec;
}

std::vector<MetricsRow> run_engine(PolicyKind kind, const PolicyConfig& cfg,
                                   const EngineFlags& f) {
  SessionOptions opts;
  opts.policy = kind;
  opts.config = cfg;
  opts.oracle = f.oracle;
  opts.workers = f.workers;
  Session session(to_spec(f), opts);

  std::vector<MetricsRow> rows;
  rows.reserve(f.rounds);
  for (std::uint32_t r = 0; r < f.rounds; ++r) {
    RoundScript script;
    script.decode_steps = f.decode_len;
    script.prompt_token_ids.reserve(f.prompt_len);
    for (std::uint32_t i = 0; i < f.prompt_len; ++i) {
      const std::uint64_t key = (static_cast<std::uint64_t>(r) << 32) | i;
      script.prompt_token_ids.push_back(
          static_cast<std::int64_t>(hash_combine(f.seed ^ kPromptSalt, key) % kVocab));
    }
    const RoundReport report = session.run_round(script);
    rows.push_back(session.metrics_row(report));
  }
  return rows;
}

std::vector<MetricsRow> run_replay(PolicyKind kind, const PolicyConfig& cfg,
                                   const std::string& path, std::size_t head_dim, bool lenient) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open trace file: " + path);
  TraceReader reader(in, lenient ? Validation::lenient : Validation::strict);
  ReplayOptions opts;
  opts.policy = kind;
  opts.config = cfg;
  opts.head_dim = head_dim;
  std::vector<MetricsRow> rows;
  for (const auto& round : replay_trace(reader, opts)) rows.push_back(round.metrics);
  return rows;
}

ReportFormat resolve_format(const OutputFlags& f) {
  if (f.format == "json") return ReportFormat::json;
  if (f.format == "csv") return ReportFormat::csv;
  return fs::path(f.metrics).extension() == ".json" ? ReportFormat::json : ReportFormat::csv;
}

void write_rows(const std::vector<MetricsRow>& rows, const std::string& path, ReportFormat fmt,
                std::ostream& out) {
  if (path.empty()) {
    emit_report(rows, fmt, out);
    return;
  }
  std::ofstream file(path, std::ios::trunc);
  if (!file) throw IoError("cannot open metrics file for writing: " + path);
  emit_report(rows, fmt, file);
}

nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::ordered_json summary_json(const PolicySummary& s) {
  nlohmann::ordered_json j;
  j["policy"] = s.policy;
  j["rounds"] = s.rounds;
  j["mean_retained_mass"] = opt_json(s.mean_retained_mass);
  j["mean_topk_overlap"] = opt_json(s.mean_topk_overlap);
  j["mean_planted_recall"] = opt_json(s.mean_planted_recall);
  j["mean_cache_len"] = s.mean_cache_len;
  j["mean_memory_bytes"] = s.mean_memory_bytes;
  j["mean_flops_per_token"] = s.mean_flops_per_token;
  j["max_memory_bytes"] = s.max_memory_bytes;
  return j;
}

std::string opt_text(const std::optional<double>& v) { return v ? format_real(*v) : "-"; }

// Runs `prepare` (flag validation, exit 2 on failure) then `execute`
// (exit 1 on failure).
int guarded(std::ostream& err, const std::function<std::function<void()>()>& prepare) {
  std::function<void()> execute;
  try {
    execute = prepare();
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const DomainError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  }
  try {
    execute();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"KV-cache eviction engine and streaming attention simulator", "saddlekv"};
  app.require_subcommand(1);

  // generate-trace -----------------------------------------------------------
  auto* gen = app.add_subcommand("generate-trace", "Write a synthetic .imtrace file");
  SynthConfig synth;
  std::string gen_out;
  gen->add_option("--rounds", synth.rounds, "Rounds")->capture_default_str();
  gen->add_option("--prompt-len", synth.prompt_len, "Prompt tokens per round")
      ->capture_default_str();
  gen->add_option("--decode-len", synth.decode_len, "Decoded tokens per round")
      ->capture_default_str();
  gen->add_option("--saddles", synth.saddles, "Planted saddle tokens k")->capture_default_str();
  gen->add_option("--gain", synth.saddle_gain, "Saddle gain g (>= 1)")->capture_default_str();
  gen->add_option("--shift-every", synth.shift_every, "Rounds between saddle redraws")
      ->capture_default_str();
  gen->add_option("--sinks", synth.sink_count, "Sink columns")->capture_default_str();
  gen->add_option("--sink-gain", synth.sink_gain, "Sink gain (>= 1)")->capture_default_str();
  gen->add_option("--recent-len", synth.recent_len, "Recent region width")->capture_default_str();
  gen->add_option("--recent-gain", synth.recent_gain, "Recent gain (>= 1)")
      ->capture_default_str();
  gen->add_option("--noise", synth.noise, "Multiplicative noise amplitude in [0, 1)")
      ->capture_default_str();
  gen->add_option("--layers", synth.layers, "Layers")->capture_default_str();
  gen->add_option("--seed", synth.seed, "Seed")->required();
  gen->add_option("--out", gen_out, "Output .imtrace path")->required();

  // simulate -----------------------------------------------------------------
  auto* sim = app.add_subcommand("simulate", "Run a decoder session under one policy");
  PolicyFlags sim_policy;
  EngineFlags sim_engine;
  OutputFlags sim_output;
  sim->add_option("--policy", sim_policy.policy, "inf-mllm|sink-recent|window|heavy-hitter|none")
      ->required();
  add_policy_flags(*sim, sim_policy);
  add_engine_flags(*sim, sim_engine, true);
  add_output_flags(*sim, sim_output);

  // replay -------------------------------------------------------------------
  auto* rep = app.add_subcommand("replay", "Feed a trace's attention rows to one policy");
  PolicyFlags rep_policy;
  OutputFlags rep_output;
  std::string rep_trace;
  std::size_t rep_head_dim = 8;
  bool rep_lenient = false;
  rep->add_option("--trace", rep_trace, "Input .imtrace file")->required();
  rep->add_option("--policy", rep_policy.policy, "inf-mllm|sink-recent|window|heavy-hitter|none")
      ->required();
  add_policy_flags(*rep, rep_policy);
  rep->add_option("--head-dim", rep_head_dim, "Head dimension for memory/FLOP figures")
      ->capture_default_str();
  rep->add_flag("--lenient", rep_lenient, "Skip row-sum validation");
  add_output_flags(*rep, rep_output);

  // compare ------------------------------------------------------------------
  auto* cmp = app.add_subcommand("compare", "Run several policies on one scenario");
  PolicyFlags cmp_policy;
  EngineFlags cmp_engine;
  std::string cmp_policies;
  std::string cmp_report;
  std::string cmp_trace;
  std::string cmp_metrics_dir;
  bool cmp_lenient = false;
  cmp->add_option("--policies", cmp_policies, "Comma-separated policy names")->required();
  cmp->add_option("--report", cmp_report, "Summary JSON path")->required();
  cmp->add_option("--trace", cmp_trace, "Replay this trace instead of running the decoder");
  cmp->add_option("--metrics-dir", cmp_metrics_dir, "Write <policy>.csv per policy here");
  cmp->add_flag("--lenient", cmp_lenient, "Skip row-sum validation when replaying");
  add_policy_flags(*cmp, cmp_policy);
  add_engine_flags(*cmp, cmp_engine, false);

  std::vector<const char*> argv{"saddlekv"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (*gen) {
    return guarded(err, [&]() -> std::function<void()> {
      synth.validate();
      return [&] {
        const Trace trace = generate_synthetic(synth);
        const std::uint64_t bytes = write_trace_file(gen_out, trace);
        out << "wrote " << trace.events.size() << " events (" << bytes << " bytes) to "
            << gen_out << '\n';
      };
    });
  }

  if (*sim) {
    return guarded(err, [&]() -> std::function<void()> {
      const PolicyKind kind = parse_policy(sim_policy.policy);
      check_compatible(kind, sim_policy);
      const PolicyConfig cfg = to_config(sim_policy);
      check_budget(kind, cfg);
      to_spec(sim_engine);
      if (sim_engine.workers == 0) throw UsageError("--workers must be >= 1");
      if (sim_engine.prompt_len == 0) throw UsageError("--prompt-len must be >= 1");
      return [&, kind, cfg] {
        const auto rows = run_engine(kind, cfg, sim_engine);
        write_rows(rows, sim_output.metrics, resolve_format(sim_output), out);
        if (!sim_output.metrics.empty()) {
          out << "simulated " << rows.size() << " rounds with " << to_string(kind) << ", wrote "
              << sim_output.metrics << '\n';
        }
      };
    });
  }

  if (*rep) {
    return guarded(err, [&]() -> std::function<void()> {
      const PolicyKind kind = parse_policy(rep_policy.policy);
      check_compatible(kind, rep_policy);
      const PolicyConfig cfg = to_config(rep_policy);
      check_budget(kind, cfg);
      return [&, kind, cfg] {
        const auto rows = run_replay(kind, cfg, rep_trace, rep_head_dim, rep_lenient);
        write_rows(rows, rep_output.metrics, resolve_format(rep_output), out);
        if (!rep_output.metrics.empty()) {
          out << "replayed " << rows.size() << " rounds with " << to_string(kind) << ", wrote "
              << rep_output.metrics << '\n';
        }
      };
    });
  }

  if (*cmp) {
    return guarded(err, [&]() -> std::function<void()> {
      const std::vector<PolicyKind> kinds = parse_policy_list(cmp_policies);
      const PolicyConfig cfg = to_config(cmp_policy);
      for (PolicyKind k : kinds) check_budget(k, cfg);
      if (cmp_trace.empty()) {
        if (cmp_engine.seed_opt->count() == 0) {
          throw UsageError("--seed is required unless --trace is given");
        }
        to_spec(cmp_engine);
        if (cmp_engine.prompt_len == 0) throw UsageError("--prompt-len must be >= 1");
      }
      return [&, kinds, cfg] {
        nlohmann::ordered_json report;
        nlohmann::ordered_json scenario;
        scenario["source"] = cmp_trace.empty() ? "decoder" : "trace";
        if (!cmp_trace.empty()) {
          scenario["trace"] = cmp_trace;
        } else {
          scenario["seed"] = cmp_engine.seed;
          scenario["layers"] = cmp_engine.layers;
          scenario["heads"] = cmp_engine.heads;
          scenario["head_dim"] = cmp_engine.head_dim;
          scenario["rounds"] = cmp_engine.rounds;
          scenario["prompt_len"] = cmp_engine.prompt_len;
          scenario["decode_len"] = cmp_engine.decode_len;
          scenario["oracle"] = cmp_engine.oracle;
        }
        scenario["recent"] = cfg.recent_len;
        scenario["relevant"] = cfg.relevant_budget;
        scenario["bias"] = cfg.bias;
        scenario["sink"] = cfg.sink_count;
        report["scenario"] = scenario;
        report["policies"] = nlohmann::ordered_json::array();

        if (!cmp_metrics_dir.empty()) fs::create_directories(cmp_metrics_dir);
        out << std::left << std::setw(14) << "policy" << std::setw(16) << "retained_mass"
            << std::setw(15) << "topk_overlap" << std::setw(16) << "planted_recall"
            << "mean_cache_len\n";
        for (PolicyKind kind : kinds) {
          const auto rows = cmp_trace.empty()
                                ? run_engine(kind, cfg, cmp_engine)
                                : run_replay(kind, cfg, cmp_trace, cmp_engine.head_dim,
                                             cmp_lenient);
          const PolicySummary s = summarize(to_string(kind), rows);
          report["policies"].push_back(summary_json(s));
          if (!cmp_metrics_dir.empty()) {
            const auto path = fs::path(cmp_metrics_dir) / (std::string(to_string(kind)) + ".csv");
            write_rows(rows, path.string(), ReportFormat::csv, out);
          }
          out << std::left << std::setw(14) << s.policy << std::setw(16)
              << opt_text(s.mean_retained_mass) << std::setw(15) << opt_text(s.mean_topk_overlap)
              << std::setw(16) << opt_text(s.mean_planted_recall)
              << format_real(s.mean_cache_len) << '\n';
        }
        std::ofstream file(cmp_report, std::ios::trunc);
        if (!file) throw IoError("cannot open report for writing: " + cmp_report);
        file << report.dump(2) << '\n';
        if (!file) throw IoError("failed writing report: " + cmp_report);
      };
    });
  }
  return kExitUsage;
}

}  // namespace saddlekv::cli
