// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "aligncruse/alignment.hpp"
#include "aligncruse/data.hpp"
#include "aligncruse/eval.hpp"
#include "aligncruse/log.hpp"
#include "aligncruse/param_io.hpp"
#include "aligncruse/streaming.hpp"
#include "aligncruse/train.hpp"
#include "aligncruse/wav.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace acrs;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kIoFailure = 2, kNumericFailure = 3 };

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::kIo:
    case ErrorKind::kNoSignal: return kIoFailure;
    case ErrorKind::kNumeric: return kNumericFailure;
    default: return kUsage;
  }
}

void error_record(const std::string& kind, const std::string& msg, int code) {
  std::cerr << json({{"level", "error"}, {"event", kind}, {"msg", msg}, {"exit_code", code}}).dump() << std::endl;
}

// Every run states what it resolved to, so it can be repeated exactly.
void print_resolved(const std::string& command, std::uint64_t seed, const json& config) {
  std::cerr << json({{"level", "info"}, {"event", "resolved_config"}, {"command", command}, {"seed", seed},
                     {"config", config}})
                   .dump()
            << std::endl;
}

json resolved_flags(const CLI::App& sub) {
  json j = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    if (opt->get_name() == "--help" || opt->get_name().empty()) continue;
    const auto res = opt->reduced_results();
    std::string name = opt->get_name();
    while (!name.empty() && name.front() == '-') name.erase(name.begin());
    if (!res.empty()) j[name] = res.size() == 1 ? json(res.front()) : json(res);
    else if (!opt->get_default_str().empty()) j[name] = opt->get_default_str();
  }
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  require(out.good(), ErrorKind::kIo, "cannot write '" + path + "'");
  out << text;
  require(out.good(), ErrorKind::kIo, "write failed on '" + path + "'");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::kIo, "cannot read '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// ------------------------------------------------------------- gen-data

struct GenArgs {
  std::string kind = "ld-m";
  int n = 500;
  std::string out;
  double clip_len = 10.0;
};

int run_gen_data(const GenArgs& a, std::uint64_t seed) {
  std::vector<data::ManifestRow> rows;
  if (a.kind == "ld-m" || a.kind == "ld-h") {
    rows = data::make_ld_set(a.kind == "ld-m" ? "M" : "H", a.n, seed, a.out, a.clip_len);
  } else if (a.kind == "train") {
    auto cfg = train::TrainConfig::toy().train_data;
    cfg.clip_len_s = a.clip_len;
    rows = data::write_generated(
        a.n, [&](int i) { return data::synth_scenario(cfg, data::child_seed(seed, static_cast<std::uint64_t>(i))); },
        a.out, "train_");
  } else {
    fail(ErrorKind::kConfig, "unknown dataset kind '" + a.kind + "' (ld-m|ld-h|train)");
  }
  std::cout << json({{"clips", rows.size()}, {"manifest", (fs::path(a.out) / "manifest.jsonl").string()}}).dump()
            << std::endl;
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string preset = "tiny";
  std::string variant = "align_cruse";
  std::string data;
  bool online = false;
  std::string out;
  std::string run_dir;
  std::string train_config;
  std::string resume;
  int epochs = -1;
  int clips = -1;
  int batch_size = -1;
  double lr = -1;
  bool oracle_align = false;
};

int run_train(const TrainArgs& a, std::uint64_t seed, bool seed_given) {
  train::TrainConfig cfg =
      a.train_config.empty() ? train::TrainConfig::toy() : train::TrainConfig::from_json(read_text(a.train_config));
  if (a.train_config.empty() || a.preset != "tiny") {
    const double init_scale = cfg.model.align_init_scale;
    cfg.model = ModelConfig::preset(a.preset);
    cfg.model.align_init_scale = init_scale;
  }
  cfg.model.variant = parse_variant(a.variant);
  if (cfg.model.variant == Variant::kCruse) cfg.oracle_align_train = true;
  if (a.oracle_align) cfg.oracle_align_train = true;
  if (!a.data.empty()) cfg.data_manifest = (fs::path(a.data) / "manifest.jsonl").string();
  if (a.epochs >= 0) cfg.epochs = a.epochs;
  if (a.clips > 0) cfg.train_clips = a.clips;
  if (a.batch_size > 0) cfg.batch_size = a.batch_size;
  if (a.lr >= 0) cfg.adam.lr = a.lr;
  if (seed_given || a.train_config.empty()) cfg.seed = seed;
  cfg.out_dir = a.run_dir.empty() ? a.out + ".run" : a.run_dir;
  cfg.validate();
  print_resolved("train", cfg.seed, json::parse(cfg.to_json()));

  train::Trainer t = a.resume.empty() ? train::Trainer(cfg) : train::Trainer::resume(a.resume, cfg);
  t.run();
  t.save_checkpoint(a.out);
  const auto& h = t.history();
  json summary = {{"checkpoint", a.out}, {"epochs", t.epoch()}, {"metrics", (fs::path(cfg.out_dir) / "metrics.jsonl").string()}};
  if (!h.empty()) summary["final"] = json::parse(h.back().to_json());
  std::cout << summary.dump() << std::endl;
  return kOk;
}

// -------------------------------------------------------------- enhance

struct EnhanceArgs {
  std::string model, mic, far, out, emit_delay;
  bool identity_mask = false;
  std::string precision = "double";
  int chunk = 1600;
};

template <typename Scalar>
int stream_enhance(const EnhanceArgs& a, const io::ParamFile& pf) {
  wav::Reader mic(a.mic);
  wav::Reader far(a.far);
  require(mic.sample_rate() == far.sample_rate(), ErrorKind::kConfig, "mic and far sample rates differ");
  require(mic.sample_rate() == dsp::kSampleRate, ErrorKind::kConfig,
          "expected 16 kHz input, got " + std::to_string(mic.sample_rate()) + " Hz");
  if (mic.total_samples() != far.total_samples())
    log::warn("length_mismatch", "far end has " + std::to_string(far.total_samples()) + " samples, mic " +
                                     std::to_string(mic.total_samples()) + "; the far end is fitted to the mic");
  StreamingEnhancer<Scalar> s(pf.config, pf.store, a.identity_mask);
  wav::Writer out(a.out, mic.sample_rate());
  std::ofstream delay_out;
  bool first_delay = true;
  const bool emit = !a.emit_delay.empty() && pf.config.variant == Variant::kAlignCruse;
  if (emit) {
    delay_out.open(a.emit_delay, std::ios::trunc);
    require(delay_out.good(), ErrorKind::kIo, "cannot write '" + a.emit_delay + "'");
    delay_out << "{\"hop\":" << pf.config.win_len / 2 << ",\"delay_frames\":[";
  }
  auto drain = [&] {
    if (!emit) return;
    for (int d : s.take_delay_track()) {
      delay_out << (first_delay ? "" : ",") << d;
      first_delay = false;
    }
  };
  while (mic.remaining() > 0) {
    const auto m = mic.read(static_cast<std::size_t>(a.chunk));
    auto f = far.read(m.size());
    f.resize(m.size(), 0.0);
    out.write(s.push(m, f));
    drain();
  }
  out.write(s.flush());
  drain();
  out.close();
  if (emit) {
    delay_out << "]}\n";
    require(delay_out.good(), ErrorKind::kIo, "write failed on '" + a.emit_delay + "'");
  }
  std::cout << json({{"out", a.out}, {"samples", mic.total_samples()}, {"latency_samples", s.latency_samples()}}).dump()
            << std::endl;
  return kOk;
}

int run_enhance(const EnhanceArgs& a, std::uint64_t seed, const json& flags) {
  print_resolved("enhance", seed, flags);
  require(a.chunk >= 1, ErrorKind::kConfig, "--chunk must be >= 1");
  const auto pf = io::load(a.model);
  if (a.precision == "float") return stream_enhance<float>(a, pf);
  require(a.precision == "double", ErrorKind::kConfig, "--precision must be float or double");
  return stream_enhance<double>(a, pf);
}

// ---------------------------------------------------------------- align

struct AlignArgs {
  std::string mode = "global";
  std::string mic, far, out;
  int max_delay = 16000;
};

int run_align(const AlignArgs& a, std::uint64_t seed, const json& flags) {
  print_resolved("align", seed, flags);
  const auto mic = wav::read(a.mic);
  const auto far = wav::read(a.far);
  align::DelayEstimate est;
  if (a.mode == "global") est = align::global_delay(mic, far, a.max_delay);
  else if (a.mode == "online") est = align::online_delay(mic, far, a.max_delay);
  else fail(ErrorKind::kConfig, "unknown align mode '" + a.mode + "' (global|online)");
  json j = {{"mode", a.mode},
            {"delay_samples", est.delay},
            {"delay_ms", 1000.0 * est.delay / mic.sample_rate},
            {"confidence", est.confidence}};
  if (a.mode == "online") j["per_frame"] = est.per_frame;
  if (!a.out.empty()) {
    const auto aligned = a.mode == "global" ? align::apply_delay(far, est.delay) : align::online_align(mic, far, a.max_delay);
    wav::write(a.out, aligned);
    j["aligned_far"] = a.out;
  }
  std::cout << j.dump() << std::endl;
  return kOk;
}

// ----------------------------------------------------------------- eval

struct EvalArgs {
  std::string model, manifest, report, name;
  std::string mode = "utterance";
  std::string far = "none";
  std::string aligner;
  int max_delay = 16000;
  double bench_seconds = 0.0;
};

int run_eval(const EvalArgs& a, std::uint64_t seed, const json& flags) {
  print_resolved("eval", seed, flags);
  const auto clips = eval::clips_from_manifest(a.manifest);
  eval::EvalReport r;
  if (!a.aligner.empty()) {
    require(a.aligner == "global" || a.aligner == "online", ErrorKind::kConfig, "--aligner must be global or online");
    r = eval::delay_recovery_report(clips, a.aligner == "global" ? eval::Aligner::kGlobal : eval::Aligner::kOnline,
                                    a.max_delay);
  } else {
    require(!a.model.empty(), ErrorKind::kConfig, "eval needs --model or --aligner");
    const auto pf = io::load(a.model);
    eval::ModelEvalOptions o;
    o.mode = parse_align_mode(a.mode);
    o.far = eval::parse_far_alignment(a.far);
    o.max_delay = a.max_delay;
    o.name = a.name.empty() ? std::string(to_string(pf.config.variant)) +
                                  (o.far == eval::FarAlignment::kNone ? "" : std::string("+") + eval::to_string(o.far))
                            : a.name;
    r = eval::evaluate_model(clips, pf.config, pf.store, o);
    if (a.bench_seconds > 0) r.runtime = eval::benchmark_runtime(pf.config, pf.store, a.bench_seconds, seed);
  }
  if (!a.report.empty()) write_text(a.report, r.to_jsonl());
  std::cout << r.text_table();
  return kOk;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
  std::string model;
  std::string preset = "default";
  double seconds = 10.0;
};

int run_bench(const BenchArgs& a, std::uint64_t seed, const json& flags) {
  print_resolved("bench", seed, flags);
  ModelConfig cfg;
  ParamStore store;
  if (!a.model.empty()) {
    auto pf = io::load(a.model);
    cfg = pf.config;
    store = std::move(pf.store);
  } else {
    cfg = ModelConfig::preset(a.preset);
    store = init_params(cfg, seed);
  }
  const auto rt = eval::benchmark_runtime(cfg, store, a.seconds, seed);
  std::cout << json({{"variant", to_string(cfg.variant)},
                     {"params", store.num_params()},
                     {"seconds", a.seconds},
                     {"ms_per_frame", rt.ms_per_frame},
                     {"real_time_factor", rt.real_time_factor}})
                   .dump()
            << std::endl;
  return kOk;
}

// -------------------------------------------------------------- inspect

int run_inspect(const std::string& path, std::uint64_t seed, const json& flags) {
  print_resolved("inspect", seed, flags);
  const auto pf = io::load(path);
  std::cout << "variant      " << to_string(pf.config.variant) << "\n";
  std::cout << "parameters   " << pf.store.num_params() << "\n";
  std::cout << "config\n";
  for (const auto& [k, v] : pf.config.to_map()) std::cout << "  " << k << " = " << v << "\n";
  std::cout << "parameters (shape)\n";
  for (const auto& [name, t] : pf.store.params()) std::cout << "  " << name << " " << shape_string(t.shape()) << "\n";
  std::cout << "buffers (shape)\n";
  for (const auto& [name, t] : pf.store.buffers()) std::cout << "  " << name << " " << shape_string(t.shape()) << "\n";
  if (!pf.extra.empty()) std::cout << "extra records " << pf.extra.size() << "\n";
  if (!pf.train_state.empty()) {
    const auto st = json::parse(pf.train_state);
    std::cout << "training state: epoch " << st.value("epoch", 0) << ", optimizer steps " << st.value("adam_steps", 0L)
              << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Align-CRUSE streaming acoustic echo canceller"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value file mirroring the command-line flags");
  std::uint64_t seed = 0;
  std::string log_level = "warn";
  auto* seed_opt = app.add_option("--seed", seed, "Random seed")->capture_default_str();
  app.add_option("--log-level", log_level, "debug|info|warn|error|off")->capture_default_str();

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Synthesize a dataset (WAVs plus manifest.jsonl)");
  gen_cmd->add_option("--kind", gen.kind, "ld-m|ld-h|train")->capture_default_str();
  gen_cmd->add_option("--n", gen.n, "Number of clips")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--clip-len", gen.clip_len, "Clip length in seconds")->capture_default_str();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--preset", tr.preset, "tiny|default|paper")->capture_default_str();
  train_cmd->add_option("--variant", tr.variant, "align_cruse|cruse")->capture_default_str();
  auto* data_opt = train_cmd->add_option("--data", tr.data, "Dataset directory written by gen-data");
  train_cmd->add_flag("--online", tr.online, "Synthesize training clips on the fly (default)")->excludes(data_opt);
  train_cmd->add_option("--out", tr.out, "Final checkpoint path")->required();
  train_cmd->add_option("--run-dir", tr.run_dir, "Metrics and per-epoch checkpoints (default <out>.run)");
  train_cmd->add_option("--train-config", tr.train_config, "JSON training configuration");
  train_cmd->add_option("--resume", tr.resume, "Checkpoint to resume from");
  train_cmd->add_option("--epochs", tr.epochs, "Total epochs");
  train_cmd->add_option("--clips", tr.clips, "Training clips per epoch");
  train_cmd->add_option("--batch-size", tr.batch_size, "Batch size");
  train_cmd->add_option("--lr", tr.lr, "Learning rate");
  train_cmd->add_flag("--oracle-align", tr.oracle_align, "Shift the far end by the true delay for training");

  EnhanceArgs en;
  auto* enh_cmd = app.add_subcommand("enhance", "Stream a mic/far-end pair through a model");
  enh_cmd->add_option("--model", en.model, "Checkpoint")->required();
  enh_cmd->add_option("--mic", en.mic, "Microphone WAV")->required();
  enh_cmd->add_option("--far", en.far, "Far-end WAV")->required();
  enh_cmd->add_option("--out", en.out, "Enhanced WAV")->required();
  enh_cmd->add_option("--emit-delay", en.emit_delay, "Write the per-frame delay argmax as JSON");
  enh_cmd->add_flag("--identity-mask", en.identity_mask, "Force the mask to one (debug)");
  enh_cmd->add_option("--precision", en.precision, "float|double")->capture_default_str();
  enh_cmd->add_option("--chunk", en.chunk, "Samples read per step")->capture_default_str();

  AlignArgs al;
  auto* align_cmd = app.add_subcommand("align", "Estimate the far-end delay by cross-correlation");
  align_cmd->add_option("--mode", al.mode, "global|online")->capture_default_str();
  align_cmd->add_option("--mic", al.mic, "Microphone WAV")->required();
  align_cmd->add_option("--far", al.far, "Far-end WAV")->required();
  align_cmd->add_option("--max-delay", al.max_delay, "Search range in samples")->capture_default_str();
  align_cmd->add_option("--out", al.out, "Write the aligned far end");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Score a model or classical aligner on a manifest");
  eval_cmd->add_option("--model", ev.model, "Checkpoint");
  eval_cmd->add_option("--manifest", ev.manifest, "manifest.jsonl")->required();
  eval_cmd->add_option("--report", ev.report, "Per-clip JSONL report");
  eval_cmd->add_option("--mode", ev.mode, "utterance|causal")->capture_default_str();
  eval_cmd->add_option("--far", ev.far, "none|online|global|oracle far-end pre-alignment")->capture_default_str();
  eval_cmd->add_option("--aligner", ev.aligner, "global|online: score a classical aligner instead");
  eval_cmd->add_option("--max-delay", ev.max_delay, "Classical search range in samples")->capture_default_str();
  eval_cmd->add_option("--name", ev.name, "System name in the report");
  eval_cmd->add_option("--bench-seconds", ev.bench_seconds, "Also time the streaming engine")->capture_default_str();

  BenchArgs be;
  auto* bench_cmd = app.add_subcommand("bench", "Time the streaming engine");
  bench_cmd->add_option("--model", be.model, "Checkpoint (default: random init of --preset)");
  bench_cmd->add_option("--preset", be.preset, "tiny|default|paper")->capture_default_str();
  bench_cmd->add_option("--seconds", be.seconds, "Audio length")->capture_default_str();

  std::string inspect_path;
  auto* inspect_cmd = app.add_subcommand("inspect", "Print a checkpoint's configuration and shapes");
  inspect_cmd->add_option("--model", inspect_path, "Checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    error_record("usage", e.what(), kUsage);
    return kUsage;
  }

  try {
    log::set_level(log::parse_level(log_level));
    if (*gen_cmd) {
      print_resolved("gen-data", seed, resolved_flags(*gen_cmd));
      return run_gen_data(gen, seed);
    }
    if (*train_cmd) return run_train(tr, seed, seed_opt->count() > 0);
    if (*enh_cmd) return run_enhance(en, seed, resolved_flags(*enh_cmd));
    if (*align_cmd) return run_align(al, seed, resolved_flags(*align_cmd));
    if (*eval_cmd) return run_eval(ev, seed, resolved_flags(*eval_cmd));
    if (*bench_cmd) return run_bench(be, seed, resolved_flags(*bench_cmd));
    if (*inspect_cmd) return run_inspect(inspect_path, seed, resolved_flags(*inspect_cmd));
  } catch (const Error& e) {
    const int code = exit_code(e.kind());
    error_record(to_string(e.kind()), e.what(), code);
    return code;
  } catch (const std::exception& e) {
    error_record("internal", e.what(), kIoFailure);
    return kIoFailure;
  }
  return kUsage;
}
