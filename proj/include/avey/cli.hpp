#pragma once
// Command-line front end. All subcommand logic lives here so tests can
// drive it in-process; the binary's main() is a thin argv wrapper.
// Precedence for settings: built-in defaults, then --config file entries,
// then --set key=value pairs.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "avey/checkpoint.hpp"
#include "avey/common.hpp"
#include "avey/config.hpp"
#include "avey/data.hpp"
#include "avey/eval.hpp"
#include "avey/model.hpp"
#include "avey/trainer.hpp"

namespace avey {

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "cannot read file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline Config build_config(const std::string& config_path,
                           const std::vector<std::string>& sets,
                           Config base = {}) {
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    require(f.good(), "cannot read config file " + config_path);
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ContractViolation("config file " + config_path +
                              " is not valid JSON: " + e.what());
    }
    for (const auto& [key, val] : j.items())
      require(apply_config_key(base, key, val),
              "unknown config key '" + key + "' in " + config_path);
  }
  for (const auto& s : sets) {
    auto eq = s.find('=');
    require(eq != std::string::npos && eq > 0,
            "--set expects key=value, got '" + s + "'");
    std::string key = s.substr(0, eq), raw = s.substr(eq + 1);
    nlohmann::json val;
    try {
      val = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception&) {
      val = raw;  // bare strings stay strings
    }
    require(apply_config_key(base, key, val),
            "unknown config key '" + key + "'");
  }
  base.model.validate();
  base.train.validate();
  return base;
}

inline std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stoi(item));
  require(!out.empty(), "empty integer list '" + csv + "'");
  return out;
}

inline std::vector<double> parse_double_list(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stod(item));
  require(!out.empty(), "empty number list '" + csv + "'");
  return out;
}

inline nlohmann::ordered_json counters_to_json(const FlopCounters& fc) {
  nlohmann::ordered_json j;
  j["split_pairs_scored"] = fc.split_pairs_scored;
  j["cosine_cells"] = fc.cosine_cells;
  j["maxsim_flops"] = fc.maxsim_flops;
  j["enricher_flops"] = fc.enricher_flops;
  j["contextualizer_flops"] = fc.contextualizer_flops;
  j["fuser_flops"] = fc.fuser_flops;
  j["total"] = fc.total();
  return j;
}

// Training blocks from whichever source the flags picked.
inline std::vector<std::vector<int>> load_blocks(const std::string& data_path,
                                                 const std::string& task,
                                                 int task_blocks,
                                                 std::size_t synth_bytes,
                                                 const Config& cfg) {
  if (!task.empty())
    return niah_training_blocks(niah_kind_from_string(task),
                                cfg.model.context, task_blocks,
                                cfg.train.seed);
  std::string text = data_path.empty()
                         ? synthetic_corpus(synth_bytes, cfg.train.seed)
                         : read_file(data_path);
  return corpus_batches(text, cfg.model.context, cfg.train.seed);
}

}  // namespace detail

inline int run_cli(std::vector<std::string> args, std::ostream& out,
                   std::ostream& err) {
  CLI::App app{"Ranked-window autoregressive byte language model"};
  app.require_subcommand(1);
  app.fallthrough();  // global --config/--set stay valid after a subcommand

  std::string config_path;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "JSON config file (flat keys)");
  app.add_option("--set", sets, "Override one config key, e.g. model.d=32");

  // train
  auto* tr = app.add_subcommand("train", "Train from a corpus or task");
  std::string tr_out, tr_data, tr_task, tr_resume;
  int tr_task_blocks = 2048;
  std::size_t tr_synth_bytes = 1 << 20;
  tr->add_option("--out", tr_out, "Output checkpoint directory")->required();
  tr->add_option("--data", tr_data, "Text corpus file (raw bytes)");
  tr->add_option("--task", tr_task,
                 "Train on synthetic retrieval blocks "
                 "(passkey_kv or passkey_numeric)");
  tr->add_option("--task-blocks", tr_task_blocks,
                 "Distinct task blocks to generate");
  tr->add_option("--synth-bytes", tr_synth_bytes,
                 "Synthetic corpus size when no --data is given");
  tr->add_option("--resume", tr_resume, "Continue from this checkpoint");

  // eval
  auto* ev = app.add_subcommand("eval", "Perplexity of a checkpoint");
  std::string ev_ckpt, ev_data;
  std::size_t ev_synth_bytes = 1 << 18;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint directory")->required();
  ev->add_option("--data", ev_data, "Text file to evaluate");
  ev->add_option("--synth-bytes", ev_synth_bytes,
                 "Synthetic eval corpus size when no --data is given");

  // generate
  auto* ge = app.add_subcommand("generate", "Decode from a prompt");
  std::string ge_ckpt, ge_prompt;
  int ge_max_new = 128;
  double ge_temperature = 0.0;
  std::uint64_t ge_seed = 1;
  ge->add_option("--ckpt", ge_ckpt, "Checkpoint directory")->required();
  ge->add_option("--prompt", ge_prompt, "Prompt text (bytes)");
  ge->add_option("--max-new", ge_max_new, "Tokens to generate");
  ge->add_option("--temperature", ge_temperature,
                 "Sampling temperature; 0 decodes greedily");
  ge->add_option("--seed", ge_seed, "Sampling seed");

  // niah
  auto* ni = app.add_subcommand("niah",
                                "Retrieval sweep over lengths and depths");
  std::string ni_ckpt, ni_kind = "passkey_kv", ni_lengths = "256,512,1024,2048";
  std::string ni_depths = "0,0.5,1", ni_dump;
  int ni_per_cell = 20, ni_max_new = 12;
  std::uint64_t ni_seed = 1;
  ni->add_option("--ckpt", ni_ckpt, "Checkpoint directory");
  ni->add_option("--kind", ni_kind, "passkey_kv or passkey_numeric");
  ni->add_option("--lengths", ni_lengths, "Prompt lengths, comma separated");
  ni->add_option("--depths", ni_depths, "Needle depths in [0,1]");
  ni->add_option("--per-cell", ni_per_cell, "Instances per grid cell");
  ni->add_option("--max-new", ni_max_new, "Tokens to generate per instance");
  ni->add_option("--seed", ni_seed, "Instance seed");
  ni->add_option("--dump", ni_dump,
                 "Write instances as JSON lines to this file");

  // bench-ttft
  auto* bt = app.add_subcommand("bench-ttft",
                                "First-token cost scaling over prompt length");
  std::string bt_ckpt, bt_lengths = "2048,4096,8192,16384";
  int bt_repeats = 5;
  std::uint64_t bt_seed = 7;
  bt->add_option("--ckpt", bt_ckpt,
                 "Checkpoint directory (fresh init when omitted)");
  bt->add_option("--lengths", bt_lengths, "Prompt lengths, comma separated");
  bt->add_option("--repeats", bt_repeats, "Timing repeats per length");
  bt->add_option("--seed", bt_seed, "Prompt seed");

  // flop-audit
  auto* fa = app.add_subcommand(
      "flop-audit", "Check instrumented counters against closed forms");
  std::uint64_t fa_seed = 1;
  int fa_trials = 0;
  fa->add_option("--seed", fa_seed, "Parameter and token seed");
  fa->add_option("--trials", fa_trials,
                 "Extra audits on randomized small configs");

  // inspect
  auto* in = app.add_subcommand("inspect", "Summarize a checkpoint");
  std::string in_ckpt;
  in->add_option("--ckpt", in_ckpt, "Checkpoint directory")->required();

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  auto dispatch = [&]() -> int {
  if (app.got_subcommand(tr)) {
    Config cfg;
    ModelParams<float> params;
    AdamState<float> adam;
    int start_step = 0;
    if (!tr_resume.empty()) {
      Checkpoint<float> ck = load_checkpoint<float>(tr_resume);
      require(ck.has_adam,
              "resume needs a checkpoint with optimizer state: " + tr_resume);
      cfg = detail::build_config(config_path, sets, ck.config);
      Config ca = cfg, cb = ck.config;
      ca.train = cb.train = TrainConfig{};
      require(config_to_json(ca) == config_to_json(cb),
              "resume cannot change the model configuration");
      params = std::move(ck.params);
      adam = std::move(ck.adam);
      start_step = static_cast<int>(ck.step);
      require(start_step < cfg.train.steps,
              "checkpoint already at step " + std::to_string(start_step) +
                  " of " + std::to_string(cfg.train.steps));
    } else {
      cfg = detail::build_config(config_path, sets);
      params = init_params<float>(cfg.model, cfg.train.seed);
      adam = AdamState<float>::make(params);
    }
    auto blocks = detail::load_blocks(tr_data, tr_task, tr_task_blocks,
                                      tr_synth_bytes, cfg);
    out << "training: " << blocks.size() << " blocks of "
        << cfg.model.context + 1 << " tokens, steps " << start_step << ".."
        << cfg.train.steps << "\n";
    auto t0 = std::chrono::steady_clock::now();
    TrainResult res = train<float>(
        params, adam, blocks, cfg.train, start_step,
        [&](const StepMetrics& m) {
          out << "step " << m.step << "  lr " << std::scientific
              << std::setprecision(3) << m.lr << "  loss " << std::fixed
              << std::setprecision(4) << m.loss << "  |g| "
              << std::setprecision(3) << m.grad_norm << "  tok/s "
              << std::setprecision(0) << m.tokens_per_s << "\n";
        });
    auto t1 = std::chrono::steady_clock::now();

    save_checkpoint<float>(tr_out, params, &adam, res.steps_done,
                           rng_state_string(Rng(cfg.train.seed)), cfg.train);
    {
      std::ofstream tsv(std::filesystem::path(tr_out) / "metrics.tsv");
      tsv << "step\tlr\tloss\tgrad_norm\ttokens_per_s\n";
      for (const auto& m : res.history)
        tsv << m.step << "\t" << m.lr << "\t" << m.loss << "\t" << m.grad_norm
            << "\t" << m.tokens_per_s << "\n";
    }
    {
      nlohmann::ordered_json rep;
      rep["steps_done"] = res.steps_done;
      rep["final_loss"] = res.final_loss;
      rep["halted_non_finite"] = res.halted_non_finite;
      rep["wall_seconds"] = std::chrono::duration<double>(t1 - t0).count();
      rep["counters"] = detail::counters_to_json(res.counters);
      std::ofstream rj(std::filesystem::path(tr_out) / "run_report.json");
      rj << rep.dump(2) << "\n";
    }
    if (res.halted_non_finite) {
      err << "training halted: non-finite loss or gradient at step "
          << res.steps_done
          << "; checkpoint holds the last finite parameters\n";
      return 1;
    }
    out << "saved checkpoint to " << tr_out << " (final loss "
        << std::setprecision(4) << std::fixed << res.final_loss << ")\n";
    return 0;
  }

  if (app.got_subcommand(ev)) {
    Checkpoint<float> ck = load_checkpoint<float>(ev_ckpt);
    std::string text = ev_data.empty()
                           ? synthetic_corpus(ev_synth_bytes, 999)
                           : detail::read_file(ev_data);
    auto blocks =
        corpus_batches(text, ck.params.cfg.context, ck.config.train.seed);
    FlopCounters fc;
    double ppl = perplexity<float>(ck.params, blocks, &fc);
    out << "blocks " << blocks.size() << "  perplexity " << std::fixed
        << std::setprecision(4) << ppl << "\n";
    out << "forward ops: " << fc.total() << " (ranker " << fc.ranker_total()
        << ", processor " << fc.processor_total() << ")\n";
    return 0;
  }

  if (app.got_subcommand(ge)) {
    Checkpoint<float> ck = load_checkpoint<float>(ge_ckpt);
    std::vector<int> prompt = byte_encode(ge_prompt, /*add_bos=*/true);
    std::vector<int> new_tokens = generate<float>(
        ck.params, prompt, ge_max_new, ge_temperature, ge_seed);
    out << byte_decode(new_tokens) << "\n";
    return 0;
  }

  if (app.got_subcommand(ni)) {
    NiahKind kind = niah_kind_from_string(ni_kind);
    auto lengths = detail::parse_int_list(ni_lengths);
    auto depths = detail::parse_double_list(ni_depths);
    if (!ni_dump.empty()) {
      std::ofstream df(ni_dump);
      require(df.good(), "cannot write dump file " + ni_dump);
      for (std::size_t li = 0; li < lengths.size(); ++li)
        for (std::size_t di = 0; di < depths.size(); ++di)
          for (int i = 0; i < ni_per_cell; ++i) {
            std::uint64_t s = ni_seed * 1000003ULL +
                              (li * depths.size() + di) * 10007ULL + i;
            NiahInstance inst = gen_niah(kind, lengths[li], depths[di], s);
            nlohmann::ordered_json j;
            j["prompt_b64"] = base64_encode(inst.prompt_text);
            j["answer"] = inst.answer;
            j["depth"] = inst.depth_actual;
            j["length"] = static_cast<int>(inst.prompt.size());
            df << j.dump() << "\n";
          }
      out << "wrote " << lengths.size() * depths.size() * ni_per_cell
          << " instances to " << ni_dump << "\n";
      if (ni_ckpt.empty()) return 0;
    }
    require(!ni_ckpt.empty(), "niah needs --ckpt (or --dump alone)");
    Checkpoint<float> ck = load_checkpoint<float>(ni_ckpt);
    SweepReport rep = niah_sweep<float>(ck.params, kind, lengths, depths,
                                        ni_per_cell, ni_seed, ni_max_new);
    out << render_sweep(rep);
    return 0;
  }

  if (app.got_subcommand(bt)) {
    auto lengths = detail::parse_int_list(bt_lengths);
    ModelParams<float> params;
    if (!bt_ckpt.empty()) {
      params = std::move(load_checkpoint<float>(bt_ckpt).params);
    } else {
      Config cfg = detail::build_config(config_path, sets);
      params = init_params<float>(cfg.model, cfg.train.seed);
    }
    TtftReport rep = ttft_bench<float>(params, lengths, bt_repeats, bt_seed);
    out << render_ttft(rep);
    return 0;
  }

  if (app.got_subcommand(fa)) {
    Config cfg = detail::build_config(config_path, sets);
    AuditReport rep = flop_audit<float>(cfg.model, fa_seed);
    out << render_audit(rep);
    bool ok = rep.ok;
    if (fa_trials > 0) {
      Rng rng(fa_seed + 17);
      for (int t = 0; t < fa_trials; ++t) {
        ModelConfig mc;
        mc.d = 4 << uniform_int(rng, 3);
        mc.expansion = 1 << uniform_int(rng, 3);
        mc.split = 4 << uniform_int(rng, 2);
        mc.k = static_cast<int>(uniform_int(rng, 4));
        mc.layers = 1 + static_cast<int>(uniform_int(rng, 3));
        mc.context = mc.split * (1 + static_cast<int>(uniform_int(rng, 6)));
        mc.vocab = 64;
        AuditReport r2 = flop_audit<float>(mc, fa_seed + t);
        if (!r2.ok) {
          out << "randomized config trial " << t << " mismatch (d=" << mc.d
              << " split=" << mc.split << " k=" << mc.k
              << " layers=" << mc.layers << " context=" << mc.context
              << ")\n"
              << render_audit(r2);
          ok = false;
        }
      }
      if (ok) out << fa_trials << " randomized config trials matched\n";
    }
    return ok ? 0 : 1;
  }

  if (app.got_subcommand(in)) {
    Checkpoint<float> ck = load_checkpoint<float>(in_ckpt);
    out << "step " << ck.step << "\n";
    out << "optimizer state: " << (ck.has_adam ? "yes" : "no") << "\n";
    out << "parameters: " << ck.params.parameter_count() << "\n";
    out << "config:\n" << config_to_json(ck.config).dump(2) << "\n";
    return 0;
  }

  err << "no subcommand handled\n";
  return 2;
  };

  try {
    return dispatch();
  } catch (const ContractViolation& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

inline int run_cli_main(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  try {
    return run_cli(std::move(args), std::cout, std::cerr);
  } catch (const ContractViolation& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace avey
