// condu: command-line front end over the fusion library.
//
// Exit codes: 0 success, 1 domain error (error name on stderr), 2 usage error.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "condu/convergence.hpp"
#include "condu/fusion.hpp"
#include "condu/routing.hpp"
#include "condu/sim_harness.hpp"
#include "condu/tensor_store.hpp"
#include "condu/triggers.hpp"

namespace {

using namespace condu;

struct Options {
  std::string base;
  std::vector<std::string> deltas;
  std::string state;
  std::size_t task = 0;
  std::string out;
  std::vector<std::size_t> k;
  double eps = 1e-10;
  std::size_t max_steps = 200;
  std::uint64_t seed = 1;
  std::size_t tasks = 5;
  std::size_t dim = 64;
  std::size_t classes = 4;
  std::string mode = "full";
  std::string report = "text";
  std::string config;
  std::string query;
  std::uint64_t params = 0;
  std::string dtype_name = "r32";
  std::string inspect_path;
};

// Writes to --out when given, to stdout otherwise.
template <typename Fn>
void emit(const std::string& out, Fn&& write) {
  if (out.empty()) {
    write(std::cout);
    return;
  }
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw error(errc::io_error, "cannot open '" + out + "' for writing");
  write(f);
  if (!f) throw error(errc::io_error, "write to '" + out + "' failed");
}

DeltaModel load_delta(const std::string& path, std::uint32_t task_id, std::optional<PrototypeSet>& protos) {
  auto c = load(path);
  DeltaModel d{read_model(c, ContainerKind::delta_model), task_id};
  if (const auto* p = c.first(tag::prototypes)) protos = decode_prototypes(p->payload).with_task_id(task_id);
  return d;
}

std::size_t task_index(std::size_t one_based) {
  if (one_based == 0) throw error(errc::unknown_task, "task numbers start at 1");
  return one_based - 1;
}

int cmd_unify(const Options& o) {
  const auto base = read_model(load(o.base), ContainerKind::base_model);
  std::vector<DeltaModel> deltas;
  std::vector<PrototypeSet> protos;
  for (std::size_t i = 0; i < o.deltas.size(); ++i) {
    std::optional<PrototypeSet> p;
    deltas.push_back(load_delta(o.deltas[i], static_cast<std::uint32_t>(i), p));
    require_same_layout(deltas.back().vec, base, "delta '" + o.deltas[i] + "' does not match base layout");
    protos.push_back(p ? *p : PrototypeSet::placeholder(static_cast<std::uint32_t>(i)));
  }
  SessionState s;
  s.base_hash = content_hash(base);
  std::tie(s.unified, s.triggers) = fuse(deltas);
  s.prototypes = std::move(protos);
  save(session_container(s), o.out);
  for (auto i : degenerate_tasks(s)) std::cerr << "warning: task " << i + 1 << " has a degenerate trigger (lambda = 0)\n";
  return 0;
}

int cmd_session(const Options& o) {
  std::optional<SessionState> state;
  digest256 base_hash{};
  if (!o.state.empty()) state = read_session(load(o.state));
  if (!o.base.empty()) {
    base_hash = content_hash(read_model(load(o.base), ContainerKind::base_model));
    if (state && state->base_hash != base_hash) throw error(errc::layout_mismatch, "base model differs from the session's base");
  } else if (!state) {
    throw error(errc::bad_config, "first session needs --base");
  }
  if (o.deltas.size() != 1) throw error(errc::bad_config, "session takes exactly one --delta");
  const auto id = static_cast<std::uint32_t>(state ? state->task_count() : 0);
  std::optional<PrototypeSet> p;
  auto delta = load_delta(o.deltas.front(), id, p);
  auto next = run_session(state, delta, p ? *p : PrototypeSet::placeholder(id), base_hash);
  save(session_container(next), o.out);
  for (auto i : degenerate_tasks(next)) std::cerr << "warning: task " << i + 1 << " has a degenerate trigger (lambda = 0)\n";
  return 0;
}

int cmd_decouple(const Options& o) {
  const auto state = read_session(load(o.state));
  const auto& trig = trigger_for(state, task_index(o.task));
  if (!o.base.empty()) {
    const auto base = read_model(load(o.base), ContainerKind::base_model);
    if (content_hash(base) != state.base_hash) throw error(errc::layout_mismatch, "base model differs from the session's base");
    save(model_container(reconstruct_model(base, state.unified, trig), ContainerKind::base_model), o.out);
  } else {
    save(model_container(decouple(state.unified, trig).vec, ContainerKind::delta_model), o.out);
  }
  return 0;
}

int cmd_iterate(const Options& o) {
  std::vector<DeltaModel> deltas;
  for (std::size_t i = 0; i < o.deltas.size(); ++i) {
    std::optional<PrototypeSet> unused;
    deltas.push_back(load_delta(o.deltas[i], static_cast<std::uint32_t>(i), unused));
  }
  auto [final_set, trace] = iterate_until(deltas, o.eps, o.max_steps);
  emit(o.out, [&](std::ostream& s) {
    if (o.report == "csv") write_trace_csv(s, trace);
    else write_trace_text(s, trace);
  });
  return 0;
}

int cmd_route(const Options& o) {
  const auto state = read_session(load(o.state));
  const auto queries = read_prototype_bundle(load(o.query));
  const std::size_t k = o.k.empty() ? default_top_k : o.k.front();
  emit(o.out, [&](std::ostream& s) {
    s << "query,sample";
    for (std::size_t t = 1; t <= state.task_count(); ++t) s << ",sim_" << t;
    s << ",selected\n" << std::setprecision(17);
    std::size_t q = 0;
    for (const auto& bundle : queries) {
      for (const auto& sample : bundle.prototypes()) {
        auto d = route(sample.vector, state.prototypes, k);
        s << ++q << ',' << sample.label;
        for (double v : d.per_task_best_sim) s << ',' << v;
        s << ',';
        for (std::size_t i = 0; i < d.selected_tasks.size(); ++i) s << (i ? ";" : "") << d.selected_tasks[i] + 1;
        s << '\n';
      }
    }
  });
  return 0;
}

sim::BenchmarkConfig benchmark_config(const Options& o, const CLI::App& sub) {
  sim::BenchmarkConfig cfg;
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw error(errc::io_error, "cannot open '" + o.config + "'");
    cfg = sim::parse_config(in);
  }
  if (sub.count("--seed")) cfg.suite.seed = o.seed;
  if (sub.count("--tasks")) cfg.suite.tasks = o.tasks;
  if (sub.count("--dim")) cfg.suite.dim = o.dim;
  if (sub.count("--classes")) cfg.suite.classes = o.classes;
  if (sub.count("--mode")) cfg.mode = sim::parse_mode(o.mode);
  if (sub.count("--k") && !o.k.empty()) cfg.k = o.k.front();
  return cfg;
}

int cmd_simulate(const Options& o, const CLI::App& sub) {
  const auto cfg = benchmark_config(o, sub);
  const auto tasks = sim::gen_tasks(cfg.suite);
  const auto result = sim::run_benchmark(tasks, sim::gen_pretraining(cfg.suite), cfg);
  emit(o.out, [&](std::ostream& s) {
    if (o.report == "csv") sim::write_matrix_csv(s, result.matrix);
    else sim::write_summary(s, result, cfg);
  });
  return 0;
}

int cmd_sweep_k(const Options& o, const CLI::App& sub) {
  auto cfg = benchmark_config(o, sub);
  const auto tasks = sim::gen_tasks(cfg.suite);
  const auto result = sim::run_benchmark(tasks, sim::gen_pretraining(cfg.suite), cfg);
  std::vector<std::size_t> ks = o.k;
  if (ks.empty()) {
    for (std::size_t k = 1; k <= tasks.size(); ++k) ks.push_back(k);
  }
  const auto rows = sim::sweep_k(tasks, result.state, result.base, ks);
  emit(o.out, [&](std::ostream& s) {
    s << (o.report == "csv" ? "k,transfer,task_agnostic\n" : "K  Transfer  TaskAgnostic\n");
    s << std::fixed << std::setprecision(4);
    double lo = 1.0, hi = 0.0;
    for (const auto& r : rows) {
      const auto sep = o.report == "csv" ? "," : "  ";
      s << r.k << sep;
      if (r.transfer) s << *r.transfer;
      else s << "n/a";
      s << sep << r.task_agnostic << '\n';
      if (r.transfer) {
        lo = std::min(lo, *r.transfer);
        hi = std::max(hi, *r.transfer);
      }
    }
    if (o.report != "csv" && lo <= hi) s << "transfer spread (max-min) " << hi - lo << '\n';
  });
  return 0;
}

int cmd_storage_report(const Options& o) {
  const auto type = o.dtype_name == "r64" ? dtype::r64 : dtype::r32;
  const auto r = storage_report(o.params, type, static_cast<std::uint32_t>(o.tasks));
  auto mb = [](std::uint64_t b) { return static_cast<double>(b) / bytes_per_mb; };
  emit(o.out, [&](std::ostream& s) {
    s << std::fixed << std::setprecision(2);
    if (o.report == "csv") {
      s << "item,bytes,mb\n";
      s << "dense_model," << r.dense_model_bytes << ',' << mb(r.dense_model_bytes) << '\n';
      s << "dense_total," << r.dense_total_bytes << ',' << mb(r.dense_total_bytes) << '\n';
      s << "unified," << r.unified_bytes << ',' << mb(r.unified_bytes) << '\n';
      s << "masks," << r.mask_bytes << ',' << mb(r.mask_bytes) << '\n';
      s << "rescalers," << r.rescaler_bytes << ',' << mb(r.rescaler_bytes) << '\n';
      s << "condu_total," << r.condu_total_bytes << ',' << mb(r.condu_total_bytes) << '\n';
      s << std::setprecision(4) << "savings_ratio,," << r.savings_ratio << '\n';
      return;
    }
    s << "parameters        " << r.param_count << " (" << (type == dtype::r32 ? "r32" : "r64") << "), tasks "
      << r.task_count << '\n';
    s << "dense model       " << mb(r.dense_model_bytes) << " MB\n";
    s << "dense, all tasks  " << mb(r.dense_total_bytes) << " MB\n";
    s << "unified delta     " << mb(r.unified_bytes) << " MB\n";
    s << "masks             " << mb(r.mask_bytes) << " MB\n";
    s << "rescalers         " << r.rescaler_bytes << " B (8 bytes per task)\n";
    s << "condu total       " << mb(r.condu_total_bytes) << " MB\n";
    s << "savings           " << mb(r.dense_total_bytes - std::min(r.dense_total_bytes, r.condu_total_bytes))
      << " MB (ratio " << std::setprecision(4) << r.savings_ratio << ")\n";
    s << "MB = 2^20 bytes; base model excluded from both sides\n";
  });
  return 0;
}

int cmd_inspect(const Options& o) {
  const auto c = load(o.inspect_path);
  emit(o.out, [&](std::ostream& s) {
    s << "kind " << kind_name(c.kind) << ", version " << c.version << ", sections " << c.sections.size() << '\n';
    for (const auto& sec : c.sections) {
      s << "  section 0x" << std::hex << std::setw(4) << std::setfill('0') << sec.tag << std::dec << std::setfill(' ')
        << "  " << sec.payload.size() << " bytes\n";
    }
    if (const auto* lay = c.first(tag::layout)) {
      const auto layout = decode_layout(lay->payload);
      for (const auto& e : layout.entries()) {
        s << "  tensor " << e.name << " [";
        for (std::size_t i = 0; i < e.dims.size(); ++i) s << (i ? "," : "") << e.dims[i];
        s << "] offset " << e.offset << " length " << e.length << '\n';
      }
      s << "  total elements " << layout.total_len() << '\n';
    }
    if (c.kind == ContainerKind::session_state) {
      const auto st = read_session(c);
      s << "  tasks " << st.task_count() << ", base hash " << to_hex(st.base_hash) << '\n';
      s << std::setprecision(17);
      for (std::size_t i = 0; i < st.triggers.size(); ++i) {
        const auto& t = st.triggers[i];
        s << "  task " << i + 1 << " lambda " << t.lambda << " mask " << t.mask.popcount() << '/' << t.mask.bit_len()
          << " prototypes " << st.prototypes[i].prototypes().size() << (t.degenerate() ? " DEGENERATE" : "") << '\n';
      }
    } else if (c.kind == ContainerKind::prototype_bundle) {
      for (const auto& p : read_prototype_bundle(c)) {
        s << "  prototype set task " << p.task_id() << ": " << p.prototypes().size() << " categories, dim "
          << p.feature_dim() << '\n';
      }
    } else {
      const auto v = read_vector(c);
      s << "  dtype " << (v.type() == dtype::r32 ? "r32" : "r64") << ", L1 " << std::setprecision(17)
        << l1_norm(v.values()) << '\n';
    }
  });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual decoupling-unifying model fusion"};
  app.require_subcommand(1);
  Options o;

  auto add_out = [&](CLI::App* s) { s->add_option("--out", o.out, "Output path"); };
  auto add_report = [&](CLI::App* s) {
    s->add_option("--report", o.report, "Report format")->check(CLI::IsMember({"csv", "text"}));
  };
  auto add_sim = [&](CLI::App* s) {
    s->add_option("--config", o.config, "key=value benchmark config file");
    s->add_option("--seed", o.seed, "Suite seed");
    s->add_option("--tasks", o.tasks, "Number of tasks")->check(CLI::PositiveNumber);
    s->add_option("--dim", o.dim, "Feature dimension")->check(CLI::PositiveNumber);
    s->add_option("--classes", o.classes, "Classes per task")->check(CLI::Range(2, 1 << 20));
    s->add_option("--mode", o.mode, "full | lora:<r>");
    add_report(s);
    add_out(s);
  };

  auto* unify = app.add_subcommand("unify", "Fuse deltas into a session state");
  unify->add_option("--base", o.base)->required();
  unify->add_option("--delta", o.deltas)->required();
  unify->add_option("--out", o.out)->required();

  auto* session = app.add_subcommand("session", "Add one task to a session state");
  session->add_option("--state", o.state);
  session->add_option("--base", o.base);
  session->add_option("--delta", o.deltas)->required();
  session->add_option("--out", o.out)->required();

  auto* dec = app.add_subcommand("decouple", "Reconstruct one task's delta (or model, with --base)");
  dec->add_option("--state", o.state)->required();
  dec->add_option("--task", o.task, "1-based task number")->required();
  dec->add_option("--base", o.base);
  dec->add_option("--out", o.out)->required();

  auto* iter = app.add_subcommand("iterate", "Fixed-set iteration trace");
  iter->add_option("--delta", o.deltas)->required();
  iter->add_option("--eps", o.eps)->check(CLI::PositiveNumber);
  iter->add_option("--max-steps", o.max_steps)->check(CLI::PositiveNumber);
  add_report(iter);
  add_out(iter);

  auto* rt = app.add_subcommand("route", "Route query features against a session's prototypes");
  rt->add_option("--state", o.state)->required();
  rt->add_option("--query", o.query, "PrototypeBundle container of query features")->required();
  rt->add_option("--k", o.k)->expected(1)->check(CLI::PositiveNumber);
  add_out(rt);

  auto* simulate = app.add_subcommand("simulate", "Run the synthetic continual benchmark");
  add_sim(simulate);
  simulate->add_option("--k", o.k)->expected(1)->check(CLI::PositiveNumber);

  auto* sweep = app.add_subcommand("sweep-k", "Re-evaluate routing for several K");
  add_sim(sweep);
  sweep->add_option("--k", o.k, "K values (repeatable; default 1..tasks)")->check(CLI::PositiveNumber);

  auto* storage = app.add_subcommand("storage-report", "Dense vs fused storage arithmetic");
  storage->add_option("--params", o.params)->required()->check(CLI::PositiveNumber);
  storage->add_option("--dtype", o.dtype_name)->check(CLI::IsMember({"r32", "r64"}));
  storage->add_option("--tasks", o.tasks)->check(CLI::PositiveNumber);
  add_report(storage);
  add_out(storage);

  auto* inspect = app.add_subcommand("inspect", "Describe a container file");
  inspect->add_option("file", o.inspect_path)->required();
  add_out(inspect);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*unify) return cmd_unify(o);
    if (*session) return cmd_session(o);
    if (*dec) return cmd_decouple(o);
    if (*iter) return cmd_iterate(o);
    if (*rt) return cmd_route(o);
    if (*simulate) return cmd_simulate(o, *simulate);
    if (*sweep) return cmd_sweep_k(o, *sweep);
    if (*storage) return cmd_storage_report(o);
    if (*inspect) return cmd_inspect(o);
  } catch (const condu::error& e) {
    std::cerr << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "IoError: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
