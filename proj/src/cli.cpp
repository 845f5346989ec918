#include "cascade/cli.hpp"

#include <cmath>
#include <filesystem>
#include <iostream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "cascade/config.hpp"
#include "cascade/em.hpp"
#include "cascade/errors.hpp"
#include "cascade/graph.hpp"
#include "cascade/io.hpp"
#include "cascade/simulate.hpp"

namespace cascade::cli {

namespace fs = std::filesystem;

namespace {

struct Args {
  std::vector<std::string> configs;
  std::string data, graph, out;
  std::optional<std::uint64_t> seed;
  std::optional<double> horizon;
  std::optional<int> iters;
  std::optional<double> tol;
  std::optional<double> split;
  int rounds = 3;
  int workers = 1;
  std::string variant = "shared_transition";
};

RunConfig merged_config(const Args& a) {
  if (a.configs.empty()) throw ConfigError("--config is required");
  RunConfig rc = load_config(a.configs.front());
  for (std::size_t i = 1; i < a.configs.size(); ++i) {
    RunConfig more = load_config(a.configs[i]);
    rc.models.insert(rc.models.end(), more.models.begin(), more.models.end());
  }
  if (a.seed) rc.seed = *a.seed;
  if (a.iters) rc.em.max_iters = *a.iters;
  if (a.tol) rc.em.tol = *a.tol;
  if (rc.em.max_iters < 0) throw ConfigError("--iters must be >= 0");
  return rc;
}

EmOptions em_options(const RunConfig& rc, int workers) {
  EmOptions o;
  o.max_iters = rc.em.max_iters;
  o.tol = rc.em.tol;
  o.workers = workers;
  return o;
}

Dataset load_data(const Args& a, const RunConfig* rc) {
  if (a.data.empty()) throw ConfigError("--data is required");
  std::optional<MarkSchema> schema;
  if (rc && rc->schema) schema = rc->schema;
  return ingest(a.data, schema);
}

fs::path out_dir(const Args& a) {
  if (a.out.empty()) throw ConfigError("--out is required");
  return a.out;
}

std::string num(double v) { return std::isnan(v) ? std::string() : io::format_double(v); }

int cmd_simulate(const Args& a) {
  const RunConfig rc = merged_config(a);
  if (!rc.schema) throw ConfigError("simulate needs a 'schema' in the config");
  if (!a.horizon) throw ConfigError("--horizon is required");
  const fs::path dir = out_dir(a);
  SimulateOptions opts;
  opts.max_events = rc.max_events;
  const Simulation sim = simulate(rc.models.front(), *rc.schema, *a.horizon, rc.seed, opts);
  io::write_atomically(dir / "events.jsonl", [&](std::ostream& o) { emit(sim.data, o); });
  io::write_atomically(dir / "forest.jsonl", [&](std::ostream& o) { write_forest(o, sim.forest); });
  std::cout << fmt::format("events {}\nmax_generation {}\nbranching_ratio {}\n", sim.data.size(),
                           sim.forest.max_generation(), io::format_double(sim.forest.branching_ratio()));
  return ok;
}

int cmd_fit(const Args& a) {
  const RunConfig rc = merged_config(a);
  const Dataset data = load_data(a, &rc);
  const fs::path dir = out_dir(a);
  const EmOptions em = em_options(rc, a.workers);
  FitReport report;
  if (a.split) {
    auto [train, test] = split(data, *a.split);
    report = fit(rc.models.front(), train, em, &test);
  } else {
    report = fit(rc.models.front(), data, em);
  }
  io::write_atomically(dir / "model.json", [&](std::ostream& o) { o << to_json(report.model).dump(2) << '\n'; });
  io::write_atomically(dir / "trace.csv", [&](std::ostream& o) { write_trace_csv(o, report); });
  std::cout << fmt::format("iterations {}\nconverged {}\ntrain_ll {}\n", report.iterations,
                           report.converged ? "true" : "false", io::format_double(report.train_ll.back()));
  if (a.split) std::cout << "test_ll " << io::format_double(report.test_ll.back()) << '\n';
  return ok;
}

int cmd_compare(const Args& a) {
  const RunConfig rc = merged_config(a);
  if (rc.models.size() < 2) throw ConfigError("compare needs at least two models");
  const Dataset data = load_data(a, &rc);
  const fs::path dir = out_dir(a);
  auto [train, test] = split(data, a.split.value_or(0.8));
  const EmOptions em = em_options(rc, a.workers);

  std::ostringstream table;
  table << "model,train_ll,test_ll,status\n";
  for (const auto& m : rc.models) {
    try {
      const FitReport r = fit(m, train, em);
      const double test_ll = log_likelihood(r.model, test, a.workers);
      table << m.name << ',' << num(r.train_ll.back()) << ',' << num(test_ll) << ",ok\n";
      std::cout << fmt::format("{}: train_ll {} test_ll {}\n", m.name, io::format_double(r.train_ll.back()),
                               io::format_double(test_ll));
    } catch (const std::exception& e) {
      spdlog::error("model '{}' failed: {}", m.name, e.what());
      table << m.name << ",,,failed\n";
      std::cout << m.name << ": failed\n";
    }
  }
  io::write_atomically(dir / "compare.csv", [&](std::ostream& o) { o << table.str(); });
  return ok;
}

int cmd_graph_fit(const Args& a) {
  if (a.graph.empty()) throw ConfigError("--graph is required");
  if (a.rounds < 0) throw ConfigError("--rounds must be >= 0");
  std::vector<Variant> variants;
  if (a.variant == "all") {
    variants = {Variant::no_neighbors, Variant::shared_transition, Variant::separate_transitions,
                Variant::per_neighbor};
  } else {
    variants = {parse_variant(a.variant)};
  }
  const Graph graph = load_graph(a.graph);
  const Dataset data = load_data(a, nullptr);
  const fs::path dir = out_dir(a);

  GraphFitOptions options;
  options.rounds = a.rounds;
  options.workers = a.workers;
  if (a.iters) options.polish_iters = *a.iters;
  if (a.tol) options.inner.tol = *a.tol;
  // Start delays at the mean gap between consecutive events of a node.
  const double per_node = static_cast<double>(std::max<std::size_t>(data.size(), 1)) /
                          static_cast<double>(std::max<std::size_t>(graph.size(), 1));
  options.inner.initial_delay_rate = per_node / data.window_length();

  std::ostringstream rounds, nodes, summary;
  std::vector<RoundRow> all_rows;
  summary << "variant,c,pooling,train_ll,val_ll,test_ll\n";
  std::vector<std::pair<std::string, std::string>> matrices;  // file name, contents
  for (Variant v : variants) {
    options.variant = v;
    const GraphFitReport rep = graph_fit(graph, data, options);
    all_rows.insert(all_rows.end(), rep.rows.begin(), rep.rows.end());
    double train = 0.0, val = 0.0;
    for (std::size_t i = 0; i < rep.nodes.size(); ++i) {
      const auto& n = rep.nodes[i];
      train += n.train_ll;
      val += n.val_ll;
      nlohmann::json line = {{"variant", variant_name(v)},
                             {"node", graph.nodes[n.node]},
                             {"train_ll", n.train_ll},
                             {"val_ll", n.val_ll},
                             {"test_ll", rep.test_ll[i]},
                             {"model", to_json(n.model)}};
      nodes << line.dump() << '\n';
    }
    summary << variant_name(v) << ',' << num(rep.hyper.magnitude) << ',' << num(rep.hyper.pooling) << ','
            << num(train) << ',' << num(val) << ',' << num(rep.total_test_ll) << '\n';
    std::cout << fmt::format("{}: c {} train_ll {} val_ll {} test_ll {}\n", variant_name(v),
                             io::format_double(rep.hyper.magnitude), io::format_double(train),
                             io::format_double(val), io::format_double(rep.total_test_ll));

    std::vector<std::string> labels;
    for (int k = 1; k <= data.schema.categories(); ++k) labels.push_back(std::to_string(k));
    const Eigen::VectorXd marginal =
        Eigen::Map<const Eigen::VectorXd>(rep.type_prior.probs.data(), rep.type_prior.probs.size());
    std::set<std::string> used;
    for (const auto& n : rep.nodes)
      for (const auto& c : n.model.components) used.insert(c.transition_group.empty() ? c.name : c.transition_group);
    for (const auto& [ctx, dir_matrix] : rep.hyper.direction) {
      if (!used.count(ctx)) continue;
      std::ostringstream m, r;
      write_matrix_csv(m, dir_matrix, labels, labels);
      write_log_ratio_csv(r, dir_matrix, marginal, labels, labels);
      const std::string stem = "transition_" + variant_name(v) + "_" + ctx;
      matrices.emplace_back(stem + ".csv", m.str());
      matrices.emplace_back(stem + "_log_ratio.csv", r.str());
    }
  }
  write_rounds_csv(rounds, all_rows);
  io::write_atomically(dir / "rounds.csv", [&](std::ostream& o) { o << rounds.str(); });
  io::write_atomically(dir / "nodes.jsonl", [&](std::ostream& o) { o << nodes.str(); });
  io::write_atomically(dir / "summary.csv", [&](std::ostream& o) { o << summary.str(); });
  for (const auto& [name, text] : matrices)
    io::write_atomically(dir / name, [&](std::ostream& o) { o << text; });
  return ok;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  static const bool logger_ready = [] {
    auto logger = spdlog::stderr_color_mt("cascade");
    spdlog::set_default_logger(logger);
    return true;
  }();
  (void)logger_ready;

  CLI::App app{"Cascades of Poisson processes: simulate, fit and compare marked event models"};
  app.require_subcommand(1);
  Args a;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", a.configs, "model/run configuration (JSON); repeatable");
    sub->add_option("--data", a.data, "event file (JSON Lines)");
    sub->add_option("--out", a.out, "output directory");
    sub->add_option("--seed", a.seed, "random seed (overrides the config)");
    sub->add_option("--iters", a.iters, "maximum EM iterations");
    sub->add_option("--tol", a.tol, "relative log-likelihood tolerance");
    sub->add_option("--workers", a.workers, "worker threads")->check(CLI::PositiveNumber);
  };
  auto* sim = app.add_subcommand("simulate", "simulate a cascade and its causal forest");
  common(sim);
  sim->add_option("--horizon", a.horizon, "time horizon T");
  auto* fit_cmd = app.add_subcommand("fit", "fit a model with EM");
  common(fit_cmd);
  fit_cmd->add_option("--split", a.split, "train fraction; the rest is scored as test");
  auto* cmp = app.add_subcommand("compare", "fit several models and compare held-out log-likelihood");
  common(cmp);
  cmp->add_option("--split", a.split, "train fraction (default 0.8)");
  auto* gfit = app.add_subcommand("graph-fit", "per-node neighborhood models with shared hyperparameters");
  common(gfit);
  gfit->add_option("--graph", a.graph, "graph file (JSON Lines)");
  gfit->add_option("--rounds", a.rounds, "hyperparameter rounds");
  gfit->add_option("--variant", a.variant,
                   "no_neighbors | shared_transition | separate_transitions | per_neighbor | all");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();
  try {
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : config_error;
  }

  try {
    if (*sim) return cmd_simulate(a);
    if (*fit_cmd) return cmd_fit(a);
    if (*cmp) return cmd_compare(a);
    if (*gfit) return cmd_graph_fit(a);
  } catch (const ConfigError& e) {
    spdlog::error("configuration error: {}", e.what());
    return config_error;
  } catch (const DataError& e) {
    spdlog::error("data error: {}", e.what());
    return data_error;
  } catch (const NumericalError& e) {
    spdlog::error("numerical failure: {}", e.what());
    return numerical_error;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return failure;
  }
  return failure;
}

int run(int argc, char** argv) { return run(std::vector<std::string>(argv, argv + argc)); }

}  // namespace cascade::cli
