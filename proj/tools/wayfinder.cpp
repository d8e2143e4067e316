#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "wayfinder/common.hpp"
#include "wayfinder/grounding.hpp"
#include "wayfinder/harness.hpp"
#include "wayfinder/langparse.hpp"
#include "wayfinder/relations.hpp"
#include "wayfinder/serve.hpp"

using namespace wayfinder;
using namespace wayfinder::harness;

namespace {

struct Options {
  std::string text;
  std::string world;
  std::string corpus;
  std::string weights;
  std::string out;
  std::string baseline;
  int particles = 20;
  int moments = 2;
  std::uint64_t seed = 1;
  int trials = 0;
  int port = 8080;
  std::string host = "127.0.0.1";
  int start = -1;
  int goal = -1;
  int iterations = 10;
  int train_n = 28;
  bool no_belief = false;
};

const ground::SymbolSpace& space() { return ground::SymbolSpace::bundled(); }

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
}

std::string out_path(const std::string& prefix, const char* suffix) { return prefix + suffix; }

RunConfig run_config(const Options& o) {
  RunConfig cfg;
  cfg.particles = o.particles;
  cfg.k = o.moments;
  cfg.belief = !o.no_belief;
  return cfg;
}

policy::PolicyWeights policy_weights(const Options& o) {
  return o.weights.empty() ? default_policy() : policy::PolicyWeights::load(o.weights);
}

std::vector<Direction> corpus(const Options& o) {
  auto dirs = o.corpus.empty() ? bundled_directions() : load_directions(o.corpus);
  if (!o.world.empty()) {
    std::erase_if(dirs, [&o](const Direction& d) { return d.world != o.world; });
  }
  if (dirs.empty()) throw std::invalid_argument("no directions selected");
  return dirs;
}

std::vector<Baseline> baselines(const Options& o) {
  if (o.baseline.empty() || o.baseline == "all") return all_baselines();
  std::vector<Baseline> out;
  std::string::size_type b = 0;
  while (b <= o.baseline.size()) {
    const auto e = std::min(o.baseline.find(',', b), o.baseline.size());
    out.push_back(parse_baseline(o.baseline.substr(b, e - b)));
    b = e + 1;
  }
  return out;
}

std::vector<std::uint64_t> seed_list(const Options& o) {
  std::vector<std::uint64_t> seeds;
  const int n = o.trials > 0 ? o.trials : 1;
  for (int i = 0; i < n; ++i) seeds.push_back(o.seed + static_cast<std::uint64_t>(i));
  return seeds;
}

int cmd_parse(const Options& o) {
  const auto res = lang::parse_detailed(lang::tokenize(o.text), lang::Grammar::bundled());
  std::cout << lang::write_bracketed(res.tree) << "\n";
  return 0;
}

int cmd_ground(const Options& o) {
  const auto w = o.weights.empty() ? ground::default_weights() : ground::Weights::load(o.weights);
  const auto tree = lang::parse(lang::tokenize(o.text), lang::Grammar::bundled());
  for (const auto& s : ground::ground_annotations(tree, space(), w)) std::cout << "annotation " << space().to_string(s) << "\n";
  if (o.world.empty()) return 0;

  const auto& world = world_named(o.world);
  ground::MapContext ctx;
  std::vector<rel::RegionGeom> geom;
  for (const auto& r : world.regions) {
    ctx.objects.push_back({r.id, r.type_index});
    geom.push_back(rel::RegionGeom::from_polygon(r.rect.polygon()));
  }
  const auto robot = world.start_pose();
  const auto* models = &rel::RelationModels::bundled();
  ctx.relation_support = [&geom, robot, models](int f, int r, int l) {
    return std::exp(models->score(r, geom[f], geom[l], robot));
  };
  const auto b = ground::ground_behavior(tree, space(), ctx, w);
  std::cout << "behavior " << ground::describe(space(), ctx, b) << "\n";
  for (std::size_t i = 0; i < world.regions.size(); ++i) {
    std::cout << "  o" << i << " = " << world.regions[i].type << "\n";
  }
  return 0;
}

int cmd_train_grounding(const Options& o) {
  const auto examples = o.corpus.empty() ? ground::bundled_corpus() : ground::load_corpus(o.corpus, space());
  ground::TrainReport report;
  const auto w = ground::train_weights(examples, space(), {}, &report);
  std::cout << "examples " << examples.size() << "\n"
            << "objective " << report.final_objective << "\n"
            << "root_accuracy " << report.root_accuracy << "\n"
            << "behavior_accuracy " << report.behavior_accuracy << "\n";
  if (!o.out.empty()) w.save(o.out);
  return 0;
}

int cmd_train_policy(const Options& o) {
  PolicyTrainConfig cfg;
  cfg.dagger.iterations = o.iterations;
  cfg.dagger.k = o.moments;
  cfg.run = run_config(o);
  if (!o.baseline.empty()) cfg.baselines = baselines(o);
  const auto res = train_policy(corpus(o), cfg, o.seed, [](const policy::IterationStats& s) {
    std::cout << "iteration " << s.iteration << " agreement " << s.agreement << " dataset_agreement "
              << s.dataset_agreement << " loss " << s.mean_loss << std::endl;
  });
  if (o.out.empty()) std::cout << res.weights.to_json() << "\n";
  else res.weights.save(o.out);
  return 0;
}

int cmd_run(const Options& o) {
  const std::string world = o.world.empty() ? "sim-3room" : o.world;
  const auto& w = world_named(world);
  const Direction d{o.text, world, o.start >= 0 ? o.start : w.start_region, o.goal >= 0 ? o.goal : w.goal_region};
  auto cfg = run_config(o);
  cfg.keep_filter_trace = !o.out.empty();
  const auto r = run_scenario(d, o.baseline.empty() ? Baseline::WithLanguage : parse_baseline(o.baseline),
                              policy_weights(o), cfg, o.seed);
  std::cout << "behavior " << r.behavior << "\n";
  for (const auto& s : r.trace) {
    std::printf("decision %d region %d target %d%s pose %.3f %.3f %.3f\n", s.decision, s.region, s.target,
                s.stop ? " stop" : "", s.pose.x, s.pose.y, s.pose.theta);
  }
  std::printf("distance %.3f steps %d decisions %d end_error %.3f success %d capped %d\n", r.distance, r.steps,
              r.decisions, r.end_error, r.success, r.capped);
  if (!o.out.empty()) {
    std::string lines;
    for (const auto& l : r.filter_trace) lines += l + "\n";
    write_file(o.out, lines);
  }
  return r.success ? 0 : 2;
}

int cmd_eval(const Options& o) {
  const auto e = evaluate(corpus(o), baselines(o), seed_list(o), policy_weights(o), run_config(o));
  const auto summary = summary_csv(e);
  std::cout << summary;
  if (!o.out.empty()) {
    write_file(out_path(o.out, "_summary.csv"), summary);
    write_file(out_path(o.out, "_runs.csv"), runs_csv(e));
  }
  return 0;
}

int cmd_xval(const Options& o) {
  XvalConfig cfg;
  cfg.train_n = o.train_n;
  cfg.trials = o.trials > 0 ? o.trials : 20;
  cfg.train.dagger.iterations = o.iterations;
  cfg.run.particles = o.particles;
  cfg.train.run.particles = o.particles;
  const auto trials = cross_validate(corpus(o), cfg, o.seed, [](const XvalTrial& t) {
    std::cout << "trial " << t.trial << " belief " << t.belief_error << " no_belief " << t.no_belief_error
              << std::endl;
  });
  std::vector<double> b, n;
  for (const auto& t : trials) {
    b.push_back(t.belief_error);
    n.push_back(t.no_belief_error);
  }
  for (const auto& [name, v] : {std::pair{"belief", &b}, std::pair{"no_belief", &n}}) {
    const auto q = quartiles(*v);
    std::printf("%s min %.4f q1 %.4f median %.4f q3 %.4f max %.4f\n", name, q.min, q.q1, q.median, q.q3, q.max);
  }
  if (!o.out.empty()) write_file(o.out, xval_csv(trials));
  return 0;
}

int cmd_serve(const Options& o) {
  serve::ServeConfig cfg;
  cfg.world = o.world.empty() ? "sim-3room" : o.world;
  cfg.text = o.text;
  cfg.start_region = o.start;
  cfg.goal_region = o.goal;
  if (!o.baseline.empty()) cfg.baseline = parse_baseline(o.baseline);
  cfg.run = run_config(o);
  cfg.seed = o.seed;
  return serve::serve(cfg, policy_weights(o), o.host, o.port);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wayfinder: language-grounded navigation"};
  app.require_subcommand(1);
  Options o;

  auto world = [&o](CLI::App* c, const char* help) { c->add_option("--world", o.world, help); };
  auto corpus_opt = [&o](CLI::App* c, const char* help) { c->add_option("--corpus", o.corpus, help); };
  auto weights = [&o](CLI::App* c, const char* help) { c->add_option("--weights", o.weights, help); };
  auto out = [&o](CLI::App* c, const char* help) { c->add_option("--out", o.out, help); };
  auto seed = [&o](CLI::App* c) { c->add_option("--seed", o.seed, "random seed")->capture_default_str(); };
  auto belief = [&o](CLI::App* c) {
    c->add_option("--particles", o.particles, "filter particles")->capture_default_str();
    c->add_option("--moments", o.moments, "moments K of the belief embedding")->capture_default_str();
    c->add_flag("--no-belief", o.no_belief, "policy sees only the MAP particle");
  };

  auto* parse = app.add_subcommand("parse", "parse a direction and print the bracketed tree");
  parse->add_option("text", o.text, "direction text")->required();

  auto* ground = app.add_subcommand("ground", "ground a direction to annotations (and a behavior on --world)");
  ground->add_option("text", o.text, "direction text")->required();
  world(ground, "world whose true map grounds the behavior");
  weights(ground, "grounding weights JSON (default: trained on the bundled corpus)");

  auto* tg = app.add_subcommand("train-grounding", "train grounding weights");
  corpus_opt(tg, "grounding corpus JSON (default: bundled)");
  out(tg, "output weights JSON");

  auto* tp = app.add_subcommand("train-policy", "train policy weights with DAgger");
  corpus_opt(tp, "directions JSON (default: bundled)");
  world(tp, "restrict to directions in this world");
  tp->add_option("--baseline", o.baseline, "comma-separated baselines to roll out (default: all)");
  tp->add_option("--iterations", o.iterations, "DAgger iterations")->capture_default_str();
  belief(tp);
  seed(tp);
  out(tp, "output weights JSON (default: stdout)");

  auto* run = app.add_subcommand("run", "run one direction and print the trace");
  run->add_option("text", o.text, "direction text")->required();
  world(run, "world name (default sim-3room)");
  run->add_option("--start", o.start, "start region (default: world start)");
  run->add_option("--goal", o.goal, "goal region (default: world goal)");
  run->add_option("--baseline", o.baseline, "known-map | with-language | without-language");
  weights(run, "policy weights JSON (default: bundled)");
  belief(run);
  seed(run);
  out(run, "write the filter trace (JSON lines) here");

  auto* ev = app.add_subcommand("eval", "evaluate baselines over a direction corpus");
  corpus_opt(ev, "directions JSON (default: bundled)");
  world(ev, "restrict to directions in this world");
  ev->add_option("--baseline", o.baseline, "comma-separated baselines (default: all)");
  ev->add_option("--trials", o.trials, "seeds per direction (seed, seed+1, ...)");
  weights(ev, "policy weights JSON (default: bundled)");
  belief(ev);
  seed(ev);
  out(ev, "output prefix: <out>_summary.csv and <out>_runs.csv");

  auto* xv = app.add_subcommand("xval", "cross-validate belief vs no-belief policies");
  corpus_opt(xv, "directions JSON (default: bundled)");
  xv->add_option("--trials", o.trials, "trials (default 20)");
  xv->add_option("--train-n", o.train_n, "training directions per trial")->capture_default_str();
  xv->add_option("--iterations", o.iterations, "DAgger iterations")->capture_default_str();
  xv->add_option("--particles", o.particles, "filter particles")->capture_default_str();
  seed(xv);
  out(xv, "output CSV");

  auto* sv = app.add_subcommand("serve", "serve a live session over HTTP");
  world(sv, "world name (default sim-3room)");
  sv->add_option("--text", o.text, "initial direction");
  sv->add_option("--start", o.start, "start region");
  sv->add_option("--goal", o.goal, "goal region");
  sv->add_option("--baseline", o.baseline, "known-map | with-language | without-language");
  sv->add_option("--port", o.port, "port")->capture_default_str();
  sv->add_option("--host", o.host, "bind address")->capture_default_str();
  weights(sv, "policy weights JSON (default: bundled)");
  belief(sv);
  seed(sv);

  CLI11_PARSE(app, argc, argv);
  try {
    if (parse->parsed()) return cmd_parse(o);
    if (ground->parsed()) return cmd_ground(o);
    if (tg->parsed()) return cmd_train_grounding(o);
    if (tp->parsed()) return cmd_train_policy(o);
    if (run->parsed()) return cmd_run(o);
    if (ev->parsed()) return cmd_eval(o);
    if (xv->parsed()) return cmd_xval(o);
    if (sv->parsed()) return cmd_serve(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
