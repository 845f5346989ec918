#include "cascade/config.hpp"

#include <fstream>
#include <initializer_list>

#include "cascade/errors.hpp"

namespace cascade {

using nlohmann::json;

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok |= key == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <class T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + ": '" + key + "' has the wrong type");
  }
}

template <class T>
T field_or(const json& j, const char* key, T fallback, const std::string& where) {
  return j.contains(key) ? field<T>(j, key, where) : fallback;
}

std::string type_of(const json& j, const std::string& where) {
  return field<std::string>(j, "type", where);
}

// "empirical" (or absence) leaves the parameter vector empty; it is filled
// from data when fitting starts.
MarkPrior prior_from_json(const json& j, const std::string& where) {
  if (j.is_string()) {
    if (j.get<std::string>() != "empirical") throw ConfigError(where + ": unknown prior '" + j.get<std::string>() + "'");
    return CategoricalPrior{};
  }
  check_keys(j, {"p", "probs"}, where);
  if (j.contains("p")) return FeaturePrior{field<std::vector<double>>(j, "p", where)};
  if (j.contains("probs")) return CategoricalPrior{field<std::vector<double>>(j, "probs", where)};
  throw ConfigError(where + ": prior needs 'p' or 'probs'");
}

json prior_to_json(const MarkPrior& p) {
  return std::visit(overloaded{
                        [](const FeaturePrior& f) -> json {
                          if (f.p.empty()) return "empirical";
                          return {{"p", f.p}};
                        },
                        [](const CategoricalPrior& c) -> json {
                          if (c.probs.empty()) return "empirical";
                          return {{"probs", c.probs}};
                        },
                    },
                    p);
}

Eigen::MatrixXd matrix_from_json(const json& j, const std::string& where) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) throw ConfigError(where + ": empty matrix");
  Eigen::MatrixXd m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows.front().size()) throw ConfigError(where + ": ragged matrix");
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  }
  return m;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(m.cols());
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[c] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

FertilityTerm term_from_json(const json& j, const std::string& where) {
  const auto type = type_of(j, where);
  if (type == "linear") {
    check_keys(j, {"type", "alpha0", "beta", "augmented"}, where);
    return LinearFertility{field<double>(j, "alpha0", where), field<std::vector<double>>(j, "beta", where),
                           field_or<bool>(j, "augmented", false, where)};
  }
  if (type == "multiplicative") {
    check_keys(j, {"type", "w"}, where);
    return MultiplicativeFertility{field<std::vector<double>>(j, "w", where)};
  }
  throw ConfigError(where + ": combined terms must be linear or multiplicative, got '" + type + "'");
}

json term_to_json(const FertilityTerm& t) {
  return std::visit(overloaded{
                        [](const LinearFertility& l) -> json {
                          return {{"type", "linear"}, {"alpha0", l.alpha0}, {"beta", l.beta}, {"augmented", l.augmented}};
                        },
                        [](const MultiplicativeFertility& m) -> json {
                          return {{"type", "multiplicative"}, {"w", m.w}};
                        },
                    },
                    t);
}

FertilitySpec fertility_from_json(const json& j, const std::string& where) {
  const auto type = type_of(j, where);
  if (type == "constant") {
    check_keys(j, {"type", "alpha"}, where);
    return ConstantFertility{field<double>(j, "alpha", where)};
  }
  if (type == "linear" || type == "multiplicative") {
    return std::visit([](const auto& t) -> FertilitySpec { return t; }, term_from_json(j, where));
  }
  if (type == "combined") {
    check_keys(j, {"type", "terms"}, where);
    CombinedFertility c;
    if (!j.contains("terms") || !j.at("terms").is_array()) throw ConfigError(where + ": 'terms' must be a list");
    for (const auto& t : j.at("terms")) c.terms.push_back(term_from_json(t, where + ".terms"));
    return c;
  }
  if (type == "per_source") {
    check_keys(j, {"type", "alpha", "pooling"}, where);
    return PerSourceFertility{field<std::vector<double>>(j, "alpha", where), field_or<double>(j, "pooling", 0.0, where)};
  }
  throw ConfigError(where + ": unknown fertility type '" + type + "'");
}

json fertility_to_json(const FertilitySpec& f) {
  return std::visit(overloaded{
                        [](const ConstantFertility& c) -> json { return {{"type", "constant"}, {"alpha", c.alpha0}}; },
                        [](const LinearFertility& l) -> json { return term_to_json(l); },
                        [](const MultiplicativeFertility& m) -> json { return term_to_json(m); },
                        [](const CombinedFertility& c) -> json {
                          json terms = json::array();
                          for (const auto& t : c.terms) terms.push_back(term_to_json(t));
                          return {{"type", "combined"}, {"terms", terms}};
                        },
                        [](const PerSourceFertility& p) -> json {
                          return {{"type", "per_source"}, {"alpha", p.alpha}, {"pooling", p.pooling}};
                        },
                    },
                    f);
}

TransitionSpec transition_from_json(const json& j, const std::string& where) {
  const auto type = type_of(j, where);
  if (type == "identity") {
    check_keys(j, {"type"}, where);
    return IdentityTransition{};
  }
  if (type == "prior") {
    check_keys(j, {"type", "prior"}, where);
    return PriorTransition{j.contains("prior") ? prior_from_json(j.at("prior"), where + ".prior")
                                               : MarkPrior{CategoricalPrior{}}};
  }
  if (type == "gamma_mix") {
    check_keys(j, {"type", "gamma", "prior"}, where);
    GammaMixTransition g;
    g.gamma = field<double>(j, "gamma", where);
    if (j.contains("prior")) {
      const auto p = prior_from_json(j.at("prior"), where + ".prior");
      if (const auto* f = std::get_if<FeaturePrior>(&p)) {
        g.prior = *f;
      } else if (!std::get<CategoricalPrior>(p).probs.empty()) {
        throw ConfigError(where + ": gamma_mix needs a feature prior");
      }
    }
    return g;
  }
  if (type == "categorical") {
    check_keys(j, {"type", "theta", "dirichlet"}, where);
    CategoricalTransition c;
    if (!j.contains("theta")) throw ConfigError(where + ": missing 'theta'");
    c.theta = matrix_from_json(j.at("theta"), where + ".theta");
    if (j.contains("dirichlet")) {
      const auto& d = j.at("dirichlet");
      check_keys(d, {"direction", "magnitude"}, where + ".dirichlet");
      const double magnitude = field<double>(d, "magnitude", where + ".dirichlet");
      if (!d.contains("direction")) throw ConfigError(where + ".dirichlet: missing 'direction'");
      const auto& dir = d.at("direction");
      if (dir.is_array() && !dir.empty() && dir.front().is_array()) {
        c.dirichlet = DirichletPrior{matrix_from_json(dir, where + ".dirichlet"), magnitude};
      } else {
        const auto v = dir.get<std::vector<double>>();
        c.dirichlet = DirichletPrior::broadcast(Eigen::Map<const Eigen::VectorXd>(v.data(), v.size()), magnitude);
      }
    }
    return c;
  }
  throw ConfigError(where + ": unknown transition type '" + type + "'");
}

json transition_to_json(const TransitionSpec& t) {
  return std::visit(overloaded{
                        [](const IdentityTransition&) -> json { return {{"type", "identity"}}; },
                        [](const PriorTransition& p) -> json { return {{"type", "prior"}, {"prior", prior_to_json(p.prior)}}; },
                        [](const GammaMixTransition& g) -> json {
                          return {{"type", "gamma_mix"}, {"gamma", g.gamma}, {"prior", prior_to_json(g.prior)}};
                        },
                        [](const CategoricalTransition& c) -> json {
                          json j = {{"type", "categorical"}, {"theta", matrix_to_json(c.theta)}};
                          if (c.dirichlet)
                            j["dirichlet"] = {{"direction", matrix_to_json(c.dirichlet->direction)},
                                              {"magnitude", c.dirichlet->magnitude}};
                          return j;
                        },
                    },
                    t);
}

DelaySpec delay_from_json(const json& j, const std::string& where) {
  const auto type = type_of(j, where);
  if (type == "exponential") {
    check_keys(j, {"type", "rate"}, where);
    return ExponentialDelay{field<double>(j, "rate", where)};
  }
  if (type == "gamma") {
    check_keys(j, {"type", "shape", "rate"}, where);
    return GammaDelay{field<double>(j, "shape", where), field<double>(j, "rate", where)};
  }
  if (type == "uniform") {
    check_keys(j, {"type", "width"}, where);
    return UniformDelay{field<double>(j, "width", where)};
  }
  if (type == "piecewise_uniform") {
    check_keys(j, {"type", "edges", "probs"}, where);
    return PiecewiseUniformDelay{field<std::vector<double>>(j, "edges", where),
                                 field<std::vector<double>>(j, "probs", where)};
  }
  if (type == "exp_mixture") {
    check_keys(j, {"type", "weights", "rates"}, where);
    return ExpMixtureDelay{field<std::vector<double>>(j, "weights", where),
                           field<std::vector<double>>(j, "rates", where)};
  }
  throw ConfigError(where + ": unknown delay type '" + type + "'");
}

json delay_to_json(const DelaySpec& d) {
  return std::visit(overloaded{
                        [](const ExponentialDelay& e) -> json { return {{"type", "exponential"}, {"rate", e.rate}}; },
                        [](const GammaDelay& g) -> json {
                          return {{"type", "gamma"}, {"shape", g.shape}, {"rate", g.rate}};
                        },
                        [](const UniformDelay& u) -> json { return {{"type", "uniform"}, {"width", u.width}}; },
                        [](const PiecewiseUniformDelay& p) -> json {
                          return {{"type", "piecewise_uniform"}, {"edges", p.edges}, {"probs", p.probs}};
                        },
                        [](const ExpMixtureDelay& m) -> json {
                          return {{"type", "exp_mixture"}, {"weights", m.weights}, {"rates", m.rates}};
                        },
                    },
                    d);
}

SourceFilter source_from_string(const std::string& s, const std::string& where) {
  if (s == "any") return SourceFilter::any;
  if (s == "own") return SourceFilter::own;
  if (s == "other") return SourceFilter::other;
  throw ConfigError(where + ": source must be any, own or other");
}

const char* source_name(SourceFilter s) {
  switch (s) {
    case SourceFilter::any: return "any";
    case SourceFilter::own: return "own";
    case SourceFilter::other: return "other";
  }
  return "any";
}

BaselineSpec baseline_from_json(const json& j, const std::string& where) {
  BaselineSpec b;
  const auto type = type_of(j, where);
  if (type == "homogeneous") {
    check_keys(j, {"type", "rate", "prior", "fit_prior"}, where);
    b.rate = HomogeneousRate{field<double>(j, "rate", where)};
  } else if (type == "periodic") {
    check_keys(j, {"type", "period", "rates", "prior", "fit_prior"}, where);
    b.rate = PeriodicRate{field<double>(j, "period", where), field<std::vector<double>>(j, "rates", where)};
  } else {
    throw ConfigError(where + ": unknown baseline type '" + type + "'");
  }
  b.prior = j.contains("prior") ? prior_from_json(j.at("prior"), where + ".prior") : MarkPrior{CategoricalPrior{}};
  b.fit_prior = field_or<bool>(j, "fit_prior", true, where);
  return b;
}

json baseline_to_json(const BaselineSpec& b) {
  json j = std::visit(overloaded{
                          [](const HomogeneousRate& h) -> json { return {{"type", "homogeneous"}, {"rate", h.rate}}; },
                          [](const PeriodicRate& p) -> json {
                            return {{"type", "periodic"}, {"period", p.period}, {"rates", p.rates}};
                          },
                      },
                      b.rate);
  j["prior"] = prior_to_json(b.prior);
  j["fit_prior"] = b.fit_prior;
  return j;
}

}  // namespace

MarkSchema schema_from_json(const json& j) {
  check_keys(j, {"features", "labels", "types", "nodes", "units"}, "schema");
  MarkSchema s;
  if (j.contains("features")) {
    const auto& f = j.at("features");
    s = f.is_number_integer() ? MarkSchema::binary(f.get<int>())
                              : MarkSchema::binary(field<std::vector<std::string>>(j, "features", "schema"));
  } else if (j.contains("labels")) {
    s = MarkSchema::categorical(field<int>(j, "labels", "schema"));
  } else if (j.contains("types")) {
    s = MarkSchema::composite(field<int>(j, "types", "schema"), {});
    if (j.contains("nodes") && j.at("nodes").is_array())
      s.nodes = field<std::vector<std::string>>(j, "nodes", "schema");
  } else {
    throw ConfigError("schema must declare features, labels or types");
  }
  s.units = field_or<std::string>(j, "units", "", "schema");
  return s;
}

json to_json(const MarkSchema& s) {
  json j;
  switch (s.kind) {
    case MarkKind::features: j = {{"features", s.feature_names}}; break;
    case MarkKind::labels: j = {{"labels", s.labels}}; break;
    case MarkKind::composite: j = {{"types", s.labels}, {"nodes", s.nodes}}; break;
  }
  if (!s.units.empty()) j["units"] = s.units;
  return j;
}

ModelSpec model_from_json(const json& j) {
  check_keys(j, {"name", "baseline", "components", "normalize", "epsilon"}, "model");
  ModelSpec m;
  m.name = field_or<std::string>(j, "name", "model", "model");
  const std::string where = "model '" + m.name + "'";
  if (!j.contains("baseline")) throw ConfigError(where + ": missing 'baseline'");
  m.baseline = baseline_from_json(j.at("baseline"), where + ".baseline");
  m.normalize = field_or<bool>(j, "normalize", true, where);
  m.epsilon = field_or<double>(j, "epsilon", 1e-6, where);
  if (j.contains("components")) {
    if (!j.at("components").is_array()) throw ConfigError(where + ": 'components' must be a list");
    int index = 0;
    for (const auto& c : j.at("components")) {
      const std::string cw = where + ".components[" + std::to_string(index++) + "]";
      check_keys(c, {"name", "fertility", "transition", "delay", "source", "transition_group"}, cw);
      KernelComponent k;
      k.name = field_or<std::string>(c, "name", "c" + std::to_string(index - 1), cw);
      for (const char* key : {"fertility", "transition", "delay"})
        if (!c.contains(key)) throw ConfigError(cw + ": missing '" + key + "'");
      k.fertility = fertility_from_json(c.at("fertility"), cw + ".fertility");
      k.transition = transition_from_json(c.at("transition"), cw + ".transition");
      k.delay = delay_from_json(c.at("delay"), cw + ".delay");
      k.source = source_from_string(field_or<std::string>(c, "source", "any", cw), cw);
      k.transition_group = field_or<std::string>(c, "transition_group", "", cw);
      m.components.push_back(std::move(k));
    }
  }
  return m;
}

json to_json(const ModelSpec& m) {
  json comps = json::array();
  for (const auto& c : m.components) {
    json k = {{"name", c.name},
              {"fertility", fertility_to_json(c.fertility)},
              {"transition", transition_to_json(c.transition)},
              {"delay", delay_to_json(c.delay)}};
    if (c.source != SourceFilter::any) k["source"] = source_name(c.source);
    if (!c.transition_group.empty()) k["transition_group"] = c.transition_group;
    comps.push_back(std::move(k));
  }
  return {{"name", m.name},
          {"baseline", baseline_to_json(m.baseline)},
          {"components", comps},
          {"normalize", m.normalize},
          {"epsilon", m.epsilon}};
}

RunConfig parse_config(const json& j) {
  check_keys(j, {"model", "models", "em", "seed", "schema", "max_events"}, "config");
  RunConfig rc;
  if (j.contains("model") == j.contains("models"))
    throw ConfigError("config: give exactly one of 'model' or 'models'");
  if (j.contains("model")) {
    rc.models.push_back(model_from_json(j.at("model")));
  } else {
    if (!j.at("models").is_array() || j.at("models").empty())
      throw ConfigError("config: 'models' must be a nonempty list");
    for (const auto& m : j.at("models")) rc.models.push_back(model_from_json(m));
  }
  if (j.contains("em")) {
    const auto& e = j.at("em");
    check_keys(e, {"max_iters", "tol", "epsilon", "normalize"}, "em");
    rc.em.max_iters = field_or<int>(e, "max_iters", rc.em.max_iters, "em");
    rc.em.tol = field_or<double>(e, "tol", rc.em.tol, "em");
    if (e.contains("epsilon")) rc.em.epsilon = field<double>(e, "epsilon", "em");
    if (e.contains("normalize")) rc.em.normalize = field<bool>(e, "normalize", "em");
    if (rc.em.max_iters < 0) throw ConfigError("em: max_iters must be >= 0");
    if (!(rc.em.tol >= 0.0)) throw ConfigError("em: tol must be >= 0");
  }
  for (auto& m : rc.models) {
    if (rc.em.epsilon) m.epsilon = *rc.em.epsilon;
    if (rc.em.normalize) m.normalize = *rc.em.normalize;
  }
  rc.seed = field_or<std::uint64_t>(j, "seed", 0, "config");
  rc.max_events = field_or<std::uint64_t>(j, "max_events", rc.max_events, "config");
  if (rc.max_events == 0) throw ConfigError("config: max_events must be positive");
  if (j.contains("schema")) rc.schema = schema_from_json(j.at("schema"));
  return rc;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

}  // namespace cascade
