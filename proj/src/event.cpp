#include "cascade/event.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "cascade/errors.hpp"
#include "cascade/io.hpp"

namespace cascade {

using nlohmann::json;

MarkSchema MarkSchema::binary(std::vector<std::string> names) {
  MarkSchema s;
  s.kind = MarkKind::features;
  s.feature_names = std::move(names);
  return s;
}

MarkSchema MarkSchema::binary(int width) {
  std::vector<std::string> names;
  for (int i = 0; i < width; ++i) names.push_back("f" + std::to_string(i));
  return binary(std::move(names));
}

MarkSchema MarkSchema::categorical(int label_count) {
  MarkSchema s;
  s.kind = MarkKind::labels;
  s.labels = label_count;
  return s;
}

MarkSchema MarkSchema::composite(int type_count, std::vector<std::string> node_ids) {
  MarkSchema s;
  s.kind = MarkKind::composite;
  s.labels = type_count;
  s.nodes = std::move(node_ids);
  return s;
}

int MarkSchema::width() const {
  return kind == MarkKind::features ? static_cast<int>(feature_names.size()) : labels;
}

int MarkSchema::categories() const { return kind == MarkKind::features ? 0 : labels; }

int MarkSchema::node_index(std::string_view id) const {
  auto it = std::find(nodes.begin(), nodes.end(), id);
  return it == nodes.end() ? -1 : static_cast<int>(it - nodes.begin());
}

void MarkSchema::check(const Mark& mark) const {
  switch (kind) {
    case MarkKind::features: {
      const auto* f = std::get_if<Features>(&mark);
      if (!f) throw DataError("mark is not a binary feature vector");
      if (f->bits.size() != feature_names.size())
        throw DataError("feature vector width " + std::to_string(f->bits.size()) +
                        " does not match schema width " + std::to_string(feature_names.size()));
      for (auto b : f->bits)
        if (b > 1) throw DataError("feature bits must be 0 or 1");
      return;
    }
    case MarkKind::labels: {
      const auto* l = std::get_if<Label>(&mark);
      if (!l) throw DataError("mark is not a label");
      if (l->value < 0 || l->value >= labels)
        throw DataError("label " + std::to_string(l->value + 1) + " outside 1.." +
                        std::to_string(labels));
      return;
    }
    case MarkKind::composite: {
      const auto* c = std::get_if<NodeMark>(&mark);
      if (!c) throw DataError("mark is not a node-tagged composite");
      if (c->type < 0 || c->type >= labels)
        throw DataError("type " + std::to_string(c->type + 1) + " outside 1.." +
                        std::to_string(labels));
      if (c->node < 0 || c->node >= static_cast<int>(nodes.size()))
        throw DataError("node index " + std::to_string(c->node) + " unknown");
      return;
    }
  }
}

bool MarkSchema::operator==(const MarkSchema& o) const {
  if (kind != o.kind) return false;
  switch (kind) {
    case MarkKind::features: return feature_names.size() == o.feature_names.size();
    case MarkKind::labels: return labels == o.labels;
    case MarkKind::composite: return labels == o.labels;
  }
  return false;
}

int category_of(const Mark& mark) {
  if (const auto* l = std::get_if<Label>(&mark)) return l->value;
  if (const auto* c = std::get_if<NodeMark>(&mark)) return c->type;
  throw DataError("categorical index requested for a binary feature mark");
}

int node_of(const Mark& mark) {
  const auto* c = std::get_if<NodeMark>(&mark);
  return c ? c->node : -1;
}

std::vector<int> active_features(const Mark& mark) {
  std::vector<int> out;
  if (const auto* f = std::get_if<Features>(&mark)) {
    for (std::size_t i = 0; i < f->bits.size(); ++i)
      if (f->bits[i]) out.push_back(static_cast<int>(i));
  } else {
    out.push_back(category_of(mark));
  }
  return out;
}

Dataset Dataset::build(std::vector<Event> events, double horizon, MarkSchema schema) {
  std::stable_sort(events.begin(), events.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
  for (std::size_t i = 0; i < events.size(); ++i) {
    auto& e = events[i];
    if (!std::isfinite(e.t) || e.t < 0.0)
      throw DataError("event timestamp must be finite and nonnegative");
    if (e.t > horizon) throw DataError("event timestamp exceeds horizon");
    schema.check(e.mark);
    e.id = i;
  }
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw DataError("horizon must be positive");
  Dataset d;
  d.events = std::move(events);
  d.schema = std::move(schema);
  d.horizon = horizon;
  return d;
}

bool Dataset::is_target(std::size_t i) const {
  if (i < first_target) return false;
  return target_node < 0 || node_of(events[i].mark) == target_node;
}

std::size_t Dataset::target_count() const {
  if (target_node < 0) return events.size() - first_target;
  std::size_t n = 0;
  for (std::size_t i = first_target; i < events.size(); ++i) n += is_target(i) ? 1 : 0;
  return n;
}

namespace {

[[noreturn]] void fail_line(std::string_view source, std::size_t line, const std::string& what) {
  throw DataError(std::string(source) + ": line " + std::to_string(line) + ": " + what);
}

MarkSchema schema_from_header(const json& s) {
  if (s.contains("features")) {
    const auto& f = s.at("features");
    if (f.is_number_integer()) return MarkSchema::binary(f.get<int>());
    return MarkSchema::binary(f.get<std::vector<std::string>>());
  }
  if (s.contains("labels")) return MarkSchema::categorical(s.at("labels").get<int>());
  if (s.contains("types")) {
    auto m = MarkSchema::composite(s.at("types").get<int>(), {});
    if (s.contains("nodes") && s.at("nodes").is_array())
      m.nodes = s.at("nodes").get<std::vector<std::string>>();
    return m;
  }
  throw DataError("schema must declare features, labels or types");
}

json schema_to_header(const MarkSchema& s) {
  switch (s.kind) {
    case MarkKind::features: return {{"features", s.feature_names}};
    case MarkKind::labels: return {{"labels", s.labels}};
    case MarkKind::composite: return {{"types", s.labels}, {"nodes", true}};
  }
  return {};
}

bool is_header(const json& j) { return j.is_object() && !j.contains("t"); }

}  // namespace

Dataset parse_events(std::istream& in, const std::optional<MarkSchema>& given,
                     std::string_view source) {
  std::optional<MarkSchema> schema = given;
  std::optional<double> horizon;
  std::vector<Event> events;
  bool composite_registers_nodes = false;

  std::string text;
  std::size_t line_no = 0;
  bool seen_record = false;
  while (std::getline(in, text)) {
    ++line_no;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.find_first_not_of(" \t") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      fail_line(source, line_no, std::string("malformed JSON: ") + e.what());
    }
    if (!seen_record && events.empty() && is_header(j)) {
      for (const auto& [key, value] : j.items()) {
        if (key != "T" && key != "schema" && key != "units")
          fail_line(source, line_no, "unknown header key '" + key + "'");
      }
      try {
        if (j.contains("T")) horizon = j.at("T").get<double>();
        if (j.contains("schema")) {
          MarkSchema declared = schema_from_header(j.at("schema"));
          if (schema) {
            if (!(*schema == declared))
              fail_line(source, line_no, "header schema disagrees with the expected schema");
            if (schema->kind == MarkKind::features && schema->feature_names.empty())
              schema->feature_names = declared.feature_names;
          } else {
            schema = std::move(declared);
          }
        }
        if (j.contains("units") && schema) schema->units = j.at("units").get<std::string>();
      } catch (const json::exception& e) {
        fail_line(source, line_no, std::string("bad header: ") + e.what());
      }
      seen_record = true;
      continue;
    }
    seen_record = true;
    if (!schema) fail_line(source, line_no, "no schema declared before first record");
    if (schema->kind == MarkKind::composite && schema->nodes.empty())
      composite_registers_nodes = true;

    Event e;
    try {
      if (!j.is_object() || !j.contains("t")) fail_line(source, line_no, "record lacks 't'");
      e.t = j.at("t").get<double>();
      if (!std::isfinite(e.t)) fail_line(source, line_no, "timestamp is not finite");
      if (e.t < 0.0) fail_line(source, line_no, "negative timestamp");
      switch (schema->kind) {
        case MarkKind::features: {
          const int width = static_cast<int>(schema->feature_names.size());
          Features f;
          f.bits.assign(width, 0);
          for (const auto& v : j.at("x")) {
            const int idx = v.get<int>();
            if (idx < 0 || idx >= width)
              fail_line(source, line_no,
                        "feature index " + std::to_string(idx) + " out of range 0.." +
                            std::to_string(width - 1));
            f.bits[idx] = 1;
          }
          e.mark = std::move(f);
          break;
        }
        case MarkKind::labels: {
          const int label = j.at("label").get<int>();
          if (label < 1 || label > schema->labels)
            fail_line(source, line_no, "label " + std::to_string(label) + " out of range");
          e.mark = Label{label - 1};
          break;
        }
        case MarkKind::composite: {
          const int type = j.at("type").get<int>();
          if (type < 1 || type > schema->labels)
            fail_line(source, line_no, "type " + std::to_string(type) + " out of range");
          const auto node = j.at("node").get<std::string>();
          int idx = schema->node_index(node);
          if (idx < 0) {
            if (!composite_registers_nodes)
              fail_line(source, line_no, "unknown node id '" + node + "'");
            schema->nodes.push_back(node);
            idx = static_cast<int>(schema->nodes.size()) - 1;
          }
          e.mark = NodeMark{type - 1, idx};
          break;
        }
      }
    } catch (const json::exception& ex) {
      fail_line(source, line_no, std::string("malformed record: ") + ex.what());
    }
    events.push_back(std::move(e));
  }
  if (!schema) throw DataError(std::string(source) + ": no schema declared");

  double T = 0.0;
  if (horizon) {
    T = *horizon;
  } else {
    for (const auto& e : events) T = std::max(T, e.t);
    spdlog::warn("{}: no horizon in header, using max timestamp {}", source, T);
  }
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (events[i].t > T)
      throw DataError(std::string(source) + ": event at t=" + io::format_double(events[i].t) +
                      " beyond horizon " + io::format_double(T));
  }
  return Dataset::build(std::move(events), T, std::move(*schema));
}

Dataset ingest(const std::filesystem::path& path, const std::optional<MarkSchema>& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open event file " + path.string());
  return parse_events(in, schema, path.string());
}

void emit(const Dataset& data, std::ostream& out) {
  json header = {{"T", data.horizon}, {"schema", schema_to_header(data.schema)}};
  if (!data.schema.units.empty()) header["units"] = data.schema.units;
  out << header.dump() << '\n';
  for (const auto& e : data.events) {
    out << "{\"t\":" << io::format_double(e.t);
    if (const auto* f = std::get_if<Features>(&e.mark)) {
      out << ",\"x\":[";
      bool first = true;
      for (std::size_t i = 0; i < f->bits.size(); ++i) {
        if (!f->bits[i]) continue;
        if (!first) out << ',';
        out << i;
        first = false;
      }
      out << ']';
    } else if (const auto* l = std::get_if<Label>(&e.mark)) {
      out << ",\"label\":" << (l->value + 1);
    } else if (const auto* c = std::get_if<NodeMark>(&e.mark)) {
      out << ",\"type\":" << (c->type + 1) << ",\"node\":" << json(data.schema.nodes.at(c->node)).dump();
    }
    out << "}\n";
  }
}

Dataset truncate(const Dataset& data, double cut) {
  Dataset out;
  out.schema = data.schema;
  out.horizon = cut;
  out.target_node = data.target_node;
  for (const auto& e : data.events)
    if (e.t <= cut) out.events.push_back(e);
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& data, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split fraction must lie in (0,1)");
  if (data.first_target != 0 || data.start != 0.0)
    throw DataError("split expects a dataset without conditioning history");
  const double cut = fraction * data.horizon;
  Dataset train = truncate(data, cut);
  Dataset test = data;
  test.start = cut;
  test.first_target = train.events.size();
  return {std::move(train), std::move(test)};
}

}  // namespace cascade
