#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace cascade {

/// Fixed-width binary feature vector (one byte per feature, 0 or 1).
struct Features {
  std::vector<std::uint8_t> bits;
  bool operator==(const Features&) const = default;
};

/// Categorical label, 0-based internally (1-based in event files).
struct Label {
  int value = 0;
  bool operator==(const Label&) const = default;
};

/// Node-tagged composite mark x = (x1, x2): a small type label plus the node
/// the event happened on.
struct NodeMark {
  int type = 0;
  int node = 0;
  bool operator==(const NodeMark&) const = default;
};

using Mark = std::variant<Features, Label, NodeMark>;

enum class MarkKind { features, labels, composite };

struct MarkSchema {
  MarkKind kind = MarkKind::labels;
  std::vector<std::string> feature_names;
  int labels = 0;  // label count L, or type count for composite marks
  std::vector<std::string> nodes;  // composite only; index is the node id
  std::string units;

  static MarkSchema binary(std::vector<std::string> names);
  static MarkSchema binary(int width);
  static MarkSchema categorical(int label_count);
  static MarkSchema composite(int type_count, std::vector<std::string> node_ids);

  /// Width of the feature view used by fertility models: F for binary
  /// features, L (one-hot) for labels and composite types.
  [[nodiscard]] int width() const;
  /// Number of categories for categorical transitions (0 for features).
  [[nodiscard]] int categories() const;
  /// Node index for an id, or -1.
  [[nodiscard]] int node_index(std::string_view id) const;
  /// Throws DataError if the mark does not belong to this schema.
  void check(const Mark& mark) const;

  bool operator==(const MarkSchema& other) const;
};

struct Event {
  double t = 0.0;
  Mark mark;
  std::size_t id = 0;
};

/// Time-sorted events on a window (start, horizon].
///
/// Events before `first_target` are conditioning history: they can act as
/// parents but are not themselves explained by the model. When
/// `target_node >= 0`, only events on that node are explained (per-node
/// neighborhood views); the rest are candidate causes.
struct Dataset {
  std::vector<Event> events;
  MarkSchema schema;
  double start = 0.0;
  double horizon = 0.0;
  std::size_t first_target = 0;
  int target_node = -1;

  /// Stable-sorts by time, assigns ids, validates marks and bounds.
  static Dataset build(std::vector<Event> events, double horizon, MarkSchema schema);

  [[nodiscard]] std::size_t size() const { return events.size(); }
  [[nodiscard]] bool empty() const { return events.empty(); }
  [[nodiscard]] bool is_target(std::size_t i) const;
  [[nodiscard]] std::size_t target_count() const;
  [[nodiscard]] double window_length() const { return horizon - start; }
  [[nodiscard]] std::span<const Event> window() const {
    return std::span<const Event>(events).subspan(first_target);
  }
};

/// Category index of a label or composite mark; throws for binary features.
[[nodiscard]] int category_of(const Mark& mark);
/// Node of a composite mark, -1 otherwise.
[[nodiscard]] int node_of(const Mark& mark);
/// Active coordinates of the fertility feature view (see MarkSchema::width).
[[nodiscard]] std::vector<int> active_features(const Mark& mark);

/// Reads a JSON Lines event file. If `schema` is given, it must agree with the
/// file header (when the header declares one); a composite schema carrying a
/// node list rejects events on unknown nodes.
[[nodiscard]] Dataset ingest(const std::filesystem::path& path,
                             const std::optional<MarkSchema>& schema = std::nullopt);
[[nodiscard]] Dataset parse_events(std::istream& in, const std::optional<MarkSchema>& schema,
                                   std::string_view source_name = "<stream>");

/// Writes header and records (17 significant digits); inverse of ingest.
void emit(const Dataset& data, std::ostream& out);

/// Temporal split at fraction * T. The test half keeps the train events as
/// conditioning history (first_target marks where its window begins).
[[nodiscard]] std::pair<Dataset, Dataset> split(const Dataset& data, double fraction);

/// Restriction of a dataset to events with t <= cut (horizon becomes cut).
[[nodiscard]] Dataset truncate(const Dataset& data, double cut);

}  // namespace cascade
