#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace aegle {

/// The specialist departments available to a session. Immutable once a
/// session starts.
class Roster {
public:
  /// The 24 clinical departments shipped by default.
  static Roster defaults();

  /// Throws ValidationError on duplicate or empty ids.
  explicit Roster(std::vector<std::string> ids);

  bool contains(std::string_view id) const;
  const std::vector<std::string>& ids() const { return ids_; }
  std::size_t size() const { return ids_.size(); }

private:
  std::vector<std::string> ids_;
};

/// Fixed panel for the static-topology ablation: the case department first,
/// then its adjacent departments, filtered to the roster and cut to `size`.
std::vector<std::string> default_panel(std::string_view department, const Roster& roster, std::size_t size = 3);

}  // namespace aegle
