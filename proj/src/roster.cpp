#include "aegle/roster.hpp"

#include "aegle/errors.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace aegle {

Roster Roster::defaults() {
  return Roster({
      "respiratory_medicine", "gastroenterology", "cardiology", "neurology",
      "endocrinology", "nephrology", "hematology", "rheumatology",
      "infectious_diseases", "oncology", "gastrointestinal_surgery", "hepatobiliary_surgery",
      "thoracic_surgery", "vascular_surgery", "neurosurgery", "urology",
      "orthopedics", "obstetrics", "gynecology", "pediatrics",
      "otolaryngology", "ophthalmology", "dermatology", "stomatology",
  });
}

Roster::Roster(std::vector<std::string> ids) : ids_(std::move(ids)) {
  std::set<std::string> seen;
  for (const auto& id : ids_) {
    if (id.empty()) {
      throw ValidationError("empty specialist id");
    }
    if (!seen.insert(id).second) {
      throw ValidationError("duplicate specialist id '" + id + "'");
    }
  }
}

bool Roster::contains(std::string_view id) const {
  return std::find(ids_.begin(), ids_.end(), id) != ids_.end();
}

std::vector<std::string> default_panel(std::string_view department, const Roster& roster, std::size_t size) {
  static const std::map<std::string, std::vector<std::string>, std::less<>> adjacency = {
      {"respiratory_medicine", {"thoracic_surgery", "infectious_diseases", "cardiology"}},
      {"gastroenterology", {"hepatobiliary_surgery", "gastrointestinal_surgery", "oncology"}},
      {"cardiology", {"vascular_surgery", "respiratory_medicine", "nephrology"}},
      {"neurology", {"neurosurgery", "cardiology", "ophthalmology"}},
      {"endocrinology", {"nephrology", "cardiology", "obstetrics"}},
      {"nephrology", {"urology", "endocrinology", "cardiology"}},
      {"hematology", {"oncology", "infectious_diseases", "rheumatology"}},
      {"rheumatology", {"dermatology", "nephrology", "orthopedics"}},
      {"infectious_diseases", {"respiratory_medicine", "gastroenterology", "hematology"}},
      {"oncology", {"hematology", "gastrointestinal_surgery", "thoracic_surgery"}},
      {"gastrointestinal_surgery", {"gastroenterology", "hepatobiliary_surgery", "oncology"}},
      {"hepatobiliary_surgery", {"gastroenterology", "gastrointestinal_surgery", "oncology"}},
      {"thoracic_surgery", {"respiratory_medicine", "oncology", "cardiology"}},
      {"vascular_surgery", {"cardiology", "neurology", "endocrinology"}},
      {"neurosurgery", {"neurology", "oncology", "orthopedics"}},
      {"urology", {"nephrology", "oncology", "gynecology"}},
      {"orthopedics", {"rheumatology", "neurosurgery", "vascular_surgery"}},
      {"obstetrics", {"gynecology", "endocrinology", "pediatrics"}},
      {"gynecology", {"obstetrics", "urology", "oncology"}},
      {"pediatrics", {"infectious_diseases", "respiratory_medicine", "cardiology"}},
      {"otolaryngology", {"stomatology", "neurology", "oncology"}},
      {"ophthalmology", {"neurology", "endocrinology", "rheumatology"}},
      {"dermatology", {"rheumatology", "infectious_diseases", "oncology"}},
      {"stomatology", {"otolaryngology", "oncology", "infectious_diseases"}},
  };
  std::vector<std::string> panel;
  const auto push = [&](std::string_view id) {
    if (panel.size() < size && roster.contains(id) &&
        std::find(panel.begin(), panel.end(), id) == panel.end()) {
      panel.emplace_back(id);
    }
  };
  push(department);
  if (const auto it = adjacency.find(department); it != adjacency.end()) {
    for (const auto& id : it->second) {
      push(id);
    }
  }
  for (const auto& id : roster.ids()) {
    push(id);
  }
  return panel;
}

}  // namespace aegle
