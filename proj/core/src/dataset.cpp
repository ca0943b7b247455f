#include "viewset/dataset.hpp"

#include <algorithm>
#include <stdexcept>

namespace viewset {

const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + s + "' (expected train|val|test)");
}

std::vector<ViewFeatureSet>& Dataset::split(Split s) {
  switch (s) {
    case Split::Train: return train;
    case Split::Val: return val;
    case Split::Test: return test;
  }
  return test;
}

const std::vector<ViewFeatureSet>& Dataset::split(Split s) const {
  return const_cast<Dataset*>(this)->split(s);
}

bool Dataset::has_sublabels() const {
  auto all = [](const std::vector<ViewFeatureSet>& v) {
    return std::all_of(v.begin(), v.end(), [](const auto& s) { return s.sublabel.has_value(); });
  };
  const bool any_shapes = !train.empty() || !val.empty() || !test.empty();
  return any_shapes && all(train) && all(val) && all(test);
}

std::size_t Dataset::num_subclasses() const {
  std::size_t n = 0;
  for (const auto* v : {&train, &val, &test})
    for (const auto& s : *v)
      if (s.sublabel) n = std::max(n, *s.sublabel + 1);
  return n;
}

Dataset with_subcategory_labels(const Dataset& d) {
  if (!d.has_sublabels()) {
    throw std::invalid_argument("dataset '" + d.name + "' has shapes without a subcategory");
  }
  Dataset out = d;
  for (auto* v : {&out.train, &out.val, &out.test})
    for (auto& s : *v) s.label = *s.sublabel;
  out.label_names.clear();
  for (std::size_t i = 0; i < d.num_subclasses(); ++i) out.label_names.push_back("sub" + std::to_string(i));
  return out;
}

}  // namespace viewset
