#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "viewset/matrix.hpp"

namespace viewset {

/// The per-view feature vectors of one shape. Row order carries no meaning.
struct ViewFeatureSet {
  std::string shape_id;
  Matrix features;  // M x dim_in
  std::size_t label = 0;
  std::optional<std::size_t> sublabel;

  std::size_t num_views() const { return features.rows(); }
};

enum class Split { Train, Val, Test };

const char* to_string(Split s);
/// Throws std::invalid_argument for anything but train|val|test.
Split parse_split(const std::string& s);

struct Dataset {
  std::string name;
  std::size_t dim = 0;
  std::vector<std::string> label_names;  // indexed by label
  std::vector<ViewFeatureSet> train;
  std::vector<ViewFeatureSet> val;
  std::vector<ViewFeatureSet> test;

  std::vector<ViewFeatureSet>& split(Split s);
  const std::vector<ViewFeatureSet>& split(Split s) const;
  std::size_t num_classes() const { return label_names.size(); }
  /// True when every shape in every split carries a sublabel.
  bool has_sublabels() const;
  /// 1 + the largest sublabel present; 0 without sublabels.
  std::size_t num_subclasses() const;
};

/// Copy whose labels are the subcategories, for training the subcategory-level model.
/// Label names become "sub0", "sub1", ... Throws std::invalid_argument when any shape
/// lacks a sublabel.
Dataset with_subcategory_labels(const Dataset& d);

}  // namespace viewset
