#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "viewset/dataset.hpp"
#include "viewset/matrix.hpp"

namespace viewset {

struct SyntheticConfig {
  std::size_t num_classes = 10;
  std::size_t shapes_per_class = 50;
  std::size_t views = 8;
  std::size_t dim = 32;
  double noise = 0.1;
  std::uint64_t seed = 0;
  /// Fraction of each class's shapes placed in the test split.
  double test_fraction = 0.2;
  /// 1 gives sublabel == label.
  std::size_t subclasses_per_class = 1;
};

/// The class-defining aspect sets: one M x dim matrix per class.
///
/// Aspects live in a random 2-D plane. With M >= 8 every class carries the four vertices of a
/// shared diamond plus (M-4)/2 antipodal pairs taken from a cyclic window over a ring of 2K
/// points strictly inside the diamond (odd M adds the origin). All classes then share the
/// per-view convex hull and centroid, so pooling per-view affine features cannot separate
/// them, while the multiset still can. Smaller M uses cyclic windows of M points over a ring
/// of K points. Every aspect belongs to at least two classes.
///
/// Throws std::invalid_argument when no construction satisfies those constraints
/// (num_classes < 3, M < 2, or M too large for the number of classes).
std::vector<Matrix> synthetic_aspects(const SyntheticConfig& cfg);

/// Each shape shows its class's aspects in random order, plus isotropic Gaussian noise.
Dataset generate_synthetic(const SyntheticConfig& cfg);

}  // namespace viewset
