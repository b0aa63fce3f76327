#pragma once

#include "eloss/tensor.hpp"

#include <cstddef>
#include <optional>
#include <vector>

namespace eloss {

struct Neighbor {
  std::size_t index;
  double dist2;  // squared Euclidean distance

  friend bool operator<(const Neighbor& a, const Neighbor& b) {
    return a.dist2 < b.dist2 || (a.dist2 == b.dist2 && a.index < b.index);
  }
  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Squared L2 distance summed in coordinate order. Every search path goes
/// through this one function so tree and exhaustive results agree bit for bit.
double squared_distance(const double* a, const double* b, std::size_t d);

/// Exact k-d tree over the rows of a matrix. Neighbours are ordered by
/// (distance, index), so equal distances resolve to the lower row index.
class KdTree {
 public:
  explicit KdTree(RowMatrix points, std::size_t leaf_size = 8);

  /// The k nearest rows to `query`, skipping row `exclude` when given.
  std::vector<Neighbor> nearest(const double* query, std::size_t k,
                                std::optional<std::size_t> exclude = {}) const;

  std::size_t size() const noexcept { return std::size_t(points_.rows()); }
  std::size_t dim() const noexcept { return std::size_t(points_.cols()); }

 private:
  struct Node {
    std::size_t begin, end;  // range into order_
    std::size_t split_dim = 0;
    double split = 0.0;
    int left = -1, right = -1;
    bool leaf() const { return left < 0; }
  };

  int build(std::size_t begin, std::size_t end);
  void search(int node, const double* q, std::size_t k,
              std::optional<std::size_t> exclude,
              std::vector<Neighbor>& best) const;

  RowMatrix points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  std::size_t leaf_size_;
};

/// O(n^2) reference search with the same ordering contract as KdTree.
std::vector<Neighbor> brute_force_nearest(const Eigen::Ref<const RowMatrix>& points,
                                          const double* query, std::size_t k,
                                          std::optional<std::size_t> exclude = {});

}  // namespace eloss
