#include "eloss/kdtree.hpp"

#include "eloss/errors.hpp"

#include <algorithm>
#include <limits>

namespace eloss {

double squared_distance(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double t = a[j] - b[j];
    s += t * t;
  }
  return s;
}

namespace {

// Keeps `best` sorted and at most k long.
void offer(std::vector<Neighbor>& best, std::size_t k, Neighbor cand) {
  if (best.size() == k && !(cand < best.back())) return;
  auto pos = std::upper_bound(best.begin(), best.end(), cand);
  best.insert(pos, cand);
  if (best.size() > k) best.pop_back();
}

}  // namespace

KdTree::KdTree(RowMatrix points, std::size_t leaf_size)
    : points_(std::move(points)), leaf_size_(std::max<std::size_t>(1, leaf_size)) {
  order_.resize(std::size_t(points_.rows()));
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (!order_.empty()) build(0, order_.size());
}

int KdTree::build(std::size_t begin, std::size_t end) {
  const int id = int(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= leaf_size_) return id;

  // Split on the dimension of widest spread; the lowest index wins ties.
  const auto d = points_.cols();
  std::size_t best_dim = 0;
  double best_spread = -1.0;
  for (Eigen::Index j = 0; j < d; ++j) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = begin; i < end; ++i) {
      const double v = points_(Eigen::Index(order_[i]), j);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi - lo > best_spread) {
      best_spread = hi - lo;
      best_dim = std::size_t(j);
    }
  }
  if (best_spread <= 0.0) return id;  // all points coincide: keep as leaf

  const std::size_t mid = begin + (end - begin) / 2;
  const auto dim = Eigen::Index(best_dim);
  std::nth_element(order_.begin() + std::ptrdiff_t(begin),
                   order_.begin() + std::ptrdiff_t(mid),
                   order_.begin() + std::ptrdiff_t(end),
                   [&](std::size_t a, std::size_t b) {
                     const double va = points_(Eigen::Index(a), dim);
                     const double vb = points_(Eigen::Index(b), dim);
                     return va < vb || (va == vb && a < b);
                   });
  const double split = points_(Eigen::Index(order_[mid]), dim);
  const int left = build(begin, mid);
  const int right = build(mid, end);
  auto& node = nodes_[std::size_t(id)];
  node.split_dim = best_dim;
  node.split = split;
  node.left = left;
  node.right = right;
  return id;
}

void KdTree::search(int node_id, const double* q, std::size_t k,
                    std::optional<std::size_t> exclude,
                    std::vector<Neighbor>& best) const {
  const Node& node = nodes_[std::size_t(node_id)];
  const auto d = std::size_t(points_.cols());
  if (node.leaf()) {
    for (std::size_t i = node.begin; i < node.end; ++i) {
      const std::size_t idx = order_[i];
      if (exclude && *exclude == idx) continue;
      offer(best, k, {idx, squared_distance(q, points_.row(Eigen::Index(idx)).data(), d)});
    }
    return;
  }
  // Left holds coordinates <= split, right holds coordinates >= split.
  const double diff = q[node.split_dim] - node.split;
  const int near = diff < 0.0 ? node.left : node.right;
  const int far = diff < 0.0 ? node.right : node.left;
  search(near, q, k, exclude, best);
  const double bound = diff * diff;
  // Non-strict: the far side may hold an equally distant lower index.
  if (best.size() < k || bound <= best.back().dist2) {
    search(far, q, k, exclude, best);
  }
}

std::vector<Neighbor> KdTree::nearest(const double* query, std::size_t k,
                                      std::optional<std::size_t> exclude) const {
  const std::size_t available = size() - (exclude && *exclude < size() ? 1 : 0);
  if (k == 0 || k > available) {
    throw DomainError("k = " + std::to_string(k) + " neighbours requested from " +
                      std::to_string(available) + " candidates");
  }
  std::vector<Neighbor> best;
  best.reserve(k + 1);
  search(0, query, k, exclude, best);
  return best;
}

std::vector<Neighbor> brute_force_nearest(const Eigen::Ref<const RowMatrix>& points,
                                          const double* query, std::size_t k,
                                          std::optional<std::size_t> exclude) {
  const auto n = std::size_t(points.rows());
  const auto d = std::size_t(points.cols());
  const std::size_t available = n - (exclude && *exclude < n ? 1 : 0);
  if (k == 0 || k > available) {
    throw DomainError("k = " + std::to_string(k) + " neighbours requested from " +
                      std::to_string(available) + " candidates");
  }
  std::vector<Neighbor> best;
  best.reserve(k + 1);
  for (std::size_t i = 0; i < n; ++i) {
    if (exclude && *exclude == i) continue;
    offer(best, k, {i, squared_distance(query, points.row(Eigen::Index(i)).data(), d)});
  }
  return best;
}

}  // namespace eloss
