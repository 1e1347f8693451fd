#include "uniground/instances.hpp"

#include "uniground/boxes.hpp"

#include <algorithm>
#include <queue>
#include <set>

namespace uniground {
namespace {

double feature_cosine(const Eigen::VectorXf& a, const Eigen::VectorXf& b) {
  double na2 = 0.0, nb2 = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k) na2 += static_cast<double>(a[k]) * a[k];
  for (Eigen::Index k = 0; k < b.size(); ++k) nb2 += static_cast<double>(b[k]) * b[k];
  if (na2 <= 0.0 || nb2 <= 0.0) return 0.0;
  const Eigen::Index n = std::min(a.size(), b.size());
  double dot = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) dot += static_cast<double>(a[k]) * b[k];
  return dot / std::sqrt(na2 * nb2);
}

cv::Rect rect_union(const cv::Rect& a, const cv::Rect& b) {
  if (a.area() == 0) return b;
  if (b.area() == 0) return a;
  return a | b;
}

std::vector<ViewObservation> merge_views(const std::vector<ViewObservation>& a,
                                         const std::vector<ViewObservation>& b) {
  std::vector<ViewObservation> out;
  out.reserve(a.size() + b.size());
  std::size_t ia = 0, ib = 0;
  while (ia < a.size() || ib < b.size()) {
    if (ib == b.size() || (ia < a.size() && a[ia].frame_id < b[ib].frame_id)) {
      out.push_back(a[ia++]);
    } else if (ia == a.size() || b[ib].frame_id < a[ia].frame_id) {
      out.push_back(b[ib++]);
    } else {
      const ViewObservation& x = a[ia++];
      const ViewObservation& y = b[ib++];
      ViewObservation merged;
      merged.frame_id = x.frame_id;
      merged.visible_pixels = x.visible_pixels + y.visible_pixels;
      merged.total_pixels = x.total_pixels + y.total_pixels;
      merged.visible_bbox = rect_union(x.visible_bbox, y.visible_bbox);
      const Eigen::Index n = std::max(x.mask_feature.size(), y.mask_feature.size());
      merged.mask_feature = Eigen::VectorXf::Zero(n);
      if (merged.visible_pixels > 0) {
        merged.mask_feature.head(x.mask_feature.size()) +=
            static_cast<float>(x.visible_pixels) * x.mask_feature;
        merged.mask_feature.head(y.mask_feature.size()) +=
            static_cast<float>(y.visible_pixels) * y.mask_feature;
        merged.mask_feature /= static_cast<float>(merged.visible_pixels);
      }
      out.push_back(std::move(merged));
    }
  }
  return out;
}

struct PairEntry {
  double affinity = 0.0;
  long combined_size = 0;
  int i = -1, j = -1;
  long version_i = 0, version_j = 0;
};

struct DefaultOrder {
  // priority_queue keeps the "largest"; we want highest affinity on top,
  // ties by smaller size, then smaller (i,j).
  bool operator()(const PairEntry& a, const PairEntry& b) const {
    if (a.affinity != b.affinity) return a.affinity < b.affinity;
    if (a.combined_size != b.combined_size) return a.combined_size > b.combined_size;
    if (a.i != b.i) return a.i > b.i;
    return a.j > b.j;
  }
};

struct SizeFirstOrder {
  bool operator()(const PairEntry& a, const PairEntry& b) const {
    if (a.combined_size != b.combined_size) return a.combined_size > b.combined_size;
    if (a.affinity != b.affinity) return a.affinity < b.affinity;
    if (a.i != b.i) return a.i > b.i;
    return a.j > b.j;
  }
};

}  // namespace

AffinityEdge pair_affinity(int i, int j, const std::vector<ViewObservation>& obs_i,
                           const std::vector<ViewObservation>& obs_j, double denom_i,
                           double denom_j) {
  AffinityEdge edge;
  edge.i = i;
  edge.j = j;
  double sum = 0.0;
  std::size_t a = 0, b = 0;
  while (a < obs_i.size() && b < obs_j.size()) {
    if (obs_i[a].frame_id < obs_j[b].frame_id) {
      ++a;
    } else if (obs_j[b].frame_id < obs_i[a].frame_id) {
      ++b;
    } else {
      const ViewObservation& x = obs_i[a++];
      const ViewObservation& y = obs_j[b++];
      if (x.visible_pixels <= 0 || y.visible_pixels <= 0) continue;
      ++edge.contributing_views;
      const double di = denom_i > 0.0 ? denom_i : static_cast<double>(x.total_pixels);
      const double dj = denom_j > 0.0 ? denom_j : static_cast<double>(y.total_pixels);
      const double joint =
          (static_cast<double>(x.visible_pixels) * y.visible_pixels) / (di * dj);
      sum += joint * feature_cosine(x.mask_feature, y.mask_feature);
    }
  }
  if (edge.contributing_views > 0) {
    edge.affinity = std::clamp(sum / edge.contributing_views, 0.0, 1.0);
  }
  return edge;
}

MergeSchedule linear_schedule(double start, double end, int stages) {
  if (!(start > end)) {
    throw Error(ErrorCode::InvalidArgument, "schedule start must exceed end");
  }
  if (stages < 2) {
    throw Error(ErrorCode::InvalidArgument, "schedule needs at least 2 stages");
  }
  MergeSchedule schedule;
  schedule.thresholds.reserve(static_cast<std::size_t>(stages));
  for (int t = 0; t < stages; ++t) {
    schedule.thresholds.push_back(start - t * (start - end) / (stages - 1));
  }
  return schedule;
}

std::vector<Instance> progressive_merge(const std::vector<Superpoint>& superpoints,
                                        const AdjacencyGraph& graph,
                                        const ObservationSet& observations,
                                        const MergeSchedule& schedule, const PointCloud& cloud,
                                        const MergeOptions& options,
                                        std::vector<int>* stage_counts) {
  const int n = static_cast<int>(superpoints.size());
  if (graph.node_count != n || observations.size() != superpoints.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "graph/observations do not match the superpoint list");
  }
  if (schedule.thresholds.empty()) {
    throw Error(ErrorCode::InvalidArgument, "empty merge schedule");
  }
  for (std::size_t t = 1; t < schedule.thresholds.size(); ++t) {
    if (!(schedule.thresholds[t] < schedule.thresholds[t - 1])) {
      throw Error(ErrorCode::InvalidArgument, "schedule thresholds must be strictly decreasing");
    }
  }

  std::vector<char> alive(static_cast<std::size_t>(n), 1);
  std::vector<long> version(static_cast<std::size_t>(n), 0);
  std::vector<long> size(static_cast<std::size_t>(n));
  std::vector<int> parent(static_cast<std::size_t>(n));
  std::vector<std::vector<ViewObservation>> views(static_cast<std::size_t>(n));
  std::vector<std::set<int>> neighbors(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    parent[idx] = i;
    size[idx] = static_cast<long>(superpoints[idx].point_indices.size());
    views[idx] = observations[idx];
  }
  for (const auto& [i, j] : graph.edges) {
    neighbors[static_cast<std::size_t>(i)].insert(j);
    neighbors[static_cast<std::size_t>(j)].insert(i);
  }

  auto make_entry = [&](int i, int j) {
    if (i > j) std::swap(i, j);
    PairEntry entry;
    entry.affinity = pair_affinity(i, j, views[static_cast<std::size_t>(i)],
                                   views[static_cast<std::size_t>(j)],
                                   options.point_count_denominator
                                       ? static_cast<double>(size[static_cast<std::size_t>(i)])
                                       : 0.0,
                                   options.point_count_denominator
                                       ? static_cast<double>(size[static_cast<std::size_t>(j)])
                                       : 0.0)
                        .affinity;
    entry.combined_size = size[static_cast<std::size_t>(i)] + size[static_cast<std::size_t>(j)];
    entry.i = i;
    entry.j = j;
    entry.version_i = version[static_cast<std::size_t>(i)];
    entry.version_j = version[static_cast<std::size_t>(j)];
    return entry;
  };

  int live = n;
  if (stage_counts) stage_counts->clear();

  auto run_schedule = [&](auto& queue) {
    for (const auto& [i, j] : graph.edges) queue.push(make_entry(i, j));
    for (double threshold : schedule.thresholds) {
      while (!queue.empty()) {
        const PairEntry top = queue.top();
        const auto ti = static_cast<std::size_t>(top.i);
        const auto tj = static_cast<std::size_t>(top.j);
        if (!alive[ti] || !alive[tj] || version[ti] != top.version_i ||
            version[tj] != top.version_j) {
          queue.pop();
          continue;
        }
        if (top.affinity < threshold) break;
        queue.pop();

        // Merge j into i (i < j by construction).
        alive[tj] = 0;
        parent[tj] = top.i;
        ++version[ti];
        size[ti] += size[tj];
        views[ti] = merge_views(views[ti], views[tj]);
        neighbors[ti].erase(top.j);
        for (int nb : neighbors[tj]) {
          if (nb == top.i) continue;
          neighbors[static_cast<std::size_t>(nb)].erase(top.j);
          neighbors[static_cast<std::size_t>(nb)].insert(top.i);
          neighbors[ti].insert(nb);
        }
        neighbors[tj].clear();
        --live;
        for (int nb : neighbors[ti]) queue.push(make_entry(top.i, nb));
      }
      if (stage_counts) stage_counts->push_back(live);
    }
  };

  if (options.size_first) {
    // Size-first ordering cannot use the lazy heap (the top pair may be
    // below threshold while a deeper one qualifies), so rescan per merge.
    for (double threshold : schedule.thresholds) {
      bool merged = true;
      while (merged) {
        merged = false;
        PairEntry best;
        bool have = false;
        for (int i = 0; i < n; ++i) {
          if (!alive[static_cast<std::size_t>(i)]) continue;
          for (int nb : neighbors[static_cast<std::size_t>(i)]) {
            if (nb <= i) continue;
            PairEntry entry = make_entry(i, nb);
            if (entry.affinity < threshold) continue;
            if (!have || SizeFirstOrder{}(best, entry)) {
              best = entry;
              have = true;
            }
          }
        }
        if (!have) break;
        const auto ti = static_cast<std::size_t>(best.i);
        const auto tj = static_cast<std::size_t>(best.j);
        alive[tj] = 0;
        parent[tj] = best.i;
        ++version[ti];
        size[ti] += size[tj];
        views[ti] = merge_views(views[ti], views[tj]);
        neighbors[ti].erase(best.j);
        for (int nb : neighbors[tj]) {
          if (nb == best.i) continue;
          neighbors[static_cast<std::size_t>(nb)].erase(best.j);
          neighbors[static_cast<std::size_t>(nb)].insert(best.i);
          neighbors[ti].insert(nb);
        }
        neighbors[tj].clear();
        --live;
        merged = true;
      }
      if (stage_counts) stage_counts->push_back(live);
    }
  } else {
    std::priority_queue<PairEntry, std::vector<PairEntry>, DefaultOrder> queue;
    run_schedule(queue);
  }

  auto find = [&parent](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      const int up = parent[static_cast<std::size_t>(x)];
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(up)];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };

  std::vector<std::vector<int>> members(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) members[static_cast<std::size_t>(find(i))].push_back(i);

  std::vector<Instance> instances;
  for (int root = 0; root < n; ++root) {
    const auto& group = members[static_cast<std::size_t>(root)];
    if (group.empty()) continue;
    Instance inst;
    inst.instance_id = static_cast<int>(instances.size());
    inst.member_superpoints = group;
    for (int sp : group) {
      const auto& src = superpoints[static_cast<std::size_t>(sp)].point_indices;
      inst.point_indices.insert(inst.point_indices.end(), src.begin(), src.end());
    }
    std::sort(inst.point_indices.begin(), inst.point_indices.end());
    inst.aabb = fit_aabb(cloud, inst.point_indices);
    inst.obb = fit_oriented_box(cloud, inst.point_indices);
    instances.push_back(std::move(inst));
  }
  return instances;
}

}  // namespace uniground
