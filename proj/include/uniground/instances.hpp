#pragma once

#include "uniground/projection.hpp"
#include "uniground/superpoints.hpp"

namespace uniground {

struct AffinityEdge {
  int i = -1;
  int j = -1;
  double affinity = 0.0;
  int contributing_views = 0;
};

struct MergeSchedule {
  std::vector<double> thresholds;  // strictly decreasing, in (0,1]
};

struct Instance {
  int instance_id = -1;
  std::vector<int> member_superpoints;  // sorted ascending
  std::vector<int> point_indices;       // sorted union of member indices
  AxisAlignedBox aabb;
  OrientedBox obb;
};

/// One observation list per superpoint, each sorted by frame_id and unique.
using ObservationSet = std::vector<std::vector<ViewObservation>>;

/// Multi-view affinity: over the m frames where both sides have
/// visible_pixels > 0,
///   affinity = (1/m) * sum_k (vis_i^k * vis_j^k) / (tot_i^k * tot_j^k)
///              * cos(feature_i^k, feature_j^k)
/// with cos of a zero vector defined as 0, and affinity 0 when m = 0.
/// Passing positive denom_i/denom_j replaces the per-view totals with fixed
/// denominators (e.g. 3D point counts).
AffinityEdge pair_affinity(int i, int j, const std::vector<ViewObservation>& obs_i,
                           const std::vector<ViewObservation>& obs_j, double denom_i = 0.0,
                           double denom_j = 0.0);

/// thresholds[t] = start - t*(start-end)/(stages-1), t = 0..stages-1.
MergeSchedule linear_schedule(double start, double end, int stages);

struct MergeOptions {
  /// Stage ordering. Default: highest affinity first, ties by smaller
  /// combined point count, then smaller (i,j). When true, smallest combined
  /// point count first among pairs clearing the threshold.
  bool size_first = false;
  /// Use 3D point counts as the affinity denominator instead of per-view
  /// projected pixel counts.
  bool point_count_denominator = false;
};

/// For each threshold in order, repeatedly merge the best adjacent pair with
/// affinity >= threshold. Merged nodes get per-view summed pixel counts and
/// visible-pixel-weighted mean features; adjacency is the union of member
/// adjacencies. Output ids are dense 0..m-1 in order of smallest member
/// superpoint id. When stage_counts is given it receives the node count
/// after each stage.
std::vector<Instance> progressive_merge(const std::vector<Superpoint>& superpoints,
                                        const AdjacencyGraph& graph,
                                        const ObservationSet& observations,
                                        const MergeSchedule& schedule, const PointCloud& cloud,
                                        const MergeOptions& options = {},
                                        std::vector<int>* stage_counts = nullptr);

}  // namespace uniground
