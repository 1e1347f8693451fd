#pragma once

#include <span>

#include "uniground/types.hpp"

namespace uniground {

struct Superpoint {
  int sp_id = -1;
  std::vector<int> point_indices;  // sorted ascending
  Vec3 centroid = Vec3::Zero();
  Vec3 mean_normal = Vec3::UnitZ();
  Vec3 mean_color = Vec3::Zero();  // 0..255
};

struct AdjacencyGraph {
  int node_count = 0;
  std::vector<std::pair<int, int>> edges;  // i < j, sorted, unique

  std::vector<std::vector<int>> neighbor_lists() const;
};

/// k-nearest-neighbor PCA normals, oriented to face `viewpoint` (pass the
/// frame-0 camera position; points with ambiguous orientation keep the PCA
/// sign). Requires cloud.size() >= k_neighbors.
std::vector<Vec3> estimate_normals(const PointCloud& cloud, int k_neighbors,
                                   const Vec3& viewpoint = Vec3::Zero());

struct SupervoxelWeights {
  double color = 0.2;
  double spatial = 0.4;
  double normal = 1.0;
};

/// VCCS-style clustering. Points are binned into voxels; one seed per
/// occupied seed-spacing grid cell (the lexicographically lowest occupied
/// voxel); voxels join the seed minimizing
///   w_spatial*(|dx|/seed_spacing) + w_color*(|dc|/(255*sqrt(3)))
///     + w_normal*(1 - |n . n_seed|)
/// via best-first expansion over 26-connected voxel neighbors. Voxels
/// unreachable from any seed become their own connected-component clusters,
/// so the result always partitions the cloud.
std::vector<Superpoint> supervoxel_cluster(const PointCloud& cloud,
                                           const std::vector<Vec3>& normals, double voxel_size,
                                           double seed_spacing,
                                           const SupervoxelWeights& weights = {});

/// Merge adjacent superpoints while the mean-normal angle stays within
/// angle_thresh and the mean-color distance within color_thresh; repeats
/// until no adjacent pair qualifies. Merged ids are reassigned 0..m-1 in
/// order of each cluster's smallest original sp_id.
std::vector<Superpoint> region_grow(const std::vector<Superpoint>& superpoints,
                                    const AdjacencyGraph& graph,
                                    const std::vector<Vec3>& normals, double angle_thresh,
                                    double color_thresh);

/// Edge (i,j) iff a voxel of i is 26-adjacent to a voxel of j.
AdjacencyGraph build_adjacency(const std::vector<Superpoint>& superpoints,
                               const PointCloud& cloud, double voxel_size);

}  // namespace uniground
