#include "uniground/superpoints.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <queue>
#include <unordered_map>

namespace uniground {
namespace {

// 21 bits per axis, offset to non-negative; packed order (x,y,z) so that
// integer comparison matches lexicographic comparison of the coordinates.
constexpr int kAxisBits = 21;
constexpr std::int64_t kAxisOffset = 1 << 20;

std::int64_t pack_voxel(int x, int y, int z) {
  const auto ux = static_cast<std::int64_t>(x) + kAxisOffset;
  const auto uy = static_cast<std::int64_t>(y) + kAxisOffset;
  const auto uz = static_cast<std::int64_t>(z) + kAxisOffset;
  return (ux << (2 * kAxisBits)) | (uy << kAxisBits) | uz;
}

int voxel_coord(double value, double voxel_size) {
  return static_cast<int>(std::floor(value / voxel_size));
}

int floor_div(int a, int b) {
  return a >= 0 ? a / b : -((-a + b - 1) / b);
}

struct Voxel {
  int x = 0, y = 0, z = 0;
  std::vector<int> point_indices;
  Vec3 centroid = Vec3::Zero();
  Vec3 color = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
};

Vec3 safe_normalized(const Vec3& v) {
  const double n = v.norm();
  return n < 1e-12 ? Vec3(Vec3::UnitZ()) : Vec3(v / n);
}

double seed_distance(const Voxel& v, const Voxel& seed, double seed_spacing,
                     const SupervoxelWeights& w) {
  const double spatial = (v.centroid - seed.centroid).norm() / seed_spacing;
  const double color = (v.color - seed.color).norm() / (255.0 * std::sqrt(3.0));
  const double normal = 1.0 - std::abs(v.normal.dot(seed.normal));
  return w.spatial * spatial + w.color * color + w.normal * normal;
}

struct VoxelGrid {
  double voxel_size = 0.0;
  std::vector<Voxel> voxels;                        // sorted by (x,y,z)
  std::unordered_map<std::int64_t, int> key_to_id;  // packed key -> index

  int find(int x, int y, int z) const {
    const auto it = key_to_id.find(pack_voxel(x, y, z));
    return it == key_to_id.end() ? -1 : it->second;
  }
};

VoxelGrid build_grid(const PointCloud& cloud, const std::vector<Vec3>& normals,
                     double voxel_size) {
  VoxelGrid grid;
  grid.voxel_size = voxel_size;
  std::unordered_map<std::int64_t, std::vector<int>> bins;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3f& p = cloud.positions[i];
    const std::int64_t key = pack_voxel(voxel_coord(p.x(), voxel_size),
                                        voxel_coord(p.y(), voxel_size),
                                        voxel_coord(p.z(), voxel_size));
    bins[key].push_back(static_cast<int>(i));
  }
  std::vector<std::int64_t> keys;
  keys.reserve(bins.size());
  for (const auto& [key, _] : bins) keys.push_back(key);
  std::sort(keys.begin(), keys.end());

  grid.voxels.reserve(keys.size());
  for (std::int64_t key : keys) {
    Voxel v;
    v.z = static_cast<int>((key & ((1 << kAxisBits) - 1)) - kAxisOffset);
    v.y = static_cast<int>(((key >> kAxisBits) & ((1 << kAxisBits) - 1)) - kAxisOffset);
    v.x = static_cast<int>((key >> (2 * kAxisBits)) - kAxisOffset);
    v.point_indices = std::move(bins[key]);
    Vec3 pos_sum = Vec3::Zero(), color_sum = Vec3::Zero(), normal_sum = Vec3::Zero();
    for (int i : v.point_indices) {
      pos_sum += cloud.positions[static_cast<std::size_t>(i)].cast<double>();
      const Rgb& c = cloud.colors[static_cast<std::size_t>(i)];
      color_sum += Vec3(c[0], c[1], c[2]);
      if (!normals.empty()) normal_sum += normals[static_cast<std::size_t>(i)];
    }
    const double n = static_cast<double>(v.point_indices.size());
    v.centroid = pos_sum / n;
    v.color = color_sum / n;
    v.normal = safe_normalized(normal_sum);
    grid.key_to_id.emplace(key, static_cast<int>(grid.voxels.size()));
    grid.voxels.push_back(std::move(v));
  }
  return grid;
}

std::vector<Superpoint> clusters_to_superpoints(const PointCloud& cloud,
                                                const std::vector<Vec3>& normals,
                                                const VoxelGrid& grid,
                                                const std::vector<int>& voxel_cluster,
                                                int cluster_count) {
  std::vector<std::vector<int>> members(static_cast<std::size_t>(cluster_count));
  for (std::size_t v = 0; v < grid.voxels.size(); ++v) {
    auto& pts = members[static_cast<std::size_t>(voxel_cluster[v])];
    pts.insert(pts.end(), grid.voxels[v].point_indices.begin(),
               grid.voxels[v].point_indices.end());
  }
  // A seed voxel can be claimed by an earlier seed before its own zero-cost
  // entry pops, leaving its cluster empty; drop those.
  std::erase_if(members, [](const auto& m) { return m.empty(); });
  std::sort(members.begin(), members.end(), [](const auto& a, const auto& b) {
    return *std::min_element(a.begin(), a.end()) < *std::min_element(b.begin(), b.end());
  });

  std::vector<Superpoint> sps(members.size());
  for (std::size_t c = 0; c < members.size(); ++c) {
    Superpoint& sp = sps[c];
    sp.sp_id = static_cast<int>(c);
    sp.point_indices = std::move(members[c]);
    std::sort(sp.point_indices.begin(), sp.point_indices.end());
    Vec3 pos_sum = Vec3::Zero(), color_sum = Vec3::Zero(), normal_sum = Vec3::Zero();
    for (int i : sp.point_indices) {
      pos_sum += cloud.positions[static_cast<std::size_t>(i)].cast<double>();
      const Rgb& col = cloud.colors[static_cast<std::size_t>(i)];
      color_sum += Vec3(col[0], col[1], col[2]);
      if (!normals.empty()) normal_sum += normals[static_cast<std::size_t>(i)];
    }
    const double n = static_cast<double>(sp.point_indices.size());
    sp.centroid = pos_sum / n;
    sp.mean_color = color_sum / n;
    sp.mean_normal = safe_normalized(normal_sum);
  }
  return sps;
}

}  // namespace

std::vector<std::vector<int>> AdjacencyGraph::neighbor_lists() const {
  std::vector<std::vector<int>> lists(static_cast<std::size_t>(node_count));
  for (const auto& [i, j] : edges) {
    lists[static_cast<std::size_t>(i)].push_back(j);
    lists[static_cast<std::size_t>(j)].push_back(i);
  }
  return lists;
}

std::vector<Vec3> estimate_normals(const PointCloud& cloud, int k_neighbors,
                                   const Vec3& viewpoint) {
  if (k_neighbors < 3) {
    throw Error(ErrorCode::InvalidArgument, "k_neighbors must be at least 3");
  }
  const std::size_t n = cloud.size();
  if (n < static_cast<std::size_t>(k_neighbors)) {
    throw Error(ErrorCode::TooFewPoints,
                "normal estimation needs at least k_neighbors points, got " + std::to_string(n));
  }

  Vec3f lo = cloud.positions[0], hi = cloud.positions[0];
  for (const auto& p : cloud.positions) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec3 extent = (hi - lo).cast<double>();
  // Cell size targeting a handful of points per cell; ring search below is
  // correct for any choice, this only sets the constant factor. Flat or
  // collinear clouds have near-zero volume, so take the best of the 3D, 2D
  // and 1D density estimates.
  const double kn = static_cast<double>(k_neighbors) / static_cast<double>(n);
  const double face = std::max({extent.x() * extent.y(), extent.y() * extent.z(),
                                extent.z() * extent.x()});
  const double cell = std::max({std::cbrt(extent.prod() * kn), std::sqrt(face * kn),
                                extent.maxCoeff() * kn, 1e-9});

  std::unordered_map<std::int64_t, std::vector<int>> grid;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3f& p = cloud.positions[i];
    grid[pack_voxel(voxel_coord(p.x(), cell), voxel_coord(p.y(), cell),
                    voxel_coord(p.z(), cell))]
        .push_back(static_cast<int>(i));
  }

  std::vector<Vec3> result(n);
  std::vector<std::pair<float, int>> found;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3f& p = cloud.positions[i];
    const int cx = voxel_coord(p.x(), cell);
    const int cy = voxel_coord(p.y(), cell);
    const int cz = voxel_coord(p.z(), cell);
    found.clear();
    for (int ring = 0;; ++ring) {
      for (int dx = -ring; dx <= ring; ++dx) {
        for (int dy = -ring; dy <= ring; ++dy) {
          for (int dz = -ring; dz <= ring; ++dz) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
            const auto it = grid.find(pack_voxel(cx + dx, cy + dy, cz + dz));
            if (it == grid.end()) continue;
            for (int idx : it->second) {
              found.emplace_back((cloud.positions[static_cast<std::size_t>(idx)] - p).squaredNorm(),
                                 idx);
            }
          }
        }
      }
      if (found.size() >= static_cast<std::size_t>(k_neighbors)) {
        std::nth_element(found.begin(), found.begin() + k_neighbors - 1, found.end());
        const float kth = found[static_cast<std::size_t>(k_neighbors - 1)].first;
        // Everything within ring*cell of the query has been seen.
        const double safe = static_cast<double>(ring) * cell;
        if (static_cast<double>(kth) <= safe * safe) break;
      }
      if (found.size() == n) {
        std::nth_element(found.begin(), found.begin() + k_neighbors - 1, found.end());
        break;
      }
    }

    Vec3 mean = Vec3::Zero();
    for (int j = 0; j < k_neighbors; ++j) {
      mean += cloud.positions[static_cast<std::size_t>(found[static_cast<std::size_t>(j)].second)]
                  .cast<double>();
    }
    mean /= k_neighbors;
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (int j = 0; j < k_neighbors; ++j) {
      const Vec3 d =
          cloud.positions[static_cast<std::size_t>(found[static_cast<std::size_t>(j)].second)]
              .cast<double>() -
          mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
    Vec3 normal = solver.eigenvectors().col(0);
    normal = safe_normalized(normal);
    if (normal.dot(viewpoint - p.cast<double>()) < 0.0) normal = -normal;
    result[i] = normal;
  }
  return result;
}

std::vector<Superpoint> supervoxel_cluster(const PointCloud& cloud,
                                           const std::vector<Vec3>& normals, double voxel_size,
                                           double seed_spacing, const SupervoxelWeights& weights) {
  if (cloud.empty()) {
    throw Error(ErrorCode::TooFewPoints, "supervoxel_cluster on empty cloud");
  }
  if (!(voxel_size > 0.0) || seed_spacing < voxel_size) {
    throw Error(ErrorCode::InvalidArgument,
                "require voxel_size > 0 and seed_spacing >= voxel_size");
  }
  if (normals.size() != cloud.size()) {
    throw Error(ErrorCode::DimensionMismatch, "normals count does not match cloud");
  }

  const VoxelGrid grid = build_grid(cloud, normals, voxel_size);
  const int v_count = static_cast<int>(grid.voxels.size());

  // One seed per occupied seed cell: the lexicographically lowest voxel.
  const int cell_span = std::max(1, static_cast<int>(std::llround(seed_spacing / voxel_size)));
  std::unordered_map<std::int64_t, int> seed_of_cell;
  std::vector<int> seeds;  // voxel ids, ascending (voxels are sorted)
  for (int v = 0; v < v_count; ++v) {
    const Voxel& vox = grid.voxels[static_cast<std::size_t>(v)];
    const std::int64_t cell_key = pack_voxel(floor_div(vox.x, cell_span),
                                             floor_div(vox.y, cell_span),
                                             floor_div(vox.z, cell_span));
    if (seed_of_cell.emplace(cell_key, v).second) seeds.push_back(v);
  }

  std::vector<int> voxel_cluster(static_cast<std::size_t>(v_count), -1);
  using QueueEntry = std::tuple<double, int, int>;  // (distance, seed rank, voxel id)
  std::priority_queue<QueueEntry, std::vector<QueueEntry>, std::greater<>> queue;
  for (std::size_t rank = 0; rank < seeds.size(); ++rank) {
    queue.emplace(0.0, static_cast<int>(rank), seeds[rank]);
  }

  auto push_neighbors = [&](int v, int rank) {
    const Voxel& vox = grid.voxels[static_cast<std::size_t>(v)];
    const Voxel& seed = grid.voxels[static_cast<std::size_t>(seeds[static_cast<std::size_t>(rank)])];
    for (int dx = -1; dx <= 1; ++dx) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dz = -1; dz <= 1; ++dz) {
          if (dx == 0 && dy == 0 && dz == 0) continue;
          const int nb = grid.find(vox.x + dx, vox.y + dy, vox.z + dz);
          if (nb < 0 || voxel_cluster[static_cast<std::size_t>(nb)] >= 0) continue;
          queue.emplace(seed_distance(grid.voxels[static_cast<std::size_t>(nb)], seed,
                                      seed_spacing, weights),
                        rank, nb);
        }
      }
    }
  };

  while (!queue.empty()) {
    const auto [dist, rank, v] = queue.top();
    queue.pop();
    if (voxel_cluster[static_cast<std::size_t>(v)] >= 0) continue;
    voxel_cluster[static_cast<std::size_t>(v)] = rank;
    push_neighbors(v, rank);
  }

  // Islands unreachable from every seed become their own clusters.
  int cluster_count = static_cast<int>(seeds.size());
  for (int v = 0; v < v_count; ++v) {
    if (voxel_cluster[static_cast<std::size_t>(v)] >= 0) continue;
    const int cluster = cluster_count++;
    std::vector<int> stack{v};
    voxel_cluster[static_cast<std::size_t>(v)] = cluster;
    while (!stack.empty()) {
      const int cur = stack.back();
      stack.pop_back();
      const Voxel& vox = grid.voxels[static_cast<std::size_t>(cur)];
      for (int dx = -1; dx <= 1; ++dx) {
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dz = -1; dz <= 1; ++dz) {
            const int nb = grid.find(vox.x + dx, vox.y + dy, vox.z + dz);
            if (nb < 0 || voxel_cluster[static_cast<std::size_t>(nb)] >= 0) continue;
            voxel_cluster[static_cast<std::size_t>(nb)] = cluster;
            stack.push_back(nb);
          }
        }
      }
    }
  }

  return clusters_to_superpoints(cloud, normals, grid, voxel_cluster, cluster_count);
}

std::vector<Superpoint> region_grow(const std::vector<Superpoint>& superpoints,
                                    const AdjacencyGraph& graph,
                                    const std::vector<Vec3>& normals, double angle_thresh,
                                    double color_thresh) {
  if (!(angle_thresh > 0.0) || angle_thresh >= kPi / 2.0 || color_thresh < 0.0) {
    throw Error(ErrorCode::InvalidArgument,
                "require angle_thresh in (0, pi/2) and color_thresh >= 0");
  }
  const int n = static_cast<int>(superpoints.size());
  for (int i = 0; i < n; ++i) {
    if (superpoints[static_cast<std::size_t>(i)].sp_id != i) {
      throw Error(ErrorCode::InvalidArgument, "superpoint ids must be dense 0..n-1");
    }
  }
  if (graph.node_count != n) {
    throw Error(ErrorCode::DimensionMismatch, "adjacency graph does not match superpoints");
  }

  std::vector<int> parent(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) parent[static_cast<std::size_t>(i)] = i;
  auto find = [&parent](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      const int up = parent[static_cast<std::size_t>(x)];
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(up)];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };

  std::vector<double> count(static_cast<std::size_t>(n));
  std::vector<Vec3> pos_sum(static_cast<std::size_t>(n)), color_sum(static_cast<std::size_t>(n)),
      normal_sum(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Superpoint& sp = superpoints[static_cast<std::size_t>(i)];
    const auto idx = static_cast<std::size_t>(i);
    count[idx] = static_cast<double>(sp.point_indices.size());
    pos_sum[idx] = sp.centroid * count[idx];
    color_sum[idx] = sp.mean_color * count[idx];
    normal_sum[idx] = Vec3::Zero();
    for (int p : sp.point_indices) {
      if (!normals.empty()) normal_sum[idx] += normals[static_cast<std::size_t>(p)];
    }
    if (normals.empty()) normal_sum[idx] = sp.mean_normal * count[idx];
  }

  const double cos_thresh = std::cos(angle_thresh);
  auto qualifies = [&](int a, int b) {
    const auto ia = static_cast<std::size_t>(a);
    const auto ib = static_cast<std::size_t>(b);
    const Vec3 na = safe_normalized(normal_sum[ia]);
    const Vec3 nb = safe_normalized(normal_sum[ib]);
    if (na.dot(nb) < cos_thresh) return false;
    const Vec3 ca = color_sum[ia] / count[ia];
    const Vec3 cb = color_sum[ib] / count[ib];
    return (ca - cb).norm() <= color_thresh;
  };

  // Repeatedly merge the first qualifying adjacent pair in ascending
  // (root_i, root_j) order until none qualifies.
  bool merged = true;
  while (merged) {
    merged = false;
    std::vector<std::pair<int, int>> live;
    live.reserve(graph.edges.size());
    for (const auto& [a, b] : graph.edges) {
      int ra = find(a), rb = find(b);
      if (ra == rb) continue;
      if (ra > rb) std::swap(ra, rb);
      live.emplace_back(ra, rb);
    }
    std::sort(live.begin(), live.end());
    live.erase(std::unique(live.begin(), live.end()), live.end());
    for (const auto& [ra, rb] : live) {
      if (!qualifies(ra, rb)) continue;
      parent[static_cast<std::size_t>(rb)] = ra;
      const auto ia = static_cast<std::size_t>(ra);
      const auto ib = static_cast<std::size_t>(rb);
      count[ia] += count[ib];
      pos_sum[ia] += pos_sum[ib];
      color_sum[ia] += color_sum[ib];
      normal_sum[ia] += normal_sum[ib];
      merged = true;
      break;
    }
  }

  std::vector<std::vector<int>> members_by_root(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    members_by_root[static_cast<std::size_t>(find(i))].push_back(i);
  }
  std::vector<Superpoint> result;
  for (int root = 0; root < n; ++root) {
    const auto& members = members_by_root[static_cast<std::size_t>(root)];
    if (members.empty()) continue;
    Superpoint sp;
    sp.sp_id = static_cast<int>(result.size());
    for (int m : members) {
      const auto& src = superpoints[static_cast<std::size_t>(m)].point_indices;
      sp.point_indices.insert(sp.point_indices.end(), src.begin(), src.end());
    }
    std::sort(sp.point_indices.begin(), sp.point_indices.end());
    const auto ir = static_cast<std::size_t>(root);
    sp.centroid = pos_sum[ir] / count[ir];
    sp.mean_color = color_sum[ir] / count[ir];
    sp.mean_normal = safe_normalized(normal_sum[ir]);
    result.push_back(std::move(sp));
  }
  return result;
}

AdjacencyGraph build_adjacency(const std::vector<Superpoint>& superpoints,
                               const PointCloud& cloud, double voxel_size) {
  if (!(voxel_size > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "voxel_size must be positive");
  }
  AdjacencyGraph graph;
  graph.node_count = static_cast<int>(superpoints.size());

  std::unordered_map<std::int64_t, std::vector<int>> owners;
  for (std::size_t s = 0; s < superpoints.size(); ++s) {
    std::vector<std::int64_t> keys;
    keys.reserve(superpoints[s].point_indices.size());
    for (int p : superpoints[s].point_indices) {
      const Vec3f& pos = cloud.positions.at(static_cast<std::size_t>(p));
      keys.push_back(pack_voxel(voxel_coord(pos.x(), voxel_size),
                                voxel_coord(pos.y(), voxel_size),
                                voxel_coord(pos.z(), voxel_size)));
    }
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    for (std::int64_t key : keys) owners[key].push_back(static_cast<int>(s));
  }

  std::vector<std::pair<int, int>> edges;
  for (const auto& [key, here] : owners) {
    const int z = static_cast<int>((key & ((1 << kAxisBits) - 1)) - kAxisOffset);
    const int y = static_cast<int>(((key >> kAxisBits) & ((1 << kAxisBits) - 1)) - kAxisOffset);
    const int x = static_cast<int>((key >> (2 * kAxisBits)) - kAxisOffset);
    for (int dx = -1; dx <= 1; ++dx) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dz = -1; dz <= 1; ++dz) {
          if (dx < 0 || (dx == 0 && (dy < 0 || (dy == 0 && dz <= 0)))) continue;
          const auto it = owners.find(pack_voxel(x + dx, y + dy, z + dz));
          if (it == owners.end()) continue;
          for (int a : here) {
            for (int b : it->second) {
              if (a == b) continue;
              edges.emplace_back(std::min(a, b), std::max(a, b));
            }
          }
        }
      }
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  graph.edges = std::move(edges);
  return graph;
}

}  // namespace uniground
