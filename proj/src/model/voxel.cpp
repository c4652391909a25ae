// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "nhp/field.hpp"

namespace nhp {

namespace {

std::vector<int> dilate(const GridGeometry& g, const std::vector<int>& cells) {
  std::vector<std::uint8_t> flag(g.cells(), 0);
  for (int id : cells) {
    const int x = id % g.dims[0], y = (id / g.dims[0]) % g.dims[1], z = id / (g.dims[0] * g.dims[1]);
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx, ny = y + dy, nz = z + dz;
          if (nx < 0 || ny < 0 || nz < 0 || nx >= g.dims[0] || ny >= g.dims[1] || nz >= g.dims[2]) continue;
          flag[static_cast<std::size_t>(g.cell_id(nx, ny, nz))] = 1;
        }
  }
  std::vector<int> out;
  for (std::size_t i = 0; i < flag.size(); ++i)
    if (flag[i]) out.push_back(static_cast<int>(i));
  return out;
}

// Gathers the 27 per-offset products into each output cell:
// out[a] = sum_k (x[a + off_k] W_k), with the products laid out as rows
// (input cell, view, k).
template <typename T>
std::shared_ptr<const SparseRows<T>> rulebook(const GridGeometry& g, const std::vector<int>& in,
                                              const std::vector<int>& out, std::size_t views) {
  std::vector<int> index(g.cells(), -1);
  for (std::size_t i = 0; i < in.size(); ++i) index[static_cast<std::size_t>(in[i])] = static_cast<int>(i);
  auto s = std::make_shared<SparseRows<T>>(in.size() * views * 27);
  for (int id : out) {
    const int x = id % g.dims[0], y = (id / g.dims[0]) % g.dims[1], z = id / (g.dims[0] * g.dims[1]);
    std::vector<std::pair<std::size_t, std::size_t>> taps;
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx, ny = y + dy, nz = z + dz;
          if (nx < 0 || ny < 0 || nz < 0 || nx >= g.dims[0] || ny >= g.dims[1] || nz >= g.dims[2]) continue;
          const int src = index[static_cast<std::size_t>(g.cell_id(nx, ny, nz))];
          if (src < 0) continue;
          const auto k = static_cast<std::size_t>((dz + 1) * 9 + (dy + 1) * 3 + (dx + 1));
          taps.emplace_back(static_cast<std::size_t>(src), k);
        }
    for (std::size_t c = 0; c < views; ++c) {
      for (const auto& [src, k] : taps) s->push((src * views + c) * 27 + k, T(1));
      s->end_row();
    }
  }
  return s;
}

template <typename T>
Tensor<T> sparse_conv(const ParamSet<T>& params, const std::string& name, const Tensor<T>& x,
                      const std::shared_ptr<const SparseRows<T>>& rules) {
  const auto& w = params.at(name + ".w");
  const auto& b = params.at(name + ".b");
  const std::size_t dout = b.dim(0);
  const Tensor<T> products = reshape(matmul(x, w), {x.dim(0) * 27, dout});
  return relu(add_bias(spmm(rules, products), b));
}

}  // namespace

GridGeometry make_grid(std::span<const Vec3> local_vertices, int resolution, int padding) {
  if (local_vertices.empty()) throw GeometryError("make_grid: empty vertex list");
  if (resolution <= 0 || padding < 0) throw GeometryError("make_grid: bad resolution or padding");
  GridGeometry g;
  g.box = body_bbox(local_vertices, kDefaultBoxMargin);
  const Vec3 ext = g.box.extent();
  const double longest = ext.maxCoeff();
  if (!(longest > 0.0)) throw GeometryError("make_grid: body box has zero extent");
  g.edge = longest / resolution;
  for (int i = 0; i < 3; ++i) {
    const int inner = std::max(1, static_cast<int>(std::ceil(ext[i] / g.edge - 1e-9)));
    g.dims[static_cast<std::size_t>(i)] = inner + 2 * padding;
  }
  g.origin = g.box.min - static_cast<double>(padding) * g.edge * Vec3::Ones();
  std::vector<std::uint8_t> occ(g.cells(), 0);
  g.vertex_cell.reserve(local_vertices.size());
  for (const auto& v : local_vertices) {
    int idx[3];
    for (int i = 0; i < 3; ++i) {
      idx[i] = std::clamp(static_cast<int>(std::floor((v[i] - g.origin[i]) / g.edge)), 0, g.dims[static_cast<std::size_t>(i)] - 1);
    }
    const int id = g.cell_id(idx[0], idx[1], idx[2]);
    g.vertex_cell.push_back(id);
    occ[static_cast<std::size_t>(id)] = 1;
  }
  for (std::size_t i = 0; i < occ.size(); ++i)
    if (occ[i]) g.occupied.push_back(static_cast<int>(i));
  g.level1 = dilate(g, g.occupied);
  g.level2 = dilate(g, g.level1);
  g.level2_row.assign(g.cells(), -1);
  for (std::size_t i = 0; i < g.level2.size(); ++i) g.level2_row[static_cast<std::size_t>(g.level2[i])] = static_cast<int>(i);
  return g;
}

template <typename T>
VoxelGrid<T> diffuse_to_voxels(const ParamSet<T>& params, const Tensor<T>& s_prime,
                               std::span<const Vec3> local_vertices, std::size_t views, const FieldConfig& cfg) {
  const std::size_t L = local_vertices.size();
  if (s_prime.rank() != 2 || s_prime.dim(0) != L * views) {
    throw DimensionError("diffuse_to_voxels: features " + shape_str(s_prime.shape()) + " do not match " +
                         std::to_string(L) + " vertices x " + std::to_string(views) + " views");
  }
  auto geom = std::make_shared<GridGeometry>(make_grid(local_vertices, cfg.grid_resolution, cfg.grid_padding));
  std::vector<int> occ_index(geom->cells(), -1);
  for (std::size_t i = 0; i < geom->occupied.size(); ++i) occ_index[static_cast<std::size_t>(geom->occupied[i])] = static_cast<int>(i);
  std::vector<std::vector<std::size_t>> members(geom->occupied.size());
  for (std::size_t i = 0; i < L; ++i) {
    members[static_cast<std::size_t>(occ_index[static_cast<std::size_t>(geom->vertex_cell[i])])].push_back(i);
  }
  auto scatter = std::make_shared<SparseRows<T>>(L * views);
  for (const auto& cell : members) {
    const T w = static_cast<T>(1.0 / static_cast<double>(cell.size()));
    for (std::size_t c = 0; c < views; ++c) {
      for (std::size_t i : cell) scatter->push(i * views + c, w);
      scatter->end_row();
    }
  }
  const Tensor<T> x0 = spmm(std::shared_ptr<const SparseRows<T>>(scatter), s_prime);
  const Tensor<T> x1 = sparse_conv(params, "voxel.conv1", x0, rulebook<T>(*geom, geom->occupied, geom->level1, views));
  VoxelGrid<T> grid;
  grid.features = sparse_conv(params, "voxel.conv2", x1, rulebook<T>(*geom, geom->level1, geom->level2, views));
  grid.views = views;
  grid.geometry = geom;
  return grid;
}

template <typename T>
Tensor<T> sample_skeletal(const VoxelGrid<T>& grid, std::span<const Vec3> local_points) {
  const GridGeometry& g = *grid.geometry;
  const std::size_t C = grid.views;
  SparseRows<T> rows(g.level2.size() * C);
  rows.reserve(local_points.size() * C, 8 * local_points.size() * C);
  std::vector<std::pair<std::size_t, T>> taps;
  for (const auto& x : local_points) {
    taps.clear();
    if (g.box.contains(x)) {
      const Vec3 u = (x - g.origin) / g.edge - 0.5 * Vec3::Ones();
      int base[3];
      double frac[3];
      for (int i = 0; i < 3; ++i) {
        base[i] = static_cast<int>(std::floor(u[i]));
        frac[i] = u[i] - base[i];
      }
      for (int corner = 0; corner < 8; ++corner) {
        double w = 1.0;
        int idx[3];
        bool inside = true;
        for (int i = 0; i < 3; ++i) {
          const int bit = (corner >> i) & 1;
          idx[i] = base[i] + bit;
          w *= bit ? frac[i] : 1.0 - frac[i];
          inside = inside && idx[i] >= 0 && idx[i] < g.dims[static_cast<std::size_t>(i)];
        }
        if (!inside || w == 0.0) continue;
        const int row = g.level2_row[static_cast<std::size_t>(g.cell_id(idx[0], idx[1], idx[2]))];
        if (row >= 0) taps.emplace_back(static_cast<std::size_t>(row), static_cast<T>(w));
      }
    }
    for (std::size_t c = 0; c < C; ++c) {
      for (const auto& [row, w] : taps) rows.push(row * C + c, w);
      rows.end_row();
    }
  }
  return spmm(rows, grid.features);
}

#define NHP_INSTANTIATE_VOXEL(T)                                                                          \
  template VoxelGrid<T> diffuse_to_voxels(const ParamSet<T>&, const Tensor<T>&, std::span<const Vec3>,  \
                                          std::size_t, const FieldConfig&);                              \
  template Tensor<T> sample_skeletal(const VoxelGrid<T>&, std::span<const Vec3>);

NHP_INSTANTIATE_VOXEL(float)
NHP_INSTANTIATE_VOXEL(double)

}  // namespace nhp
