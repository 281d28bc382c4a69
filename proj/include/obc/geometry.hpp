#pragma once

// Structured quadrilateral meshes of rectangles and the two-subdomain split
// used by the interface coupling. Nodes are numbered lexicographically with x
// running fastest: node(i, j) = j * (nx + 1) + i.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace obc {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct Rectangle {
  double x_min = 0.0;
  double x_max = 1.0;
  double y_min = 0.0;
  double y_max = 1.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
};

inline constexpr Rectangle unit_square{0.0, 1.0, 0.0, 1.0};

struct Mesh {
  int nx = 0;
  int ny = 0;
  Rectangle bounds;
  std::vector<Point> nodes;
  /// Counterclockwise: (i,j), (i+1,j), (i+1,j+1), (i,j+1).
  std::vector<std::array<int, 4>> elements;
  /// Sorted ascending.
  std::vector<int> boundary_nodes;

  int node_count() const { return static_cast<int>(nodes.size()); }
  int element_count() const { return static_cast<int>(elements.size()); }
  int node_id(int i, int j) const { return j * (nx + 1) + i; }
  double hx() const { return bounds.width() / nx; }
  double hy() const { return bounds.height() / ny; }
};

namespace detail {

inline Mesh mesh_from_coordinates(const std::vector<double>& xs, const std::vector<double>& ys) {
  Mesh mesh;
  mesh.nx = static_cast<int>(xs.size()) - 1;
  mesh.ny = static_cast<int>(ys.size()) - 1;
  mesh.bounds = {xs.front(), xs.back(), ys.front(), ys.back()};
  mesh.nodes.reserve(xs.size() * ys.size());
  for (double y : ys) {
    for (double x : xs) mesh.nodes.push_back({x, y});
  }
  mesh.elements.reserve(static_cast<std::size_t>(mesh.nx) * mesh.ny);
  for (int j = 0; j < mesh.ny; ++j) {
    for (int i = 0; i < mesh.nx; ++i) {
      mesh.elements.push_back({mesh.node_id(i, j), mesh.node_id(i + 1, j), mesh.node_id(i + 1, j + 1),
                               mesh.node_id(i, j + 1)});
    }
  }
  for (int j = 0; j <= mesh.ny; ++j) {
    for (int i = 0; i <= mesh.nx; ++i) {
      if (i == 0 || i == mesh.nx || j == 0 || j == mesh.ny) mesh.boundary_nodes.push_back(mesh.node_id(i, j));
    }
  }
  return mesh;
}

}  // namespace detail

inline Mesh build_mesh(int nx, int ny, const Rectangle& bounds = unit_square) {
  if (nx < 1 || ny < 1) throw std::invalid_argument("build_mesh: element counts must be positive");
  if (!(bounds.x_max > bounds.x_min) || !(bounds.y_max > bounds.y_min))
    throw std::invalid_argument("build_mesh: degenerate bounds");
  std::vector<double> xs(nx + 1), ys(ny + 1);
  for (int i = 0; i <= nx; ++i) xs[i] = bounds.x_min + bounds.width() * i / nx;
  for (int j = 0; j <= ny; ++j) ys[j] = bounds.y_min + bounds.height() * j / ny;
  xs.back() = bounds.x_max;
  ys.back() = bounds.y_max;
  return detail::mesh_from_coordinates(xs, ys);
}

/// Free/Dirichlet split of the nodes of one mesh. Free indices follow node order.
struct DofMap {
  std::vector<int> free_to_node;
  std::vector<int> node_to_free;  // -1 for Dirichlet nodes
  std::vector<int> dirichlet_nodes;
  std::vector<int> node_to_dirichlet;  // -1 for free nodes

  int free_count() const { return static_cast<int>(free_to_node.size()); }
  int dirichlet_count() const { return static_cast<int>(dirichlet_nodes.size()); }
  int node_count() const { return static_cast<int>(node_to_free.size()); }
};

inline DofMap make_dof_map(int node_count, const std::vector<int>& dirichlet_nodes) {
  DofMap map;
  map.node_to_free.assign(node_count, -1);
  map.node_to_dirichlet.assign(node_count, -1);
  std::vector<char> is_dirichlet(node_count, 0);
  for (int n : dirichlet_nodes) {
    if (n < 0 || n >= node_count) throw std::invalid_argument("make_dof_map: node index out of range");
    is_dirichlet[n] = 1;
  }
  for (int n = 0; n < node_count; ++n) {
    if (is_dirichlet[n]) {
      map.node_to_dirichlet[n] = map.dirichlet_count();
      map.dirichlet_nodes.push_back(n);
    } else {
      map.node_to_free[n] = map.free_count();
      map.free_to_node.push_back(n);
    }
  }
  return map;
}

struct Subdomain {
  Mesh mesh;
  /// Node index in the undecomposed mesh for every subdomain node.
  std::vector<int> global_node;
  /// First global element index of every subdomain element.
  std::vector<int> global_element;
  /// All nodes on the interface line, ascending in y (endpoints included).
  std::vector<int> interface_nodes;
  DofMap dofs;
};

/// Maps between subdomain free DOFs and the control (interface) ordering.
/// The control lives on the interior interface nodes of subdomain 1, ascending in y.
struct InterfaceMap {
  std::vector<int> control_nodes;  // subdomain-1 node ids
  std::array<std::vector<int>, 2> trace_free;  // free index on side s for each control DOF
  /// Position in control ordering of the k-th interface free DOF of subdomain 2
  /// when those DOFs are listed in subdomain-2 free order (the I_2to0 permutation).
  std::vector<int> side2_permutation;

  int size() const { return static_cast<int>(control_nodes.size()); }
};

struct Decomposition {
  Mesh global;
  DofMap global_dofs;  // homogeneous-Dirichlet split of the undecomposed mesh
  std::array<Subdomain, 2> sub;
  InterfaceMap interface;
  double interface_x = 0.0;

  const Subdomain& side(int s) const { return sub.at(static_cast<std::size_t>(s - 1)); }
};

namespace detail {

inline Subdomain slice_columns(const Mesh& global, int i_begin, int i_end) {
  std::vector<double> xs, ys;
  for (int i = i_begin; i <= i_end; ++i) xs.push_back(global.nodes[global.node_id(i, 0)].x);
  for (int j = 0; j <= global.ny; ++j) ys.push_back(global.nodes[global.node_id(0, j)].y);
  Subdomain s;
  s.mesh = mesh_from_coordinates(xs, ys);
  s.global_node.resize(s.mesh.nodes.size());
  for (int j = 0; j <= s.mesh.ny; ++j) {
    for (int i = 0; i <= s.mesh.nx; ++i) s.global_node[s.mesh.node_id(i, j)] = global.node_id(i + i_begin, j);
  }
  for (int j = 0; j < s.mesh.ny; ++j) {
    for (int i = 0; i < s.mesh.nx; ++i) s.global_element.push_back(j * global.nx + i + i_begin);
  }
  return s;
}

}  // namespace detail

/// Splits `mesh` along the vertical grid line x = interface_x. Each subdomain keeps its
/// own copy of the interface nodes. Interface endpoints lie on the outer boundary and
/// are Dirichlet; the interior interface nodes carry the control.
inline Decomposition decompose(const Mesh& mesh, double interface_x) {
  const double tol = 1e-12 * mesh.bounds.width();
  int i_split = -1;
  for (int i = 1; i < mesh.nx; ++i) {
    if (std::abs(mesh.nodes[mesh.node_id(i, 0)].x - interface_x) <= tol) i_split = i;
  }
  if (i_split < 0)
    throw std::invalid_argument("decompose: interface_x = " + std::to_string(interface_x) +
                                " is not an interior vertical grid line");

  Decomposition dec;
  dec.global = mesh;
  dec.global_dofs = make_dof_map(mesh.node_count(), mesh.boundary_nodes);
  dec.interface_x = mesh.nodes[mesh.node_id(i_split, 0)].x;
  dec.sub[0] = detail::slice_columns(mesh, 0, i_split);
  dec.sub[1] = detail::slice_columns(mesh, i_split, mesh.nx);

  for (int s = 0; s < 2; ++s) {
    Subdomain& sd = dec.sub[s];
    const int i_iface = (s == 0) ? sd.mesh.nx : 0;
    for (int j = 0; j <= sd.mesh.ny; ++j) sd.interface_nodes.push_back(sd.mesh.node_id(i_iface, j));
    std::vector<int> dirichlet;
    for (int n : sd.mesh.boundary_nodes) {
      const auto it = std::find(sd.interface_nodes.begin(), sd.interface_nodes.end(), n);
      const bool interior_interface =
          it != sd.interface_nodes.end() && it != sd.interface_nodes.begin() && it != sd.interface_nodes.end() - 1;
      if (!interior_interface) dirichlet.push_back(n);
    }
    sd.dofs = make_dof_map(sd.mesh.node_count(), dirichlet);
  }

  // Match interior interface nodes by coordinates.
  InterfaceMap& imap = dec.interface;
  const auto& n1 = dec.sub[0].interface_nodes;
  const auto& n2 = dec.sub[1].interface_nodes;
  for (std::size_t k = 1; k + 1 < n1.size(); ++k) {
    const Point p = dec.sub[0].mesh.nodes[n1[k]];
    const auto match = std::find_if(n2.begin(), n2.end(), [&](int n) {
      const Point q = dec.sub[1].mesh.nodes[n];
      return q.x == p.x && q.y == p.y;
    });
    if (match == n2.end()) throw std::logic_error("decompose: interface meshes do not match");
    imap.control_nodes.push_back(n1[k]);
    imap.trace_free[0].push_back(dec.sub[0].dofs.node_to_free[n1[k]]);
    imap.trace_free[1].push_back(dec.sub[1].dofs.node_to_free[*match]);
  }
  std::vector<int> order(imap.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return imap.trace_free[1][a] < imap.trace_free[1][b]; });
  imap.side2_permutation = order;
  return dec;
}

/// Applies a permutation: out[perm[k]] = in[k].
template <class Vec>
Vec permute(const Vec& in, const std::vector<int>& perm) {
  Vec out = in;
  for (std::size_t k = 0; k < perm.size(); ++k) out[perm[k]] = in[k];
  return out;
}

template <class Vec>
Vec inverse_permute(const Vec& in, const std::vector<int>& perm) {
  Vec out = in;
  for (std::size_t k = 0; k < perm.size(); ++k) out[k] = in[perm[k]];
  return out;
}

}  // namespace obc
