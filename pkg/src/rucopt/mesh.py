"""Structured periodic unit-cell meshes (Q4/H8) and element matrices.

The unit cell is a square (2D) or cube (3D) voxel grid. Nodes are numbered
lexicographically with x fastest; element (ex, ey[, ez]) has index
ex + nx*(ey + ny*ez). Periodicity is imposed by the elimination method:
every node on a max-face is identified with the congruent node on the
opposite min-face, so corner and edge nodes collapse transitively onto the
min-corner master.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RucMesh:
    """Structured voxel grid for a periodic unit cell."""

    dim: int
    resolution: tuple[int, ...]
    side_mm: float
    cell_size: float
    connectivity: np.ndarray  # (N, 4|8) node ids on the full (non-collapsed) grid
    coords: np.ndarray  # (num_nodes, dim) node coordinates in mm

    @property
    def num_elements(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def num_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def cell_volume(self) -> float:
        return self.cell_size**self.dim

    @property
    def domain_volume(self) -> float:
        return self.side_mm**self.dim

    def centroids(self) -> np.ndarray:
        """Element centroid coordinates, (N, dim); element index runs x fastest."""
        out = np.empty((self.num_elements, self.dim))
        rem = np.arange(self.num_elements)
        for ax, n in enumerate(self.resolution):
            out[:, ax] = (rem % n + 0.5) * self.cell_size
            rem = rem // n
        return out


@dataclass(frozen=True)
class DofMap:
    """Periodic master/slave node identification and compact DOF numbering."""

    dim: int
    node_master: np.ndarray  # (num_nodes,) original index of the master node
    node_index: np.ndarray  # (num_nodes,) compact independent-node index
    num_independent_nodes: int
    slave_pairs: np.ndarray  # (n_slaves, 2) rows (slave, master)

    @property
    def num_dofs(self) -> int:
        return self.dim * self.num_independent_nodes

    def dof_of(self, nodes: np.ndarray, comp: int) -> np.ndarray:
        return self.dim * self.node_index[nodes] + comp


@dataclass(frozen=True)
class ElementMatrices:
    """Reference element operators for the congruent voxel elements.

    k0 is the stiffness of one solid element at unit Young's modulus; B0 the
    strain-displacement matrix at the element centroid; u0 holds one column
    of affine nodal displacements per unit test strain, so that k0 @ u0
    gives the per-unit-strain element load contributions.
    """

    dim: int
    cell_size: float
    poisson_ratio: float
    k0: np.ndarray  # (d_el, d_el)
    B0: np.ndarray  # (d, d_el)
    u0: np.ndarray  # (d_el, d)
    volume: float

    @property
    def voigt_dim(self) -> int:
        return 3 if self.dim == 2 else 6

    @property
    def dofs_per_element(self) -> int:
        return self.k0.shape[0]


def build_mesh(dim, resolution, side_length_mm=10.0) -> RucMesh:
    """Build a structured periodic grid of Q4 (2D) or H8 (3D) voxels.

    `resolution` is the cell count per axis, either a single int for all
    axes or one int per axis.
    """
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    if np.isscalar(resolution):
        res = (int(resolution),) * dim
    else:
        res = tuple(int(r) for r in resolution)
    if len(res) != dim:
        raise ValueError(f"resolution {res} does not match dim {dim}")
    if any(r < 2 for r in res):
        raise ValueError(
            f"resolution must be >= 2 per axis (periodic pairing degenerates), got {res}")
    if side_length_mm <= 0:
        raise ValueError("side length must be positive")

    cell = side_length_mm / res[0]
    if any(abs(side_length_mm / r - cell) > 1e-12 * cell for r in res):
        raise ValueError("anisotropic cells are not supported: all axes must "
                         "share side/resolution")

    if dim == 2:
        nx, ny = res
        jj, ii = np.meshgrid(np.arange(ny + 1), np.arange(nx + 1), indexing="ij")
        coords = np.column_stack([ii.ravel() * cell, jj.ravel() * cell])

        def nid(i, j):
            return i + (nx + 1) * j

        ex, ey = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        ex = ex.T.ravel()
        ey = ey.T.ravel()
        conn = np.column_stack([
            nid(ex, ey), nid(ex + 1, ey), nid(ex + 1, ey + 1), nid(ex, ey + 1),
        ])
    else:
        nx, ny, nz = res
        kk, jj, ii = np.meshgrid(np.arange(nz + 1), np.arange(ny + 1),
                                 np.arange(nx + 1), indexing="ij")
        coords = np.column_stack(
            [ii.ravel() * cell, jj.ravel() * cell, kk.ravel() * cell])

        def nid(i, j, k):
            return i + (nx + 1) * (j + (ny + 1) * k)

        ez, ey, ex = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx),
                                 indexing="ij")
        ex, ey, ez = ex.ravel(), ey.ravel(), ez.ravel()
        conn = np.column_stack([
            nid(ex, ey, ez), nid(ex + 1, ey, ez),
            nid(ex + 1, ey + 1, ez), nid(ex, ey + 1, ez),
            nid(ex, ey, ez + 1), nid(ex + 1, ey, ez + 1),
            nid(ex + 1, ey + 1, ez + 1), nid(ex, ey + 1, ez + 1),
        ])
    return RucMesh(dim=dim, resolution=res, side_mm=float(side_length_mm),
                   cell_size=cell, connectivity=conn.astype(np.int64),
                   coords=coords)


def periodic_dof_map(mesh: RucMesh) -> DofMap:
    """Pair opposite-face nodes and eliminate the redundant DOFs.

    Node (i, j[, k]) maps to master (i mod nx, j mod ny[, k mod nz]); the
    map is idempotent and leaves exactly nx*ny(*nz) independent nodes.
    """
    res = mesh.resolution
    if mesh.dim == 2:
        nx, ny = res
        jj, ii = np.meshgrid(np.arange(ny + 1), np.arange(nx + 1), indexing="ij")
        mi = ii.ravel() % nx
        mj = jj.ravel() % ny
        master = mi + (nx + 1) * mj
    else:
        nx, ny, nz = res
        kk, jj, ii = np.meshgrid(np.arange(nz + 1), np.arange(ny + 1),
                                 np.arange(nx + 1), indexing="ij")
        mi = ii.ravel() % nx
        mj = jj.ravel() % ny
        mk = kk.ravel() % nz
        master = mi + (nx + 1) * (mj + (ny + 1) * mk)

    is_master = master == np.arange(mesh.num_nodes)
    index = np.full(mesh.num_nodes, -1, dtype=np.int64)
    index[is_master] = np.arange(int(is_master.sum()))
    index = index[master]  # slaves inherit their master's compact index

    slaves = np.nonzero(~is_master)[0]
    pairs = np.column_stack([slaves, master[slaves]])
    return DofMap(dim=mesh.dim, node_master=master, node_index=index,
                  num_independent_nodes=int(is_master.sum()), slave_pairs=pairs)


def constitutive_matrix(dim: int, youngs: float, poisson: float) -> np.ndarray:
    """Isotropic constitutive matrix in Voigt form.

    2D uses plane stress; Voigt order is [xx, yy, xy] in 2D and
    [xx, yy, zz, xy, yz, xz] in 3D with engineering shear strains.
    """
    nu = poisson
    if dim == 2:
        c = youngs / (1.0 - nu**2)
        return c * np.array([
            [1.0, nu, 0.0],
            [nu, 1.0, 0.0],
            [0.0, 0.0, (1.0 - nu) / 2.0],
        ])
    lam = youngs / ((1.0 + nu) * (1.0 - 2.0 * nu))
    C = np.zeros((6, 6))
    C[:3, :3] = lam * nu
    C[np.arange(3), np.arange(3)] = lam * (1.0 - nu)
    g = youngs / (2.0 * (1.0 + nu))
    C[np.arange(3, 6), np.arange(3, 6)] = g
    return C


def _shape_gradients(dim: int, x: np.ndarray, cell: float) -> np.ndarray:
    """Gradients of the bi/trilinear shape functions at natural point x.

    Returns (dim, n_nodes) physical derivatives for a cube of edge `cell`
    whose natural coordinates span [-1, 1] per axis.
    """
    jac = 2.0 / cell  # d(natural)/d(physical), diagonal
    if dim == 2:
        xi, eta = x
        sx = np.array([-1.0, 1.0, 1.0, -1.0])
        sy = np.array([-1.0, -1.0, 1.0, 1.0])
        dxi = 0.25 * sx * (1.0 + sy * eta)
        deta = 0.25 * sy * (1.0 + sx * xi)
        return np.vstack([dxi, deta]) * jac
    xi, eta, zeta = x
    sx = np.array([-1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0])
    sy = np.array([-1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0])
    sz = np.array([-1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0])
    dxi = 0.125 * sx * (1.0 + sy * eta) * (1.0 + sz * zeta)
    deta = 0.125 * sy * (1.0 + sx * xi) * (1.0 + sz * zeta)
    dzeta = 0.125 * sz * (1.0 + sx * xi) * (1.0 + sy * eta)
    return np.vstack([dxi, deta, dzeta]) * jac


def strain_displacement(dim: int, x: np.ndarray, cell: float) -> np.ndarray:
    """Voigt strain-displacement matrix B at natural point x."""
    g = _shape_gradients(dim, x, cell)
    n = g.shape[1]
    if dim == 2:
        B = np.zeros((3, 2 * n))
        B[0, 0::2] = g[0]
        B[1, 1::2] = g[1]
        B[2, 0::2] = g[1]
        B[2, 1::2] = g[0]
        return B
    B = np.zeros((6, 3 * n))
    B[0, 0::3] = g[0]
    B[1, 1::3] = g[1]
    B[2, 2::3] = g[2]
    B[3, 0::3] = g[1]
    B[3, 1::3] = g[0]
    B[4, 1::3] = g[2]
    B[4, 2::3] = g[1]
    B[5, 0::3] = g[2]
    B[5, 2::3] = g[0]
    return B


def _local_node_coords(dim: int, cell: float) -> np.ndarray:
    if dim == 2:
        return cell * np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    return cell * np.array([
        [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
        [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
    ], dtype=float)


def _affine_unit_strain_displacements(dim: int, cell: float) -> np.ndarray:
    """Nodal displacements of the affine fields with unit Voigt strains.

    Engineering shear gamma_ab = 1 is realized as u_a = x_b (the skew part
    is a rigid rotation and drops out of every stiffness product).
    """
    xy = _local_node_coords(dim, cell)
    n = xy.shape[0]
    d = 3 if dim == 2 else 6
    u0 = np.zeros((dim * n, d))
    if dim == 2:
        u0[0::2, 0] = xy[:, 0]  # eps_xx: u = x
        u0[1::2, 1] = xy[:, 1]  # eps_yy: v = y
        u0[0::2, 2] = xy[:, 1]  # gamma_xy: u = y
    else:
        u0[0::3, 0] = xy[:, 0]
        u0[1::3, 1] = xy[:, 1]
        u0[2::3, 2] = xy[:, 2]
        u0[0::3, 3] = xy[:, 1]  # gamma_xy: u = y
        u0[1::3, 4] = xy[:, 2]  # gamma_yz: v = z
        u0[0::3, 5] = xy[:, 2]  # gamma_xz: u = z
    return u0


def element_stiffness_and_B(dim: int, cell_size: float,
                            poisson_ratio: float) -> ElementMatrices:
    """Element stiffness (unit Young's modulus) and centroid B matrix.

    Full Gauss quadrature (2 points per axis); plane stress in 2D.
    """
    if not 0.0 < poisson_ratio < 0.5:
        raise ValueError(f"Poisson ratio must lie in (0, 0.5), got {poisson_ratio}")
    C = constitutive_matrix(dim, 1.0, poisson_ratio)
    gp = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    pts = [np.array(p) for p in np.stack(
        np.meshgrid(*([gp] * dim), indexing="ij"), axis=-1).reshape(-1, dim)]
    detj = (cell_size / 2.0)**dim
    n_dof = dim * (4 if dim == 2 else 8)
    k0 = np.zeros((n_dof, n_dof))
    for p in pts:
        B = strain_displacement(dim, p, cell_size)
        k0 += B.T @ C @ B * detj
    k0 = 0.5 * (k0 + k0.T)
    B0 = strain_displacement(dim, np.zeros(dim), cell_size)
    u0 = _affine_unit_strain_displacements(dim, cell_size)
    return ElementMatrices(dim=dim, cell_size=cell_size,
                           poisson_ratio=poisson_ratio, k0=k0, B0=B0, u0=u0,
                           volume=cell_size**dim)


def element_dof_table(mesh: RucMesh, dof_map: DofMap) -> np.ndarray:
    """Per-element global DOF indices, (N, dofs_per_element)."""
    idx = dof_map.node_index[mesh.connectivity]  # (N, nodes_per_el)
    dim = mesh.dim
    edofs = (dim * idx[:, :, None] + np.arange(dim)[None, None, :])
    return edofs.reshape(mesh.num_elements, -1)
