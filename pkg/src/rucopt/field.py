"""Design variable chain: raw densities -> filtered -> projected.

The filter is the polynomial kernel L_IJ = max(0, 1 - d_IJ/R)^s with a
density-weighted normalization, so the filtered field is

    rho_tilde_I = sum_J L_IJ rho_J^2 / sum_K L_IK rho_K,

a convex combination of neighborhood densities (weights L_IJ rho_J). The
normalization makes the operator nonlinear in rho; its exact Jacobian
(quotient rule) is used in the reverse chain. Distances wrap around the
cell so filtered designs stay tileable.

Projection is the tanh Heaviside with threshold eta and slope beta; beta = 0
is handled as the analytic identity limit.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import RucMesh

_DEN_GUARD = 1e-12


@dataclass(frozen=True)
class FilterOperator:
    """Sparse polynomial filter kernel with density-weighted application."""

    L: sp.csr_matrix  # (N, N) kernel weights, zero beyond the radius
    radius: float
    exponent: float
    periodic: bool

    def apply(self, rho: np.ndarray) -> np.ndarray:
        num = self.L @ (rho * rho)
        den = self.L @ rho + _DEN_GUARD
        return num / den

    def backprop(self, rho: np.ndarray, dJ_drho_tilde: np.ndarray) -> np.ndarray:
        """Exact Jacobian-transpose product of the density-weighted filter."""
        den = self.L @ rho + _DEN_GUARD
        rho_t = (self.L @ (rho * rho)) / den
        w = dJ_drho_tilde / den
        # d rho_tilde_I / d rho_m = L_Im (2 rho_m - rho_tilde_I) / den_I
        return 2.0 * rho * (self.L.T @ w) - self.L.T @ (rho_t * w)


@dataclass(frozen=True)
class DesignField:
    """Snapshot of the rho -> rho_tilde -> rho_bar chain."""

    rho: np.ndarray
    rho_tilde: np.ndarray
    rho_bar: np.ndarray
    beta: float
    eta: float
    filt: FilterOperator

    @classmethod
    def compute(cls, rho: np.ndarray, filt: FilterOperator, beta: float,
                eta: float) -> "DesignField":
        rho_tilde = filt.apply(rho)
        rho_bar = project(rho_tilde, beta, eta)
        return cls(rho=rho, rho_tilde=rho_tilde, rho_bar=rho_bar, beta=beta,
                   eta=eta, filt=filt)

    def projection_slope(self) -> np.ndarray:
        return project_slope(self.rho_tilde, self.beta, self.eta)


def build_filter(mesh: RucMesh, radius: float, exponent: float,
                 periodic: bool = True) -> FilterOperator:
    """Assemble the polynomial filter kernel on the voxel grid.

    The kernel depends only on the centroid offset, so it is built per
    offset and replicated with (optionally wrapped) index arithmetic.
    """
    if radius <= 0:
        raise ValueError("filter radius must be positive")
    if exponent < 1:
        raise ValueError("filter exponent must be >= 1")
    cell = mesh.cell_size
    if radius < cell:
        warnings.warn(
            f"filter radius {radius:g} mm is below one cell ({cell:g} mm); "
            "the filter degenerates to the identity", stacklevel=2)

    res = mesh.resolution
    n = mesh.num_elements
    reach = int(np.floor(radius / cell))
    offsets = np.stack(np.meshgrid(
        *([np.arange(-reach, reach + 1)] * mesh.dim), indexing="ij"),
        axis=-1).reshape(-1, mesh.dim)
    dist = np.linalg.norm(offsets * cell, axis=1)
    keep = dist < radius
    offsets, dist = offsets[keep], dist[keep]
    weights = np.maximum(0.0, 1.0 - dist / radius) ** exponent

    idx = np.arange(n)
    coords = np.empty((n, mesh.dim), dtype=np.int64)
    rem = idx
    for ax, nax in enumerate(res):
        coords[:, ax] = rem % nax
        rem = rem // nax

    rows, cols, vals = [], [], []
    strides = np.cumprod((1,) + res[:-1])
    for off, w in zip(offsets, weights):
        if periodic:
            nb = (coords + off) % np.asarray(res)
        else:
            nb = coords + off
            inside = np.all((nb >= 0) & (nb < np.asarray(res)), axis=1)
            if not inside.all():
                rows.append(idx[inside])
                cols.append((nb[inside] @ strides))
                vals.append(np.full(int(inside.sum()), w))
                continue
        rows.append(idx)
        cols.append(nb @ strides)
        vals.append(np.full(n, w))
    L = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n))
    L.sum_duplicates()
    return FilterOperator(L=L, radius=float(radius), exponent=float(exponent),
                          periodic=periodic)


def project(rho_tilde: np.ndarray, beta: float, eta: float) -> np.ndarray:
    """Tanh Heaviside projection; monotone, fixes 0 and 1."""
    if beta < 0:
        raise ValueError("projection slope beta must be >= 0")
    if not 0.0 < eta < 1.0:
        raise ValueError("projection threshold eta must lie in (0, 1)")
    if beta < 1e-12:
        return np.asarray(rho_tilde, dtype=float).copy()
    den = np.tanh(beta * eta) + np.tanh(beta * (1.0 - eta))
    return (np.tanh(beta * eta) + np.tanh(beta * (rho_tilde - eta))) / den


def project_slope(rho_tilde: np.ndarray, beta: float, eta: float) -> np.ndarray:
    """d rho_bar / d rho_tilde of the tanh projection."""
    if beta < 1e-12:
        return np.ones_like(np.asarray(rho_tilde, dtype=float))
    den = np.tanh(beta * eta) + np.tanh(beta * (1.0 - eta))
    t = np.tanh(beta * (rho_tilde - eta))
    return beta * (1.0 - t * t) / den


def backprop_chain(dJ_drho_bar: np.ndarray, field: DesignField) -> np.ndarray:
    """Reverse-mode chain rho_bar -> rho_tilde -> rho.

    dJ/drho = filter_jacobian^T ( projection_slope * dJ/drho_bar ).
    """
    dJ_drho_tilde = field.projection_slope() * dJ_drho_bar
    return field.filt.backprop(field.rho, dJ_drho_tilde)


def continuation_beta(beta0: float, beta_max: float, outer_iter: int,
                      period: int = 5) -> float:
    """Projection slope after `outer_iter` completed AL steps (1 step per period)."""
    return float(min(beta_max, beta0 + (max(outer_iter, 0) // period)))
