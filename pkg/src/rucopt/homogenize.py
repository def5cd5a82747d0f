"""Unit-cell FE problems: assembly, unit-strain solves, C^H and stresses.

The cell is loaded by the d unit test strains (identity columns in Voigt
form). With affine nodal fields u0 per unit strain, the element load is
s_I * k0 @ u0 and the homogenized stiffness is the energy form

    C^H_ij = (E / V) * sum_I s_I (u0_i - u_i)^T k0 (u0_j - u_j),

with s_I = eps + (1 - eps) rho_bar_I^p the SIMP multiplier. Element stress
is recovered at the centroid with the SOLID constitutive matrix; the SIMP
multiplier relaxes the constraint, not the stress.

After periodic elimination the operator keeps `dim` rigid translations;
they are removed by anchoring every DOF of the first master node, which
leaves C^H unchanged (fluctuations are translation invariant).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import (DofMap, ElementMatrices, RucMesh, constitutive_matrix,
                   element_dof_table)


@dataclass(frozen=True)
class Material:
    """Base solid material; moduli stored in MPa."""

    youngs_mpa: float
    poisson: float
    yield_mpa: float
    bending_limit_mpa: float
    torsion_limit_mpa: float

    @classmethod
    def ti6al4v(cls) -> "Material":
        # additively manufactured Ti-6Al-4V
        return cls(youngs_mpa=108.8e3, poisson=0.29, yield_mpa=972.0,
                   bending_limit_mpa=454.0, torsion_limit_mpa=300.0)


@dataclass(frozen=True)
class LoadCase:
    """Applied macroscopic strain, static or single-sinusoid cyclic.

    The response is linear and the time profile a single scalar sinusoid,
    so a cycle is represented exactly by its (mean, amplitude) strain pair;
    extremes occur at sin = +-1. Static cases carry a zero amplitude.
    """

    mean: np.ndarray
    amplitude: np.ndarray
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "amplitude",
                           np.asarray(self.amplitude, dtype=float))
        if self.mean.shape != self.amplitude.shape:
            raise ValueError("mean and amplitude strain shapes differ")
        if not (np.any(self.mean) or np.any(self.amplitude)):
            raise ValueError("load case needs at least one nonzero component")

    @property
    def is_static(self) -> bool:
        return not np.any(self.amplitude)

    @classmethod
    def static(cls, strain, label: str = "") -> "LoadCase":
        strain = np.asarray(strain, dtype=float)
        return cls(mean=strain, amplitude=np.zeros_like(strain), label=label)

    @classmethod
    def sinusoid(cls, mean, amplitude, label: str = "") -> "LoadCase":
        return cls(mean=np.asarray(mean, dtype=float),
                   amplitude=np.asarray(amplitude, dtype=float), label=label)


@dataclass
class StressCycle:
    """Per-element mean/amplitude Cauchy stress vectors (MPa), (N, d)."""

    mean: np.ndarray
    amp: np.ndarray


@dataclass(frozen=True)
class HomogenizedTensor:
    """Effective constitutive matrix C^H, (d, d) in MPa."""

    C: np.ndarray
    dim: int


@dataclass
class CellSolution:
    """Unit-strain displacement fields and a reusable solver handle."""

    u: np.ndarray  # (num_dofs, d)
    solve: Callable[[np.ndarray], np.ndarray]
    residuals: np.ndarray = dc_field(default_factory=lambda: np.zeros(0))


class SolverError(RuntimeError):
    pass


def simp_multiplier(rho_bar: np.ndarray, p: float, eps: float) -> np.ndarray:
    return eps + (1.0 - eps) * np.asarray(rho_bar, dtype=float) ** p


class Homogenizer:
    """Precomputed workspace for repeated solves on one mesh."""

    def __init__(self, mesh: RucMesh, dof_map: DofMap, elems: ElementMatrices,
                 material: Material):
        if elems.dim != mesh.dim:
            raise ValueError("element matrices do not match mesh dimension")
        self.mesh = mesh
        self.dof_map = dof_map
        self.elems = elems
        self.material = material
        self.voigt = elems.voigt_dim

        self.edofs = element_dof_table(mesh, dof_map)
        d_el = elems.dofs_per_element
        rows = np.repeat(self.edofs, d_el, axis=1).ravel()
        cols = np.tile(self.edofs, (1, d_el)).ravel()
        self._rows, self._cols = rows, cols
        self._k0_flat = elems.k0.ravel()

        # anchor all DOFs of the first master node to kill rigid translations
        self.anchor = np.arange(mesh.dim)
        mask = np.isin(rows, self.anchor) | np.isin(cols, self.anchor)
        self._anchor_mask = mask
        self._num_dofs = dof_map.num_dofs

        # per-unit-strain element load pattern (solid element)
        self._f0 = elems.k0 @ elems.u0  # (d_el, d)
        self._S0 = constitutive_matrix(mesh.dim, material.youngs_mpa,
                                       material.poisson) @ elems.B0

    # -- assembly ---------------------------------------------------------

    def assemble_stiffness(self, s: np.ndarray, anchored: bool = True):
        """Global stiffness for SIMP multipliers s, mapped through the DOF map."""
        data = (self.material.youngs_mpa * s)[:, None] * self._k0_flat[None, :]
        data = data.ravel()
        if anchored:
            data = np.where(self._anchor_mask, 0.0, data)
        K = sp.coo_matrix((data, (self._rows, self._cols)),
                          shape=(self._num_dofs, self._num_dofs)).tocsc()
        if anchored:
            K += sp.diags(np.isin(np.arange(self._num_dofs), self.anchor)
                          .astype(float), format="csc")
        return K

    def load_vectors(self, s: np.ndarray) -> np.ndarray:
        """Unit-strain load vectors F, (num_dofs, d)."""
        contrib = (self.material.youngs_mpa * s)[:, None, None] * self._f0[None, :, :]
        F = np.zeros((self._num_dofs, self.voigt))
        for j in range(self.voigt):
            np.add.at(F[:, j], self.edofs.ravel(), contrib[:, :, j].ravel())
        F[self.anchor, :] = 0.0
        return F

    # -- solving ----------------------------------------------------------

    def make_solver(self, K) -> Callable[[np.ndarray], np.ndarray]:
        """Factorize (2D) or set up preconditioned CG (3D); returns solve(b)."""
        if self.mesh.dim == 2:
            try:
                lu = spla.splu(K)
            except RuntimeError as exc:
                raise SolverError(f"stiffness factorization failed: {exc}") from exc
            return lu.solve
        diag = K.diagonal()
        if np.any(diag <= 0):
            raise SolverError("non-positive diagonal in assembled stiffness")
        M = spla.LinearOperator(K.shape, matvec=lambda x: x / diag)
        maxiter = 10 * self.mesh.num_elements

        def solve(b):
            if not np.any(b):
                return np.zeros_like(b)
            x, info = spla.cg(K, b, rtol=1e-10, atol=0.0, maxiter=maxiter, M=M)
            if info != 0:
                res = np.linalg.norm(K @ x - b) / np.linalg.norm(b)
                raise SolverError(
                    f"CG failed to converge (info={info}, rel residual {res:.3e})")
            return x

        return solve

    def solve_unit_cells(self, K, s: np.ndarray) -> CellSolution:
        """Solve the d unit-strain cell problems sharing one factorization."""
        F = self.load_vectors(s)
        solve = self.make_solver(K)
        u = np.zeros_like(F)
        res = np.zeros(self.voigt)
        for j in range(self.voigt):
            u[:, j] = solve(F[:, j])
            fn = np.linalg.norm(F[:, j])
            res[j] = (np.linalg.norm(K @ u[:, j] - F[:, j]) / fn) if fn > 0 else 0.0
        if np.any(res > 1e-9):
            raise SolverError(f"unit-cell solve residuals too large: {res}")
        return CellSolution(u=u, solve=solve, residuals=res)

    # -- homogenized quantities --------------------------------------------

    def effective_fields(self, cell: CellSolution) -> np.ndarray:
        """Element-level (u0 - u) per unit strain, (N, d_el, d)."""
        return self.elems.u0[None, :, :] - cell.u[self.edofs]

    def element_energy_tensors(self, E: np.ndarray) -> np.ndarray:
        """Per-element mutual energies (E^T k0 E) in MPa units, (N, d, d)."""
        kE = np.einsum("ab,ebj->eaj", self.elems.k0, E)
        Q = np.einsum("eai,eaj->eij", E, kE)
        return (self.material.youngs_mpa / self.mesh.domain_volume) * Q

    def homogenized_matrix(self, s: np.ndarray, Q: np.ndarray) -> HomogenizedTensor:
        C = np.einsum("e,eij->ij", s, Q)
        return HomogenizedTensor(C=0.5 * (C + C.T), dim=self.mesh.dim)

    @property
    def stress_operator(self) -> np.ndarray:
        """Centroid stress recovery C_solid @ B0, (d, d_el) in MPa."""
        return self._S0

    def element_stress(self, E: np.ndarray, applied: np.ndarray) -> np.ndarray:
        """Centroid stresses for an applied macro strain vector, (N, d) MPa."""
        Ea = np.einsum("eaj,j->ea", E, applied)  # effective element dofs
        return Ea @ self._S0.T

    def element_stress_cycle(self, E: np.ndarray, case: LoadCase) -> StressCycle:
        mean = self.element_stress(E, case.mean)
        if case.is_static:
            amp = np.zeros_like(mean)
        else:
            amp = self.element_stress(E, case.amplitude)
        return StressCycle(mean=mean, amp=amp)
