"""Failure criteria: von Mises yield and critical-plane HCF criteria.

All criteria return the normalized constraint value g = measure/limit - 1,
so g = 0 sits exactly on the limit and g <= 0 means satisfied.

Cyclic stresses are affine in a single scalar sinusoid, sigma(t) =
sigma_mean + sigma_amp * sin(wt). Consequences used throughout:

* extremes of any projected component occur at sin = +-1;
* the shear path on a plane is a straight segment, so the shear amplitude
  is the norm of the amplitude components (no circumscribed-circle search);
* mean shear never enters the criteria.

The critical-plane search scans a fixed angular grid: a semicircle
theta in [0, 180) in 2D, a hemisphere (theta in [0, 90], phi in [0, 360))
in 3D.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# von Mises quadratic forms, engineering Voigt ordering
VM3 = np.array([
    [1.0, -0.5, -0.5, 0.0, 0.0, 0.0],
    [-0.5, 1.0, -0.5, 0.0, 0.0, 0.0],
    [-0.5, -0.5, 1.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 3.0, 0.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 3.0, 0.0],
    [0.0, 0.0, 0.0, 0.0, 0.0, 3.0],
])
# plane-stress reduction (sigma_zz = tau_yz = tau_xz = 0)
VM2 = np.array([
    [1.0, -0.5, 0.0],
    [-0.5, 1.0, 0.0],
    [0.0, 0.0, 3.0],
])

_CRITERIA = ("findley", "matake", "dangvan")


def _vm_matrix(d: int) -> np.ndarray:
    if d == 3:
        return VM2
    if d == 6:
        return VM3
    raise ValueError(f"Voigt length must be 3 or 6, got {d}")


def von_mises(sigma: np.ndarray) -> np.ndarray:
    """Equivalent von Mises stress for Voigt vectors (batched on leading axes)."""
    sigma = np.asarray(sigma, dtype=float)
    M = _vm_matrix(sigma.shape[-1])
    q = np.einsum("...i,ij,...j->...", sigma, M, sigma)
    return np.sqrt(np.maximum(q, 0.0))


def von_mises_g(sigma: np.ndarray, sigma_bar: float) -> np.ndarray:
    """Normalized yield constraint g = sigma_vm/sigma_bar - 1."""
    if sigma_bar <= 0:
        raise ValueError("yield stress must be positive")
    return von_mises(sigma) / sigma_bar - 1.0


@dataclass(frozen=True)
class FatigueParams:
    """Criterion parameters calibrated from the two fatigue limits (MPa)."""

    criterion: str
    alpha: float
    beta: float
    f_minus1: float
    t_minus1: float


def fatigue_params(criterion: str, f_minus1: float, t_minus1: float) -> FatigueParams:
    """Calibrate (alpha, beta) from the fully reversed bending/torsion limits.

    The ratio f-1/t-1 must lie in (1, 2) for a real-valued Findley alpha.
    """
    criterion = criterion.lower()
    if criterion not in _CRITERIA:
        raise ValueError(f"unknown fatigue criterion '{criterion}'")
    if f_minus1 <= 0 or t_minus1 <= 0:
        raise ValueError("fatigue limits must be positive")
    r = f_minus1 / t_minus1
    if not 1.0 < r < 2.0:
        raise ValueError(
            f"criterion inapplicable: f-1/t-1 = {r:.4f} must lie in (1, 2)")
    if criterion == "findley":
        root = np.sqrt(r - 1.0)
        alpha = (2.0 - r) / (2.0 * root)
        beta = f_minus1 / (2.0 * root)
    elif criterion == "matake":
        alpha = 2.0 / r - 1.0
        beta = t_minus1
    else:  # dangvan
        alpha = 3.0 / r - 1.5
        beta = t_minus1
    return FatigueParams(criterion=criterion, alpha=float(alpha),
                         beta=float(beta), f_minus1=float(f_minus1),
                         t_minus1=float(t_minus1))


@dataclass(frozen=True)
class PlaneBasis:
    """Orthonormal right-handed (n, a, b) triad of a material plane."""

    theta: float
    phi: float | None
    n: np.ndarray
    a: np.ndarray | None
    b: np.ndarray


def plane_basis(theta: float, phi: float | None = None) -> PlaneBasis:
    """Local basis from spherical angles (3D) or the in-plane angle (2D)."""
    if phi is None:
        n = np.array([np.cos(theta), np.sin(theta)])
        b = np.array([-np.sin(theta), np.cos(theta)])
        return PlaneBasis(theta=float(theta), phi=None, n=n, a=None, b=b)
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    n = np.array([st * cp, st * sp, ct])
    a = np.array([sp, -cp, 0.0])
    b = np.array([ct * cp, ct * sp, -st])
    return PlaneBasis(theta=float(theta), phi=float(phi), n=n, a=a, b=b)


def _normal_row_2d(theta: np.ndarray) -> np.ndarray:
    c2 = np.cos(2.0 * theta)
    s2 = np.sin(2.0 * theta)
    return np.stack([(1.0 + c2) / 2.0, (1.0 - c2) / 2.0, s2], axis=-1)


def _shear_row_2d(theta: np.ndarray) -> np.ndarray:
    c2 = np.cos(2.0 * theta)
    s2 = np.sin(2.0 * theta)
    return np.stack([-s2 / 2.0, s2 / 2.0, c2], axis=-1)


def _rows_3d(n: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Voigt row projecting sigma onto t . sigma . n (engineering ordering)."""
    nx, ny, nz = n[..., 0], n[..., 1], n[..., 2]
    tx, ty, tz = t[..., 0], t[..., 1], t[..., 2]
    return np.stack([
        nx * tx, ny * ty, nz * tz,
        nx * ty + tx * ny, ny * tz + ty * nz, nx * tz + tx * nz,
    ], axis=-1)


def transform_stress(sigma: np.ndarray, plane: PlaneBasis, dim: int):
    """Project a Voigt stress onto a plane.

    2D returns (sigma_n, tau); 3D returns (sigma_n, tau_na, tau_nb).
    """
    sigma = np.asarray(sigma, dtype=float)
    if dim == 2:
        nr = _normal_row_2d(np.array(plane.theta))
        tr = _shear_row_2d(np.array(plane.theta))
        return float(nr @ sigma), float(tr @ sigma)
    nr = _rows_3d(plane.n, plane.n)
    ar = _rows_3d(plane.n, plane.a)
    br = _rows_3d(plane.n, plane.b)
    return float(nr @ sigma), float(ar @ sigma), float(br @ sigma)


def plane_cycle_extremes(normal_mean, normal_amp, shear_mean, shear_amp):
    """Shear amplitude and max normal stress of an affine cycle on a plane.

    Shear components are scalars in 2D, length-2 vectors in 3D; the mean
    shear does not influence either extreme.
    """
    del shear_mean
    shear_amp = np.asarray(shear_amp, dtype=float)
    tau_a = float(np.linalg.norm(np.atleast_1d(shear_amp)))
    sigma_n_max = float(normal_mean) + abs(float(normal_amp))
    return tau_a, sigma_n_max


def trace_row(d: int) -> np.ndarray:
    """Voigt row extracting tr(sigma)/3 (sigma_zz = 0 in plane stress)."""
    row = np.zeros(d)
    row[:2 if d == 3 else 3] = 1.0 / 3.0
    return row


def hydrostatic_max(mean: np.ndarray, amp: np.ndarray) -> np.ndarray:
    """Cycle maximum of the hydrostatic stress (batched on leading axes)."""
    mean = np.asarray(mean, dtype=float)
    amp = np.asarray(amp, dtype=float)
    row = trace_row(mean.shape[-1])
    return mean @ row + np.abs(amp @ row)


@dataclass(frozen=True)
class PlaneGrid:
    """Precomputed projection rows for the critical-plane scan."""

    dim: int
    dtheta_deg: float
    thetas: np.ndarray
    phis: np.ndarray | None
    normals: np.ndarray  # (n_planes, dim) unit normals
    normal_rows: np.ndarray  # (n_planes, d)
    shear_rows_a: np.ndarray | None  # 3D only
    shear_rows_b: np.ndarray  # 2D in-plane shear row / 3D second component

    @property
    def n_planes(self) -> int:
        return self.normal_rows.shape[0]


def plane_grid(dim: int, dtheta_deg: float,
               dphi_deg: float | None = None) -> PlaneGrid:
    if dtheta_deg <= 0:
        raise ValueError("dtheta must be positive")
    if dim == 2:
        thetas = np.deg2rad(np.arange(0.0, 180.0, dtheta_deg))
        normals = np.stack([np.cos(thetas), np.sin(thetas)], axis=-1)
        return PlaneGrid(dim=2, dtheta_deg=float(dtheta_deg), thetas=thetas,
                         phis=None, normals=normals,
                         normal_rows=_normal_row_2d(thetas),
                         shear_rows_a=None, shear_rows_b=_shear_row_2d(thetas))
    if dphi_deg is None:
        dphi_deg = dtheta_deg
    th = np.deg2rad(np.arange(0.0, 90.0 + 0.5 * dtheta_deg, dtheta_deg))
    ph = np.deg2rad(np.arange(0.0, 360.0, dphi_deg))
    T, P = np.meshgrid(th, ph, indexing="ij")
    T, P = T.ravel(), P.ravel()
    st, ct = np.sin(T), np.cos(T)
    sp, cp = np.sin(P), np.cos(P)
    n = np.stack([st * cp, st * sp, ct], axis=-1)
    a = np.stack([sp, -cp, np.zeros_like(sp)], axis=-1)
    b = np.stack([ct * cp, ct * sp, -st], axis=-1)
    return PlaneGrid(dim=3, dtheta_deg=float(dtheta_deg), thetas=T, phis=P,
                     normals=n,
                     normal_rows=_rows_3d(n, n),
                     shear_rows_a=_rows_3d(n, a),
                     shear_rows_b=_rows_3d(n, b))


@dataclass
class CycleEvaluation:
    """Batched criterion evaluation with everything the adjoint needs."""

    g: np.ndarray  # (N,)
    plane_index: np.ndarray  # (N,) argmax plane (or -1 for von Mises)
    dg_dmean: np.ndarray | None  # (N, d)
    dg_damp: np.ndarray | None  # (N, d)
    # branch signature pieces (attained max/sign branches)
    signs: np.ndarray  # (N, k) integer sign markers


@dataclass
class CriticalPlaneResult:
    """Single-state critical-plane search outcome."""

    theta: float
    phi: float | None
    tau_a: float
    sigma_n_max: float
    sigma_h_max: float
    g: float


def _shear_amplitude(grid: PlaneGrid, amp: np.ndarray):
    """Per-plane shear amplitude matrix (N, n_planes) plus components."""
    if grid.dim == 2:
        tb = amp @ grid.shear_rows_b.T
        return np.abs(tb), tb, None
    ta = amp @ grid.shear_rows_a.T
    tb = amp @ grid.shear_rows_b.T
    return np.hypot(ta, tb), ta, tb


def evaluate_cycle(mean: np.ndarray, amp: np.ndarray, params: FatigueParams,
                   grid: PlaneGrid, derivatives: bool = False) -> CycleEvaluation:
    """Evaluate a fatigue criterion on batched cycles, (N, d) arrays.

    Derivatives are taken on the attained branch: the argmax plane, the
    attained sign of the normal-stress extreme and of the hydrostatic
    trace. At subgradient points (zero shear amplitude, zero normal
    amplitude) the sign factor is zero.
    """
    mean = np.atleast_2d(np.asarray(mean, dtype=float))
    amp = np.atleast_2d(np.asarray(amp, dtype=float))
    n = mean.shape[0]
    alpha, beta = params.alpha, params.beta

    tau_a, tau_comp_a, tau_comp_b = _shear_amplitude(grid, amp)
    sn_mean = mean @ grid.normal_rows.T
    sn_amp = amp @ grid.normal_rows.T
    sn_max = sn_mean + np.abs(sn_amp)

    if params.criterion == "findley":
        measure_planes = tau_a + alpha * sn_max
        idx = np.argmax(measure_planes, axis=1)
        rows = np.arange(n)
        measure = measure_planes[rows, idx]
    elif params.criterion == "matake":
        tmax = tau_a.max(axis=1)
        # tie-break: among planes attaining max tau_a, take the largest sn_max
        tie = tau_a >= (tmax[:, None] - 1e-9 * beta)
        idx = np.argmax(np.where(tie, sn_max, -np.inf), axis=1)
        rows = np.arange(n)
        measure = tau_a[rows, idx] + alpha * sn_max[rows, idx]
    else:  # dangvan
        idx = np.argmax(tau_a, axis=1)
        rows = np.arange(n)
        sh_max = hydrostatic_max(mean, amp)
        measure = tau_a[rows, idx] + alpha * sh_max
    g = measure / beta - 1.0

    # sign markers recorded only where they enter the gradient
    if params.criterion == "dangvan":
        hrow = trace_row(mean.shape[-1])
        tr_sign = np.sign(amp @ hrow).astype(np.int8)
        sn_sign = np.zeros(n, dtype=np.int8)
    else:
        sn_sign = np.sign(sn_amp[rows, idx]).astype(np.int8)
        tr_sign = np.zeros(n, dtype=np.int8)
    signs = np.column_stack([sn_sign, tr_sign])

    dg_dmean = dg_damp = None
    if derivatives:
        nrow = grid.normal_rows[idx]  # (N, d)
        if grid.dim == 2:
            tsign = np.sign(tau_comp_a[rows, idx])[:, None]
            dtau = tsign * grid.shear_rows_b[idx]
        else:
            ta = tau_comp_a[rows, idx]
            tb = tau_comp_b[rows, idx]
            norm = np.maximum(tau_a[rows, idx], 1e-300)
            dtau = (ta[:, None] * grid.shear_rows_a[idx]
                    + tb[:, None] * grid.shear_rows_b[idx]) / norm[:, None]
            dtau[tau_a[rows, idx] == 0.0] = 0.0
        if params.criterion == "dangvan":
            hrow = trace_row(mean.shape[-1])[None, :]
            dg_dmean = (alpha / beta) * np.broadcast_to(
                hrow, mean.shape).copy()
            dg_damp = dtau / beta + (alpha / beta) * tr_sign[:, None] * hrow
        else:
            dg_dmean = (alpha / beta) * nrow
            dg_damp = dtau / beta + (alpha / beta) * sn_sign[:, None] * nrow

    return CycleEvaluation(g=g, plane_index=idx, dg_dmean=dg_dmean,
                           dg_damp=dg_damp, signs=signs)


def critical_plane_g(mean, amp, params: FatigueParams, dtheta_deg: float,
                     dphi_deg: float | None = None) -> CriticalPlaneResult:
    """Critical-plane search for a single stress cycle."""
    mean = np.asarray(mean, dtype=float)
    amp = np.asarray(amp, dtype=float)
    dim = 2 if mean.shape[-1] == 3 else 3
    grid = plane_grid(dim, dtheta_deg, dphi_deg)
    ev = evaluate_cycle(mean[None, :], amp[None, :], params, grid)
    i = int(ev.plane_index[0])
    tau_a, _, _ = _shear_amplitude(grid, amp[None, :])
    sn = float((mean @ grid.normal_rows[i])
               + abs(amp @ grid.normal_rows[i]))
    return CriticalPlaneResult(
        theta=float(grid.thetas[i]),
        phi=None if grid.phis is None else float(grid.phis[i]),
        tau_a=float(tau_a[0, i]), sigma_n_max=sn,
        sigma_h_max=float(hydrostatic_max(mean[None, :], amp[None, :])[0]),
        g=float(ev.g[0]))


def von_mises_cycle(mean: np.ndarray, amp: np.ndarray, sigma_bar: float,
                    derivatives: bool = False) -> CycleEvaluation:
    """Worst-instant von Mises over a cycle (attained at sin = +-1).

    Convexity of the von Mises function puts the cycle maximum at one of
    the two extremes; the attained extreme is recorded as the branch sign.
    """
    mean = np.atleast_2d(np.asarray(mean, dtype=float))
    amp = np.atleast_2d(np.asarray(amp, dtype=float))
    vm_hi = von_mises(mean + amp)
    vm_lo = von_mises(mean - amp)
    hi = vm_hi >= vm_lo
    vm = np.where(hi, vm_hi, vm_lo)
    g = vm / sigma_bar - 1.0
    sign = np.where(hi, 1, -1).astype(np.int8)
    dg_dmean = dg_damp = None
    if derivatives:
        M = _vm_matrix(mean.shape[-1])
        sig = mean + sign[:, None] * amp
        denom = np.maximum(vm, 1e-300)[:, None] * sigma_bar
        dg_dmean = (sig @ M) / denom
        dg_dmean[vm == 0.0] = 0.0
        dg_damp = sign[:, None] * dg_dmean
    return CycleEvaluation(g=g, plane_index=np.full(mean.shape[0], -1),
                           dg_dmean=dg_dmean, dg_damp=dg_damp,
                           signs=np.column_stack([sign, np.zeros_like(sign)]))
