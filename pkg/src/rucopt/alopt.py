"""Augmented Lagrangian outer loop with an MMA inner solver.

The AL objective is

    J = c_hat + P_s/N_s + P_v + P_iso,

where c_hat is the objective normalized by its magnitude at the initial
design, P_s the stress penalty over all (load case, element) constraints
with the polynomial vanishing form h = max(s*(g^3+g), -lambda/mu), P_v the
volume penalty on sum(rho_bar*V)/(V_f*|domain|) - 1, and P_iso the isotropy
penalty (Poisson objective only). Inner iterations minimize J at fixed
multipliers with an unconstrained MMA subproblem (closed-form separable
update); the outer loop updates lambda <- lambda + mu*h and mu <- min(
alpha*mu, mu_max) and drives the Heaviside slope continuation.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import criteria, field
from .field import DesignField, FilterOperator, continuation_beta
from .homogenize import (CellSolution, Homogenizer, LoadCase, StressCycle,
                         simp_multiplier)
from .mesh import DofMap, ElementMatrices, RucMesh, constitutive_matrix


@dataclass
class ObjectiveSpec:
    """Objective id plus the normalization constant from the first evaluation."""

    kind: str  # 'bulk' | 'shear' | 'poisson'
    normalization: float | None = None

    def __post_init__(self):
        if self.kind not in ("bulk", "shear", "poisson"):
            raise ValueError(f"unknown objective '{self.kind}'")

    @property
    def needs_isotropy(self) -> bool:
        return self.kind == "poisson"


@dataclass
class OptimizerConfig:
    """Optimization parameters (defaults per the 2D setup) plus problem data."""

    objective: ObjectiveSpec = dc_field(default_factory=lambda: ObjectiveSpec("bulk"))
    volume_fraction: float = 0.6
    criterion: str = "vonmises"  # vonmises | findley | matake | dangvan | none
    load_cases: list = dc_field(default_factory=list)

    p: float = 5.0
    eps: float = 1e-9
    beta0: float = 1.0
    beta_max: float = 10.0
    eta: float = 0.5
    mu0: float = 10.0  # 100 for 3D problems
    lambda0: float = 0.0
    mu_max: float = 1e4
    alpha: float = 1.1
    filter_exponent: float = 3.5
    filter_radius_cells: float = 2.5
    delta: float = 0.005
    delta_s: float = 0.005
    move: float = 0.15
    max_outer: int = 100
    max_inner: int = 15
    dtheta_deg: float = 1.0  # 5.0 in 3D
    dphi_deg: float = 5.0

    @classmethod
    def defaults_for_dim(cls, dim: int, **kw) -> "OptimizerConfig":
        cfg = cls(**kw)
        if dim == 3:
            if "mu0" not in kw:
                cfg.mu0 = 100.0
            if "dtheta_deg" not in kw:
                cfg.dtheta_deg = 5.0
        return cfg


@dataclass
class ALState:
    """Multipliers and penalty for one outer iteration."""

    lambda_s: np.ndarray  # (N_l * N,) one multiplier per local constraint
    lambda_v: float
    lambda_iso: float
    mu: float
    k: int = 0

    @classmethod
    def initial(cls, n_stress: int, cfg: OptimizerConfig) -> "ALState":
        return cls(lambda_s=np.full(n_stress, cfg.lambda0),
                   lambda_v=cfg.lambda0, lambda_iso=cfg.lambda0, mu=cfg.mu0)


@dataclass(frozen=True)
class CellContext:
    """Mesh-level machinery shared by forward and adjoint evaluations."""

    mesh: RucMesh
    dof_map: DofMap
    elems: ElementMatrices
    hom: Homogenizer
    filt: FilterOperator
    fatigue: criteria.FatigueParams | None
    grid: criteria.PlaneGrid | None


def make_context(mesh: RucMesh, dof_map: DofMap, elems: ElementMatrices,
                 material, cfg: OptimizerConfig) -> CellContext:
    hom = Homogenizer(mesh, dof_map, elems, material)
    filt = field.build_filter(mesh, cfg.filter_radius_cells * mesh.cell_size,
                              cfg.filter_exponent, periodic=True)
    fat = None
    grid = None
    if cfg.criterion in ("findley", "matake", "dangvan"):
        fat = criteria.fatigue_params(cfg.criterion, material.bending_limit_mpa,
                                      material.torsion_limit_mpa)
        grid = criteria.plane_grid(mesh.dim, cfg.dtheta_deg, cfg.dphi_deg)
    elif cfg.criterion not in ("vonmises", "none"):
        raise ValueError(f"unknown criterion '{cfg.criterion}'")
    return CellContext(mesh=mesh, dof_map=dof_map, elems=elems, hom=hom,
                       filt=filt, fatigue=fat, grid=grid)


# -- objective -------------------------------------------------------------


def objective_scale(ctx: CellContext, spec: ObjectiveSpec) -> float:
    """Normalization constant: |objective| of the solid base material.

    A solid cell has C^H equal to the base constitutive matrix, so this is a
    fixed O(1)-izing scale. Normalizing by the initial (uniform, SIMP-gray)
    design instead inflates stiffness objectives by ~(1/V_f)^p during the
    fill phase, which breaks the penalty balance and lets the volume
    multiplier crush the design into the void SIMP-gradient dead zone.
    """
    C = constitutive_matrix(ctx.mesh.dim, ctx.hom.material.youngs_mpa,
                            ctx.hom.material.poisson)
    val = abs(objective_value(C, spec))
    return val if val > 0 else 1.0


def objective_value(C_H: np.ndarray, spec: ObjectiveSpec) -> float:
    """Raw (unnormalized) objective value from the homogenized matrix."""
    d = C_H.shape[0]
    D = 2 if d == 3 else 3
    if spec.kind == "bulk":
        return float(-np.sum(C_H[:D, :D]))
    if spec.kind == "shear":
        return float(-np.sum(np.diag(C_H)[D:]))
    if C_H[0, 0] <= 0:
        raise ValueError("degenerate design: C^H_11 <= 0 in Poisson objective")
    return float(C_H[0, 1] / C_H[0, 0])


def objective_weight_matrix(C_H: np.ndarray, spec: ObjectiveSpec) -> np.ndarray:
    """d(objective)/dC^H as a (d, d) weight matrix."""
    d = C_H.shape[0]
    D = 2 if d == 3 else 3
    W = np.zeros((d, d))
    if spec.kind == "bulk":
        W[:D, :D] = -1.0
    elif spec.kind == "shear":
        W[range(D, d), range(D, d)] = -1.0
    else:
        W[0, 1] = 1.0 / C_H[0, 0]
        W[0, 0] = -C_H[0, 1] / C_H[0, 0] ** 2
    return W


# -- penalty terms ----------------------------------------------------------


def stress_penalty(rho_bar: np.ndarray, g: np.ndarray, al: ALState,
                   p: float, eps: float):
    """Stress penalty P_s and the vanishing-constraint vector h_s.

    g has shape (N_l, N); entries clamped at -lambda/mu contribute no
    gradient (inactive constraints).
    """
    s = simp_multiplier(rho_bar, p, eps)[None, :]
    raw = s * (g**3 + g)
    lam = al.lambda_s.reshape(g.shape)
    clamp = -lam / al.mu
    h = np.maximum(raw, clamp)
    active = raw >= clamp
    P = float(np.sum(lam * h + 0.5 * al.mu * h * h))
    return P, h, active


def volume_penalty(rho_bar: np.ndarray, volume_fraction: float, al: ALState,
                   cell_volume: float, domain_volume: float):
    """Volume penalty P_v and normalized residual h_v."""
    if not 0.0 < volume_fraction <= 1.0:
        raise ValueError("volume fraction must lie in (0, 1]")
    ratio = float(np.sum(rho_bar) * cell_volume / (volume_fraction * domain_volume))
    raw = ratio - 1.0
    clamp = -al.lambda_v / al.mu
    h = max(raw, clamp)
    active = raw >= clamp
    P = al.lambda_v * h + 0.5 * al.mu * h * h
    return float(P), float(h), active


def isotropic_reference(C_H: np.ndarray) -> np.ndarray:
    """Nearest isotropic-form matrix built from the entries of C^H."""
    d = C_H.shape[0]
    iso = np.zeros((d, d))
    if d == 6:
        m_d = (C_H[0, 0] + C_H[1, 1] + C_H[2, 2]) / 3.0
        m_o = (C_H[0, 1] + C_H[0, 2] + C_H[1, 2]) / 3.0
        iso[:3, :3] = m_o
        iso[range(3), range(3)] = m_d
        iso[range(3, 6), range(3, 6)] = (m_d - m_o) / 2.0
    else:
        m_d = (C_H[0, 0] + C_H[1, 1]) / 2.0
        iso[0, 0] = iso[1, 1] = m_d
        iso[0, 1] = iso[1, 0] = C_H[0, 1]
        iso[2, 2] = (m_d - C_H[0, 1]) / 2.0
    return iso


def isotropy_misfit(C_H: np.ndarray, C_iso: np.ndarray, eps: float) -> float:
    """Entrywise squared misfit normalized by the isotropic entries."""
    return float(np.sum((C_H - C_iso) ** 2 / (C_iso + eps) ** 2))


def isotropy_penalty(C_H: np.ndarray, al: ALState, eps: float):
    """Isotropy penalty P_iso and residual h_iso (Poisson objective only)."""
    misfit = isotropy_misfit(C_H, isotropic_reference(C_H), eps)
    clamp = -al.lambda_iso / al.mu
    h = max(misfit, clamp)
    active = misfit >= clamp
    P = al.lambda_iso * h + 0.5 * al.mu * h * h
    return float(P), float(h), active, misfit


def update_multipliers(al: ALState, h_s: np.ndarray, h_v: float, h_iso: float,
                       cfg: OptimizerConfig) -> ALState:
    """Standard AL first-order multiplier update with capped penalty growth."""
    return ALState(lambda_s=al.lambda_s + al.mu * h_s.ravel(),
                   lambda_v=al.lambda_v + al.mu * h_v,
                   lambda_iso=al.lambda_iso + al.mu * h_iso,
                   mu=min(cfg.alpha * al.mu, cfg.mu_max),
                   k=al.k + 1)


# -- MMA ---------------------------------------------------------------------


@dataclass
class MmaState:
    low: np.ndarray | None = None
    upp: np.ndarray | None = None
    xold1: np.ndarray | None = None
    xold2: np.ndarray | None = None
    it: int = 0


def mma_step(x: np.ndarray, grad: np.ndarray, move: float, state: MmaState,
             asy_init: float = 0.5, asy_incr: float = 1.2,
             asy_decr: float = 0.7) -> np.ndarray:
    """One MMA update for the unconstrained AL subproblem on [0, 1]^N.

    All constraints live inside the objective, so the separable convex
    subproblem min sum_j p_j/(U_j - x_j) + q_j/(x_j - L_j) has the
    closed-form minimizer x = (L sqrt(p) + U sqrt(q)) / (sqrt(p) + sqrt(q)),
    clamped to the move limits and asymptote margins.
    """
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient passed to MMA step")
    n = x.size
    if state.it < 2:
        low = x - asy_init
        upp = x + asy_init
    else:
        osc = (x - state.xold1) * (state.xold1 - state.xold2)
        fac = np.ones(n)
        fac[osc > 0] = asy_incr
        fac[osc < 0] = asy_decr
        low = x - fac * (state.xold1 - state.low)
        upp = x + fac * (state.upp - state.xold1)
        low = np.clip(low, x - 10.0, x - 1e-4)
        upp = np.clip(upp, x + 1e-4, x + 10.0)

    lo_bound = np.maximum.reduce([np.zeros(n), low + 0.1 * (x - low), x - move])
    hi_bound = np.minimum.reduce([np.ones(n), upp - 0.1 * (upp - x), x + move])

    raa0 = 1e-5
    gp = np.maximum(grad, 0.0)
    gq = np.maximum(-grad, 0.0)
    p = (upp - x) ** 2 * (1.001 * gp + 0.001 * gq + raa0)
    q = (x - low) ** 2 * (0.001 * gp + 1.001 * gq + raa0)
    sp, sq = np.sqrt(p), np.sqrt(q)
    x_new = (low * sp + upp * sq) / (sp + sq)
    x_new = np.clip(x_new, lo_bound, hi_bound)

    state.xold2 = state.xold1
    state.xold1 = x.copy()
    state.low, state.upp = low, upp
    state.it += 1
    return x_new


# -- forward evaluation ------------------------------------------------------


@dataclass
class FEState:
    """Design-dependent FE quantities (independent of the multipliers)."""

    s: np.ndarray
    K: object
    cell: CellSolution
    E: np.ndarray  # (N, d_el, d)
    Q: np.ndarray  # (N, d, d)
    C_H: np.ndarray  # (d, d) MPa
    cycles: list  # StressCycle per load case


@dataclass
class ForwardState:
    """One complete evaluation of the AL function at a design."""

    design: DesignField
    fe: FEState
    evals: list  # CycleEvaluation per load case (empty if criterion 'none')
    g: np.ndarray  # (N_l, N)
    h_s: np.ndarray
    active_s: np.ndarray
    P_s: float
    h_v: float
    active_v: bool
    P_v: float
    h_iso: float
    active_iso: bool
    P_iso: float
    misfit: float
    c_raw: float
    c_norm: float
    J: float

    def branch_signature(self) -> tuple:
        parts = [self.active_s.copy(), np.bool_(self.active_v),
                 np.bool_(self.active_iso)]
        for ev in self.evals:
            parts.append(ev.plane_index.copy())
            parts.append(ev.signs.copy())
        return tuple(parts)

    def max_g_material(self, threshold: float = 0.5) -> float:
        """Largest raw g over material elements (rho_bar >= threshold).

        Raw g on void elements is meaningless under the qp-style relaxation,
        so feasibility and reporting are evaluated on material elements.
        """
        if self.g.size == 0:
            return -np.inf
        mask = self.design.rho_bar >= threshold
        if not mask.any():
            return float(self.g.max())
        return float(self.g[:, mask].max())

    @property
    def volume_fraction(self) -> float:
        return float(self.design.rho_bar.mean())


def signatures_equal(a: tuple, b: tuple) -> bool:
    return len(a) == len(b) and all(
        np.array_equal(x, y) for x, y in zip(a, b))


def evaluate_design(ctx: CellContext, cfg: OptimizerConfig, al: ALState,
                    rho: np.ndarray, beta: float, c0: float | None,
                    fe: FEState | None = None) -> ForwardState:
    """Evaluate the AL function; reuses FE state when only multipliers moved."""
    design = DesignField.compute(rho, ctx.filt, beta, cfg.eta)
    if fe is None:
        s = simp_multiplier(design.rho_bar, cfg.p, cfg.eps)
        K = ctx.hom.assemble_stiffness(s)
        cell = ctx.hom.solve_unit_cells(K, s)
        E = ctx.hom.effective_fields(cell)
        Q = ctx.hom.element_energy_tensors(E)
        C_H = ctx.hom.homogenized_matrix(s, Q).C
        cycles = [ctx.hom.element_stress_cycle(E, lc) for lc in cfg.load_cases]
        fe = FEState(s=s, K=K, cell=cell, E=E, Q=Q, C_H=C_H, cycles=cycles)

    n = ctx.mesh.num_elements
    evals = []
    if cfg.criterion == "none" or not cfg.load_cases:
        g = np.zeros((0, n))
    else:
        for cyc in fe.cycles:
            if cfg.criterion == "vonmises":
                ev = criteria.von_mises_cycle(cyc.mean, cyc.amp,
                                              ctx.hom.material.yield_mpa,
                                              derivatives=True)
            else:
                ev = criteria.evaluate_cycle(cyc.mean, cyc.amp, ctx.fatigue,
                                             ctx.grid, derivatives=True)
            evals.append(ev)
        g = np.stack([ev.g for ev in evals], axis=0)

    if g.size:
        P_s, h_s, active_s = stress_penalty(design.rho_bar, g, al, cfg.p, cfg.eps)
    else:
        P_s, h_s, active_s = 0.0, np.zeros((0, n)), np.zeros((0, n), dtype=bool)

    P_v, h_v, active_v = volume_penalty(design.rho_bar, cfg.volume_fraction,
                                        al, ctx.mesh.cell_volume,
                                        ctx.mesh.domain_volume)
    if cfg.objective.needs_isotropy:
        P_iso, h_iso, active_iso, misfit = isotropy_penalty(fe.C_H, al, cfg.eps)
    else:
        P_iso, h_iso, active_iso, misfit = 0.0, 0.0, False, 0.0

    c_raw = objective_value(fe.C_H, cfg.objective)
    if c0 is None:
        c0 = abs(c_raw) if abs(c_raw) > 0 else 1.0
    c_norm = c_raw / c0
    n_s = max(g.size, 1)
    J = c_norm + P_s / n_s + P_v + P_iso
    return ForwardState(design=design, fe=fe, evals=evals, g=g, h_s=h_s,
                        active_s=active_s, P_s=P_s, h_v=h_v, active_v=active_v,
                        P_v=P_v, h_iso=h_iso, active_iso=active_iso,
                        P_iso=P_iso, misfit=misfit, c_raw=c_raw, c_norm=c_norm,
                        J=float(J))


# -- run loop ----------------------------------------------------------------


def initial_design(mesh: RucMesh, volume_fraction: float) -> np.ndarray:
    """Uniform field at V_f with a soft centered low-density nucleus.

    A perfectly uniform field has zero fluctuation displacement and hence no
    stress-driven gradient signal; the nucleus breaks that degeneracy
    deterministically. Mass is rebalanced to hit V_f.
    """
    c = mesh.centroids()
    r = np.linalg.norm(c - 0.5 * mesh.side_mm, axis=1)
    radius = 0.25 * mesh.side_mm
    ramp = np.clip((radius - r) / mesh.cell_size, 0.0, 1.0)
    w = 0.5 - 0.5 * np.cos(np.pi * ramp)
    rho = np.full(mesh.num_elements, volume_fraction)
    rho -= w * (0.5 * volume_fraction)
    rho += volume_fraction - rho.mean()
    return np.clip(rho, 0.0, 1.0)


@dataclass
class HistoryRow:
    iter: int
    outer: int
    objective: float
    normalized_objective: float
    max_g: float
    volume_fraction: float
    mu: float
    beta: float
    dmax: float
    J: float


@dataclass
class OptimizationResult:
    rho: np.ndarray
    state: ForwardState
    history: list
    converged: bool
    outer_iters: int
    inner_iters: int
    al: ALState
    monotonic_fraction: float

    @property
    def design(self) -> DesignField:
        return self.state.design


def feasible(state: ForwardState, cfg: OptimizerConfig) -> bool:
    vol_ok = abs(state.volume_fraction / cfg.volume_fraction - 1.0) <= cfg.delta_s
    stress_ok = (state.g.size == 0
                 or state.max_g_material() <= cfg.delta_s)
    iso_ok = (not cfg.objective.needs_isotropy) or state.misfit <= cfg.delta_s
    return vol_ok and stress_ok and iso_ok


def run_optimization(ctx: CellContext, cfg: OptimizerConfig,
                     rho0: np.ndarray | None = None,
                     log=None) -> OptimizationResult:
    """Nested AL loop; returns the best iterate flagged by convergence."""
    from . import adjoint  # deferred: adjoint imports this module's types

    rho = initial_design(ctx.mesh, cfg.volume_fraction) if rho0 is None \
        else np.asarray(rho0, dtype=float).copy()
    n = ctx.mesh.num_elements
    n_l = len(cfg.load_cases) if cfg.criterion != "none" else 0
    al = ALState.initial(n_l * n, cfg)
    beta = cfg.beta0

    c0 = objective_scale(ctx, cfg.objective)
    cfg.objective.normalization = c0
    state = evaluate_design(ctx, cfg, al, rho, beta, c0)

    mma = MmaState()
    history: list[HistoryRow] = []
    it = 0
    dmax = np.inf
    converged = False
    decreases = 0
    steps = 0
    k = 0
    for k in range(1, cfg.max_outer + 1):
        J_prev = state.J
        for _ in range(cfg.max_inner):
            grad = adjoint.total_gradient(ctx, cfg, al, state, c0).total
            rho_new = mma_step(rho, grad, cfg.move, mma)
            dmax = float(np.max(np.abs(rho_new - rho)))
            rho = rho_new
            state = evaluate_design(ctx, cfg, al, rho, beta, c0)
            it += 1
            steps += 1
            if state.J <= J_prev + 1e-12:
                decreases += 1
            J_prev = state.J
            history.append(HistoryRow(
                iter=it, outer=k, objective=state.c_raw,
                normalized_objective=state.c_norm,
                max_g=state.max_g_material(), volume_fraction=state.volume_fraction,
                mu=al.mu, beta=beta, dmax=dmax, J=state.J))
            if log is not None:
                log(history[-1])
            if dmax < cfg.delta:
                break
        # termination only once the projection continuation has settled:
        # beta bumps change rho_bar discontinuously, so stopping earlier
        # would freeze a design the schedule was still about to sharpen
        if dmax < cfg.delta and beta >= cfg.beta_max and feasible(state, cfg):
            converged = True
            break
        al = update_multipliers(al, state.h_s, state.h_v, state.h_iso, cfg)
        new_beta = continuation_beta(cfg.beta0, cfg.beta_max, k)
        if new_beta != beta:
            beta = new_beta
            state = evaluate_design(ctx, cfg, al, rho, beta, c0)
        else:
            state = evaluate_design(ctx, cfg, al, rho, beta, c0, fe=state.fe)

    mono = decreases / steps if steps else 1.0
    return OptimizationResult(rho=rho, state=state, history=history,
                              converged=converged, outer_iters=k,
                              inner_iters=it, al=al, monotonic_fraction=mono)


def clone_config(cfg: OptimizerConfig, **overrides) -> OptimizerConfig:
    new = copy.deepcopy(cfg)
    for key, val in overrides.items():
        if not hasattr(new, key):
            raise AttributeError(f"unknown config field '{key}'")
        setattr(new, key, val)
    return new
