"""Adjoint gradients of the AL function and an FD verification harness.

The homogenized-matrix sensitivity is self-adjoint: with the element
mutual-energy tensors Q_e = (E/V) (u0-u)^T k0 (u0-u) the total derivative is
dC^H_ij / drho_bar_e = s'_e Q_e,ij, no extra solves. The stress penalty
needs one adjoint solve per independent load vector: a static case or a
zero-mean cycle carries one (its mean or amplitude field), a cycle with
both mean and amplitude carries two. The adjoint shares the stiffness
factorization with the forward solve.

Gradients are assembled with respect to rho_bar per term, then pushed
through the projection/filter chain, so the per-term decomposition sums to
the total by construction.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import field
from .alopt import (ALState, CellContext, ForwardState, OptimizerConfig,
                    evaluate_design, isotropic_reference, objective_scale,
                    objective_weight_matrix)


def simp_slope(rho_bar: np.ndarray, p: float, eps: float) -> np.ndarray:
    return p * (1.0 - eps) * np.asarray(rho_bar, dtype=float) ** (p - 1.0)


@dataclass
class GradientBundle:
    """Total dJ/drho and its per-term decomposition (already chained)."""

    total: np.ndarray
    parts: dict[str, np.ndarray]
    adjoints: list = dc_field(default_factory=list)
    num_adjoint_solves: int = 0


def ch_weighted_gradient(state: ForwardState, W: np.ndarray,
                         slope: np.ndarray) -> np.ndarray:
    """d(sum_ij W_ij C^H_ij)/drho_bar via the self-adjoint form."""
    return slope * np.einsum("ij,eij->e", W, state.fe.Q)


def objective_gradient(ctx: CellContext, cfg: OptimizerConfig,
                       state: ForwardState, c0: float) -> np.ndarray:
    """Normalized objective gradient w.r.t. rho_bar."""
    W = objective_weight_matrix(state.fe.C_H, cfg.objective)
    slope = simp_slope(state.design.rho_bar, cfg.p, cfg.eps)
    return ch_weighted_gradient(state, W, slope) / c0


def volume_gradient(ctx: CellContext, cfg: OptimizerConfig, al: ALState,
                    state: ForwardState) -> np.ndarray:
    n = ctx.mesh.num_elements
    if not state.active_v:
        return np.zeros(n)
    dh = ctx.mesh.cell_volume / (cfg.volume_fraction * ctx.mesh.domain_volume)
    return np.full(n, (al.lambda_v + al.mu * state.h_v) * dh)


def _iso_construction_matrix(d: int) -> np.ndarray:
    """Linear map S with vec(C_iso) = S vec(C_H) (upper-entry sources)."""
    S = np.zeros((d * d, d * d))

    def put(ti, tj, si, sj, w):
        S[ti * d + tj, si * d + sj] += w

    if d == 6:
        diag_src = [(0, 0), (1, 1), (2, 2)]
        off_src = [(0, 1), (0, 2), (1, 2)]
        for i in range(3):
            for (si, sj) in diag_src:
                put(i, i, si, sj, 1.0 / 3.0)
        for (ti, tj) in [(0, 1), (0, 2), (1, 2), (1, 0), (2, 0), (2, 1)]:
            for (si, sj) in off_src:
                put(ti, tj, si, sj, 1.0 / 3.0)
        for i in range(3, 6):
            for (si, sj) in diag_src:
                put(i, i, si, sj, 1.0 / 6.0)
            for (si, sj) in off_src:
                put(i, i, si, sj, -1.0 / 6.0)
    else:
        for i in range(2):
            put(i, i, 0, 0, 0.5)
            put(i, i, 1, 1, 0.5)
        put(0, 1, 0, 1, 1.0)
        put(1, 0, 0, 1, 1.0)
        put(2, 2, 0, 0, 0.25)
        put(2, 2, 1, 1, 0.25)
        put(2, 2, 0, 1, -0.5)
    return S


def isotropy_misfit_weights(C_H: np.ndarray, eps: float) -> np.ndarray:
    """d(misfit)/dC^H accounting for the reference construction."""
    d = C_H.shape[0]
    S = _iso_construction_matrix(d)
    C_iso = isotropic_reference(C_H)
    D = C_H - C_iso
    Nm = C_iso + eps
    a = (2.0 * D / Nm**2).ravel()
    b = (-2.0 * D**2 / Nm**3).ravel()
    W = (np.eye(d * d) - S).T @ a + S.T @ b
    return W.reshape(d, d)


def isotropy_gradient(ctx: CellContext, cfg: OptimizerConfig, al: ALState,
                      state: ForwardState) -> np.ndarray:
    n = ctx.mesh.num_elements
    if not cfg.objective.needs_isotropy or not state.active_iso:
        return np.zeros(n)
    W = isotropy_misfit_weights(state.fe.C_H, cfg.eps)
    slope = simp_slope(state.design.rho_bar, cfg.p, cfg.eps)
    dmis = ch_weighted_gradient(state, W, slope)
    return (al.lambda_iso + al.mu * state.h_iso) * dmis


def stress_penalty_gradient(ctx: CellContext, cfg: OptimizerConfig,
                            al: ALState, state: ForwardState):
    """Stress-penalty gradient w.r.t. rho_bar (explicit + adjoint terms).

    Clamped constraints contribute nothing. Returns the gradient, the
    adjoint vectors and the number of adjoint solves performed.
    """
    n = ctx.mesh.num_elements
    grad = np.zeros(n)
    if state.g.size == 0:
        return grad, [], 0

    rho_bar = state.design.rho_bar
    s_mult = state.fe.s
    s_prime = simp_slope(rho_bar, cfg.p, cfg.eps)
    n_s = state.g.size
    lam = al.lambda_s.reshape(state.g.shape)
    weight = np.where(state.active_s, (lam + al.mu * state.h_s) / n_s, 0.0)

    # explicit SIMP-multiplier dependence of h
    g = state.g
    grad += np.einsum("le,le->e", weight, g**3 + g) * s_prime

    S0 = ctx.hom.stress_operator  # (d, d_el)
    k0 = ctx.elems.k0
    edofs = ctx.hom.edofs
    adjoints = []
    solves = 0
    for l, (case, ev) in enumerate(zip(cfg.load_cases, state.evals)):
        chain = weight[l] * s_mult * (3.0 * g[l] ** 2 + 1.0)  # dPhi/dg factor
        for applied, dg_dsigma in ((case.mean, ev.dg_dmean),
                                   (case.amplitude, ev.dg_damp)):
            if not np.any(applied):
                continue
            q = chain[:, None] * dg_dsigma  # (N, d) dPhi/dsigma
            rhs = np.zeros(ctx.dof_map.num_dofs)
            np.add.at(rhs, edofs.ravel(), (-(q @ S0)).ravel())
            rhs[ctx.hom.anchor] = 0.0
            eta = -state.fe.cell.solve(rhs)
            solves += 1
            adjoints.append(eta)
            Ea = np.einsum("eaj,j->ea", state.fe.E, applied)
            imp = -np.einsum("ea,ab,eb->e", eta[edofs], k0, Ea)
            grad += ctx.hom.material.youngs_mpa * s_prime * imp
    return grad, adjoints, solves


def total_gradient(ctx: CellContext, cfg: OptimizerConfig, al: ALState,
                   state: ForwardState, c0: float) -> GradientBundle:
    """Assemble dJ/drho: per-term rho_bar gradients pushed through the chain."""
    parts_bar = {
        "objective": objective_gradient(ctx, cfg, state, c0),
        "volume": volume_gradient(ctx, cfg, al, state),
        "isotropy": isotropy_gradient(ctx, cfg, al, state),
    }
    sgrad, adjoints, solves = stress_penalty_gradient(ctx, cfg, al, state)
    parts_bar["stress"] = sgrad

    parts = {name: field.backprop_chain(g_bar, state.design)
             for name, g_bar in parts_bar.items()}
    total = field.backprop_chain(sum(parts_bar.values()), state.design)
    return GradientBundle(total=total, parts=parts, adjoints=adjoints,
                          num_adjoint_solves=solves)


# -- finite difference harness ----------------------------------------------


def detect_branch_switch(ctx: CellContext, cfg: OptimizerConfig,
                         a: ForwardState, b: ForwardState) -> bool:
    """True when a max/clamp branch genuinely switches between two states.

    Clamp-mask and attained-sign changes always count. Critical-plane
    argmax moves count only when the criterion's derivative rows change
    materially: dithering between neighboring planes at a flat maximum, or
    a hop to the equivalent plane 90 degrees away (same shear system), does
    not affect the subgradient and is not a switch.
    """
    if not np.array_equal(a.active_s, b.active_s):
        return True
    if a.active_v != b.active_v or a.active_iso != b.active_iso:
        return True
    if ctx.fatigue is not None:
        limit = ctx.fatigue.beta
        row_tol = max(0.35, 4.0 * np.deg2rad(ctx.grid.dtheta_deg)) / limit
    else:
        row_tol = 0.35 / ctx.hom.material.yield_mpa
    for ev_a, ev_b in zip(a.evals, b.evals):
        if not np.array_equal(ev_a.signs, ev_b.signs):
            return True
        for ra, rb in ((ev_a.dg_dmean, ev_b.dg_dmean),
                       (ev_a.dg_damp, ev_b.dg_damp)):
            if ra is not None and np.max(np.abs(ra - rb)) > row_tol:
                return True
    return False


@dataclass
class FdProbe:
    index: int
    part: str
    analytic: float
    fd: float
    rel_err: float
    excluded: bool


@dataclass
class FdReport:
    probes: list
    max_rel_err: float
    threshold: float
    passed: bool
    text: str


_PART_KEYS = ("objective", "stress", "volume", "isotropy", "total")


def _state_parts(state: ForwardState) -> dict[str, float]:
    n_s = max(state.g.size, 1)
    return {"objective": state.c_norm, "stress": state.P_s / n_s,
            "volume": state.P_v, "isotropy": state.P_iso, "J": state.J}


def finite_difference_check(ctx: CellContext, cfg: OptimizerConfig,
                            n_probes: int = 4, h: float = 1e-6,
                            seed: int = 0, threshold: float = 1e-4,
                            corrupt: bool = False) -> FdReport:
    """Central-difference check of the full AL gradient on a seeded design.

    Random multipliers activate the stress constraints so every term carries
    signal. Probes where a max/clamp branch or the critical-plane argmax
    switches between the two perturbed evaluations are excluded
    (subgradient points).
    """
    rng = np.random.default_rng(seed)
    n = ctx.mesh.num_elements
    rho = rng.uniform(0.25, 0.85, size=n)
    n_l = len(cfg.load_cases) if cfg.criterion != "none" else 0
    al = ALState(lambda_s=rng.uniform(0.1, 1.0, size=n_l * n),
                 lambda_v=float(rng.uniform(0.1, 1.0)),
                 lambda_iso=float(rng.uniform(0.1, 1.0)), mu=cfg.mu0)
    beta = 2.0

    c0 = objective_scale(ctx, cfg.objective)
    base = evaluate_design(ctx, cfg, al, rho, beta, c0)
    bundle = total_gradient(ctx, cfg, al, base, c0)
    analytic = dict(bundle.parts)
    analytic["total"] = bundle.total
    if corrupt:
        analytic = {k: 1.37 * v for k, v in analytic.items()}

    atol = 3e-9 * max(1.0, abs(base.J))
    probes: list[FdProbe] = []
    idx = rng.choice(n, size=min(n_probes, n), replace=False)
    for i in idx:
        e_dn = rho.copy()
        e_dn[i] -= h
        e_up = rho.copy()
        e_up[i] += h
        st_dn = evaluate_design(ctx, cfg, al, e_dn, beta, c0)
        st_up = evaluate_design(ctx, cfg, al, e_up, beta, c0)
        excluded = detect_branch_switch(ctx, cfg, st_dn, st_up)
        pd, pu = _state_parts(st_dn), _state_parts(st_up)
        fd_parts = {
            "objective": (pu["objective"] - pd["objective"]) / (2 * h),
            "stress": (pu["stress"] - pd["stress"]) / (2 * h),
            "volume": (pu["volume"] - pd["volume"]) / (2 * h),
            "isotropy": (pu["isotropy"] - pd["isotropy"]) / (2 * h),
            "total": (pu["J"] - pd["J"]) / (2 * h),
        }
        for part in _PART_KEYS:
            a = float(analytic[part][i])
            f = fd_parts[part]
            scale = max(abs(a), abs(f))
            rel = 0.0 if scale <= atol else abs(a - f) / scale
            probes.append(FdProbe(index=int(i), part=part, analytic=a, fd=f,
                                  rel_err=rel, excluded=excluded))

    included = [p.rel_err for p in probes if not p.excluded]
    max_rel = max(included) if included else 0.0
    passed = max_rel <= threshold

    buf = io.StringIO()
    buf.write(f"# gradient check: objective={cfg.objective.kind} "
              f"criterion={cfg.criterion} mesh={ctx.mesh.resolution} "
              f"h={h:g} seed={seed}\n")
    buf.write("# index part analytic fd rel_err status\n")
    for p in probes:
        status = "excluded" if p.excluded else (
            "ok" if p.rel_err <= threshold else "FAIL")
        buf.write(f"{p.index} {p.part} {p.analytic:.12e} {p.fd:.12e} "
                  f"{p.rel_err:.3e} {status}\n")
    buf.write(f"# max_rel_err {max_rel:.3e} threshold {threshold:g} "
              f"{'PASS' if passed else 'FAIL'}\n")
    return FdReport(probes=probes, max_rel_err=max_rel, threshold=threshold,
                    passed=passed, text=buf.getvalue())
