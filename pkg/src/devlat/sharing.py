"""Two-agent optimal risk sharing via pointwise inf-convolution of drivers.

The total position's integrands are split node by node between the agents'
penalties; the optimal split assembles into the transfer payoff, and the price
comes from the counterparty's binding participation constraint at time zero.
Transfers are unique only up to time-zero constants, so the assembled transfer
is normalised to zero mean and the price reported separately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .deviation import DeviationProcess, evaluate
from .drivers import DriverSpec, InfConv, Scaled, Variance, eval_driver
from .lattice import AdaptedProcess, JumpMeasure, Lattice, RandomVariable, martingale
from .optim import ObjectiveOracle, SolverConfig, minimize
from .representation import RepresentingPair, assemble, represent

__all__ = [
    "SharingProblem",
    "SharingSolution",
    "ResidualRiskReport",
    "infconv_value",
    "solve_sharing",
    "proportional_transfer",
    "residual_check",
]


@dataclass(frozen=True)
class SharingProblem:
    """Two terminal payoffs on one lattice and the agents' drivers."""

    x_a: RandomVariable
    x_b: RandomVariable
    driver_a: DriverSpec
    driver_b: DriverSpec
    solver: SolverConfig = SolverConfig()


@dataclass(frozen=True)
class SharingSolution:
    """Optimal split integrands, transfer, price and diagnostics.

    ``argmin_H``/``argmin_Ht`` hold the counterparty's optimal integrand share
    per node; ``y_star`` is the zero-mean assembled optimal position of agent B
    and ``y_tilde_star = y_star - x_b`` the priced transfer. ``certificate_gap``
    is the largest directional-derivative violation of split optimality over
    all nodes.
    """

    argmin_H: tuple[np.ndarray, ...]
    argmin_Ht: tuple[np.ndarray, ...]
    y_star: RandomVariable
    y_tilde_star: RandomVariable
    price: float
    infconv_d: DeviationProcess
    attained: bool
    certificate_gap: float
    du_a: float
    du_b: float
    max_residual: float
    total_pair: RepresentingPair
    jumps: JumpMeasure
    times: tuple[float, ...]


def _scaling_decomposition(spec: DriverSpec) -> tuple[float, DriverSpec]:
    gamma = 1.0
    core = spec
    while isinstance(core, Scaled):
        gamma *= core.gamma
        core = core.base
    return gamma, core


def proportional_share_factor(g_a: DriverSpec, g_b: DriverSpec) -> float | None:
    """Counterparty share gamma_b / (gamma_a + gamma_b) when both drivers are
    scalings of one common base; None otherwise."""
    ga_gamma, ga_core = _scaling_decomposition(g_a)
    gb_gamma, gb_core = _scaling_decomposition(g_b)
    if ga_core == gb_core:
        return gb_gamma / (ga_gamma + gb_gamma)
    qa, qb = _as_quadratic(g_a), _as_quadratic(g_b)
    if qa is not None and qb is not None:
        return qa / (qa + qb)
    return None


def _as_quadratic(spec: DriverSpec) -> float | None:
    gamma, core = _scaling_decomposition(spec)
    if isinstance(core, Variance):
        return core.alpha / gamma
    return None


def infconv_value(g_a: DriverSpec, g_b: DriverSpec, t: float, h, htilde,
                  nu: JumpMeasure, cfg: SolverConfig | None = None,
                  method: str = "auto") -> tuple[float, tuple[np.ndarray, np.ndarray]]:
    """Pointwise inf-convolution inf_z { g_a(x - z) + g_b(z) } with its argmin.

    Closed forms are used for a quadratic pair and for scalings of a common
    base driver; everything else runs the numeric solver from the symmetric
    midpoint, then polishes against the block-corner candidates (all-to-A,
    all-to-B, and the mixed Brownian/jump corners), which renders piecewise
    linear pairs exact.
    """
    cfg = cfg or SolverConfig()
    h = np.atleast_1d(np.asarray(h, dtype=float))
    ht = np.atleast_1d(np.asarray(htilde, dtype=float)) if nu.m else np.zeros(0)
    d = h.shape[0]

    if method == "auto":
        qa, qb = _as_quadratic(g_a), _as_quadratic(g_b)
        if qa is not None and qb is not None:
            rho = qa / (qa + qb)
            z, zt = rho * h, rho * ht
            value = (qa * qb / (qa + qb)) * (
                float(h @ h) + float((ht * ht) @ nu.intensity_array)
            )
            return value, (z, zt)
        ga_gamma, ga_core = _scaling_decomposition(g_a)
        gb_gamma, gb_core = _scaling_decomposition(g_b)
        if ga_core == gb_core:
            share = gb_gamma / (ga_gamma + gb_gamma)
            z, zt = share * h, share * ht
            value = eval_driver(g_a, t, h - z, ht - zt, nu) + eval_driver(
                g_b, t, z, zt, nu
            )
            return value, (z, zt)
    elif method != "numeric":
        raise ValueError("method must be 'auto' or 'numeric'")

    def split(zfull):
        return zfull[:d], zfull[d:]

    def objective(zfull):
        z, zt = split(zfull)
        return g_a.value(t, h - z, ht - zt, nu) + g_b.value(t, z, zt, nu)

    def subgrad(zfull):
        z, zt = split(zfull)
        sa = g_a.subgradient(t, h - z, ht - zt, nu)
        sb = g_b.subgradient(t, z, zt, nu)
        return sb - sa

    full = np.concatenate([h, ht])
    result = minimize(ObjectiveOracle(objective, subgrad), full / 2.0, cfg)

    zeros = np.zeros_like(full)
    cross_a = np.concatenate([h, np.zeros_like(ht)])
    cross_b = np.concatenate([np.zeros_like(h), ht])
    best_x, best_f = result.argmin, result.value
    for cand in (zeros, full, cross_a, cross_b):
        f = float(objective(cand))
        if f < best_f or (f == best_f and float(cand @ cand) < float(best_x @ best_x)):
            best_f, best_x = f, cand
    z, zt = split(best_x)
    return best_f, (z.copy(), zt.copy())


def _certificate_gap(objective, point: np.ndarray) -> float:
    """Directional-derivative test of split optimality at ``point``.

    The split is optimal exactly when no direction descends, which is the
    finite-dimensional form of the two subdifferentials intersecting.
    """
    f0 = float(objective(point))
    eps = 1e-7 * (1.0 + float(np.linalg.norm(point)))
    worst = 0.0
    for i in range(point.shape[0]):
        for sign in (1.0, -1.0):
            probe = point.copy()
            probe[i] += sign * eps
            slope = (float(objective(probe)) - f0) / eps
            worst = max(worst, -slope)
    return worst


def solve_sharing(lat: Lattice, prob: SharingProblem) -> SharingSolution:
    """Solve the sharing problem on a lattice: per-node splits, transfer, price.

    When representation residuals are nonzero (jump lattices) the solve runs on
    the projected integrands and the largest residual is attached rather than
    silently dropped; configure ``solver.residual_tolerance`` to make it fatal.
    """
    if prob.x_a.level != lat.n_steps or prob.x_b.level != lat.n_steps:
        raise ValueError("sharing payoffs must be terminal")
    cfg = prob.solver
    nu = lat.noise.jumps
    total = prob.x_a + prob.x_b
    pair = represent(lat, total)
    max_res = pair.max_residual()
    if max_res > cfg.residual_tolerance:
        raise ValueError(
            f"representation residual {max_res:.3g} exceeds the configured "
            f"threshold {cfg.residual_tolerance:.3g}"
        )

    d = lat.noise.d
    arg_H, arg_Ht, node_vals, gaps = [], [], [], []
    for i in range(lat.n_steps):
        t = lat.times[i]
        nodes = lat.num_nodes(i)
        zH = np.zeros((nodes, d))
        zT = np.zeros((nodes, nu.m))
        vals = np.zeros(nodes)
        for v in range(nodes):
            h = pair.H[i][v]
            ht = pair.Htilde[i][v]
            value, (z, zt) = infconv_value(
                prob.driver_a, prob.driver_b, t, h, ht, nu, cfg
            )
            zH[v], zT[v], vals[v] = z, zt, value

            def objective(zfull, h=h, ht=ht, t=t):
                return prob.driver_a.value(t, h - zfull[:d], ht - zfull[d:], nu) \
                    + prob.driver_b.value(t, zfull[:d], zfull[d:], nu)

            gaps.append(_certificate_gap(objective, np.concatenate([z, zt])))
        arg_H.append(zH)
        arg_Ht.append(zT)
        node_vals.append(vals)

    certificate_gap = max(gaps) if gaps else 0.0
    attained = certificate_gap <= cfg.attain_tolerance and all(
        np.all(np.isfinite(v)) for v in node_vals
    )

    # deviation of the shared position, accumulated from the solved node values
    dev_vals: list[np.ndarray] = [np.zeros(lat.num_nodes(lat.n_steps))]
    for i in range(lat.n_steps - 1, -1, -1):
        cont = dev_vals[0].reshape(-1, lat.branching) @ lat.step_probs(i)
        dev_vals.insert(0, cont + node_vals[i] * lat.step_dt(i))
    infconv_d = DeviationProcess(
        AdaptedProcess(tuple(dev_vals)),
        InfConv(prob.driver_a, prob.driver_b, cfg),
        source="sharing",
    )

    zero_res = tuple(np.zeros(lat.num_nodes(i)) for i in range(lat.n_steps))
    y_star = assemble(
        lat, RepresentingPair(0.0, tuple(arg_H), tuple(arg_Ht), zero_res)
    )
    y_tilde = y_star - prob.x_b

    def d0(driver, payoff):
        return evaluate(lat, driver, represent(lat, payoff)).d0

    def mean(payoff):
        return float(martingale(lat, payoff).at(0)[0])

    price = mean(y_tilde) - d0(prob.driver_b, prob.x_b + y_tilde) \
        + d0(prob.driver_b, prob.x_b)
    u_a_before = mean(prob.x_a) - d0(prob.driver_a, prob.x_a)
    pos_a = prob.x_a - y_tilde + price
    u_a_after = mean(pos_a) - d0(prob.driver_a, pos_a)
    u_b_before = mean(prob.x_b) - d0(prob.driver_b, prob.x_b)
    pos_b = prob.x_b + y_tilde - price
    u_b_after = mean(pos_b) - d0(prob.driver_b, pos_b)

    return SharingSolution(
        argmin_H=tuple(arg_H),
        argmin_Ht=tuple(arg_Ht),
        y_star=y_star,
        y_tilde_star=y_tilde,
        price=price,
        infconv_d=infconv_d,
        attained=attained,
        certificate_gap=certificate_gap,
        du_a=u_a_after - u_a_before,
        du_b=u_b_after - u_b_before,
        max_residual=max_res,
        total_pair=pair,
        jumps=nu,
        times=lat.times,
    )


def proportional_transfer(gamma_a: float, gamma_b: float, x_a: RandomVariable,
                          x_b: RandomVariable) -> RandomVariable:
    """Closed-form transfer for common-base scaled drivers:
    gamma_b/(gamma_a+gamma_b) * x_a - gamma_a/(gamma_a+gamma_b) * x_b."""
    if gamma_a <= 0 or gamma_b <= 0:
        raise ValueError("risk tolerances must be positive")
    total = gamma_a + gamma_b
    return (gamma_b / total) * x_a - (gamma_a / total) * x_b


@dataclass(frozen=True)
class ResidualRiskReport:
    """Corner structure of the optimal splits versus origin-smoothness of the
    drivers. When either driver is differentiable at the origin and the total
    position is nonconstant, an interior split must exist somewhere."""

    skipped: bool
    smooth_a: bool
    smooth_b: bool
    premise_met: bool
    interior_node_exists: bool
    corner_share_nodes: int
    corner_complement_nodes: int
    min_share_norm: float
    min_complement_norm: float
    nodes_checked: int
    passed: bool
    note: str = ""


def _smooth_at_origin(driver: DriverSpec, d: int, nu: JumpMeasure) -> bool:
    """Shrinking finite differences decide whether the subgradient at the
    origin is the singleton {0} (all one-sided slopes vanish in the limit)."""
    dims = d + nu.m
    ratios = []
    for eps in (1e-4, 1e-5, 1e-6):
        worst = 0.0
        for i in range(dims):
            u = np.zeros(dims)
            u[i] = eps
            for sgn in (1.0, -1.0):
                p = sgn * u
                worst = max(worst, abs(eval_driver(driver, 0.0, p[:d], p[d:], nu)) / eps)
        ratios.append(worst)
    return ratios[-1] <= 1e-4 and ratios[-1] <= 0.5 * ratios[0] + 1e-12


def residual_check(sol: SharingSolution, prob: SharingProblem,
                   margin: float = 1e-8) -> ResidualRiskReport:
    """Check that no agent with an origin-smooth driver is stripped of all risk.

    Scans every node with a nonzero total integrand and classifies its split as
    a corner (all risk to one side, within ``margin``) or interior.
    """
    pair = sol.total_pair
    nu = sol.jumps
    d = pair.H[0].shape[1]
    nonconstant = any(
        float(np.max(np.abs(np.hstack([pair.H[i], pair.Htilde[i]])))) > 1e-12
        for i in range(pair.n_steps)
    )
    if not nonconstant:
        return ResidualRiskReport(True, False, False, False, False, 0, 0,
                                  math.inf, math.inf, 0, True,
                                  "total position constant; nothing to share")

    smooth_a = _smooth_at_origin(prob.driver_a, d, nu)
    smooth_b = _smooth_at_origin(prob.driver_b, d, nu)
    premise = smooth_a or smooth_b

    corner_share = corner_comp = checked = 0
    min_share = min_comp = math.inf
    interior = False
    for i in range(pair.n_steps):
        full = np.hstack([pair.H[i], pair.Htilde[i]])
        z = np.hstack([sol.argmin_H[i], sol.argmin_Ht[i]])
        for v in range(full.shape[0]):
            if float(np.linalg.norm(full[v])) <= 1e-9:
                continue
            checked += 1
            share = float(np.linalg.norm(z[v]))
            comp = float(np.linalg.norm(full[v] - z[v]))
            min_share = min(min_share, share)
            min_comp = min(min_comp, comp)
            if share <= margin:
                corner_share += 1
            elif comp <= margin:
                corner_comp += 1
            else:
                interior = True

    if not premise:
        note = "no driver is differentiable at the origin; corners permitted"
        passed = True
    else:
        passed = interior
        note = "" if interior else "origin-smooth driver but only corner splits found"
    return ResidualRiskReport(False, smooth_a, smooth_b, premise, interior,
                              corner_share, corner_comp, min_share, min_comp,
                              checked, passed, note)
