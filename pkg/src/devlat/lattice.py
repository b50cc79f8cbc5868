"""Finite filtered event lattices driven by Bernoulli sign noise and sparse jumps.

A lattice is a non-recombining event tree over a strictly increasing time grid.
Each step branches over the joint draw of a sign vector (one +/-1 per Brownian
component, realising increments of +/- sqrt(dt)) and a jump label (0 = no jump,
j >= 1 = one jump of mark j with probability intensity_j * dt). Trees are
immutable after construction and all queries are pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TimeGrid",
    "JumpMeasure",
    "NoiseModel",
    "Lattice",
    "LatticeBuildError",
    "RandomVariable",
    "AdaptedProcess",
    "Distribution",
    "build_lattice",
    "martingale",
    "cond_exp",
    "law",
    "law_distance",
    "permute_paths",
    "terminal_brownian",
    "terminal_jump_counts",
]

#: child probabilities of every node must sum to one within this tolerance
PROB_SUM_TOL = 1e-12

#: per-step jump mass cap; keeps the no-jump probability at or above one half
MAX_JUMP_MASS_PER_STEP = 0.5

DEFAULT_MAX_NODES = 1_000_000


class LatticeBuildError(ValueError):
    """A lattice request violates a build-time budget or probability bound."""


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing times t_0 = 0 < t_1 < ... < t_n."""

    times: tuple[float, ...]

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", times)
        if len(times) < 2:
            raise ValueError("time grid needs at least one step")
        if times[0] != 0.0:
            raise ValueError("time grid must start at 0")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("time grid must be strictly increasing")

    @classmethod
    def uniform(cls, n_steps: int, horizon: float) -> "TimeGrid":
        if n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if horizon <= 0:
            raise ValueError("horizon must be positive")
        return cls(tuple(horizon * i / n_steps for i in range(n_steps + 1)))

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def horizon(self) -> float:
        return self.times[-1]

    @property
    def steps(self) -> tuple[float, ...]:
        return tuple(b - a for a, b in zip(self.times, self.times[1:]))


@dataclass(frozen=True)
class JumpMeasure:
    """Finite jump-mark measure: distinct nonzero marks with positive intensities."""

    marks: tuple[tuple[float, ...], ...]
    intensities: tuple[float, ...]

    def __post_init__(self):
        marks = tuple(
            (float(x),) if np.isscalar(x) else tuple(float(c) for c in x)
            for x in self.marks
        )
        intens = tuple(float(v) for v in self.intensities)
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "intensities", intens)
        if len(marks) != len(intens):
            raise ValueError("marks and intensities must have equal length")
        if any(v <= 0 for v in intens):
            raise ValueError("intensities must be positive")
        dims = {len(x) for x in marks}
        if len(dims) > 1:
            raise ValueError("marks must share one dimension")
        if any(all(c == 0.0 for c in x) for x in marks):
            raise ValueError("marks must be nonzero")
        if len(set(marks)) != len(marks):
            raise ValueError("marks must be pairwise distinct")

    @classmethod
    def empty(cls) -> "JumpMeasure":
        return cls((), ())

    @property
    def m(self) -> int:
        return len(self.marks)

    @property
    def total_intensity(self) -> float:
        return float(sum(self.intensities))

    @property
    def intensity_array(self) -> np.ndarray:
        return np.asarray(self.intensities, dtype=float)


@dataclass(frozen=True)
class NoiseModel:
    """Brownian dimension plus a finite jump measure; at least one noise source."""

    d: int
    jumps: JumpMeasure

    def __post_init__(self):
        if self.d < 0:
            raise ValueError("d must be >= 0")
        if self.d + self.jumps.m < 1:
            raise ValueError("need at least one noise source (d + m >= 1)")

    @classmethod
    def brownian(cls, d: int = 1) -> "NoiseModel":
        return cls(d, JumpMeasure.empty())


class Lattice:
    """Non-recombining event tree with homogeneous per-level branching.

    Level ``i`` holds ``branching ** i`` nodes indexed ``0 .. branching**i - 1``;
    the child of node ``v`` under outcome ``o`` is ``v * branching + o`` at
    level ``i + 1``. Outcome tables (Brownian increments, jump label and
    probability per outcome) are shared by all nodes of a level, so the tree is
    stored implicitly and queries vectorise over whole levels.
    """

    def __init__(self, grid: TimeGrid, noise: NoiseModel,
                 max_nodes: int = DEFAULT_MAX_NODES):
        self.grid = grid
        self.noise = noise
        d, m = noise.d, noise.jumps.m
        branching = (2 ** d) * (m + 1)
        n = grid.n_steps

        max_dt = max(grid.steps)
        jump_mass = noise.jumps.total_intensity * max_dt
        if m > 0 and jump_mass > MAX_JUMP_MASS_PER_STEP + 1e-15:
            raise LatticeBuildError(
                f"per-step jump mass {jump_mass:.6g} exceeds the "
                f"{MAX_JUMP_MASS_PER_STEP} bound; shrink the steps or intensities"
            )
        if branching ** n > max_nodes:
            raise LatticeBuildError(
                f"lattice would have {branching}^{n} leaves, over the "
                f"max_nodes budget {max_nodes}"
            )

        self.branching = branching
        # outcome o = sign_index * (m + 1) + jump_label
        signs = np.empty((branching, d))
        labels = np.empty(branching, dtype=np.int64)
        for s in range(2 ** d):
            row = np.array([1.0 if (s >> i) & 1 else -1.0 for i in range(d)])
            for j in range(m + 1):
                o = s * (m + 1) + j
                signs[o] = row
                labels[o] = j
        self.outcome_signs = signs
        self.outcome_labels = labels

        nu = noise.jumps.intensity_array
        self._dw: list[np.ndarray] = []
        self._probs: list[np.ndarray] = []
        for dt in grid.steps:
            self._dw.append(signs * math.sqrt(dt))
            pj = np.concatenate(([1.0 - float(nu.sum()) * dt], nu * dt))
            probs = np.tile(pj, 2 ** d) / (2 ** d)
            if np.any(probs <= 0.0):
                raise LatticeBuildError("nonpositive outcome probability")
            if abs(probs.sum() - 1.0) > PROB_SUM_TOL:
                raise LatticeBuildError("outcome probabilities do not sum to 1")
            self._probs.append(probs)

    # -- structure -----------------------------------------------------------

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    @property
    def times(self) -> tuple[float, ...]:
        return self.grid.times

    def num_nodes(self, level: int) -> int:
        self._check_level(level)
        return self.branching ** level

    def child(self, node: int, outcome: int) -> int:
        return node * self.branching + outcome

    def step_dw(self, level: int) -> np.ndarray:
        """Brownian increment per outcome at the given step, shape (b, d)."""
        return self._dw[level]

    def step_probs(self, level: int) -> np.ndarray:
        return self._probs[level]

    def step_dt(self, level: int) -> float:
        return self.grid.steps[level]

    def _check_level(self, level: int) -> None:
        if not 0 <= level <= self.n_steps:
            raise ValueError(f"level {level} outside 0..{self.n_steps}")

    # -- path functionals ----------------------------------------------------

    def node_probabilities(self, level: int) -> np.ndarray:
        self._check_level(level)
        p = np.ones(1)
        for i in range(level):
            p = (p[:, None] * self._probs[i][None, :]).ravel()
        return p

    def brownian_states(self, level: int) -> np.ndarray:
        """Accumulated Brownian state per node, shape (nodes, d)."""
        self._check_level(level)
        w = np.zeros((1, self.noise.d))
        for i in range(level):
            w = (w[:, None, :] + self._dw[i][None, :, :]).reshape(-1, self.noise.d)
        return w

    def jump_counts(self, level: int) -> np.ndarray:
        """Number of jumps per mark along the path, shape (nodes, m)."""
        self._check_level(level)
        m = self.noise.jumps.m
        onehot = np.eye(m + 1)[self.outcome_labels][:, 1:]
        c = np.zeros((1, m))
        for i in range(level):
            c = (c[:, None, :] + onehot[None, :, :]).reshape(c.shape[0] * self.branching, m)
        return c


def build_lattice(grid: TimeGrid, noise: NoiseModel,
                  max_nodes: int = DEFAULT_MAX_NODES) -> Lattice:
    """Build the event tree for a grid and noise model, within a node budget."""
    return Lattice(grid, noise, max_nodes=max_nodes)


# -- random variables and adapted processes ----------------------------------


@dataclass(frozen=True)
class RandomVariable:
    """A variable measurable at ``level``: one value per node of that level."""

    values: np.ndarray
    level: int

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise ValueError("values must be one-dimensional")
        if not np.all(np.isfinite(vals)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "values", vals)

    def _binop(self, other, op):
        if isinstance(other, RandomVariable):
            if other.level != self.level:
                raise ValueError("level mismatch in random-variable arithmetic")
            return RandomVariable(op(self.values, other.values), self.level)
        return RandomVariable(op(self.values, float(other)), self.level)

    def __add__(self, other):
        return self._binop(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binop(other, np.subtract)

    def __rsub__(self, other):
        return RandomVariable(float(other) - self.values, self.level)

    def __mul__(self, scalar):
        return RandomVariable(self.values * float(scalar), self.level)

    __rmul__ = __mul__

    def __neg__(self):
        return RandomVariable(-self.values, self.level)


@dataclass(frozen=True)
class AdaptedProcess:
    """One value per node at every level 0..n.

    ``measurable_level``, when set, records the smallest level at which the
    underlying variable is measurable (values at later levels are subtree
    constants broadcast from it).
    """

    values: tuple[np.ndarray, ...]
    measurable_level: int | None = None

    def at(self, level: int) -> np.ndarray:
        return self.values[level]

    @property
    def n_levels(self) -> int:
        return len(self.values)

    def as_random_variable(self) -> RandomVariable:
        if self.measurable_level is None:
            raise ValueError("process has no recorded measurability level")
        lvl = self.measurable_level
        return RandomVariable(self.values[lvl], lvl)


def _check_rv(lat: Lattice, x: RandomVariable) -> None:
    if x.values.shape[0] != lat.num_nodes(x.level):
        raise ValueError(
            f"payoff has {x.values.shape[0]} values but level {x.level} "
            f"holds {lat.num_nodes(x.level)} nodes"
        )


def martingale(lat: Lattice, x: RandomVariable) -> AdaptedProcess:
    """The process E[x | F_i] for all levels; broadcast above x's own level."""
    _check_rv(lat, x)
    b = lat.branching
    vals: list[np.ndarray | None] = [None] * (lat.n_steps + 1)
    vals[x.level] = x.values
    for i in range(x.level, lat.n_steps):
        vals[i + 1] = np.repeat(vals[i], b)
    for i in range(x.level - 1, -1, -1):
        vals[i] = vals[i + 1].reshape(-1, b) @ lat.step_probs(i)
    return AdaptedProcess(tuple(vals), measurable_level=x.level)


def cond_exp(lat: Lattice, x: RandomVariable, level: int) -> AdaptedProcess:
    """Adapted process of E[x | F_level].

    Backward probability-weighted averaging below ``level``; subtree-constant
    broadcast above it. Feeding the result's ``as_random_variable()`` back in
    repeats the identical backward arithmetic, so the tower property holds
    bit-exactly.
    """
    lat._check_level(level)
    m = martingale(lat, x)
    cut = min(level, x.level)
    vals = list(m.values)
    for i in range(cut, lat.n_steps):
        vals[i + 1] = np.repeat(vals[i], lat.branching)
    return AdaptedProcess(tuple(vals), measurable_level=cut)


# -- laws ----------------------------------------------------------------------


@dataclass(frozen=True)
class Distribution:
    """Sorted atoms (value, probability) of a lattice payoff's law."""

    atoms: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=float)
        p = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "probs", p)
        if a.shape != p.shape or a.ndim != 1:
            raise ValueError("atoms/probs must be matching vectors")
        if np.any(p <= 0):
            raise ValueError("atom probabilities must be positive")
        if abs(p.sum() - 1.0) > PROB_SUM_TOL:
            raise ValueError("atom probabilities must sum to 1")
        if np.any(np.diff(a) <= 0):
            raise ValueError("atoms must be strictly increasing")


def law(lat: Lattice, x: RandomVariable, merge_tol: float | None = None) -> Distribution:
    """Distribution of a payoff: sorted atoms with near-equal values merged.

    ``merge_tol`` defaults to 1e-9 times the value range; merged atoms take the
    probability-weighted mean of their group.
    """
    _check_rv(lat, x)
    if merge_tol is not None and merge_tol < 0:
        raise ValueError("merge_tol must be >= 0")
    p = lat.node_probabilities(x.level)
    order = np.argsort(x.values, kind="stable")
    v, w = x.values[order], p[order]
    if merge_tol is None:
        merge_tol = 1e-9 * float(v[-1] - v[0])
    atoms, probs = [], []
    i = 0
    while i < len(v):
        j = i + 1
        while j < len(v) and v[j] - v[j - 1] <= merge_tol:
            j += 1
        mass = float(w[i:j].sum())
        atoms.append(float(np.dot(v[i:j], w[i:j]) / mass))
        probs.append(mass)
        i = j
    return Distribution(np.array(atoms), np.array(probs))


def law_distance(a: Distribution, b: Distribution) -> float:
    """Atom-wise distance between two laws; inf when the atom counts differ.

    Distance is the max over matched atoms of |value gap| and |probability gap|,
    suitable for deciding near-equality of merged lattice laws.
    """
    if len(a.atoms) != len(b.atoms):
        return math.inf
    return float(
        max(np.max(np.abs(a.atoms - b.atoms)), np.max(np.abs(a.probs - b.probs)))
    )


def permute_paths(lat: Lattice, x: RandomVariable, rng: np.random.Generator) -> RandomVariable:
    """Compose a terminal payoff with a random probability-preserving tree map.

    At every node, outcomes are permuted only within groups of equal edge
    probability, so the result has the same law as ``x`` by construction.
    """
    _check_rv(lat, x)
    if x.level != lat.n_steps:
        raise ValueError("permute_paths expects a terminal payoff")
    b = lat.branching
    sigma = np.zeros(1, dtype=np.int64)
    for i in range(lat.n_steps):
        probs = lat.step_probs(i)
        groups = [np.flatnonzero(probs == q) for q in np.unique(probs)]
        nxt = np.empty(len(sigma) * b, dtype=np.int64)
        for v in range(len(sigma)):
            pi = np.arange(b)
            for g in groups:
                pi[g] = g[rng.permutation(len(g))]
            nxt[v * b : (v + 1) * b] = sigma[v] * b + pi
        sigma = nxt
    return RandomVariable(x.values[sigma], x.level)


# -- payoff helpers ------------------------------------------------------------


def terminal_brownian(lat: Lattice, component: int = 0) -> RandomVariable:
    """The terminal Brownian state of one component as a payoff."""
    if not 0 <= component < lat.noise.d:
        raise ValueError("component outside Brownian dimension")
    return RandomVariable(lat.brownian_states(lat.n_steps)[:, component], lat.n_steps)


def terminal_jump_counts(lat: Lattice, mark: int) -> RandomVariable:
    """The number of jumps of one mark over the whole horizon as a payoff."""
    if not 0 <= mark < lat.noise.jumps.m:
        raise ValueError("mark index outside jump measure")
    return RandomVariable(lat.jump_counts(lat.n_steps)[:, mark], lat.n_steps)
