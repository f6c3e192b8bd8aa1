"""Conditional particle Monte Carlo under Poisson jump noise.

A scenario is one realization of the driving Poisson randomness.  Under
``common`` noise every particle shares one Poisson path and the particle
cloud approximates the conditional law given that path; under
``idiosyncratic`` noise each particle carries its own path and the cloud
approximates the plain law.  Either way the simulation is an explicit
Euler scheme on a jump-adapted grid: every Poisson event time is a grid
node, the jump is applied exactly at its node from the pre-jump state and
pre-jump empirical law, and the compensator enters the drift.

Randomness comes from counter-based Philox streams keyed by
``(seed, scenario, purpose)`` with purposes ``init`` / ``brownian`` /
``poisson``; particles consume fixed lanes of vectorized draws.  Identical
keys reproduce bit-identical clouds, and control variants under one key see
identical noise, which is what the paired cost comparisons rely on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .coefficients import CoefficientSet
from .errors import DivergenceError
from .measures import EmpiricalMeasure, JointEmpiricalMeasure

_PURPOSES = {"init": 0, "brownian": 1, "poisson": 2}


def substream(seed: int, scenario: int, purpose: str) -> np.random.Generator:
    """Independent counter-based generator for one (scenario, purpose) pair."""
    key = np.random.SeedSequence(
        entropy=int(seed), spawn_key=(int(scenario), _PURPOSES[purpose])
    )
    return np.random.Generator(np.random.Philox(key))


@dataclass(frozen=True)
class PoissonPath:
    """One realization of the driving Poisson random measure."""

    times: np.ndarray
    marks: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        marks = np.asarray(self.marks, dtype=int)
        if times.shape != marks.shape:
            raise ValueError("times and marks need equal length")
        if times.size and (np.any(np.diff(times) <= 0) or times[0] <= 0):
            raise ValueError("event times must be strictly increasing and positive")
        times.setflags(write=False)
        marks.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "marks", marks)

    @property
    def n_events(self) -> int:
        return self.times.shape[0]


def sample_poisson_path(jumps, T: float, gen: np.random.Generator) -> PoissonPath:
    """Exponential interarrivals at the total rate, categorical marks."""
    lam = jumps.total_intensity if jumps.n_marks else 0.0
    if lam <= 0.0:
        return PoissonPath(np.empty(0), np.empty(0, dtype=int))
    times = []
    t = 0.0
    while True:
        t += gen.exponential(1.0 / lam)
        if t > T:
            break
        times.append(t)
    times = np.asarray(times)
    if times.size and jumps.n_marks > 1:
        marks = gen.choice(jumps.n_marks, size=times.size, p=jumps.mark_probs)
    else:
        marks = np.zeros(times.size, dtype=int)
    return PoissonPath(times, marks)


@dataclass(frozen=True)
class TimeGrid:
    """Ordered nodes 0 = t_0 < ... < t_M = T containing every event time."""

    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.size < 2 or times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise ValueError("grid needs 0 = t_0 < ... < t_M")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @property
    def n_steps(self) -> int:
        return self.times.shape[0] - 1

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def node_of(self, t: float) -> int:
        idx = int(np.searchsorted(self.times, t))
        if idx >= self.times.size or self.times[idx] != t:
            raise ValueError(f"time {t!r} is not a grid node")
        return idx


def build_grid(T: float, dt: float, event_times=()) -> TimeGrid:
    """Uniform grid of spacing <= dt merged with the exact event times."""
    if dt <= 0 or T <= 0:
        raise ValueError("need positive horizon and step")
    base = np.linspace(0.0, T, int(math.ceil(T / dt)) + 1)
    events = np.asarray(event_times, dtype=float)
    if events.size:
        if np.any(events <= 0) or np.any(events > T):
            raise ValueError("event times must lie in (0, T]")
        return TimeGrid(np.union1d(base, events))
    return TimeGrid(base)


# ---------------------------------------------------------------------------
# Control rules
# ---------------------------------------------------------------------------

class FeedbackRule:
    """Strict feedback control u = fn(t, states, cloud mean), vectorized.

    A declared control box restricts admissible values; violations raise.
    """

    kind = "strict"

    def __init__(self, fn: Callable, box=None):
        self.fn = fn
        self.box = box

    def evaluate(self, t, states, cond_mean):
        u = np.asarray(self.fn(t, states, cond_mean), dtype=float)
        u = np.broadcast_to(u, states.shape).astype(float, copy=False)
        if self.box is not None and not self.box.contains(u.reshape(-1, 1)):
            raise ValueError(f"control outside the declared box at t={t:.6g}")
        return u

    @classmethod
    def constant(cls, value: float, box=None) -> "FeedbackRule":
        return cls(lambda t, x, m: np.full_like(x, float(value)), box)


class OpenLoopRule:
    """Strict open-loop table; piecewise constant in time, one column per particle."""

    kind = "strict"

    def __init__(self, times, table):
        self.times = np.asarray(times, dtype=float)
        self.table = np.asarray(table, dtype=float)
        if self.table.shape[0] != self.times.shape[0]:
            raise ValueError("one table row per time knot")

    def evaluate(self, t, states, cond_mean):
        row = int(np.searchsorted(self.times, t, side="right")) - 1
        row = max(row, 0)
        return np.broadcast_to(self.table[row], states.shape).astype(float, copy=False)


class RelaxedRule:
    """Measure-valued control: fn(t, states, mean) -> (support, weights).

    ``support`` is (A,) shared across particles or (N, A) per particle;
    ``weights`` likewise.  Rows are normalized; a nonpositive row total is a
    normalization failure.
    """

    kind = "relaxed"

    def __init__(self, fn: Callable, box=None):
        self.fn = fn
        self.box = box

    def evaluate(self, t, states, cond_mean):
        support, weights = self.fn(t, states, cond_mean)
        support = np.atleast_1d(np.asarray(support, dtype=float))
        weights = np.atleast_1d(np.asarray(weights, dtype=float))
        if self.box is not None and not self.box.contains(support.reshape(-1, 1)):
            raise ValueError(f"relaxed support outside the declared box at t={t:.6g}")
        if support.ndim == 1:
            support = np.broadcast_to(support, (states.shape[0], support.shape[0]))
        if weights.ndim == 1:
            weights = np.broadcast_to(weights, (states.shape[0], weights.shape[0]))
        if support.shape != weights.shape or support.shape[0] != states.shape[0]:
            raise ValueError("support/weights shapes do not match the cloud")
        totals = weights.sum(axis=1)
        if np.any(totals <= 0):
            raise ValueError("relaxed control weights must have positive total")
        return support, weights / totals[:, None]

    @classmethod
    def constant(cls, support, weights, box=None) -> "RelaxedRule":
        support = np.asarray(support, dtype=float)
        weights = np.asarray(weights, dtype=float)
        return cls(lambda t, x, m: (support, weights), box)


class ChatteringRule:
    """Strict rule cycling through a relaxed rule's atoms within time slabs.

    The horizon splits into ``n_slabs`` equal slabs; inside a slab the atom
    whose cumulative weight bracket contains the slab phase is played, so each
    atom occupies a sub-interval proportional to its weight.
    """

    kind = "strict"

    def __init__(self, relaxed: RelaxedRule, n_slabs: int, horizon: float):
        if n_slabs < 1:
            raise ValueError("need at least one slab")
        self.relaxed = relaxed
        self.n_slabs = int(n_slabs)
        self.horizon = float(horizon)

    def evaluate(self, t, states, cond_mean):
        support, weights = self.relaxed.evaluate(t, states, cond_mean)
        slab = self.horizon / self.n_slabs
        theta = (t / slab) % 1.0
        cum = np.cumsum(weights, axis=1)
        idx = np.minimum((cum <= theta).sum(axis=1), support.shape[1] - 1)
        return support[np.arange(states.shape[0]), idx]


def chattering(rule: RelaxedRule, n_slabs: int, horizon: float) -> ChatteringRule:
    """Piecewise-strict approximation of a relaxed rule (slab construction)."""
    return ChatteringRule(rule, n_slabs, horizon)


# ---------------------------------------------------------------------------
# Initial condition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InitSpec:
    """Initial state law; gaussian or a finite atom list."""

    kind: str = "gaussian"
    mean: float = 0.0
    std: float = 1.0
    atoms: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    @classmethod
    def from_config(cls, data: dict) -> "InitSpec":
        kind = data.get("kind", "gaussian")
        if kind == "gaussian":
            return cls("gaussian", float(data["mean"]), float(data["std"]))
        if kind == "atoms":
            return cls(
                "atoms",
                atoms=np.asarray(data["atoms"], dtype=float),
                weights=np.asarray(data["weights"], dtype=float),
            )
        raise ValueError(f"unknown init kind {kind!r}")

    def sample(self, n: int, gen: np.random.Generator) -> np.ndarray:
        if self.kind == "gaussian":
            return self.mean + self.std * gen.standard_normal(n)
        idx = gen.choice(len(self.atoms), size=n, p=self.weights / self.weights.sum())
        return np.asarray(self.atoms, dtype=float)[idx]


# ---------------------------------------------------------------------------
# Particle cloud
# ---------------------------------------------------------------------------

@dataclass
class ParticleCloud:
    """States, controls and jump bookkeeping of one simulated scenario.

    ``states[k]`` holds the cloud at node k (post-jump).  ``controls[k]`` is
    the strict control on [t_k, t_{k+1}); for relaxed runs
    ``relaxed_controls[k]`` keeps the (support, weights) pair instead.
    ``pre_jump_states`` stores the cloud right before each event node so
    measure-level jump operators can be checked exactly.
    """

    grid: TimeGrid
    states: np.ndarray
    mode: str
    seed: int
    scenario: int
    path: Optional[PoissonPath] = None
    paths: Optional[list] = None
    controls: Optional[np.ndarray] = None
    relaxed_controls: Optional[list] = None
    pre_jump_states: dict = field(default_factory=dict)
    event_log: list = field(default_factory=list)  # (node, mark, mean displacement)

    @property
    def n_particles(self) -> int:
        return self.states.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def measure_at(self, node: int) -> EmpiricalMeasure:
        return EmpiricalMeasure.from_samples(self.states[node])

    def joint_at(self, node: int) -> JointEmpiricalMeasure:
        node = min(node, self.grid.n_steps - 1)
        if self.controls is not None:
            return JointEmpiricalMeasure.strict(self.states[node], self.controls[node])
        support, weights = self.relaxed_controls[node]
        return _projected_joint(self.states[node], support, weights)

    def conditional_means(self) -> np.ndarray:
        return self.states.mean(axis=1)


def _projected_joint(states, support, weights) -> JointEmpiricalMeasure:
    """Strict joint of the cloud against per-particle control measures."""
    n, a = support.shape
    w_cloud = np.full(n, 1.0 / n)
    return JointEmpiricalMeasure.strict(
        np.repeat(states, a),
        support.reshape(-1),
        (w_cloud[:, None] * weights).reshape(-1),
    )


def _collect_events(grid: TimeGrid, mode: str, path, paths):
    """Map grid node -> list of (particle or None, mark)."""
    events: dict[int, list] = {}
    if mode == "common":
        for t, mark in zip(path.times, path.marks):
            events.setdefault(grid.node_of(float(t)), []).append((None, int(mark)))
    else:
        for i, p in enumerate(paths):
            for t, mark in zip(p.times, p.marks):
                events.setdefault(grid.node_of(float(t)), []).append((i, int(mark)))
    return events


def _simulate(
    coeffs: CoefficientSet,
    rule,
    n_particles: int,
    T: float,
    dt: float,
    mode: str,
    seed: int,
    scenario: int,
    init: InitSpec,
    path: Optional[PoissonPath],
    paths: Optional[list],
    relaxed: bool,
) -> ParticleCloud:
    if mode not in ("common", "idiosyncratic"):
        raise ValueError("mode must be 'common' or 'idiosyncratic'")
    if n_particles < 2:
        raise ValueError("need at least two particles for an empirical law")

    jumps = coeffs.jumps
    if mode == "common":
        if path is None:
            path = sample_poisson_path(jumps, T, substream(seed, scenario, "poisson"))
        event_times = path.times
    else:
        if paths is None:
            gen = substream(seed, scenario, "poisson")
            paths = [sample_poisson_path(jumps, T, gen) for _ in range(n_particles)]
        event_times = np.concatenate([p.times for p in paths]) if paths else np.empty(0)

    all_marks = path.marks if mode == "common" else (
        np.concatenate([p.marks for p in paths]) if paths else np.empty(0, dtype=int)
    )
    if all_marks.size and (all_marks.min() < 0 or all_marks.max() >= jumps.n_marks):
        raise ValueError("path carries mark indices outside the declared mark set")

    grid = build_grid(T, dt, np.unique(event_times))
    events = _collect_events(grid, mode, path, paths)

    gen_init = substream(seed, scenario, "init")
    gen_brownian = substream(seed, scenario, "brownian")
    x = init.sample(n_particles, gen_init)

    m_steps = grid.n_steps
    states = np.empty((m_steps + 1, n_particles))
    states[0] = x
    controls = None if relaxed else np.empty((m_steps, n_particles))
    relaxed_controls = [] if relaxed else None
    pre_jump_states: dict = {}
    event_log: list = []
    lam = jumps.intensities

    for k in range(m_steps):
        t = grid.times[k]
        h = grid.times[k + 1] - grid.times[k]
        cond_mean = float(x.mean())

        if relaxed:
            support, qw = rule.evaluate(t, x, cond_mean)
            relaxed_controls.append((support, qw))
            rho = _projected_joint(x, support, qw)

            def qavg(fn, *extra):
                vals = fn(x[:, None], rho, support, *extra)
                return (np.broadcast_to(vals, support.shape) * qw).sum(axis=1)

            drift = qavg(coeffs.drift)
            for j in range(jumps.n_marks):
                drift = drift - lam[j] * qavg(coeffs.jump, j)
            diffusion = qavg(coeffs.diffusion)
        else:
            u = rule.evaluate(t, x, cond_mean)
            controls[k] = u
            rho = JointEmpiricalMeasure.strict(x, u)
            drift = np.broadcast_to(
                np.asarray(coeffs.drift(x, rho, u), dtype=float), x.shape
            ).copy()
            for j in range(jumps.n_marks):
                drift -= lam[j] * np.broadcast_to(
                    np.asarray(coeffs.jump(x, rho, u, j), dtype=float), x.shape
                )
            diffusion = np.broadcast_to(
                np.asarray(coeffs.diffusion(x, rho, u), dtype=float), x.shape
            )

        noise = gen_brownian.standard_normal(n_particles)
        x_new = x + drift * h + diffusion * math.sqrt(h) * noise

        node = k + 1
        if node in events:
            pre_jump_states[node] = x_new.copy()
            for particle, mark in events[node]:
                if relaxed:
                    rho_minus = _projected_joint(x_new, support, qw)
                    vals = coeffs.jump(x_new[:, None], rho_minus, support, mark)
                    disp = (np.broadcast_to(vals, support.shape) * qw).sum(axis=1)
                else:
                    rho_minus = JointEmpiricalMeasure.strict(x_new, u)
                    disp = np.broadcast_to(
                        np.asarray(coeffs.jump(x_new, rho_minus, u, mark), dtype=float),
                        x_new.shape,
                    )
                if particle is None:
                    x_new = x_new + disp
                    event_log.append((node, mark, float(disp.mean())))
                else:
                    shift = float(np.asarray(disp).reshape(-1)[particle])
                    x_new = x_new.copy()
                    x_new[particle] += shift
                    event_log.append((node, mark, shift / n_particles))

        if not np.all(np.isfinite(x_new)):
            raise DivergenceError(node, float(grid.times[node]))
        states[node] = x_new
        x = x_new

    return ParticleCloud(
        grid=grid,
        states=states,
        mode=mode,
        seed=seed,
        scenario=scenario,
        path=path,
        paths=paths,
        controls=controls,
        relaxed_controls=relaxed_controls,
        pre_jump_states=pre_jump_states,
        event_log=event_log,
    )


def simulate_strict(
    coeffs: CoefficientSet,
    rule,
    n_particles: int,
    T: float,
    dt: float,
    mode: str = "common",
    seed: int = 0,
    scenario: int = 0,
    init: InitSpec = InitSpec(),
    path: Optional[PoissonPath] = None,
    paths: Optional[list] = None,
) -> ParticleCloud:
    """Euler cloud under a strict control rule."""
    if rule.kind != "strict":
        raise TypeError("simulate_strict needs a strict control rule")
    return _simulate(
        coeffs, rule, n_particles, T, dt, mode, seed, scenario, init, path, paths,
        relaxed=False,
    )


def simulate_relaxed(
    coeffs: CoefficientSet,
    rule: RelaxedRule,
    n_particles: int,
    T: float,
    dt: float,
    mode: str = "common",
    seed: int = 0,
    scenario: int = 0,
    init: InitSpec = InitSpec(),
    path: Optional[PoissonPath] = None,
    paths: Optional[list] = None,
) -> ParticleCloud:
    """Euler cloud with every coefficient averaged against the control measure."""
    if rule.kind != "relaxed":
        raise TypeError("simulate_relaxed needs a relaxed control rule")
    return _simulate(
        coeffs, rule, n_particles, T, dt, mode, seed, scenario, init, path, paths,
        relaxed=True,
    )


# ---------------------------------------------------------------------------
# Cost
# ---------------------------------------------------------------------------

def cost_of_cloud(cloud: ParticleCloud, coeffs: CoefficientSet) -> float:
    """Sample cost of one scenario: left-endpoint running integral + terminal."""
    times = cloud.grid.times
    total = 0.0
    for k in range(cloud.grid.n_steps):
        h = times[k + 1] - times[k]
        x = cloud.states[k]
        if cloud.controls is not None:
            u = cloud.controls[k]
            rho = JointEmpiricalMeasure.strict(x, u)
            f_vals = np.broadcast_to(
                np.asarray(coeffs.running_cost(x, rho, u), dtype=float), x.shape
            )
        else:
            support, qw = cloud.relaxed_controls[k]
            rho = _projected_joint(x, support, qw)
            vals = coeffs.running_cost(x[:, None], rho, support)
            f_vals = (np.broadcast_to(vals, support.shape) * qw).sum(axis=1)
        total += h * float(f_vals.mean())
    mu_T = cloud.measure_at(cloud.grid.n_steps)
    g_vals = np.asarray(
        coeffs.terminal_cost(cloud.states[-1], mu_T), dtype=float
    )
    total += float(np.broadcast_to(g_vals, cloud.states[-1].shape).mean())
    return total


def estimate_cost(clouds: Sequence[ParticleCloud], coeffs: CoefficientSet):
    """Mean cost over scenarios and its Monte Carlo standard error."""
    if not clouds:
        raise ValueError("need at least one scenario")
    samples = np.array([cost_of_cloud(c, coeffs) for c in clouds])
    mean = float(samples.mean())
    stderr = (
        float(samples.std(ddof=1) / math.sqrt(len(samples)))
        if len(samples) > 1
        else 0.0
    )
    return mean, stderr
