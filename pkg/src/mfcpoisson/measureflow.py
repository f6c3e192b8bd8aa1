"""Lifted dynamics on empirical measures.

The conditional state law evolves by a drift generator between Poisson events
and by a generalized measure shift at events: conditioning on the common path
turns every jump of the state into a jump of the law itself.  This module
realizes those objects exactly on finite atom clouds:

* ``aggregate_coeffs`` averages the model coefficients against a relaxed
  transition kernel, with the joint law formed by the Bayes product
  (law atoms) x (kernel rows);
* ``shift_adjoint`` is the post-jump law: every atom fans out along its
  kernel row and moves by the jump amplitude (adjoint of the test-function
  shift operator, realized by atom expansion);
* ``pair_A0`` pairs a smooth test function with the drift generator in weak
  form;
* ``fp_step`` predicts one step of test-function pairings for comparison
  against a particle cloud;
* ``ito_residual`` measures how closely a functional of the measure path
  follows its chain-rule decomposition (drift pairing plus event
  differences).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .coefficients import CoefficientSet
from .errors import CoverageError
from .measures import EmpiricalMeasure, JointEmpiricalMeasure


@dataclass(frozen=True)
class RelaxedKernel:
    """Transition kernel x -> probability on U, stored as aligned atom rows.

    Row i carries the support and weights of the control measure attached to
    the i-th atom of the accompanying state law.  Ragged supports are padded
    with zero-weight entries.
    """

    supports: np.ndarray  # (N, A)
    weights: np.ndarray  # (N, A), rows sum to 1

    def __post_init__(self):
        sup = np.atleast_2d(np.asarray(self.supports, dtype=float))
        w = np.atleast_2d(np.asarray(self.weights, dtype=float))
        if sup.shape != w.shape:
            raise ValueError("supports and weights must share a shape")
        if np.any(w < 0) or np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("kernel rows must be probability weights")
        sup.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "supports", sup)
        object.__setattr__(self, "weights", w)

    @property
    def n_rows(self) -> int:
        return self.supports.shape[0]

    @classmethod
    def dirac(cls, controls) -> "RelaxedKernel":
        u = np.asarray(controls, dtype=float).reshape(-1, 1)
        return cls(u, np.ones_like(u))

    @classmethod
    def shared(cls, n_rows: int, support, weights) -> "RelaxedKernel":
        support = np.asarray(support, dtype=float).reshape(-1)
        weights = np.asarray(weights, dtype=float).reshape(-1)
        return cls(
            np.tile(support, (n_rows, 1)), np.tile(weights / weights.sum(), (n_rows, 1))
        )

    @classmethod
    def from_control_measures(cls, qs) -> "RelaxedKernel":
        width = max(q.n_atoms for q in qs)
        sup = np.zeros((len(qs), width))
        w = np.zeros((len(qs), width))
        for i, q in enumerate(qs):
            k = q.n_atoms
            sup[i, :k] = q.atoms[:, 0]
            sup[i, k:] = q.atoms[0, 0]
            w[i, :k] = q.weights
        return cls(sup, w)

    def require_cover(self, mu: EmpiricalMeasure):
        if self.n_rows != mu.n_atoms:
            raise CoverageError(
                f"kernel has {self.n_rows} rows for {mu.n_atoms} atoms"
            )


@dataclass(frozen=True)
class SignedAtomMeasure:
    """Atoms with signed weights (difference of two probability measures)."""

    atoms: np.ndarray
    weights: np.ndarray

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def pairing(self, fn: Callable) -> float:
        return float(self.weights @ np.asarray(fn(self.atoms[:, 0]), dtype=float))


@dataclass(frozen=True)
class TestFunction:
    """Scalar C^2 test function with explicit first and second derivatives."""

    name: str
    value: Callable
    dx: Callable
    dxx: Callable


class TestFunctionDictionary:
    """Finite list of smooth test functions used for weak-form pairings."""

    def __init__(self, entries: Sequence[TestFunction]):
        self.entries = tuple(entries)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def check_consistency(self, points, tol: float = 1e-5, h: float = 1e-4) -> float:
        """Max finite-difference defect of the declared derivatives."""
        x = np.asarray(points, dtype=float)
        worst = 0.0
        for phi in self.entries:
            fd1 = (phi.value(x + h) - phi.value(x - h)) / (2 * h)
            fd2 = (phi.value(x + h) - 2 * phi.value(x) + phi.value(x - h)) / h**2
            worst = max(
                worst,
                float(np.max(np.abs(fd1 - phi.dx(x)))),
                float(np.max(np.abs(fd2 - phi.dxx(x)))),
            )
        if worst > tol:
            raise ValueError(f"dictionary derivatives inconsistent: defect {worst:.3g}")
        return worst


def _monomial(k: int) -> TestFunction:
    return TestFunction(
        name=f"x^{k}",
        value=lambda x, k=k: np.asarray(x, dtype=float) ** k,
        dx=lambda x, k=k: k * np.asarray(x, dtype=float) ** (k - 1) if k else 0.0 * np.asarray(x),
        dxx=lambda x, k=k: k * (k - 1) * np.asarray(x, dtype=float) ** (k - 2)
        if k >= 2
        else 0.0 * np.asarray(x),
    )


def _gaussian(center: float, width: float) -> TestFunction:
    inv2 = 1.0 / width**2

    def value(x):
        return np.exp(-0.5 * inv2 * (np.asarray(x, dtype=float) - center) ** 2)

    return TestFunction(
        name=f"gauss({center},{width})",
        value=value,
        dx=lambda x: -inv2 * (np.asarray(x, dtype=float) - center) * value(x),
        dxx=lambda x: (inv2**2 * (np.asarray(x, dtype=float) - center) ** 2 - inv2)
        * value(x),
    )


def _soft_clamp(level: float) -> TestFunction:
    # smooth saturating coordinate: level * tanh(x / level)
    def th(x):
        return np.tanh(np.asarray(x, dtype=float) / level)

    return TestFunction(
        name=f"clamp({level})",
        value=lambda x: level * th(x),
        dx=lambda x: 1.0 - th(x) ** 2,
        dxx=lambda x: -2.0 * th(x) * (1.0 - th(x) ** 2) / level,
    )


def default_dictionary() -> TestFunctionDictionary:
    """Constant, monomials to degree 4, two Gaussian bumps, a smooth clamp."""
    return TestFunctionDictionary(
        [_monomial(k) for k in range(5)]
        + [_gaussian(0.0, 1.0), _gaussian(1.0, 0.5), _soft_clamp(2.0)]
    )


# ---------------------------------------------------------------------------
# Aggregated coefficients and the shift operator
# ---------------------------------------------------------------------------

def joint_with_kernel(mu: EmpiricalMeasure, kernel: RelaxedKernel) -> JointEmpiricalMeasure:
    """Bayes product: joint law with atoms (x_i, u_ia), weights w_i * k_ia."""
    kernel.require_cover(mu)
    n, a = kernel.supports.shape
    return JointEmpiricalMeasure.strict(
        np.repeat(mu.atoms[:, 0], a),
        kernel.supports.reshape(-1),
        (mu.weights[:, None] * kernel.weights).reshape(-1),
    )


@dataclass(frozen=True)
class AggregatedCoefficients:
    """Kernel-averaged drift, squared diffusion, jump amplitudes at the atoms."""

    drift: np.ndarray  # (N,)
    diffusion_sq: np.ndarray  # (N,)
    jump: np.ndarray  # (N, n_marks)
    joint: JointEmpiricalMeasure


def aggregate_coeffs(
    mu: EmpiricalMeasure, kernel: RelaxedKernel, coeffs: CoefficientSet
) -> AggregatedCoefficients:
    """Pointwise kernel averages of the model coefficients at the atoms."""
    kernel.require_cover(mu)
    rho = joint_with_kernel(mu, kernel)
    x = mu.atoms[:, 0][:, None]
    sup, kw = kernel.supports, kernel.weights

    def avg(vals):
        return (np.broadcast_to(np.asarray(vals, dtype=float), sup.shape) * kw).sum(axis=1)

    bhat = avg(coeffs.drift(x, rho, sup))
    diff_sq = avg(np.asarray(coeffs.diffusion(x, rho, sup), dtype=float) ** 2)
    gam = np.stack(
        [avg(coeffs.jump(x, rho, sup, j)) for j in range(coeffs.jumps.n_marks)],
        axis=1,
    ) if coeffs.jumps.n_marks else np.zeros((mu.n_atoms, 0))
    return AggregatedCoefficients(bhat, diff_sq, gam, rho)


def apply_shift(
    fn: Callable, mu: EmpiricalMeasure, kernel: RelaxedKernel, mark: int,
    coeffs: CoefficientSet,
) -> np.ndarray:
    """Test-function shift operator: the kernel average of fn(x + jump) at each atom."""
    kernel.require_cover(mu)
    rho = joint_with_kernel(mu, kernel)
    x = mu.atoms[:, 0][:, None]
    sup, kw = kernel.supports, kernel.weights
    gamma = np.broadcast_to(
        np.asarray(coeffs.jump(x, rho, sup, mark), dtype=float), sup.shape
    )
    return (np.asarray(fn(x + gamma), dtype=float) * kw).sum(axis=1)


def shift_adjoint(
    mu: EmpiricalMeasure, kernel: RelaxedKernel, mark: int, coeffs: CoefficientSet
) -> EmpiricalMeasure:
    """Post-jump law: atom x_i expands to x_i + jump(x_i, rho, u_ia, z) with
    weight w_i * k_ia."""
    kernel.require_cover(mu)
    rho = joint_with_kernel(mu, kernel)
    x = mu.atoms[:, 0][:, None]
    sup, kw = kernel.supports, kernel.weights
    gamma = np.broadcast_to(
        np.asarray(coeffs.jump(x, rho, sup, mark), dtype=float), sup.shape
    )
    return EmpiricalMeasure(
        (x + gamma).reshape(-1), (mu.weights[:, None] * kw).reshape(-1)
    )


def apply_A1(
    mu: EmpiricalMeasure, kernel: RelaxedKernel, mark: int, coeffs: CoefficientSet
) -> SignedAtomMeasure:
    """Jump generator: shifted law minus the law itself, as a signed measure."""
    shifted = shift_adjoint(mu, kernel, mark, coeffs)
    return SignedAtomMeasure(
        np.vstack([shifted.atoms, mu.atoms]),
        np.concatenate([shifted.weights, -mu.weights]),
    )


def _pair_A0_aggregated(
    phi: TestFunction, mu: EmpiricalMeasure, agg: AggregatedCoefficients,
    coeffs: CoefficientSet,
) -> float:
    x = mu.atoms[:, 0]
    compensator = (
        agg.jump @ coeffs.jumps.intensities if coeffs.jumps.n_marks else 0.0
    )
    integrand = (agg.drift - compensator) * np.asarray(phi.dx(x), dtype=float)
    integrand = integrand + 0.5 * agg.diffusion_sq * np.asarray(phi.dxx(x), dtype=float)
    return float(mu.weights @ integrand)


def pair_A0(
    phi: TestFunction, mu: EmpiricalMeasure, kernel: RelaxedKernel,
    coeffs: CoefficientSet,
) -> float:
    """Weak-form drift generator: <(bhat - <gammahat, lambda>) phi' + diff phi''/2, mu>."""
    return _pair_A0_aggregated(phi, mu, aggregate_coeffs(mu, kernel, coeffs), coeffs)


def fp_step(
    mu: EmpiricalMeasure,
    kernel: RelaxedKernel,
    dt: float,
    events: Sequence[int],
    coeffs: CoefficientSet,
    dictionary: TestFunctionDictionary,
    jump_state: tuple[EmpiricalMeasure, RelaxedKernel] | None = None,
) -> dict:
    """One-step predicted pairings <phi, mu_{t+dt}> for every dictionary entry.

    ``events`` lists the mark indices of Poisson events in (t, t+dt]; their
    contribution is evaluated at ``jump_state`` (pre-jump law and kernel) when
    supplied, else at (mu, kernel).
    """
    jump_mu, jump_kernel = jump_state if jump_state is not None else (mu, kernel)
    agg = aggregate_coeffs(mu, kernel, coeffs)
    jump_pairings = {}
    for mark in events:
        signed = apply_A1(jump_mu, jump_kernel, mark, coeffs)
        for phi in dictionary:
            jump_pairings[phi.name] = jump_pairings.get(phi.name, 0.0) + signed.pairing(
                phi.value
            )
    out = {}
    for phi in dictionary:
        predicted = float(mu.weights @ np.asarray(phi.value(mu.atoms[:, 0]), dtype=float))
        predicted += dt * _pair_A0_aggregated(phi, mu, agg, coeffs)
        out[phi.name] = predicted + jump_pairings.get(phi.name, 0.0)
    return out


# ---------------------------------------------------------------------------
# Chain rule along a measure path
# ---------------------------------------------------------------------------

@dataclass
class MeasurePath:
    """Discretized measure flow: per-node laws, per-step kernels, event records.

    ``jumps`` maps a node index to the events landing there, each carrying the
    pre-jump law and the kernel in force just before the event.
    """

    times: np.ndarray
    measures: list
    kernels: list
    jumps: dict


def ito_residual(evaluator, path: MeasurePath, coeffs: CoefficientSet) -> np.ndarray:
    """Per-step defect of the chain rule for a functional of the measure flow.

    ``evaluator`` provides ``value(t, mu)``, ``dt(t, mu)``, ``dmu(t, mu, x)``
    and ``dx_dmu(t, mu, x)`` (the last two vectorized over atoms).  The
    residual of step k is the increment of ``value`` minus the drift pairing
    minus the event differences.
    """
    for name in ("value", "dt", "dmu", "dx_dmu"):
        if not hasattr(evaluator, name):
            raise AttributeError(f"evaluator lacks {name!r}")
    times = path.times
    n_steps = len(times) - 1
    residuals = np.empty(n_steps)
    for k in range(n_steps):
        t, t_next = times[k], times[k + 1]
        h = t_next - t
        mu, kernel = path.measures[k], path.kernels[k]
        agg = aggregate_coeffs(mu, kernel, coeffs)
        x = mu.atoms[:, 0]
        compensator = (
            agg.jump @ coeffs.jumps.intensities if coeffs.jumps.n_marks else 0.0
        )
        drift = evaluator.dt(t, mu) + float(
            mu.weights
            @ (
                (agg.drift - compensator) * np.asarray(evaluator.dmu(t, mu, x), dtype=float)
                + 0.5 * agg.diffusion_sq * np.asarray(evaluator.dx_dmu(t, mu, x), dtype=float)
            )
        )
        jump_part = 0.0
        for mark, pre_mu, pre_kernel in path.jumps.get(k + 1, ()):
            shifted = shift_adjoint(pre_mu, pre_kernel, mark, coeffs)
            jump_part += evaluator.value(t_next, shifted) - evaluator.value(t_next, pre_mu)
        increment = evaluator.value(t_next, path.measures[k + 1]) - evaluator.value(t, mu)
        residuals[k] = increment - drift * h - jump_part
    return residuals
