import numpy as np
import pytest

from mfcpoisson.errors import DimensionMismatchError, MeasureKindError, SizeLimitError
from mfcpoisson.measures import (
    Box,
    ControlMeasure,
    EmpiricalMeasure,
    JointEmpiricalMeasure,
    extend,
    fm_distance,
    kr_distance,
    project,
    second_moment,
    transport_cost,
)

from _oracles import FM_LATTICE, fm_bruteforce_1d
from conftest import random_measure


def dirac(x):
    return EmpiricalMeasure(np.array([[float(x)]]), np.array([1.0]))


class TestConstruction:
    def test_weights_must_normalize(self):
        with pytest.raises(ValueError):
            EmpiricalMeasure(np.array([[0.0], [1.0]]), np.array([0.5, 0.6]))

    def test_weights_nonnegative(self):
        with pytest.raises(ValueError):
            EmpiricalMeasure(np.array([[0.0], [1.0]]), np.array([1.5, -0.5]))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            EmpiricalMeasure(np.array([[0.0]]), np.array([0.5, 0.5]))

    def test_atoms_are_immutable(self):
        mu = dirac(0.0)
        with pytest.raises(ValueError):
            mu.atoms[0, 0] = 1.0

    def test_control_measure_outside_box(self):
        box = Box(np.array([-1.0]), np.array([1.0]))
        with pytest.raises(ValueError):
            ControlMeasure(np.array([[2.0]]), np.array([1.0]), box)
        ControlMeasure(np.array([[0.5]]), np.array([1.0]), box)

    def test_joint_kind_is_homogeneous(self):
        with pytest.raises(MeasureKindError):
            JointEmpiricalMeasure(
                np.array([[0.0], [1.0]]),
                (ControlMeasure.dirac(0.0), 1.0),
                np.array([0.5, 0.5]),
            )


class TestSerialization:
    def test_round_trip(self):
        mu = EmpiricalMeasure(np.array([[0.0, 1.0], [2.0, -1.0]]), np.array([0.25, 0.75]))
        back = EmpiricalMeasure.from_json(mu.to_json())
        np.testing.assert_array_equal(back.atoms, mu.atoms)
        np.testing.assert_allclose(back.weights, mu.weights, rtol=0, atol=1e-15)

    def test_load_renormalizes_within_tolerance(self):
        data = {"atoms": [[0.0], [1.0]], "weights": [0.5 + 2e-10, 0.5]}
        mu = EmpiricalMeasure.from_dict(data)
        assert abs(mu.weights.sum() - 1.0) < 1e-15

    def test_load_rejects_bad_normalization(self):
        data = {"atoms": [[0.0], [1.0]], "weights": [0.6, 0.5]}
        with pytest.raises(ValueError):
            EmpiricalMeasure.from_dict(data)

    def test_joint_round_trip(self):
        rho = JointEmpiricalMeasure.strict([[0.0], [1.0]], [[2.0], [3.0]])
        back = JointEmpiricalMeasure.from_json(rho.to_json())
        np.testing.assert_array_equal(back.states, rho.states)
        np.testing.assert_array_equal(back.controls, rho.controls)


class TestFmDistance:
    def test_identical_measures(self):
        assert fm_distance(dirac(0.0), dirac(0.0)) == pytest.approx(0.0, abs=1e-12)

    def test_distant_diracs_truncate_at_two(self):
        # oracle: f(0)=1, f(3)=-1 is feasible, so the sup saturates at 2
        val = fm_distance(dirac(0.0), dirac(3.0))
        assert val == pytest.approx(2.0, abs=1e-9)
        assert val == pytest.approx(
            fm_bruteforce_1d([0.0], [1.0], [3.0], [1.0]), abs=1e-9
        )

    def test_close_diracs_untruncated(self):
        val = fm_distance(dirac(0.0), dirac(0.5))
        assert val == pytest.approx(0.5, abs=1e-9)
        assert val == pytest.approx(
            fm_bruteforce_1d([0.0], [1.0], [0.5], [1.0]), abs=1e-9
        )

    def test_agrees_with_bruteforce_on_random_pairs(self, rng):
        for _ in range(10):
            na, nb = rng.integers(1, 5, size=2)
            a = random_measure(rng, int(na), lattice=FM_LATTICE)
            b = random_measure(rng, int(nb), lattice=FM_LATTICE)
            oracle = fm_bruteforce_1d(
                a.atoms.ravel(), a.weights, b.atoms.ravel(), b.weights
            )
            assert fm_distance(a, b) == pytest.approx(oracle, abs=1e-6)

    def test_dimension_mismatch(self):
        a = EmpiricalMeasure(np.zeros((1, 1)), np.array([1.0]))
        b = EmpiricalMeasure(np.zeros((1, 2)), np.array([1.0]))
        with pytest.raises(DimensionMismatchError):
            fm_distance(a, b)

    def test_size_limit(self, rng):
        big = random_measure(rng, 65)
        with pytest.raises(SizeLimitError):
            fm_distance(big, big)

    def test_bounded_by_two(self, rng):
        for _ in range(20):
            a = random_measure(rng, int(rng.integers(1, 6)), span=50.0)
            b = random_measure(rng, int(rng.integers(1, 6)), span=50.0)
            assert fm_distance(a, b) <= 2.0 + 1e-9

    def test_metric_properties(self, rng):
        for _ in range(12):
            triple = [random_measure(rng, 5) for _ in range(3)]
            d01 = fm_distance(triple[0], triple[1])
            d10 = fm_distance(triple[1], triple[0])
            d12 = fm_distance(triple[1], triple[2])
            d02 = fm_distance(triple[0], triple[2])
            assert d01 >= -1e-12
            assert d01 == pytest.approx(d10, abs=1e-9)
            assert d02 <= d01 + d12 + 1e-9


def relaxed_point(x, q):
    return JointEmpiricalMeasure.relaxed(np.array([[float(x)]]), (q,))


class TestKrDistance:
    def test_identity(self):
        xi = relaxed_point(0.0, ControlMeasure.dirac(0.3))
        assert kr_distance(xi, xi) == pytest.approx(0.0, abs=1e-12)

    def test_state_shift_only(self):
        q = ControlMeasure.dirac(0.7)
        assert kr_distance(relaxed_point(0.0, q), relaxed_point(1.0, q)) == pytest.approx(
            1.0, abs=1e-9
        )

    def test_control_shift_only(self):
        a = ControlMeasure.dirac(0.1)
        b = ControlMeasure.dirac(0.4)
        assert kr_distance(relaxed_point(0.0, a), relaxed_point(0.0, b)) == pytest.approx(
            0.3, abs=1e-9
        )

    def test_rejects_strict_kind(self):
        rho = JointEmpiricalMeasure.strict([[0.0]], [[0.0]])
        xi = relaxed_point(0.0, ControlMeasure.dirac(0.0))
        with pytest.raises(MeasureKindError):
            kr_distance(rho, xi)

    def _random_relaxed(self, rng, n_atoms=5):
        qs = []
        for _ in range(n_atoms):
            k = int(rng.integers(1, 3))
            w = rng.uniform(0.2, 1.0, size=k)
            qs.append(ControlMeasure(rng.uniform(-1, 1, size=(k, 1)), w / w.sum()))
        w = rng.uniform(0.2, 1.0, size=n_atoms)
        return JointEmpiricalMeasure.relaxed(
            rng.uniform(-2, 2, size=(n_atoms, 1)), qs, w / w.sum()
        )

    def test_metric_properties(self, rng):
        for _ in range(6):
            xs = [self._random_relaxed(rng) for _ in range(3)]
            d01 = kr_distance(xs[0], xs[1])
            assert d01 >= -1e-12
            assert d01 == pytest.approx(kr_distance(xs[1], xs[0]), abs=1e-9)
            assert kr_distance(xs[0], xs[2]) <= d01 + kr_distance(xs[1], xs[2]) + 1e-9

    def test_dominates_projected_transport_for_dirac_controls(self, rng):
        # strict-joint FM transport with cost min(|dx|+|du|, 2) never exceeds kr
        for _ in range(8):
            n = int(rng.integers(1, 5))
            xis = []
            for _ in range(2):
                us = rng.uniform(-1, 1, size=n)
                qs = [ControlMeasure.dirac(u) for u in us]
                w = rng.uniform(0.2, 1.0, size=n)
                xis.append(
                    JointEmpiricalMeasure.relaxed(
                        rng.uniform(-2, 2, size=(n, 1)), qs, w / w.sum()
                    )
                )
            p0, p1 = project(xis[0]), project(xis[1])
            dx = np.abs(p0.states[:, None, 0] - p1.states[None, :, 0])
            du = np.abs(p0.controls[:, None, 0] - p1.controls[None, :, 0])
            proj_dist = transport_cost(p0.weights, p1.weights, np.minimum(dx + du, 2.0))
            assert kr_distance(xis[0], xis[1]) >= proj_dist - 1e-9


class TestProject:
    def test_dirac_control(self):
        xi = relaxed_point(1.5, ControlMeasure.dirac(0.25))
        rho = project(xi)
        assert rho.n_atoms == 1
        assert rho.states[0, 0] == 1.5
        assert rho.controls[0, 0] == 0.25
        assert rho.weights[0] == 1.0

    def test_two_point_expansion(self):
        q = ControlMeasure(np.array([[-1.0], [1.0]]), np.array([0.5, 0.5]))
        rho = project(relaxed_point(0.0, q))
        np.testing.assert_allclose(rho.controls.ravel(), [-1.0, 1.0])
        np.testing.assert_allclose(rho.weights, [0.5, 0.5])

    def test_mixture_expands_to_four_atoms(self):
        qa = ControlMeasure(np.array([[0.0], [1.0]]), np.array([0.3, 0.7]))
        qb = ControlMeasure(np.array([[-1.0], [2.0]]), np.array([0.6, 0.4]))
        xi = JointEmpiricalMeasure.relaxed(
            np.array([[0.0], [5.0]]), (qa, qb), np.array([0.25, 0.75])
        )
        rho = project(xi)
        assert rho.n_atoms == 4
        np.testing.assert_allclose(
            rho.weights, [0.25 * 0.3, 0.25 * 0.7, 0.75 * 0.6, 0.75 * 0.4]
        )

    def test_affine_in_the_measure(self, rng):
        # projecting a lambda-mixture equals the mixture of projections atomwise
        lam = 0.3
        qs = [
            ControlMeasure(rng.uniform(-1, 1, size=(2, 1)), np.array([0.4, 0.6]))
            for _ in range(4)
        ]
        xi1 = JointEmpiricalMeasure.relaxed(
            rng.normal(size=(2, 1)), qs[:2], np.array([0.5, 0.5])
        )
        xi2 = JointEmpiricalMeasure.relaxed(
            rng.normal(size=(2, 1)), qs[2:], np.array([0.2, 0.8])
        )
        mix = JointEmpiricalMeasure.relaxed(
            np.vstack([xi1.states, xi2.states]),
            tuple(xi1.controls) + tuple(xi2.controls),
            np.concatenate([lam * xi1.weights, (1 - lam) * xi2.weights]),
        )
        got = project(mix)
        p1, p2 = project(xi1), project(xi2)
        np.testing.assert_allclose(got.states, np.vstack([p1.states, p2.states]))
        np.testing.assert_allclose(
            got.weights, np.concatenate([lam * p1.weights, (1 - lam) * p2.weights])
        )


def clipped_m2sq(rho):
    vals = np.sum(rho.states**2, axis=1) + np.sum(rho.controls**2, axis=1)
    return float(rho.weights @ np.minimum(vals, 1.0))


class TestExtend:
    def test_total_mass(self):
        xi = relaxed_point(3.0, ControlMeasure.dirac(-1.0))
        assert extend(lambda rho: float(rho.weights.sum()), xi) == pytest.approx(1.0)

    def test_dirac_control_consistency(self):
        # lifting a strict joint through Dirac controls changes nothing
        rho = JointEmpiricalMeasure.strict(
            [[0.5], [1.0], [-2.0]], [[0.1], [0.2], [0.3]], [0.2, 0.3, 0.5]
        )
        xi = JointEmpiricalMeasure.dirac_lift(rho)
        h = lambda r: float(second_moment(r)) ** 2
        assert extend(h, xi) == pytest.approx(h(rho), abs=1e-12)

    def test_linear_functional_mixes(self):
        h = lambda r: float(r.weights @ r.controls[:, 0])
        qa = ControlMeasure(np.array([[0.0], [1.0]]), np.array([0.5, 0.5]))
        qb = ControlMeasure.dirac(2.0)
        xi = JointEmpiricalMeasure.relaxed(
            np.zeros((2, 1)), (qa, qb), np.array([0.5, 0.5])
        )
        assert extend(h, xi) == pytest.approx(0.5 * 0.5 + 0.5 * 2.0)

    def test_lipschitz_transfer(self, rng):
        # clip(|x|^2+|u|^2, 1) is 2-Lipschitz and bounded by 1, so its measure
        # functional transfers through the projection with constant 2
        for _ in range(6):
            xis = []
            for _ in range(2):
                n = int(rng.integers(1, 4))
                qs = [
                    ControlMeasure(rng.uniform(-1, 1, size=(2, 1)), np.array([0.5, 0.5]))
                    for _ in range(n)
                ]
                w = rng.uniform(0.2, 1.0, size=n)
                xis.append(
                    JointEmpiricalMeasure.relaxed(
                        rng.uniform(-1.5, 1.5, size=(n, 1)), qs, w / w.sum()
                    )
                )
            gap = abs(extend(clipped_m2sq, xis[0]) - extend(clipped_m2sq, xis[1]))
            assert gap <= 2.0 * kr_distance(xis[0], xis[1]) + 1e-9


class TestSecondMoment:
    def test_zero(self):
        rho = JointEmpiricalMeasure.strict([[0.0]], [[0.0]])
        assert float(second_moment(rho)) == 0.0

    def test_pythagorean_point(self):
        rho = JointEmpiricalMeasure.strict([[3.0]], [[4.0]])
        assert float(second_moment(rho)) == pytest.approx(5.0, abs=1e-12)

    def test_two_point_average(self):
        rho = JointEmpiricalMeasure.strict(
            [[1.0], [0.0]], [[0.0], [1.0]], [0.5, 0.5]
        )
        assert float(second_moment(rho)) == pytest.approx(1.0, abs=1e-12)
