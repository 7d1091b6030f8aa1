from __future__ import annotations

import math

import numpy as np
import pytest

from fspde_lab.coupling_harnack import (SingularGramian, bound_ratios, build_plan, couple_batch,
                                        default_f_bank, degenerate_rate, estimate_harnack,
                                        harnack_from_run, pair_distance, qtilde_matrix,
                                        run_plan, run_plan_batch, synchronous_couple,
                                        terminal_gaps)
from fspde_lab.drifts import PairDrift
from fspde_lab.spectral_model import DegenerateModel, SpectralData

from conftest import const, contraction_model, diagonal_degenerate, scalar_degenerate

# frozen oracle values: sympy closed forms of int_0^T s(T-s) e^{-2as} ds
QT_A05_T1 = 0.1036383235143270
QT_A15_T2 = 0.1488825932375308


def _ou_model(a, r0=0.25, m=25):
    spec = SpectralData([1.0], [1.0])
    return DegenerateModel([[-1.0]], spec, [[1.0]], [[-a]], PairDrift(None, None, 0.0, 0.0),
                           0.0, 0.0, 0.0, r0, 0.5, m=m)


class TestSynchronous:
    def test_identical_initial_gives_zero_gap(self):
        model = contraction_model(m=8)
        b = couple_batch(model, np.ones((9, 4)), np.ones((9, 4)), 1.0, 0, range(3))
        assert np.all(b.gapX == 0.0)
        assert bound_ratios(model, b) is None

    def test_gap_starts_at_initial(self):
        model = contraction_model(m=8)
        g = model.grid
        rec = synchronous_couple(model, const(g, [1, 0, 0, 0]), const(g, [0, 0, 0, 0]), 2.0, 1)
        assert rec.gapX[0] == pytest.approx(1.0) and rec.gap0_x == pytest.approx(1.0)
        assert rec.bound_ok is True
        assert rec.gapY is None

    def test_linear_gap_is_noise_free(self):
        # linear drift: the gap process does not depend on the noise
        model = contraction_model(m=8)
        g = model.grid
        a = couple_batch(model, const(g, [1, 1, 0, 0]), const(g, [0] * 4), 1.0, 3, [0])
        b = couple_batch(model, const(g, [1, 1, 0, 0]), const(g, [0] * 4), 1.0, 9, [0])
        np.testing.assert_allclose(a.gapX, b.gapX, rtol=1e-12)

    def test_degenerate_pair(self, tmp_path):
        model = scalar_degenerate()
        g = model.grid
        xi = (const(g, [1.0]), const(g, [0.0]))
        eta = (const(g, [0.0]), const(g, [0.5]))
        rec = synchronous_couple(model, xi, eta, 1.0, 0)
        assert rec.alpha is not None and rec.gap0_y == pytest.approx(0.5)
        np.testing.assert_allclose(rec.weighted, rec.alpha * rec.gapX + rec.gapY)
        rec.to_csv(tmp_path / "c.csv")
        assert (tmp_path / "c.csv").read_text().startswith("time,gap_x,gap_y,weighted\n")

    def test_degenerate_rate(self):
        assert degenerate_rate(scalar_degenerate()).positive


class TestGramian:
    def test_scalar_cubic(self):
        q = qtilde_matrix(_ou_model(0.0), 1.3)
        assert abs(q[0, 0] - 1.3 ** 3 / 6) <= 1e-10

    @pytest.mark.parametrize("a,T,val", [(0.5, 1.0, QT_A05_T1), (1.5, 2.0, QT_A15_T2)])
    def test_oracle(self, a, T, val):
        assert qtilde_matrix(_ou_model(a), T)[0, 0] == pytest.approx(val, rel=1e-12)

    def test_singular(self):
        spec = SpectralData([1.0, 2.0], [1.0, 1.0])
        B = np.array([[1.0, 0.0], [0.0, 0.0]])
        model = DegenerateModel(np.diag([-1.0, -1.0]), spec, B, np.zeros((2, 2)),
                                PairDrift(None, None, 0.0, 0.0), 0.0, 0.0, 0.0, 0.25, 0.5, m=5)
        with pytest.raises(SingularGramian):
            qtilde_matrix(model, 1.0)
        with pytest.raises(ValueError):
            qtilde_matrix(model, 0.0)


class TestPlan:
    def test_scalar_shift(self):
        model = _ou_model(0.0)
        g = model.grid
        plan = build_plan(model, (const(g, [0.0]), const(g, [0.0])),
                          (const(g, [1.0]), const(g, [0.0])), 1.25)
        assert plan.T == pytest.approx(1.0)
        assert plan.qtilde[0, 0] == pytest.approx(1 / 6)
        assert plan.e_vec[0] == pytest.approx(-6.0)
        assert abs(plan.xdiff[plan.kink_step, 0]) <= 1e-10
        np.testing.assert_allclose(plan.ydiff[plan.kink_step:], 0.0, atol=1e-15)

    def test_plan_validation(self):
        model = _ou_model(0.0)
        g = model.grid
        pair = (const(g, [0.0]), const(g, [0.0]))
        with pytest.raises(ValueError):
            build_plan(model, pair, pair, 0.2)
        with pytest.raises(ValueError):
            build_plan(model, pair, pair, 1.25, dt=0.5)

    def test_identical_pairs(self):
        model = scalar_degenerate()
        g = model.grid
        pair = (const(g, [0.3]), const(g, [-0.2]))
        plan = build_plan(model, pair, pair, 1.25)
        assert plan.trivial
        rec, gir = run_plan(plan, model, 5)
        assert gir.log_R == 0.0 and gir.R == 1.0
        assert np.all(rec.gapX == 0.0) and np.all(rec.gapY == 0.0)

    def test_terminal_coupling_nonlinear_drift(self):
        model = scalar_degenerate()
        g = model.grid
        plan = build_plan(model, (const(g, [0.0]), const(g, [0.0])),
                          (const(g, [0.4]), const(g, [-0.3])), 1.25)
        run = run_plan_batch(plan, model, 2, range(20))
        gx, gy = terminal_gaps(run)
        assert np.all(gx <= 1e-6) and np.all(gy <= 1e-6)
        # the coupled segments agree on the whole final window
        assert np.all(run.gapX[:, -1] <= 1e-6) and np.all(run.gapY[:, -1] <= 1e-6)

    def test_chunk_invariance(self):
        model = scalar_degenerate()
        g = model.grid
        plan = build_plan(model, (const(g, [0.0]), const(g, [0.0])),
                          (const(g, [0.1]), const(g, [0.0])), 1.25)
        a = run_plan_batch(plan, model, 1, range(6), chunk=4)
        b = run_plan_batch(plan, model, 1, range(6), chunk=6)
        np.testing.assert_array_equal(a.log_R, b.log_R)


class TestHarnack:
    def test_report(self, tmp_path):
        model = scalar_degenerate()
        g = model.grid
        p1 = (const(g, [0.0]), const(g, [0.0]))
        p2 = (const(g, [0.1]), const(g, [0.0]))
        rep = estimate_harnack(model, p1, p2, 1.25, M=500, seed=3)
        assert np.all(rep.holds)
        assert rep.dist == pytest.approx(0.1)
        assert rep.c_hat == pytest.approx(rep.log_ER2 / 0.01)
        assert len(rep.f_names) == 5
        rep.to_csv(tmp_path / "h.csv")
        assert len((tmp_path / "h.csv").read_text().splitlines()) == 6

    def test_unbounded_f_rejected(self):
        model = scalar_degenerate()
        g = model.grid
        pair = (const(g, [0.0]), const(g, [0.0]))
        run = run_plan_batch(build_plan(model, pair, pair, 1.25), model, 0, range(3))
        with pytest.raises(ValueError):
            harnack_from_run(run, 0.0, {"big": lambda x, y: 2.0 * np.ones(x.shape[0])})

    def test_bank_bounded(self):
        rng = np.random.default_rng(0)
        x, y = rng.normal(size=(2, 10, 4, 1)) * 5
        for f in default_f_bank().values():
            assert np.all(np.abs(f(x, y)) <= 1.0)

    def test_pair_distance(self):
        a = (np.zeros((3, 1)), np.zeros((3, 1)))
        b = (np.array([[0.0], [3.0], [0.0]]), np.array([[0.0], [4.0], [1.0]]))
        assert pair_distance(a, b) == 5.0

    def test_diagonal_plan(self):
        model = diagonal_degenerate(m=25)
        g = model.grid
        plan = build_plan(model, (const(g, [0, 0]), const(g, [0, 0])),
                          (const(g, [0.2, -0.1]), const(g, [0.1, 0.1])), 1.25)
        np.testing.assert_allclose(plan.xdiff[plan.kink_step], 0.0, atol=1e-10)
        assert math.isfinite(plan.meta["qtilde_cond"])
