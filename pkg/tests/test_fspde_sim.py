from __future__ import annotations

import csv
import math

import numpy as np
import pytest

from fspde_lab.drifts import (DiscreteDelay, DistributedDelay, GridMismatch, JointSupForm,
                              PairDrift, SegmentGrid, SupForm, drift_from_dict)
from fspde_lab.fspde_sim import (Segment, fmt17, n_steps, segment_sup_norm,
                                 simulate_degenerate, simulate_nondegenerate,
                                 simulate_nondegenerate_batch, step_nondegenerate,
                                 stoch_conv_path, stoch_conv_segments, window_sup, write_csv)
from fspde_lab.linalg import decay_coeff, ou_step_std, ou_variance, phi_matrices, scalar_phi
from fspde_lab.rng import chunks, path_normals, path_rng
from fspde_lab.spectral_model import DegenerateModel, NondegenerateModel, SpectralData

from conftest import contraction_model, scalar_degenerate

OU_VAR_1_1 = 0.432332358381694  # (1 - e^{-2})/2


class TestGridAndDrifts:
    def test_node_index(self):
        g = SegmentGrid(0.5, 4)
        assert g.node_index(0.0) == 4 and g.node_index(-0.5) == 0 and g.node_index(-0.25) == 2
        with pytest.raises(GridMismatch):
            g.node_index(-0.3)
        with pytest.raises(GridMismatch):
            g.node_index(-0.75)

    def test_discrete(self):
        g = SegmentGrid(1.0, 2)
        vals = np.array([[1.0, 0.0], [2.0, 1.0], [3.0, 5.0]])
        b = DiscreteDelay([1.0, 0.0], [[[0, 1], [1, 0]], 2.0], offset=[1.0, 1.0])
        np.testing.assert_allclose(b.evaluate(vals, g), [1 + 0 + 6, 1 + 1 + 10])
        assert b.lipschitz(2) == pytest.approx(3.0)

    def test_distributed(self):
        g = SegmentGrid(1.0, 2)
        vals = np.array([[1.0], [2.0], [4.0]])
        b = DistributedDelay([-1.0, 0.0], [0.5, -0.5], 2.0)
        np.testing.assert_allclose(b.evaluate(vals, g), [2.0 * (0.5 - 2.0)])
        assert b.lipschitz() == 2.0
        with pytest.raises(ValueError):
            DistributedDelay([0.0, -1.0], [0.7, 0.7], 1.0)

    def test_sup_form(self):
        g = SegmentGrid(1.0, 2)
        vals = np.array([[1.0, 0.0], [0.0, 3.0], [-1.0, 1.0]])
        b = SupForm([1.0, 1.0], [0.0, 1.0])
        np.testing.assert_allclose(b.evaluate(vals, g), [0.0, 3.0])
        assert b.lipschitz() == pytest.approx(math.sqrt(2))
        with pytest.raises(ValueError):
            SupForm([1.0], [1.0, 1.0])

    def test_sup_form_lipschitz_bound(self):
        g = SegmentGrid(1.0, 4)
        b = SupForm(np.linspace(-1, 1, 10).reshape(5, 2), [1.0, 0.0])
        rng = np.random.default_rng(0)
        for _ in range(200):
            u, v = rng.normal(size=(2, 5, 2))
            lhs = np.linalg.norm(b.evaluate(u, g) - b.evaluate(v, g))
            assert lhs <= b.lipschitz() * segment_sup_norm(u - v) + 1e-12

    def test_joint_sup(self):
        g = SegmentGrid(1.0, 1)
        b = JointSupForm(1.0, 2.0, [1.0])
        x = np.array([[1.0], [0.0]])
        y = np.array([[0.0], [-2.0]])
        np.testing.assert_allclose(b.evaluate(x, y, g), [4.0])
        with pytest.raises(ValueError):
            b.evaluate(np.zeros((2, 2)), np.zeros((2, 1)), g)

    def test_round_trip(self):
        for d in (DiscreteDelay([0.5], [[[1.0]]], offset=[0.1]),
                  DistributedDelay([-0.5], [1.0], 0.3),
                  SupForm([1.0], [1.0]),
                  PairDrift(DiscreteDelay([0.0], [1.0]), None, 1.0, 0.0),
                  JointSupForm(0.1, 0.2, [1.0])):
            assert drift_from_dict(d.to_dict()).to_dict() == d.to_dict()

    def test_row_mismatch(self):
        with pytest.raises(GridMismatch):
            DistributedDelay([0.0], [1.0], 1.0).evaluate(np.zeros((3, 1)), SegmentGrid(1.0, 4))


class TestLinalg:
    def test_phi_scalar_vs_matrix(self):
        a = np.array([[-1.0, 0.3], [0.0, -2.0]])
        phis = phi_matrices(a, 0.1, 2)
        np.testing.assert_allclose(phis[0], __import__("scipy.linalg").linalg.expm(0.1 * a),
                                   rtol=1e-12)
        d = phi_matrices(np.diag([-1.0, -2.0]), 0.1, 2)
        np.testing.assert_allclose(np.diagonal(d[2]), scalar_phi(2, np.array([-0.1, -0.2])))

    def test_phi_values(self):
        z = np.array([1e-9, 0.3, -2.0])
        np.testing.assert_allclose(scalar_phi(1, z), np.expm1(z) / z, rtol=1e-12)
        zb = z[1:]
        np.testing.assert_allclose(scalar_phi(2, zb), (np.expm1(zb) - zb) / zb ** 2, rtol=1e-12)
        assert scalar_phi(2, z[:1])[0] == pytest.approx(0.5 + 1e-9 / 6, rel=1e-15)

    def test_ou_coefficients(self):
        assert decay_coeff(np.array([0.0]), 0.1)[0] == pytest.approx(0.1)
        assert ou_step_std(np.array([1.0]), 1.0)[0] ** 2 == pytest.approx(OU_VAR_1_1, rel=1e-14)
        assert ou_variance(np.array([1.0]), 2.0, 1.0)[0] == pytest.approx(4 * OU_VAR_1_1)


class TestRng:
    def test_path_independence(self):
        a = path_normals(7, [3], (5,))
        b = path_normals(7, range(5), (5,))
        np.testing.assert_array_equal(a[0], b[3])
        assert not np.array_equal(b[0], b[1])

    def test_negative(self):
        with pytest.raises(ValueError):
            path_rng(-1, 0)

    def test_chunks(self):
        assert [list(r) for r in chunks(5, 2)] == [[0, 1], [2, 3], [4]]


class TestSimulation:
    def test_noiseless_linear_decay(self):
        spec = SpectralData([1.0, 3.0], [1.0, 1.0])
        model = NondegenerateModel(spec, 0.2, DistributedDelay([0.0], [1.0], 0.0), 0.0, 0.5, 10)
        rec = simulate_nondegenerate(model, Segment.constant(model.grid, [1.0, 2.0]), 2.0, 0,
                                     keep_modes=True, noiseless=True)
        expect = np.exp(-np.outer(rec.times, [1.0, 3.0])) * [1.0, 2.0]
        np.testing.assert_allclose(rec.modes, expect, rtol=1e-12)

    def test_delay_recursion_oracle(self):
        # scalar x' = -x + 0.5 x(t - 0.5), frozen drift per step
        spec = SpectralData([1.0], [0.0])
        model = NondegenerateModel(spec, 0.2, DiscreteDelay([0.5], [0.5]), 0.5, 0.5, 5)
        rec = simulate_nondegenerate(model, np.ones((6, 1)), 1.0, 0, keep_modes=True)
        dt = 0.1
        hist = [1.0] * 6
        for _ in range(10):
            hist.append(math.exp(-dt) * hist[-1] + (1 - math.exp(-dt)) * 0.5 * hist[-6])
        np.testing.assert_allclose(rec.modes[:, 0], hist[5:], rtol=1e-14)

    def test_step_matches_batch(self):
        model = contraction_model(m=8)
        seg = Segment.constant(model.grid, np.ones(4))
        noise = path_rng(3, 0).standard_normal((4, 4))
        for k in range(4):
            seg = step_nondegenerate(seg, model, model.grid.dt, noise[k])
        H = simulate_nondegenerate_batch(model, np.ones((9, 4)), 4 * model.grid.dt, 3, 1)
        np.testing.assert_allclose(seg.values, H[0, 4:], rtol=1e-14)

    def test_step_validation(self):
        model = contraction_model(m=8)
        seg = Segment.zeros(model.grid, 4)
        with pytest.raises(ValueError):
            step_nondegenerate(seg, model, 0.2, np.zeros(4))
        with pytest.raises(ValueError):
            step_nondegenerate(seg, model, model.grid.dt, np.full(4, np.nan))
        with pytest.raises(GridMismatch):
            step_nondegenerate(Segment.zeros(SegmentGrid(0.5, 4), 4), model, model.grid.dt,
                               np.zeros(4))

    def test_chunking_invariant(self):
        model = contraction_model(m=8)
        a = simulate_nondegenerate_batch(model, np.ones((9, 4)), 1.0, 5, 7, chunk=2)
        b = simulate_nondegenerate_batch(model, np.ones((9, 4)), 1.0, 5, 7, chunk=100)
        np.testing.assert_array_equal(a, b)

    def test_reproducible_record(self):
        model = contraction_model(m=8)
        a = simulate_nondegenerate(model, np.ones((9, 4)), 1.0, 11, path=2)
        b = simulate_nondegenerate(model, np.ones((9, 4)), 1.0, 11, path=2)
        np.testing.assert_array_equal(a.supnorms, b.supnorms)
        assert a.times[-1] == pytest.approx(1.0)

    def test_T_not_multiple(self):
        with pytest.raises(ValueError):
            n_steps(1.03, 0.1)

    def test_bad_initial(self):
        model = contraction_model(m=8)
        with pytest.raises(GridMismatch):
            simulate_nondegenerate(model, np.ones((5, 4)), 1.0, 0)
        with pytest.raises(ValueError):
            simulate_nondegenerate(model, np.full((9, 4), np.inf), 1.0, 0)

    def test_degenerate_record(self, tmp_path):
        model = scalar_degenerate()
        init = (np.ones((26, 1)), np.zeros((26, 1)))
        rec = simulate_degenerate(model, init, 1.0, 0, keep_modes=True)
        assert rec.supnorms.shape == (101,)
        assert np.all(rec.supnorms >= rec.components["supnorm_x"] - 1e-15)
        rec.to_csv(tmp_path / "p.csv")
        header = next(csv.reader(open(tmp_path / "p.csv")))
        assert header[:4] == ["time", "supnorm", "supnorm_x", "supnorm_y"]

    @staticmethod
    def _noiseless_scalar_error(m):
        # no drift, A0 = 0: Y = e^{-t} y0, X = x0 e^{-t} + y0 t e^{-t}
        spec = SpectralData([1.0], [1.0])
        model = DegenerateModel([[-1.0]], spec, [[1.0]], [[0.0]], PairDrift(None, None, 0, 0),
                                0.0, 0.0, 0.0, 0.5, 0.5, m=m)
        rec = simulate_degenerate(model, (np.full((m + 1, 1), 0.5), np.full((m + 1, 1), 2.0)),
                                  1.0, 0, keep_modes=True, noiseless=True)
        t = rec.times
        np.testing.assert_allclose(rec.modes[:, 1], 2 * np.exp(-t), rtol=1e-12)
        return np.abs(rec.modes[:, 0] - (0.5 + 2 * t) * np.exp(-t)).max()

    def test_degenerate_noiseless_scalar(self):
        e50, e100 = self._noiseless_scalar_error(50), self._noiseless_scalar_error(100)
        assert e50 < 1e-6
        # global error at least second order in dt
        assert e100 < e50 / 3.5


class TestStochConv:
    def test_segments_start_zero(self):
        spec = SpectralData([1.0], [1.0])
        segs = stoch_conv_segments(spec, 0.5, 1.0, 10, 0, range(3))
        assert segs.shape == (3, 11, 1)
        np.testing.assert_array_equal(segs[:, :6], 0.0)

    def test_segment_variance(self):
        spec = SpectralData([1.0], [1.0])
        segs = stoch_conv_segments(spec, 1.0, 1.0, 4, 1, range(20_000))
        v = segs[:, -1, 0].var(ddof=1)
        assert abs(v - OU_VAR_1_1) <= 4 * OU_VAR_1_1 * math.sqrt(2 / 19_999)

    def test_path_window(self):
        spec = SpectralData([1.0, 4.0], [1.0, 1.0])
        rec = stoch_conv_path(spec, 1.0, 0.1, 0, r0=0.5)
        norms = np.linalg.norm(rec.modes, axis=-1)
        assert rec.supnorms[10] == pytest.approx(norms[5:11].max())
        assert rec.supnorms[0] == 0.0
        with pytest.raises(ValueError):
            stoch_conv_path(spec, 1.0, 0.3, 0, r0=0.5)


class TestIO:
    def test_fmt17_round_trip(self):
        for v in (0.1, 1 / 3, 1e-300, -2.5e17):
            assert float(fmt17(v)) == v
        assert fmt17(True) == "true" and fmt17(np.int64(4)) == "4"

    def test_write_csv(self, tmp_path):
        write_csv(tmp_path / "a.csv", ["a", "b"], [(1, True), (0.5, False)])
        assert (tmp_path / "a.csv").read_text() == "a,b\n1,true\n0.5,false\n"

    def test_window_sup(self):
        np.testing.assert_array_equal(window_sup(np.array([1.0, 3.0, 2.0, 0.0]), 1),
                                      [3.0, 3.0, 2.0])
