import math

import numpy as np
import pytest

from cmlbench.dynamics import (TWO_PI, LatticeState, SystemParams, Trajectory,
                               jacobian, ring_adjacency, sample_ic, simulate,
                               simulate_batch, step, step_arrays,
                               tangent_arrays, wrap_momenta, wrap_positions)
from cmlbench.seeds import derive_seed, make_rng


def scalar_standard_map(q, p, K):
    """Independent scalar oracle for one uncoupled node (same wrap rules)."""
    p_new = p + K * math.sin(q)
    if not (-math.pi <= p_new < math.pi):
        m = np.mod(p_new + math.pi, TWO_PI)
        if m >= TWO_PI:
            m = 0.0
        p_new = m - math.pi
    q_new = np.mod(q + p_new, TWO_PI)
    if q_new >= TWO_PI:
        q_new = 0.0
    return float(q_new), float(p_new)


class TestStep:
    def test_free_rotation(self):
        state = LatticeState(q=np.full(3, 1.0), p=np.full(3, 0.5))
        params = SystemParams(K=0.0, epsilon=0.0, N=3)
        out = step(state, params)
        assert np.array_equal(out.p, np.full(3, 0.5))
        assert np.array_equal(out.q, np.full(3, 1.5))

    def test_hand_computed_nodes(self):
        # Independent per-node evaluation of the update rule.
        q = np.array([0.0, math.pi / 2, math.pi])
        p = np.zeros(3)
        K, eps = 1.0, 0.1
        state = LatticeState(q=q, p=p)
        out = step(state, SystemParams(K=K, epsilon=eps, N=3))
        expected_p = np.empty(3)
        expected_q = np.empty(3)
        for i in range(3):
            coupling = (math.sin(q[(i + 1) % 3] - q[i])
                        + math.sin(q[(i - 1) % 3] - q[i]))
            expected_p[i] = (p[i] + K * math.sin(q[i])) - eps * coupling
            expected_q[i] = np.mod(q[i] + expected_p[i], TWO_PI)
        assert out.p == pytest.approx(expected_p, abs=1e-15)
        assert out.q == pytest.approx(expected_q, abs=1e-15)
        assert out.p[0] == pytest.approx(-0.1, abs=1e-15)
        assert out.q[0] == pytest.approx(TWO_PI - 0.1, abs=1e-12)

    def test_input_state_unchanged(self):
        state = sample_ic(11, 5)
        q_before = state.q.copy()
        p_before = state.p.copy()
        step(state, SystemParams(K=2.0, epsilon=0.3, N=5))
        assert np.array_equal(state.q, q_before)
        assert np.array_equal(state.p, p_before)

    def test_dimension_mismatch(self):
        state = sample_ic(1, 4)
        with pytest.raises(ValueError, match="N=4"):
            step(state, SystemParams(K=1.0, epsilon=0.0, N=5))

    def test_uncoupled_matches_scalar_oracle(self):
        # With eps=0 every node is an independent standard map; chaotic K
        # makes this a bitwise test, any drift would be amplified.
        params = SystemParams(K=6.5, epsilon=0.0, N=4)
        state = sample_ic(derive_seed("uncoupled-oracle"), 4)
        q = state.q.copy()
        p = state.p.copy()
        scal_q = [float(v) for v in q]
        scal_p = [float(v) for v in p]
        for _ in range(2000):
            q, p = step_arrays(q, p, params.K, params.epsilon)
            for i in range(4):
                scal_q[i], scal_p[i] = scalar_standard_map(scal_q[i], scal_p[i], params.K)
        assert np.max(np.abs(q - np.array(scal_q))) <= 1e-15
        assert np.max(np.abs(p - np.array(scal_p))) <= 1e-15


class TestWrap:
    def test_tiny_negative_angle_stays_in_range(self):
        out = wrap_positions(np.array([-1e-20]))
        assert out[0] == 0.0

    def test_exact_two_pi(self):
        assert wrap_positions(np.array([TWO_PI]))[0] == 0.0

    def test_momentum_wrap_range(self):
        vals = np.array([-10.0, -math.pi, 0.0, 3.0, math.pi, 12.0])
        out = wrap_momenta(vals)
        assert (out >= -math.pi).all() and (out < math.pi).all()

    def test_momentum_in_range_passthrough(self):
        vals = np.array([-3.14, -0.1, 0.0, 0.1, 3.14])
        assert np.array_equal(wrap_momenta(vals), vals)


class TestSampleIC:
    def test_determinism(self):
        a = sample_ic(42, 8)
        b = sample_ic(42, 8)
        assert np.array_equal(a.q, b.q)
        assert np.array_equal(a.p, b.p)

    def test_seed_sensitivity(self):
        a = sample_ic(42, 8)
        b = sample_ic(43, 8)
        assert not np.array_equal(a.q, b.q)

    def test_uniform_moments(self):
        # Moment oracle: mean of U[0, 2pi) is pi, of U[-pi, pi) is 0;
        # check against 3 standard errors of the sample mean.
        qs = []
        ps = []
        for i in range(10_000 // 8):
            state = sample_ic(derive_seed("moments", i), 8)
            qs.append(state.q)
            ps.append(state.p)
        qs = np.concatenate(qs)
        ps = np.concatenate(ps)
        se = (TWO_PI / math.sqrt(12)) / math.sqrt(qs.size)
        assert abs(qs.mean() - math.pi) < 3 * se
        assert abs(ps.mean()) < 3 * se
        assert (qs >= 0).all() and (qs < TWO_PI).all()
        assert (ps >= -math.pi).all() and (ps < math.pi).all()

    def test_rejects_small_n(self):
        with pytest.raises(ValueError):
            sample_ic(1, 2)


class TestSimulate:
    def test_single_step_definition(self):
        params = SystemParams(K=1.3, epsilon=0.2, N=6)
        ic = sample_ic(5, 6)
        traj = simulate(ic, params, transient=0, record=1)
        expected = step(ic, params)
        assert np.array_equal(traj.states[0], expected.as_row())

    def test_integrable_shear_advance(self):
        c = 0.7
        params = SystemParams(K=0.0, epsilon=0.0, N=3)
        ic = LatticeState(q=np.array([0.3, 1.0, 5.0]), p=np.full(3, c))
        traj = simulate(ic, params, transient=0, record=50)
        t = np.arange(1, 51)[:, None]
        expected_q = np.mod(ic.q[None, :] + t * c, TWO_PI)
        assert traj.positions() == pytest.approx(expected_q, abs=1e-12)
        assert np.array_equal(traj.momenta(), np.full((50, 3), c))

    def test_default_config_invariants(self):
        params = SystemParams(K=6.5, epsilon=6.5 * 0.5, N=8)
        ic = sample_ic(derive_seed("full-scan"), 8)
        traj = simulate(ic, params, transient=1000, record=10000)
        assert traj.T == 10000
        assert np.isfinite(traj.states).all()
        q = traj.positions()
        p = traj.momenta()
        assert (q >= 0).all() and (q < TWO_PI).all()
        assert (p >= -math.pi).all() and (p < math.pi).all()

    def test_determinism(self):
        params = SystemParams(K=2.0, epsilon=0.2, N=8)
        ic = sample_ic(9, 8)
        a = simulate(ic, params, transient=100, record=200)
        b = simulate(ic, params, transient=100, record=200)
        assert np.array_equal(a.states, b.states)

    def test_batch_matches_single(self):
        params = SystemParams(K=6.5, epsilon=1.3, N=8)
        ics = [sample_ic(derive_seed("batch", i), 8) for i in range(5)]
        q0 = np.stack([ic.q for ic in ics])
        p0 = np.stack([ic.p for ic in ics])
        batch = simulate_batch(q0, p0, params, transient=100, record=300)
        for i, ic in enumerate(ics):
            single = simulate(ic, params, transient=100, record=300)
            assert np.array_equal(batch[i], single.states)

    def test_rejects_bad_args(self):
        params = SystemParams(K=1.0, epsilon=0.0, N=3)
        ic = sample_ic(1, 3)
        with pytest.raises(ValueError):
            simulate(ic, params, transient=-1, record=10)
        with pytest.raises(ValueError):
            simulate(ic, params, transient=0, record=0)

    def test_trajectory_immutable(self):
        params = SystemParams(K=1.0, epsilon=0.1, N=3)
        traj = simulate(sample_ic(2, 3), params, transient=0, record=5)
        with pytest.raises(ValueError):
            traj.states[0, 0] = 0.0


class TestJacobian:
    def test_shear_block_structure(self):
        state = sample_ic(3, 4)
        params = SystemParams(K=0.0, epsilon=0.0, N=4)
        jac = jacobian(state, params)
        eye = np.eye(4)
        assert np.array_equal(jac[:4, :4], eye)
        assert np.array_equal(jac[:4, 4:], eye)
        assert np.array_equal(jac[4:, :4], np.zeros((4, 4)))
        assert np.array_equal(jac[4:, 4:], eye)

    @staticmethod
    def _fd_jacobian(state, params, h=1e-6):
        # Central differences of the step map; wraps are unwound with
        # circular differences so boundary crossings cancel.
        N = params.N
        x0 = state.as_row()
        jac = np.empty((2 * N, 2 * N))

        def f(x):
            q, p = step_arrays(x[:N], x[N:], params.K, params.epsilon)
            return np.concatenate([q, p])

        for j in range(2 * N):
            up = x0.copy()
            dn = x0.copy()
            up[j] += h
            dn[j] -= h
            diff = f(up) - f(dn)
            diff = np.mod(diff + math.pi, TWO_PI) - math.pi
            jac[:, j] = diff / (2 * h)
        return jac

    def test_matches_finite_differences(self):
        rng = make_rng(derive_seed("fd-check"))
        worst = 0.0
        for trial in range(100):
            n = int(rng.integers(3, 10))
            params = SystemParams(K=float(rng.uniform(0, 7)),
                                  epsilon=float(rng.uniform(0, 2)), N=n)
            state = sample_ic(derive_seed("fd-state", trial), n)
            jac = jacobian(state, params)
            fd = self._fd_jacobian(state, params)
            scale = max(1.0, np.abs(jac).max())
            worst = max(worst, np.abs(jac - fd).max() / scale)
        assert worst < 1e-6

    def test_symplectic_determinant(self):
        rng = make_rng(derive_seed("det-check"))
        worst = 0.0
        for trial in range(1000):
            n = int(rng.integers(3, 9))
            params = SystemParams(K=float(rng.uniform(0, 7)),
                                  epsilon=float(rng.uniform(0, 3)), N=n)
            state = sample_ic(derive_seed("det-state", trial), n)
            det = np.linalg.det(jacobian(state, params))
            worst = max(worst, abs(det - 1.0))
        assert worst < 1e-9

    def test_tangent_kernel_consistent_with_matrix(self):
        params = SystemParams(K=2.0, epsilon=0.2, N=8)
        state = sample_ic(77, 8)
        jac = jacobian(state, params)
        rng = make_rng(derive_seed("tangent-check"))
        for _ in range(10):
            v = rng.standard_normal(16)
            dq, dp = tangent_arrays(state.q, v[:8], v[8:], params.K, params.epsilon)
            expected = jac @ v
            assert np.concatenate([dq, dp]) == pytest.approx(expected, abs=1e-13)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            jacobian(sample_ic(1, 4), SystemParams(K=1.0, epsilon=0.0, N=5))


class TestRingAdjacency:
    def test_triangle(self):
        adj = ring_adjacency(3)
        assert np.array_equal(adj.matrix, np.ones((3, 3)) - np.eye(3))

    def test_row_sums(self):
        adj = ring_adjacency(8)
        assert (adj.matrix.sum(axis=1) == 2).all()
        assert np.array_equal(adj.matrix, adj.matrix.T)
        assert not np.diagonal(adj.matrix).any()

    def test_non_neighbor(self):
        adj = ring_adjacency(4)
        assert adj.matrix[0, 2] == 0

    def test_rejects_small_n(self):
        with pytest.raises(ValueError):
            ring_adjacency(2)


class TestTypes:
    def test_params_validation(self):
        with pytest.raises(ValueError):
            SystemParams(K=-1.0, epsilon=0.0, N=8)
        with pytest.raises(ValueError):
            SystemParams(K=1.0, epsilon=-0.1, N=8)
        with pytest.raises(ValueError):
            SystemParams(K=1.0, epsilon=0.0, N=2)

    def test_rho(self):
        assert SystemParams(K=2.0, epsilon=0.2, N=8).rho == pytest.approx(0.1)
        assert SystemParams(K=0.0, epsilon=0.0, N=8).rho == 0.0

    def test_state_validation(self):
        with pytest.raises(ValueError):
            LatticeState(q=np.array([0.0, 7.0, 1.0]), p=np.zeros(3))
        with pytest.raises(ValueError):
            LatticeState(q=np.zeros(3), p=np.array([0.0, 4.0, 0.0]))
        with pytest.raises(ValueError):
            LatticeState(q=np.zeros(3), p=np.zeros(4))

    def test_state_row_round_trip(self):
        state = sample_ic(123, 6)
        again = LatticeState.from_row(state.as_row())
        assert np.array_equal(again.q, state.q)
        assert np.array_equal(again.p, state.p)

    def test_trajectory_shape_validation(self):
        params = SystemParams(K=1.0, epsilon=0.0, N=3)
        with pytest.raises(ValueError):
            Trajectory(states=np.zeros((5, 4)), params=params, ic_index=0,
                       seed=0, transient_discarded=0)
