import itertools

import numpy as np
import pytest
from conftest import random_request
from hypothesis import given, settings
from hypothesis import strategies as st

from nntc import oracle
from nntc.oracle import (OracleConfig, OracleStats, ResourceExhausted, SeparationRequest,
                         alternating_maximization, brute_force_separation, exact_separation,
                         multi_start_am, node_upper_bound, weak_separation, z_m)
from nntc.tensor import Atom, ObservationSet, Shape, atom_project

SMALL = [(2, 2), (2, 2, 2), (3, 2, 2), (2, 3, 2), (2, 2, 2, 2), (3, 3, 2)]


def all_thetas(shape):
    for bits in itertools.product((0, 1), repeat=shape.rho()):
        yield np.array(bits, dtype=np.uint8)


def z_direct(req, bits):
    # Independent evaluation through the atom's projection.
    a = Atom.from_flat(req.lam, bits, req.shape)
    obs_like = ObservationSet(req.shape, req.support.unique, np.zeros(req.support.u))
    return float(req.c @ (req.psi_u - atom_project(a, obs_like)))


class TestZ:
    def test_hand_example(self):
        s = Shape((2, 2))
        obs = ObservationSet(s, s.all_indices(), np.zeros(4))
        req = SeparationRequest.from_obs(obs, [1.0, -1.0, 2.0, 0.0], np.zeros(4), 1.0)
        assert z_m([np.array([1, 1]), np.array([1, 0])], req) == -3.0

    def test_zero_atom_and_zero_lambda(self, rng):
        req = random_request(rng, (3, 2, 2))
        base = float(req.c @ req.psi_u)
        zero = np.zeros(req.shape.rho(), dtype=np.uint8)
        assert z_m(zero, req) == pytest.approx(base, abs=1e-12)
        req0 = SeparationRequest(req.support, req.c, req.psi_u, 0.0)
        for bits in itertools.islice(all_thetas(req.shape), 20):
            assert z_m(bits, req0) == pytest.approx(base, abs=1e-12)

    def test_matches_projection(self, rng):
        req = random_request(rng, (3, 3, 2))
        for _ in range(20):
            bits = rng.integers(0, 2, req.shape.rho()).astype(np.uint8)
            assert z_m(bits, req) == pytest.approx(z_direct(req, bits), abs=1e-12)

    def test_rejects_wrong_length(self, rng):
        req = random_request(rng, (2, 2))
        with pytest.raises(ValueError):
            z_m(np.ones(5, dtype=np.uint8), req)

    def test_depends_only_on_observed_entries(self, rng):
        s = Shape((3, 3))
        obs = ObservationSet(s, [[0, 0], [1, 1], [2, 0]], np.zeros(3))
        req = SeparationRequest.from_obs(obs, rng.normal(size=3), rng.random(3), 1.0)
        a = Atom(1.0, (np.array([1, 1, 0], bool), np.array([1, 1, 0], bool)))
        b = Atom(1.0, (np.array([1, 1, 0], bool), np.array([1, 1, 1], bool)))
        np.testing.assert_array_equal(atom_project(a, obs), atom_project(b, obs))
        assert z_m(a, req) == z_m(b, req)


class TestRequest:
    def test_validation(self, rng):
        req = random_request(rng, (2, 2))
        sup, c, psi = req.support, req.c, req.psi_u
        for kw in ({"K": 0.5}, {"Phi": 0.0}, {"lam": -1.0}):
            args = {"support": sup, "c": c, "psi_u": psi, "lam": 1.0, **kw}
            with pytest.raises(ValueError):
                SeparationRequest(**args)
        with pytest.raises(ValueError):
            SeparationRequest(sup, np.r_[c[:-1], np.nan], psi, 1.0)
        with pytest.raises(ValueError):
            SeparationRequest(sup, c[:-1], psi, 1.0)


class TestAlternatingMaximization:
    def test_optimal_start_unchanged(self, rng):
        for _ in range(20):
            req = random_request(rng, (2, 2), full=True)
            best, _ = brute_force_separation(req)
            out = np.concatenate(alternating_maximization(req, best)).astype(np.uint8)
            np.testing.assert_array_equal(out, best.flat)

    def test_nonpositive_c_keeps_all_ones(self, rng):
        req = random_request(rng, (3, 2, 2))
        req = SeparationRequest(req.support, -np.abs(req.c), np.zeros(req.support.u), 1.0)
        ones = np.ones(req.shape.rho(), dtype=np.uint8)
        out = np.concatenate(alternating_maximization(req, ones))
        assert out.all()

    @given(st.sampled_from(SMALL), st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_monotone(self, dims, seed):
        rng = np.random.default_rng(seed)
        req = random_request(rng, dims)
        start = rng.integers(0, 2, req.shape.rho()).astype(np.uint8)
        out = alternating_maximization(req, start)
        assert z_m(out, req) >= z_m(start, req)
        # A second sweep from the result can only keep improving.
        again = alternating_maximization(req, out)
        assert z_m(again, req) >= z_m(out, req)

    def test_single_sweep_in_mode_order(self):
        # Flipping bit 0 of mode 0 helps only once mode 1 has bit 0 set,
        # which a single ordered sweep reaches too late.
        s = Shape((2, 2))
        obs = ObservationSet(s, [[0, 0]], [0.0])
        req = SeparationRequest.from_obs(obs, [-1.0], [0.0], 1.0)
        out = alternating_maximization(req, np.array([0, 0, 0, 0], dtype=np.uint8))
        assert np.concatenate(out).tolist() == [False] * 4
        out = alternating_maximization(req, np.array([0, 0, 1, 0], dtype=np.uint8))
        assert np.concatenate(out).tolist() == [True, False, True, False]


class TestMultiStart:
    def test_single_restart_is_plain_am(self, rng):
        for _ in range(10):
            req = random_request(rng, (3, 2, 2))
            inc = Atom.from_flat(req.lam, rng.integers(0, 2, req.shape.rho()), req.shape)
            a = multi_start_am(req, 1, np.random.default_rng(0), inc)
            b = np.concatenate(alternating_maximization(req, inc))
            np.testing.assert_array_equal(a.flat, b.astype(np.uint8))

    def test_deterministic_and_no_worse(self, rng):
        for _ in range(10):
            req = random_request(rng, (3, 3, 2))
            inc = Atom.from_flat(req.lam, rng.integers(0, 2, req.shape.rho()), req.shape)
            a = multi_start_am(req, 10, np.random.default_rng(4), inc)
            b = multi_start_am(req, 10, np.random.default_rng(4), inc)
            assert a == b
            assert z_m(a, req) >= z_m(alternating_maximization(req, inc), req)

    @pytest.mark.parametrize("flip_prob, floor", [(0.1, 60), (0.3, 90)])
    def test_finds_optimum_often(self, flip_prob, floor):
        # At q=0.1 most of the 6 bits never flip, so the hit rate is lower.
        rng = np.random.default_rng(99)
        hits = 0
        for _ in range(100):
            req = random_request(rng, (2, 2, 2), full=True)
            _, opt = brute_force_separation(req)
            inc = Atom.from_flat(req.lam, rng.integers(0, 2, 6), req.shape)
            a = multi_start_am(req, 20, rng, inc, flip_prob=flip_prob)
            hits += z_m(a, req) == opt
        print(f"multi-start hit rate at q={flip_prob}: {hits}/100")
        assert hits >= floor

    def test_rejects_zero_restarts(self, rng):
        with pytest.raises(ValueError):
            multi_start_am(random_request(rng, (2, 2)), 0, rng)


class TestExact:
    def test_nonnegative_c_gives_zero_atom_value(self, rng):
        req = random_request(rng, (3, 2, 2))
        req = SeparationRequest(req.support, np.abs(req.c), req.psi_u, req.lam)
        res = exact_separation(req)
        assert res.objective == pytest.approx(float(req.c @ req.psi_u), abs=1e-12)
        assert not res.early_stopped and res.dual_bound == res.objective

    def test_zero_lambda(self, rng):
        req = random_request(rng, (2, 3, 2), lam=0.0)
        assert exact_separation(req).objective == pytest.approx(float(req.c @ req.psi_u))

    @given(st.sampled_from(SMALL), st.integers(0, 2**32 - 1))
    @settings(max_examples=150, deadline=None)
    def test_matches_brute_force(self, dims, seed):
        req = random_request(np.random.default_rng(seed), dims)
        res = exact_separation(req)
        _, opt = brute_force_separation(req)
        assert res.objective == opt
        assert res.dual_bound == res.objective
        assert z_m(res.best, req) == res.objective

    def test_early_stop(self, rng):
        for _ in range(30):
            req = random_request(rng, (3, 3, 2))
            _, opt = brute_force_separation(req)
            target = 0.5 * opt if opt > 0 else 0.1
            res = exact_separation(req, target)
            if res.early_stopped:
                assert res.objective > target
                assert res.dual_bound >= opt - 1e-12
            else:
                assert res.objective == opt

    def test_dual_target_certifies(self, rng):
        for _ in range(40):
            req = random_request(rng, (3, 3, 2))
            _, opt = brute_force_separation(req)
            target = abs(opt) * rng.uniform(0.5, 2.0) + 1e-3
            res = exact_separation(req, dual_target=target)
            assert opt <= max(res.objective, res.dual_bound) + 1e-12
            assert res.dual_bound <= max(res.objective, target)

    def test_budget_exhaustion(self, rng):
        req = random_request(rng, (4, 4, 4), full=True)
        with pytest.raises(ResourceExhausted) as info:
            exact_separation(req, node_budget=2)
        exc = info.value
        assert exc.nodes == 2
        assert exc.dual_bound >= brute_force_separation(req)[1] - 1e-12
        assert z_m(exc.incumbent, req) == exc.objective

    def test_rejects_nonpositive_target(self, rng):
        with pytest.raises(ValueError):
            exact_separation(random_request(rng, (2, 2)), 0.0)


def _completions(status):
    free = np.flatnonzero(status < 0)
    for bits in itertools.product((0, 1), repeat=free.size):
        full = status.copy()
        full[free] = bits
        yield full.astype(np.uint8)


@given(st.sampled_from([(2, 2), (2, 2, 2), (3, 2, 2), (2, 2, 2, 2), (3, 3, 2), (4, 4, 2)]),
       st.integers(0, 2**32 - 1))
@settings(max_examples=120, deadline=None)
def test_node_bound_valid_and_tighter_than_entrywise(dims, seed):
    rng = np.random.default_rng(seed)
    req = random_request(rng, dims)
    rho = req.shape.rho()
    status = rng.choice([-1, -1, 0, 1], size=rho).astype(np.int8)
    ub = node_upper_bound(req, status)
    best_leaf = max(z_m(t, req) for t in _completions(status))
    assert ub >= best_leaf - 1e-12
    # Entrywise bound: every attainable negative-c entry at its best case.
    g = req.support.gcoords
    attainable = np.all(status[g] != 0, axis=1)
    loose = float(req.c @ req.psi_u) - req.lam * req.c[(req.c < 0) & attainable].sum()
    assert ub <= loose + 1e-12


def test_node_bound_exact_when_only_outer_mode_free(rng):
    for _ in range(30):
        req = random_request(rng, (2, 2, 3))
        sup = req.support
        status = rng.integers(0, 2, req.shape.rho()).astype(np.int8)
        lo = sup.mode_off[sup.outer_mode]
        status[lo:lo + req.shape.dims[sup.outer_mode]] = -1
        best_leaf = max(z_m(t, req) for t in _completions(status))
        assert node_upper_bound(req, status) == pytest.approx(best_leaf, abs=1e-12)


class TestWeakSeparation:
    def test_zero_c_is_false(self, rng):
        req = random_request(rng, (3, 2, 2))
        req = SeparationRequest(req.support, np.zeros(req.support.u), req.psi_u, req.lam, 2.0, 0.3)
        res = weak_separation(req, rng=rng)
        assert not res.found and res.dual_bound <= req.Phi

    def test_am_short_circuit(self, rng, monkeypatch):
        req = random_request(rng, (3, 2, 2))
        req = SeparationRequest(req.support, -np.abs(req.c), np.zeros(req.support.u), 1.0, 2.0, 1e-3)
        ones = Atom.from_flat(1.0, np.ones(req.shape.rho()), req.shape)

        def boom(*a, **k):
            raise AssertionError("exact oracle should not run")

        monkeypatch.setattr(oracle, "exact_separation", boom)
        stats = OracleStats()
        res = weak_separation(req, OracleConfig(), rng, ones, stats)
        assert res.found and res.source == "am" and stats.exact_calls == 0

    @given(st.sampled_from(SMALL), st.integers(0, 2**32 - 1), st.floats(1e-3, 3.0),
           st.sampled_from([1.0, 2.0, 4.0]))
    @settings(max_examples=100, deadline=None)
    def test_contract(self, dims, seed, Phi, K):
        rng = np.random.default_rng(seed)
        base = random_request(rng, dims)
        req = SeparationRequest(base.support, base.c, base.psi_u, base.lam, K, Phi)
        res = weak_separation(req, OracleConfig(am_restarts=3), rng)
        if res.found:
            assert z_m(res.vertex, req) >= Phi / K - 1e-9
            assert res.gap == z_m(res.vertex, req)
        else:
            assert brute_force_separation(req)[1] <= Phi
            assert res.dual_bound <= Phi


def test_brute_force_cap_and_zero_c(rng):
    req = random_request(rng, (13, 12))
    with pytest.raises(ValueError, match="24"):
        brute_force_separation(req)
    small = random_request(rng, (2, 2))
    small = SeparationRequest(small.support, np.zeros(small.support.u), small.psi_u, 1.0)
    assert brute_force_separation(small)[1] == 0.0
