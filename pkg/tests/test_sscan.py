import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pma import numcore as nc
from pma.sscan import MambaBlock, SelectiveInputs, SsmParams, selective_scan, zoh_discretize

from oracles import dense_oracle, zoh_oracle


def random_scan_case(rng, T, E, S, per_channel=False, prompt=True):
    x = rng.normal(size=(T, E))
    a_log = rng.uniform(-2, 1.5, (E, S) if per_channel else S)
    d = rng.normal(size=E)
    delta = rng.uniform(0.01, 1.5, (T, E) if per_channel else T)
    b, c = rng.normal(size=(T, S)), rng.normal(size=(T, S))
    p = rng.normal(size=(T, S)) if prompt else None
    return x, a_log, d, delta, b, c, p


def run_scan(x, a_log, d, delta, b, c, p=None, euler=False):
    return selective_scan(x, SsmParams(a_log, d), SelectiveInputs(delta, b, c), p, euler=euler).data


# -- ZOH ------------------------------------------------------------------------


def test_zoh_examples():
    assert zoh_discretize(0.0, 1.0, 1.0) == (1.0, 1.0)
    a_bar, b_bar = zoh_discretize(-1.0, 0.5, 2.0)
    assert a_bar == pytest.approx(math.exp(-0.5), abs=1e-15)
    assert b_bar == pytest.approx((math.exp(-0.5) - 1) / -0.5 * 0.5 * 2, abs=1e-15)
    assert round(a_bar, 6) == 0.606531 and round(b_bar, 6) == 0.786939
    a_bar, b_bar = zoh_discretize(-3.0, 1e-10, 1.0)
    assert a_bar == pytest.approx(1.0, abs=1e-9) and b_bar == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("delta", [0.0, -1.0])
def test_zoh_rejects_non_positive_delta(delta):
    with pytest.raises(ValueError):
        zoh_discretize(-1.0, delta, 1.0)


def test_zoh_is_continuous_across_the_guard():
    for z in (0.99e-8, 1.01e-8, -0.99e-8, -1.01e-8):
        _, b_bar = zoh_discretize(z, 1.0, 1.0)
        assert abs(b_bar - zoh_oracle(z, 1.0, 1.0)[1]) <= 1e-15


@settings(max_examples=200, deadline=None)
@given(st.floats(-5, -1e-12), st.floats(1e-10, 2), st.floats(-3, 3))
def test_zoh_matches_high_precision_oracle(a, delta, b):
    got = zoh_discretize(a, delta, b)
    want = zoh_oracle(a, delta, b)
    assert abs(got[0] - want[0]) <= 1e-12 and abs(got[1] - want[1]) <= 1e-12


# -- scan ------------------------------------------------------------------------------


def test_prefix_sum_example():
    x = np.array([[1.0], [2.0], [3.0]])
    # a -> 0 is reached with a_log = -inf (A = -0)
    y = run_scan(x, np.array([-np.inf]), np.zeros(1), np.ones(3), np.ones((3, 1)), np.ones((3, 1)))
    np.testing.assert_array_equal(y[:, 0], [1.0, 3.0, 6.0])


def test_zero_prompt_is_bitwise_absent_prompt():
    x, a_log, d, delta, b, c, _ = random_scan_case(np.random.default_rng(0), 12, 3, 4)
    y0 = run_scan(x, a_log, d, delta, b, c)
    yz = run_scan(x, a_log, d, delta, b, c, np.zeros_like(c))
    assert np.array_equal(y0, yz)


@pytest.mark.parametrize("per_channel", [False, True])
@pytest.mark.parametrize("prompt", [False, True])
def test_scan_matches_dense_oracle(per_channel, prompt):
    rng = np.random.default_rng(10 + 2 * per_channel + prompt)
    for _ in range(5):
        T, E, S = int(rng.integers(1, 24)), int(rng.integers(1, 5)), int(rng.integers(1, 9))
        case = random_scan_case(rng, T, E, S, per_channel, prompt)
        np.testing.assert_allclose(run_scan(*case), dense_oracle(*case), rtol=0, atol=1e-9)


def test_single_step_closed_form():
    x, a_log, d, delta, b, c, p = random_scan_case(np.random.default_rng(1), 1, 3, 5)
    A = -np.exp(a_log)
    b_bar = np.array([zoh_discretize(A[s], delta[0], b[0, s])[1] for s in range(5)])
    want = np.outer(x[0], b_bar) @ (c[0] + p[0]) + d * x[0]
    np.testing.assert_allclose(run_scan(x, a_log, d, delta, b, c, p)[0], want, rtol=1e-13, atol=1e-14)


def test_scan_is_causal():
    x, a_log, d, delta, b, c, p = random_scan_case(np.random.default_rng(2), 10, 2, 3)
    base = run_scan(x, a_log, d, delta, b, c, p)
    for t in range(10):
        xp = x.copy()
        xp[t] += 1.0
        out = run_scan(xp, a_log, d, delta, b, c, p)
        assert np.array_equal(out[:t], base[:t])
        assert not np.array_equal(out[t], base[t])


def test_prompt_enters_affinely():
    rng = np.random.default_rng(3)
    x, a_log, d, delta, b, c, p1 = random_scan_case(rng, 9, 2, 4)
    p2 = rng.normal(size=p1.shape)
    lhs = run_scan(x, a_log, d, delta, b, c, p1 + p2) - run_scan(x, a_log, d, delta, b, c, p2)
    rhs = run_scan(x, a_log, d, delta, b, c, p1) - run_scan(x, a_log, d, delta, b, c)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_long_sequence_stays_bounded():
    rng = np.random.default_rng(4)
    T = 4096
    x = rng.uniform(-1, 1, (T, 2))
    y = run_scan(x, np.zeros(4), np.ones(2), rng.uniform(0.01, 2, T), rng.uniform(-1, 1, (T, 4)),
                 rng.uniform(-1, 1, (T, 4)))
    assert np.isfinite(y).all() and np.abs(y).max() < 50


def test_batched_scan_equals_per_sequence():
    rng = np.random.default_rng(5)
    cases = [random_scan_case(rng, 7, 3, 4) for _ in range(3)]
    shared = cases[0][1], cases[0][2]
    stacked = [np.stack([cs[i] for cs in cases]) for i in (0, 3, 4, 5, 6)]
    batched = run_scan(stacked[0], shared[0], shared[1], *stacked[1:])
    for i, cs in enumerate(cases):
        single = run_scan(cs[0], *shared, *cs[3:])
        np.testing.assert_allclose(batched[i], single, atol=1e-14)


def test_shape_errors():
    x, a_log, d, delta, b, c, p = random_scan_case(np.random.default_rng(6), 5, 2, 3)
    with pytest.raises(ValueError):
        run_scan(x, a_log, d, delta[:4], b, c)
    with pytest.raises(ValueError):
        run_scan(x, a_log, d, delta, b, c, p[:4])
    with pytest.raises(ValueError):
        run_scan(x, a_log, d, delta, b[:, :2], c)


def test_euler_variant_uses_delta_times_b():
    x, a_log, d, delta, b, c, p = random_scan_case(np.random.default_rng(7), 1, 1, 2)
    y = run_scan(x, a_log, d, delta, b, c, p, euler=True)
    want = (delta[0] * b[0] * x[0, 0]) @ (c[0] + p[0]) + d[0] * x[0, 0]
    assert y[0, 0] == pytest.approx(want, rel=1e-13)


@pytest.mark.parametrize("per_channel", [False, True])
@pytest.mark.parametrize("euler", [False, True])
def test_scan_gradients(per_channel, euler):
    rng = np.random.default_rng(8)
    case = random_scan_case(rng, 6, 3, 4, per_channel)
    names = ["x", "a_log", "d", "delta", "b", "c", "p"]
    params = {n: nc.Parameter(v, name=n) for n, v in zip(names, case)}
    w = rng.normal(size=(6, 3))

    def loss():
        pr = params
        return (selective_scan(pr["x"], SsmParams(pr["a_log"], pr["d"]),
                               SelectiveInputs(pr["delta"], pr["b"], pr["c"]), pr["p"], euler=euler) * w).sum()

    for rep in nc.grad_check(loss, params):
        assert rep.status == "ok", rep


# -- block --------------------------------------------------------------------------------------


def test_block_shape_and_zero_out_projection():
    rng = np.random.default_rng(9)
    block = MambaBlock(8, d_state=4, rng=rng)
    for T in (1, 5, 13):
        x = rng.normal(size=(T, 8))
        assert block(x, rng.normal(size=(T, 4))).shape == (T, 8)
    block.out_w.assign(np.zeros_like(block.out_w.data))
    block.out_b.assign(np.zeros_like(block.out_b.data))
    x = rng.normal(size=(6, 8))
    assert np.array_equal(block(x, rng.normal(size=(6, 4))).data, x)


def test_block_prompt_projection_and_errors():
    rng = np.random.default_rng(10)
    block = MambaBlock(8, d_state=4, prompt_width=6, rng=rng)
    assert block(rng.normal(size=(5, 8)), rng.normal(size=(5, 6))).shape == (5, 8)
    with pytest.raises(ValueError):
        block(rng.normal(size=(5, 8)), rng.normal(size=(4, 6)))


def test_block_is_causal():
    rng = np.random.default_rng(11)
    block = MambaBlock(8, d_state=4, rng=rng)
    x, p = rng.normal(size=(7, 8)), rng.normal(size=(7, 4))
    base = block(x, p).data
    x2 = x.copy()
    x2[4] += 1.0
    assert np.array_equal(block(x2, p).data[:4], base[:4])


def test_block_gradients():
    rng = np.random.default_rng(12)
    block = MambaBlock(8, d_state=4, prompt_width=5, rng=rng)
    x = nc.Parameter(rng.normal(size=(6, 8)), name="x")
    p = nc.Parameter(rng.normal(size=(6, 5)), name="prompt")
    w = rng.normal(size=(6, 8))
    params = {**block.parameters(), "x": x, "prompt": p}
    for rep in nc.grad_check(lambda: (block(x, p) * w).sum(), params, tol=1e-4):
        assert rep.status == "ok", rep
