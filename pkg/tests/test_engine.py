import math

import numpy as np
import pytest

from gjnet import corpus
from gjnet.distributions import deterministic, exponential
from gjnet.engine import (KIND_ARRIVAL, KIND_COMPLETION, EngineRng, RunConfig,
                          SimState, apply_jump, initial_state, run, step)
from gjnet.network import NetworkSpec, RoutingMatrix, make_scaled
from gjnet.stats import geometric_chisquare
from gjnet.test_functions import QueuePower


def _det_mm1():
    return NetworkSpec(alpha=(1.0,), routing=RoutingMatrix.from_rows([[0.0]]),
                       arrival=(deterministic(),), service=(deterministic(),),
                       moment_order=2.0)


def test_initial_state_point_masses():
    scaled = make_scaled(_det_mm1(), 0.1)
    st = initial_state(scaled, EngineRng(scaled, seed=0))
    assert st.z == (0,)
    assert st.r_e == (1.0,)
    assert st.r_s == (1.0 / 1.1,)


def test_initial_state_deterministic_given_seed():
    scaled = make_scaled(corpus.open3(), 0.2)
    a = initial_state(scaled, EngineRng(scaled, seed=9))
    b = initial_state(scaled, EngineRng(scaled, seed=9))
    assert a == b
    assert all(x > 0 for x in a.r_s)


def test_single_clock_step():
    # only one active clock: the arrival fires at t + 1 and Z becomes 1
    scaled = make_scaled(_det_mm1(), 0.1)
    erng = EngineRng(scaled, seed=0)
    st = initial_state(scaled, erng)
    st2, rec = step(st, scaled, erng)
    assert rec.kind == KIND_ARRIVAL
    assert st2.t == 1.0
    assert st2.z == (1,)
    # service of the waiting job now runs; next completion at 1 + 1/1.1
    st3, rec3 = step(st2, scaled, erng)
    assert rec3.kind == KIND_COMPLETION
    assert st3.t == pytest.approx(1.0 + 1.0 / 1.1)


def test_tandem_completion_routes_downstream():
    scaled = make_scaled(corpus.tandem(), 0.1)
    erng = EngineRng(scaled, seed=4)
    st = initial_state(scaled, erng)
    for _ in range(500):
        st, rec = step(st, scaled, erng)
        if rec.kind == KIND_COMPLETION and rec.station == 0:
            assert rec.routed_to == 1  # P12 = 1
            pre = rec.pre_state
            post = apply_jump(scaled, rec)
            assert post.z[0] == pre.z[0] - 1
            assert post.z[1] == pre.z[1] + 1
            break
    else:
        pytest.fail("no completion at station 1 observed")


def test_apply_jump_reconstructs_step_states():
    scaled = make_scaled(corpus.open3(), 0.3)
    erng = EngineRng(scaled, seed=11)
    st = initial_state(scaled, erng)
    for _ in range(300):
        st2, rec = step(st, scaled, erng)
        assert apply_jump(scaled, rec) == st2
        st = st2


def test_step_matches_fast_run():
    """The single-step reference path replays the fast loop's trajectory.

    Clocks agree to rounding only: the fast loop keeps absolute next-event
    clocks while the reference path decrements residuals, which drifts by
    a few ulp per event.  Variates come from the same streams and must
    match bitwise, as must the event sequence and queue snapshots.
    """
    scaled = make_scaled(corpus.feedback_front(), 0.2)
    cfg = RunConfig(horizon=300.0, warmup_frac=0.0, seed=21, thin=1)
    res = run(scaled, cfg)
    erng = EngineRng(scaled, seed=21)
    st = initial_state(scaled, erng)
    recs = []
    while True:
        st, rec = step(st, scaled, erng)
        if rec.clock > 300.0:
            break
        recs.append(rec)
    assert len(recs) == res.n_events
    by_type: dict = {}
    for rec in recs:
        by_type.setdefault((rec.kind, rec.station), []).append(rec)
    for key, cols in res.palm.records.items():
        want = by_type[key]
        assert cols["clock"].size == len(want)
        assert np.allclose(cols["clock"], [w.clock for w in want],
                           rtol=0, atol=1e-8)
        assert np.array_equal(cols["variate"], np.array([w.variate for w in want]))
        pre_z = np.array([w.pre_state.z for w in want], dtype=float)
        assert np.array_equal(cols["z"], pre_z)


def test_run_reproducible_bitwise():
    scaled = make_scaled(corpus.open3(), 0.25)
    cfg = RunConfig(horizon=2_000.0, seed=5)
    f = {"z1": QueuePower(scaled, 1, 1.0)}
    a = run(scaled, cfg, time_integrands=f)
    b = run(scaled, cfg, time_integrands=f)
    assert a.n_events == b.n_events
    assert np.array_equal(a.counts, b.counts)
    assert a.integrals["z1"][0] == b.integrals["z1"][0]
    assert np.array_equal(a.integrals["z1"][1], b.integrals["z1"][1])
    assert np.array_equal(a.z_end, b.z_end)


def test_conservation_every_network():
    for name, spec in corpus.corpus().items():
        scaled = make_scaled(spec, 0.3)
        res = run(scaled, RunConfig(horizon=5_000.0, seed=2))
        flow = res.ext_arrivals + res.routed_in - res.departures
        assert np.array_equal(flow, res.z_end - res.z_start), name


def test_constant_functional_integrates_to_window():
    scaled = make_scaled(corpus.mm1(), 0.2)
    cfg = RunConfig(horizon=10_000.0, warmup_frac=0.2, seed=1)
    res = run(scaled, cfg, time_integrands={"one": QueuePower(scaled, 1, 0.0)})
    total, _, exact = res.integrals["one"]
    assert exact
    assert total == pytest.approx(res.window, rel=1e-12)


def test_event_rates_match_analytic():
    scaled = make_scaled(corpus.feedback_front(), 0.2)
    res = run(scaled, RunConfig(horizon=100_000.0, seed=3, confidence=0.99))
    for st_ in range(2):
        rr = res.rate_report(KIND_ARRIVAL, st_)
        se = rr.stderr
        assert abs(rr.estimate - scaled.alpha[st_]) <= 4 * se
        rr = res.rate_report(KIND_COMPLETION, st_)
        assert abs(rr.estimate - scaled.lam[st_]) <= 4 * se + 4 * rr.stderr


def test_mm1_completion_fraction():
    # arrival and completion rates are equal, so completions make up half
    # of all events
    scaled = make_scaled(corpus.mm1(), 0.1)
    res = run(scaled, RunConfig(horizon=300_000.0, seed=8))
    frac = res.counts[KIND_COMPLETION, 0] / res.counts.sum()
    n = res.counts.sum()
    assert abs(frac - 0.5) <= 4 * math.sqrt(0.25 / n) * 3  # correlation slack


def test_mm1_mean_queue_matches_geometric():
    # E[Z] = rho/(1-rho) = lam/r
    scaled = make_scaled(corpus.mm1(), 0.1)
    cfg = RunConfig(horizon=200_000.0, seed=6, confidence=0.99)
    res = run(scaled, cfg, time_integrands={"z": QueuePower(scaled, 1, 1.0)})
    rep = res.time_average("z")
    target = 0.1 * (scaled.rho[0] / (1 - scaled.rho[0]))  # scaled by r
    assert abs(rep.estimate - target) <= rep.half_width * 1.5


def test_mm1_marginal_geometric_chisquare():
    """Queue-length marginal sampled at spaced arrival epochs fits the
    geometric law at the 0.001 level."""
    scaled = make_scaled(corpus.mm1(), 0.3)
    rho = scaled.rho[0]
    sigma2 = scaled.lam[0] + scaled.mu[0]
    spacing = 3.0 * sigma2 / (scaled.mu[0] - scaled.lam[0]) ** 2
    cfg = RunConfig(horizon=500_000.0, seed=13)
    res = run(scaled, cfg, sample_spacings={"z": spacing})
    samples = res.samples["z"][:, 0]
    assert samples.size > 3_000
    _, p, _ = geometric_chisquare(samples, rho)
    assert p > 0.001


def test_palm_independence_correlations():
    scaled = make_scaled(corpus.tandem(), 0.2)
    res = run(scaled, RunConfig(horizon=100_000.0, seed=17))
    for st_ in range(2):
        for label, corr, n in res.correlations(KIND_COMPLETION, st_):
            assert abs(corr) <= 4.0 / math.sqrt(n), (st_, label, corr)


def test_thinning_keeps_counts_but_trims_records():
    scaled = make_scaled(corpus.mm1(), 0.2)
    res_all = run(scaled, RunConfig(horizon=20_000.0, seed=30, thin=1))
    res_thin = run(scaled, RunConfig(horizon=20_000.0, seed=30, thin=10))
    assert np.array_equal(res_all.counts, res_thin.counts)
    n_all = res_all.palm.records[(KIND_ARRIVAL, 0)]["clock"].size
    n_thin = res_thin.palm.records[(KIND_ARRIVAL, 0)]["clock"].size
    assert n_all == res_all.counts[KIND_ARRIVAL, 0]
    assert n_thin == math.ceil(n_all / 10)


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(horizon=0.0)
    with pytest.raises(ValueError):
        RunConfig(horizon=10.0, warmup_frac=1.0)
    with pytest.raises(ValueError):
        RunConfig(horizon=10.0, n_batches=1)


def test_simstate_residuals_positive_between_events():
    scaled = make_scaled(corpus.open3(), 0.3)
    erng = EngineRng(scaled, seed=2)
    st = initial_state(scaled, erng)
    for _ in range(200):
        st, rec = step(st, scaled, erng)
        # post-jump: every active residual strictly positive
        for j in range(3):
            if scaled.alpha[j] > 0:
                assert st.r_e[j] > 0.0 or st.r_e[j] == 0.0  # ties allowed
            assert st.r_s[j] >= 0.0


def test_frozen_service_residual_while_idle():
    scaled = make_scaled(corpus.tandem(), 0.2)
    erng = EngineRng(scaled, seed=3)
    st = initial_state(scaled, erng)
    frozen = st.r_s[1]
    while st.z[1] == 0:
        prev = st
        st, rec = step(st, scaled, erng)
        if st.z[1] == 0:
            assert st.r_s[1] == frozen  # does not decrease while idle
    # the first job at station 2 starts service with the frozen residual
    assert st.r_s[1] == frozen
