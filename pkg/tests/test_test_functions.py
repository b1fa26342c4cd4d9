import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.special import gammainc

from gjnet import corpus
from gjnet.engine import (KIND_ARRIVAL, KIND_COMPLETION, EngineRng, EventChunk,
                          JumpRecord, RunConfig, SimState, initial_state, run,
                          step)
from gjnet.network import make_scaled
from gjnet.test_functions import (CoordinatePower, DriftPotential, QueueDriftProbe,
                                  QueuePower, QueueResidualProduct,
                                  ResidualPowerSum, build_function,
                                  check_soft_truncation_bounds, default_kappa,
                                  parse_selector, soft_clip_power,
                                  soft_clip_power_integral)

INF = math.inf


@pytest.fixture
def fb02():
    """Feedback-to-front at r = 0.2: both stations have external sources."""
    return make_scaled(corpus.feedback_front(), 0.2)


@pytest.fixture
def tan01():
    return make_scaled(corpus.tandem(), 0.1)


def _state(z, r_e, r_s, t=0.0):
    return SimState(z=tuple(z), r_e=tuple(r_e), r_s=tuple(r_s), t=t)


# ---------------------------------------------------------------------------
# values
# ---------------------------------------------------------------------------

def test_residual_power_sum_example(fb02):
    # sum of squares over both arrival and both service coordinates
    psi = ResidualPowerSum(fb02, 2.0)
    x = _state([1, 1], [1.0, 2.0], [3.0, 4.0])
    assert psi.value(x) == pytest.approx(1 + 4 + 9 + 16)
    assert psi.value(x) == pytest.approx(30.0)


def test_residual_power_sum_skips_sourceless_station(tan01):
    # tandem station 2 has no external source; its interarrival coordinate
    # (inf in the state) must not enter the sum
    psi = ResidualPowerSum(tan01, 2.0)
    x = _state([1, 1], [1.0, INF], [3.0, 4.0])
    assert psi.value(x) == pytest.approx(1 + 9 + 16)
    assert math.isfinite(psi.value(x))


def test_soft_clip_examples():
    assert soft_clip_power(0.0, 2, 5.0) == 0.0
    # one integration by parts: G_0(z) = kappa (1 - exp(-z/kappa))
    for z in (0.0, 0.7, 3.0):
        for kap in (0.5, 2.0):
            got = soft_clip_power_integral(z, 0, kap)
            assert got == pytest.approx(kap * (1 - math.exp(-z / kap)), rel=1e-14)


def test_drift_potential_tandem_value(tan01):
    # coefficients: -u1*alpha1 = -1, own service (1 - w11) mu1 = 1.1,
    # downstream w21 mu2 = 0
    h = DriftPotential(tan01, 1)
    x = _state([1, 1], [1.0, INF], [1.0, 1.0])
    assert h.value(x) == pytest.approx(-1.0 * 1.0 + 1.1 * 1.0, abs=1e-12)
    assert h.value(x) == pytest.approx(0.1, abs=1e-12)


def test_queue_power_value(tan01):
    f = QueuePower(tan01, 2, 2.0)
    x = _state([3, 5], [1.0, INF], [1.0, 1.0])
    assert f.value(x) == pytest.approx((0.1**2 * 5) ** 2)


# ---------------------------------------------------------------------------
# interior drift
# ---------------------------------------------------------------------------

def test_interior_psi1_all_busy(fb02):
    psi = ResidualPowerSum(fb02, 1.0)
    x = _state([2, 3], [0.5, 0.5], [0.5, 0.5])
    # all four slopes are -1
    assert psi.interior(x) == pytest.approx(-4.0)


def test_interior_psi1_idle_freezes_services(fb02):
    psi = ResidualPowerSum(fb02, 1.0)
    x = _state([0, 0], [0.5, 0.5], [0.5, 0.5])
    assert psi.interior(x) == pytest.approx(-2.0)


def test_interior_queue_drift_probe_example(tan01):
    # -A f = (u'z) * (-alpha1 + mu1 * 1{Z1>0}) on the tandem with k=1, n=1
    f = QueueDriftProbe(tan01, 1, 1.0)
    x = _state([3, 0], [0.7, INF], [0.4, 0.9])
    assert -f.interior(x) == pytest.approx(3 * (-1.0 + 1.1), abs=1e-12)
    assert -f.interior(x) == pytest.approx(0.3, abs=1e-12)
    # with station 1 empty the service term drops out
    x0 = _state([0, 3], [0.7, INF], [0.4, 0.9])
    assert -f.interior(x0) == pytest.approx(0.0 * (-1.0), abs=1e-12)


@pytest.mark.parametrize("selector", [
    "psi(n=2)", "psi(n=3,kappa=4)", "hk(k=1)", "hk(k=2,kappa=3)",
    "fkn(k=1,n=1)", "fkn(k=2,n=2,kappa=5)", "fknD(k=1,n=1)",
    "fknE(k=2,n=1,kappa=6)", "fknF(k=1,n=1)", "f0F()",
])
def test_interior_matches_finite_differences(selector, fb02, rng):
    """Central finite differences over residual coordinates reproduce the
    analytic interior drift away from truncation kinks."""
    f = parse_selector(selector, fb02)
    h = 1e-6
    checked = 0
    for _ in range(1000):
        z = rng.integers(0, 6, size=2)
        re = rng.uniform(0.05, 2.5, size=2)
        rs = rng.uniform(0.05, 2.5, size=2)
        if math.isfinite(f.kappa) and (
                np.any(np.abs(re - f.kappa) < 10 * h) or
                np.any(np.abs(rs - f.kappa) < 10 * h)):
            continue
        x = _state(z, re, rs)
        num = 0.0
        for j in range(2):
            xp = _state(z, re + h * np.eye(2)[j], rs)
            xm = _state(z, re - h * np.eye(2)[j], rs)
            num -= (f.value(xp) - f.value(xm)) / (2 * h)
            if z[j] > 0:
                xp = _state(z, re, rs + h * np.eye(2)[j])
                xm = _state(z, re, rs - h * np.eye(2)[j])
                num -= (f.value(xp) - f.value(xm)) / (2 * h)
        ana = f.interior(x)
        assert num == pytest.approx(ana, rel=1e-5, abs=1e-7), selector
        checked += 1
    assert checked > 900


# ---------------------------------------------------------------------------
# jump differences
# ---------------------------------------------------------------------------

def test_jump_delta_psi1_arrival(fb02):
    psi = ResidualPowerSum(fb02, 1.0)
    pre = _state([1, 0], [0.0, 0.6], [0.2, 0.3], t=5.0)
    rec = JumpRecord(kind=KIND_ARRIVAL, station=0, pre_state=pre, variate=1.7,
                     routed_to=None, clock=5.0)
    # only the station-1 interarrival coordinate changes, by T/alpha
    assert psi.jump_delta(rec) == pytest.approx(1.7 / fb02.alpha[0])


def test_jump_delta_constant_is_zero(fb02):
    one = QueuePower(fb02, 1, 0.0)
    pre = _state([2, 1], [0.1, 0.6], [0.0, 0.3], t=2.0)
    rec = JumpRecord(kind=KIND_COMPLETION, station=1, pre_state=pre,
                     variate=0.9, routed_to=0, clock=2.0)
    assert one.jump_delta(rec) == 0.0


def test_jump_delta_matches_hand_expansion(fb02):
    # f = (r z_1) psi_1; completion at station 1 exiting the network:
    # delta = r(z-1)(psi_1 + T/mu) - r z psi_1 = r(-psi_1 + (z-1) T/mu)
    f = QueueResidualProduct(fb02, 1, 1.0, (1.0,))
    pre = _state([4, 2], [0.3, 0.8], [0.0, 0.5], t=1.0)
    t_var = 1.3
    rec = JumpRecord(kind=KIND_COMPLETION, station=0, pre_state=pre,
                     variate=t_var, routed_to=None, clock=1.0)
    r = fb02.r
    mu1 = fb02.mu[0]
    psi_pre = 0.3 + 0.8 + 0.0 + 0.5
    psi_post = psi_pre + t_var / mu1
    want = r * 3 * psi_post - r * 4 * psi_pre
    assert f.jump_delta(rec) == pytest.approx(want, rel=1e-12)


# ---------------------------------------------------------------------------
# truncation behavior
# ---------------------------------------------------------------------------

def test_psi_truncation_monotone_in_kappa(fb02, rng):
    x = _state([1, 2], [3.0, 0.4], [6.0, 1.2])
    untruncated = ResidualPowerSum(fb02, 2.0).value(x)
    prev = -INF
    for kap in (0.5, 1.0, 2.0, 4.0, 8.0, 100.0):
        v = ResidualPowerSum(fb02, 2.0, kappa=kap).value(x)
        assert v >= prev - 1e-15
        assert v <= untruncated + 1e-15
        prev = v
    assert prev == pytest.approx(untruncated)


def test_soft_clip_monotone_to_power(rng):
    z = rng.uniform(0, 20, size=200)
    prev = np.full_like(z, -INF)
    for kap in (0.5, 2.0, 8.0, 32.0, 1e6):
        g = soft_clip_power(z, 3, kap)
        assert np.all(g >= prev - 1e-15)
        assert np.all(g <= np.power(z, 3) + 1e-12)
        prev = g
    assert np.allclose(prev, np.power(z, 3), rtol=1e-4)


def test_drift_potential_truncation_error_bound(fb02):
    h_full = DriftPotential(fb02, 2)
    x = _state([1, 1], [2.5, 0.7], [4.0, 1.9])
    prev_bound = INF
    for kap in (0.5, 1.0, 2.0, 4.0, 64.0):
        h = DriftPotential(fb02, 2, kappa=kap)
        err = abs(h.value(x) - h_full.value(x))
        bound = 0.0
        for j in range(2):
            bound += abs(h.ce[j]) * max(0.0, x.r_e[j] - kap)
            bound += abs(h.cs[j]) * max(0.0, x.r_s[j] - kap)
        assert err <= bound + 1e-12
        assert bound <= prev_bound + 1e-12
        prev_bound = bound
    assert err == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("selector", [
    "psi(n=2,kappa=3)", "hk(k=1,kappa=2)", "fkn(k=1,n=1,kappa=4)",
    "fknD(k=2,n=1,kappa=3)", "fknE(k=1,n=2,kappa=3)", "fknF(k=2,n=1,kappa=2)",
    "f0F(kappa=5)",
])
def test_bound_certificates_hold(selector, fb02, rng):
    f = parse_selector(selector, fb02)
    assert f.bound is not None
    n = 1_000_000
    z = rng.integers(0, 400, size=(n, 2)).astype(float)
    re = np.power(rng.uniform(0, 2.2, size=(n, 2)), 4)  # spread past kappa
    rs = np.power(rng.uniform(0, 2.2, size=(n, 2)), 4)
    vals = f.value_chunk(z, re, rs)
    assert np.abs(vals).max() <= f.bound * (1 + 1e-12), selector


def test_untruncated_members_flagged_unbounded(fb02):
    for sel in ("psi(n=2,kappa=inf)", "hk(k=1,kappa=inf)",
                "fkn(k=1,n=1,kappa=inf)", "f0F(kappa=inf)"):
        assert parse_selector(sel, fb02).bound is None


# ---------------------------------------------------------------------------
# soft-truncation integral primitive
# ---------------------------------------------------------------------------

@given(st.integers(min_value=0, max_value=6),
       st.floats(min_value=0.1, max_value=20.0),
       st.floats(min_value=0.0, max_value=50.0))
@settings(max_examples=60, deadline=None)
def test_integral_recurrence_vs_quadrature(n, kappa, z):
    got = float(soft_clip_power_integral(z, n, kappa))
    want, err = quad(lambda y: y**n * math.exp(-y / kappa), 0.0, z,
                     limit=200)
    assert got == pytest.approx(want, rel=1e-9, abs=1e-10)


@given(st.floats(min_value=0.2, max_value=5.5),
       st.floats(min_value=0.1, max_value=10.0),
       st.floats(min_value=0.0, max_value=30.0))
@settings(max_examples=40, deadline=None)
def test_integral_real_order_vs_gamma(n, kappa, z):
    got = float(soft_clip_power_integral(z, n, kappa))
    want = kappa ** (n + 1) * math.gamma(n + 1) * gammainc(n + 1, z / kappa)
    assert got == pytest.approx(want, rel=1e-10, abs=1e-12)
    # integer orders agree across both code paths
    got_int = float(soft_clip_power_integral(z, 3.0, kappa))
    want_int = kappa**4 * math.gamma(4.0) * gammainc(4.0, z / kappa)
    assert got_int == pytest.approx(want_int, rel=1e-10, abs=1e-12)


# ---------------------------------------------------------------------------
# soft-truncation inequality checks
# ---------------------------------------------------------------------------

def test_truncation_properties_trivial_points():
    z = np.array([0.0, 0.0])
    c = np.array([0.0, 1.0])
    rep = check_soft_truncation_bounds(np.array([2.0, 3.0]),
                                       np.array([1.0, 2.0]), z, c)
    assert rep.passed


def test_truncation_bound_attained():
    # peak of z^n exp(-z/kappa) sits at z = kappa n
    n, kap = 2.0, 1.0
    g = float(soft_clip_power(2.0, n, kap))
    assert g == pytest.approx((kap * n / math.e) ** n, rel=1e-12)
    rep = check_soft_truncation_bounds(np.array([n]), np.array([kap]),
                                       np.array([2.0]), np.array([0.0]))
    assert rep.passed


def test_truncation_properties_randomized(rng):
    n = rng.integers(1, 7, size=10_000).astype(float)
    kappa = 10.0 ** rng.uniform(-1, 1, size=10_000)
    z = rng.uniform(0.0, 6.0 * kappa * n + 2.0 * kappa)
    c = rng.uniform(-z, 2.0 * (z + kappa * (n + 1)))
    rep = check_soft_truncation_bounds(n, kappa, z, c)
    assert rep.passed, rep


# ---------------------------------------------------------------------------
# segment integration
# ---------------------------------------------------------------------------

def _single_segment_chunk(scaled, z, re, rs, dt):
    z = np.asarray([z], dtype=float)
    re_arr = np.asarray([re], dtype=float)
    rs_arr = np.asarray([rs], dtype=float)
    return EventChunk(
        t=np.array([dt]), dt=np.array([dt]), z=z, re=re_arr, rs=rs_arr,
        busy=z > 0, kind=np.array([-1], dtype=np.int8),
        station=np.array([-1]), variate=np.array([math.nan]),
        route=np.array([-2]), batch=np.array([0]),
        active_e=np.array([a > 0 for a in scaled.alpha]))


def _quad_oracle(f, chunk, dt):
    """Adaptive quadrature of f along one segment (independent oracle)."""
    def integrand(tau):
        back = np.array([dt - tau])
        re_n = chunk.re + back[:, None] * chunk.active_e[None, :]
        rs_n = chunk.rs + back[:, None] * chunk.busy
        return float(f.value_chunk(chunk.z, re_n, rs_n)[0])
    val, err = quad(integrand, 0.0, dt, limit=400, epsabs=1e-12, epsrel=1e-12)
    return val


@pytest.mark.parametrize("selector", [
    "psi(n=2)", "psi(n=3,kappa=1.0)", "hk(k=2,kappa=0.8)",
    "fkn(k=1,n=2,kappa=1.2)", "fknE(k=1,n=1,kappa=0.9)", "f0F(kappa=1.1)",
])
def test_segment_integrals_match_quadrature(selector, fb02):
    # pre-jump residuals below kappa with spans crossing it mid-segment
    f = parse_selector(selector, fb02)
    chunk = _single_segment_chunk(fb02, [2, 1], [0.3, 0.55], [0.15, 0.4], 1.7)
    got = float(f.segment_integrals(chunk)[0])
    want = _quad_oracle(f, chunk, 1.7)
    assert got == pytest.approx(want, rel=1e-9, abs=1e-11)


def test_interior_integrand_matches_quadrature(fb02):
    f = parse_selector("fkn(k=2,n=2,kappa=0.7)", fb02)
    chunk = _single_segment_chunk(fb02, [3, 2], [0.2, 0.6], [0.5, 0.1], 1.3)
    neg = f.interior_integrand()
    got = float(neg.segment_integrals(chunk)[0])

    def integrand(tau):
        back = np.array([1.3 - tau])
        re_n = chunk.re + back[:, None] * chunk.active_e[None, :]
        rs_n = chunk.rs + back[:, None] * chunk.busy
        return -float(f.interior_chunk(chunk.z, re_n, rs_n)[0])
    want, _ = quad(integrand, 0.0, 1.3, limit=400, epsabs=1e-12,
                   points=[0.3, 0.5, 0.7, 0.9, 1.1])
    assert got == pytest.approx(want, rel=1e-9, abs=1e-11)


def test_real_exponent_integration(fb02):
    # non-integer residual power falls back to adaptive refinement
    f = QueueResidualProduct(fb02, 1, 1.2, (0.8,))
    assert not f.exact
    chunk = _single_segment_chunk(fb02, [2, 1], [0.4, 0.9], [0.3, 0.7], 0.9)
    got = float(f.segment_integrals(chunk)[0])
    want = _quad_oracle(f, chunk, 0.9)
    assert got == pytest.approx(want, rel=1e-8)


def test_declared_degree_matches_observed(fb02):
    """Polynomial fit along one kink-free segment confirms the declared
    along-segment degree (quadrature exactness contract)."""
    for name, kw, expect in [("psi", dict(n=2.0), 2), ("hk", dict(k=1), 1),
                             ("fkn", dict(k=2, n=2.0), 1),
                             ("fknD", dict(k=1, n=2.0), 1),
                             ("fknE", dict(k=1, n=1.0), 2),
                             ("f0F", dict(), 3)]:
        f = build_function(fb02, name, kappa=math.inf, **kw)
        selector = f.name
        assert f.along_degree == expect
        chunk = _single_segment_chunk(fb02, [2, 3], [0.5, 0.8], [0.6, 0.9], 0.4)
        taus = np.linspace(0.0, 0.4, 41)
        vals = []
        for tau in taus:
            back = np.array([0.4 - tau])
            re_n = chunk.re + back[:, None] * chunk.active_e[None, :]
            rs_n = chunk.rs + back[:, None] * chunk.busy
            vals.append(float(f.value_chunk(chunk.z, re_n, rs_n)[0]))
        vals = np.array(vals)
        resid_d = np.polyfit(taus, vals, expect, full=True)[1]
        scale = max(1.0, float(np.abs(vals).max()))
        assert (resid_d.size == 0 or resid_d[0] < 1e-16 * scale**2), selector
        if expect >= 1:
            resid_lo = np.polyfit(taus, vals, expect - 1, full=True)[1]
            assert resid_lo[0] > 1e-12, selector


# ---------------------------------------------------------------------------
# construction and selectors
# ---------------------------------------------------------------------------

def test_sourceless_reference_rejected(tan01):
    with pytest.raises(ValueError):
        CoordinatePower(tan01, "e", 2, 1.0)
    # station 1 has a source
    CoordinatePower(tan01, "e", 1, 1.0)


def test_selector_round_trip(fb02):
    f = parse_selector("fkn(k=1,n=2,kappa=50)", fb02)
    assert isinstance(f, QueueDriftProbe)
    assert f.k == 1 and f.n == 2.0 and f.kappa == 50.0
    f = parse_selector("psi(n=3,kappa=10)", fb02)
    assert isinstance(f, ResidualPowerSum)
    assert f.n == 3.0 and f.kappa == 10.0
    f = parse_selector("f0F(kappa=20)", fb02)
    assert isinstance(f, QueueResidualProduct)
    assert f.n == 0.0 and tuple(p.n for p in f.psis) == (2.0, 1.0)


def test_selector_errors(fb02):
    for bad in ("nope(n=1)", "psi", "psi(q=1)", "fkn(k=1)", "psi(n=1", ""):
        with pytest.raises(ValueError):
            parse_selector(bad, fb02)


def test_default_kappa_quantile_rule(fb02):
    f = parse_selector("psi(n=2)", fb02)
    # exponential everywhere: q999/rate maximized over referenced streams
    q = -math.log1p(-0.999)
    want = max(q / fb02.alpha[0], q / fb02.alpha[1],
               q / fb02.mu[0], q / fb02.mu[1])
    assert f.kappa == pytest.approx(want, rel=1e-12)


def test_default_kappa_nudged_off_deterministic_lattice():
    from gjnet.distributions import deterministic
    from gjnet.network import NetworkSpec, RoutingMatrix
    spec = NetworkSpec(alpha=(1.0,), routing=RoutingMatrix.from_rows([[0.0]]),
                       arrival=(deterministic(),), service=(deterministic(),),
                       moment_order=2.0)
    scaled = make_scaled(spec, 0.1)
    kap = default_kappa(scaled, np.array([True]), np.array([True]))
    # cap must not equal any attainable residual value exactly
    assert kap * scaled.alpha[0] != round(kap * scaled.alpha[0])


def test_fkn_e_order_exceeding_bound_rejected(fb02):
    with pytest.raises(ValueError):
        build_function(fb02, "fknF", k=1, n=3.0)  # M - n < 0 for M = 2
