import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from raincast.multitask import EmaState, combined_loss, ema_update

losses = st.lists(st.floats(0.0, 1e3), min_size=1, max_size=50)


def test_first_update_initialises():
    assert ema_update(EmaState(), 3.25).value == 3.25


@given(st.floats(1e-6, 1e6), st.integers(1, 200))
def test_constant_stream_is_fixed_point(loss, n):
    s = EmaState()
    for _ in range(n):
        s = ema_update(s, loss)
    assert s.value == pytest.approx(loss, rel=1e-12)


def test_decay_closed_form():
    s = ema_update(EmaState(rho=0.9), 1.0)
    for n in range(1, 60):
        s = ema_update(s, 0.0)
        assert s.value == pytest.approx(0.9**n, rel=1e-12)


@given(losses, losses, st.floats(0.0, 5.0), st.floats(0.5, 0.999))
def test_matches_scripted_recurrence(lp, la, lam, rho):
    n = min(len(lp), len(la))
    sp, sa = EmaState(rho), EmaState(rho)
    ep = ea = None
    for i in range(n):
        ep = lp[i] if ep is None else rho * ep + (1 - rho) * lp[i]
        ea = la[i] if ea is None else rho * ea + (1 - rho) * la[i]
        sp, sa = ema_update(sp, lp[i]), ema_update(sa, la[i])
        c = combined_loss(lp[i], la[i], sp, sa, lam)
        expect = lp[i] / (ep + 1e-8) + lam * la[i] / (ea + 1e-8)
        assert c.total == pytest.approx(expect, rel=1e-10, abs=1e-12)


def test_steady_state_total():
    sp = sa = EmaState()
    for _ in range(10):
        sp, sa = ema_update(sp, 0.7), ema_update(sa, 4.0)
    assert combined_loss(0.7, 4.0, sp, sa, 1.0).total == pytest.approx(2.0, abs=1e-6)
    c = combined_loss(0.7, 4.0, sp, sa, 0.0)
    assert c.total == c.pixel_term and c.d_agg == 0.0


@pytest.mark.parametrize("c", [0.01, 0.5, 7.0, 1e4])
def test_scale_invariance(c):
    sp, sa = EmaState(), EmaState()
    for _ in range(500):
        sp, sa = ema_update(sp, 1.3), ema_update(sa, c * 2.1)
    out = combined_loss(1.3, c * 2.1, sp, sa, 1.0)
    assert abs(out.agg_term - 1.0) <= 1e-6 and abs(out.pixel_term - 1.0) <= 1e-6


def test_gradients_are_detached_derivatives():
    sp, sa = ema_update(EmaState(), 2.0), ema_update(EmaState(), 5.0)
    c = combined_loss(2.0, 5.0, sp, sa, 0.7)
    h = 1e-6
    fd = (combined_loss(2.0 + h, 5.0, sp, sa, 0.7).total - combined_loss(2.0 - h, 5.0, sp, sa, 0.7).total) / (2 * h)
    assert c.d_pixel == pytest.approx(fd, rel=1e-8) and c.d_pixel == pytest.approx(1 / (2.0 + 1e-8))
    fd = (combined_loss(2.0, 5.0 + h, sp, sa, 0.7).total - combined_loss(2.0, 5.0 - h, sp, sa, 0.7).total) / (2 * h)
    assert c.d_agg == pytest.approx(fd, rel=1e-8)


def test_errors():
    with pytest.raises(ValueError):
        ema_update(EmaState(), math.nan)
    with pytest.raises(ValueError):
        ema_update(EmaState(), math.inf)
    with pytest.raises(ValueError):
        EmaState(rho=1.0)
    with pytest.raises(ValueError):
        combined_loss(1.0, 1.0, EmaState(), ema_update(EmaState(), 1.0))


def test_negative_average_keeps_descent_direction():
    sp = ema_update(EmaState(), -0.4)
    sa = ema_update(EmaState(), 2.0)
    c = combined_loss(-0.4, 2.0, sp, sa, 1.0)
    assert c.d_pixel > 0
    assert c.pixel_term == pytest.approx(-1.0)
