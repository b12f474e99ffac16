"""Link-budget math: worked examples, invariants, fading statistics."""

import numpy as np
import pytest

from uavcov import channel
from uavcov.channel import (EnvConstants, FadingField, achievable_rate,
                            effective_power, interference_at, link_geometry,
                            los_probability, received_power, sample_fading,
                            service_indicator)

ENV = EnvConstants()


def test_link_geometry_vertical():
    g = link_geometry((0.0, 0.0), (0.0, 0.0, 300.0))
    assert g.d == 0.0
    assert g.r == 300.0
    assert g.theta == pytest.approx(np.pi / 2, rel=1e-12)


def test_link_geometry_45deg():
    g = link_geometry((0.0, 0.0), (300.0, 0.0, 300.0))
    assert g.d == pytest.approx(300.0)
    assert g.r == pytest.approx(300.0 * np.sqrt(2.0), rel=1e-12)
    assert g.theta == pytest.approx(np.pi / 4, rel=1e-12)


def test_link_geometry_345_triangle():
    g = link_geometry((0.0, 0.0), (400.0, 0.0, 300.0))
    assert g.d == pytest.approx(400.0)
    assert g.r == pytest.approx(500.0, rel=1e-12)
    # asin(3/5), evaluated independently at high precision
    assert g.theta == pytest.approx(0.643501108793, rel=1e-9)


def test_link_geometry_consistency_random():
    rng = np.random.default_rng(7)
    for _ in range(200):
        ue = rng.uniform(-5e4, 5e4, 2)
        uav = np.append(rng.uniform(-5e4, 5e4, 2), rng.uniform(1.0, 5e3))
        g = link_geometry(ue, uav)
        assert g.r >= g.d >= 0.0
        assert g.r >= uav[2]
        assert 0.0 <= g.theta <= np.pi / 2
        assert g.r ** 2 == pytest.approx(g.d ** 2 + uav[2] ** 2, rel=1e-9)


def test_link_geometry_rejects_bad_input():
    with pytest.raises(ValueError):
        link_geometry((np.nan, 0.0), (0.0, 0.0, 100.0))
    with pytest.raises(ValueError):
        link_geometry((0.0, 0.0), (0.0, 0.0, 0.0))


def test_los_probability_examples():
    # exponent vanishes when the angle in degrees equals c
    assert los_probability(ENV.c * np.pi / 180.0, ENV) == pytest.approx(1 / 12.95, rel=1e-12)
    # frozen from a 40-digit evaluation of the sigmoid
    assert los_probability(np.pi / 2, ENV) == pytest.approx(0.999706713922, rel=1e-9)
    assert los_probability(0.0, ENV) == pytest.approx(0.0162076534598, rel=1e-9)


def test_los_probability_monotone_and_bounded():
    rng = np.random.default_rng(11)
    for _ in range(500):
        a, b = np.sort(rng.uniform(0.0, np.pi / 2, 2))
        pa, pb = los_probability(a, ENV), los_probability(b, ENV)
        assert 0.0 < pa < 1.0 and 0.0 < pb < 1.0
        if b > a:
            assert pb > pa


def test_received_power_examples():
    assert received_power(0.0, 300.0, 1.0, 3.0) == 0.0
    assert received_power(0.1, 300.0, 1.0, 3.0) == pytest.approx(3.7037037037e-9, rel=1e-9)
    assert received_power(0.1, 300.0, 1.0, 4.0) == pytest.approx(1.23456790123e-11, rel=1e-9)
    with pytest.raises(ValueError):
        received_power(0.1, 0.0, 1.0, 3.0)


def test_received_power_scaling_law():
    rng = np.random.default_rng(13)
    for _ in range(100):
        p, r, lam = rng.uniform(0.01, 1.0), rng.uniform(10.0, 5e3), rng.uniform(0.5, 3.0)
        base = received_power(p, r, 1.0, ENV.alpha_los)
        scaled = received_power(p, lam * r, 1.0, ENV.alpha_los)
        assert scaled == pytest.approx(base * lam ** (-ENV.alpha_los), rel=1e-9)


def test_effective_power_examples_and_bounds():
    assert effective_power(1.0, 4e-9, 2e-11) == 4e-9
    assert effective_power(0.0, 4e-9, 2e-11) == 2e-11
    assert effective_power(0.5, 4e-9, 2e-11) == pytest.approx(2.01e-9, rel=1e-12)
    rng = np.random.default_rng(17)
    for _ in range(300):
        p = rng.random()
        a, b = rng.uniform(0, 1e-8, 2)
        eff = effective_power(p, a, b)
        assert min(a, b) - 1e-30 <= eff <= max(a, b) + 1e-30


def test_interference_examples():
    assert interference_at([], [], [], ENV.alpha_nlos) == 0.0
    assert interference_at([0.0], [1.0], [500.0], ENV.alpha_nlos) == 0.0
    assert interference_at([0.2], [1.0], [500.0], ENV.alpha_nlos) == pytest.approx(3.2e-12, rel=1e-9)


def test_interference_additivity():
    rng = np.random.default_rng(19)
    for _ in range(100):
        n = rng.integers(1, 6)
        p = rng.uniform(0.0, 1.0, n)
        g = rng.uniform(0.0, 3.0, n)
        r = rng.uniform(100.0, 5e3, n)
        total = interference_at(p, g, r, ENV.alpha_nlos)
        singles = sum(interference_at([p[i]], [g[i]], [r[i]], ENV.alpha_nlos) for i in range(n))
        assert total == pytest.approx(singles, rel=1e-12)


def test_achievable_rate_examples():
    assert achievable_rate(0.0, 1e-9, 0.0, 4e-15) == 0.0
    assert achievable_rate(18e3, 0.0, 0.0, 4e-15) == 0.0
    # frozen from a 40-digit evaluation: 18 kHz at SNR 3.7027e-9 / 4e-15
    assert achievable_rate(18e3, 3.7027e-9, 0.0, 4e-15) == pytest.approx(356762.660258, rel=1e-9)


def test_achievable_rate_monotonicity():
    rng = np.random.default_rng(23)
    for _ in range(300):
        bw = rng.uniform(1e3, 1e6)
        p = rng.uniform(1e-14, 1e-8)
        i = rng.uniform(0.0, 1e-12)
        base = achievable_rate(bw, p, i, ENV.noise_power)
        assert achievable_rate(bw * 1.5, p, i, ENV.noise_power) >= base
        assert achievable_rate(bw, p * 1.5, i, ENV.noise_power) >= base
        assert achievable_rate(bw, p, i + 1e-13, ENV.noise_power) <= base


def test_service_indicator():
    assert service_indicator(5e6, 5e6) == 1
    assert service_indicator(0.0, 5e6) == 0
    assert service_indicator(5.1e6, 5e6) == 1
    with pytest.raises(ValueError):
        service_indicator(1.0, 0.0)


def test_fading_determinism():
    field = FadingField(1234, ENV, n_ues=6, n_uavs=3)
    g1, k1 = field.draw(2, 5, 17)
    g2, k2 = field.draw(2, 5, 17)
    assert np.array_equal(g1, g2) and np.array_equal(k1, k2)
    g3, _ = field.draw(2, 5, 18)
    assert not np.array_equal(g1, g3)


def test_fading_unit_means():
    rng = np.random.default_rng(29)
    ray = sample_fading("rayleigh", rng, ENV, size=10 ** 6)
    ric = sample_fading("rician", rng, ENV, size=10 ** 6)
    assert np.all(ray >= 0.0) and np.all(ric >= 0.0)
    assert abs(ray.mean() - 1.0) < 0.01
    assert abs(ric.mean() - 1.0) < 0.01


def test_fading_counter_streams_do_not_collide():
    # consuming many values at one counter must not bleed into the next
    field = FadingField(99, ENV, n_ues=50, n_uavs=5)
    a1, _ = field.draw(0, 0, 0)
    b1, _ = field.draw(0, 0, 1)
    field2 = FadingField(99, ENV, n_ues=50, n_uavs=5)
    b2, _ = field2.draw(0, 0, 1)
    assert np.array_equal(b1, b2)
    assert not np.array_equal(a1, b1)


def test_vectorized_matches_scalar():
    rng = np.random.default_rng(31)
    ue = rng.uniform(0, 3e4, (8, 2))
    uav = np.column_stack([rng.uniform(0, 3e4, (3, 2)), rng.uniform(300, 1000, 3)])
    d, r, theta = channel.geometry_arrays(ue, uav)
    for i in range(8):
        for j in range(3):
            g = link_geometry(ue[i], uav[j])
            assert d[i, j] == pytest.approx(g.d, rel=1e-12, abs=1e-12)
            assert r[i, j] == pytest.approx(g.r, rel=1e-12)
            assert theta[i, j] == pytest.approx(g.theta, rel=1e-12)


def test_link_budget_composition():
    from uavcov.channel import FadingDraw, link_budget
    rng = np.random.default_rng(37)
    for _ in range(50):
        ue = rng.uniform(0, 2e4, 2)
        uav = np.append(rng.uniform(0, 2e4, 2), rng.uniform(300, 1000))
        draw = FadingDraw(g=float(rng.uniform(0.1, 3)), k=float(rng.uniform(0.1, 3)))
        lb = link_budget(ue, uav, 0.2, draw, 3.6e5, 1e-14, ENV)
        assert 0.0 < lb.p_los < 1.0
        lo, hi = sorted((lb.power_los, lb.power_nlos))
        assert lo <= lb.power_eff <= hi
        assert lb.rate >= 0.0 and lb.interference >= 0.0
    # zero bandwidth kills the rate but not the budget
    lb = link_budget((0.0, 0.0), (0.0, 0.0, 500.0), 0.1, FadingDraw(1.0, 1.0), 0.0, 0.0, ENV)
    assert lb.rate == 0.0 and lb.power_eff > 0.0
