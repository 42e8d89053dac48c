"""Dark-channel machinery against brute-force oracles and algebra checks."""

import numpy as np
import pytest

from surgiatm.darkprior import (
    Airlight,
    DcpConfig,
    dark_channel,
    dcp_restore,
    denorm_dark_channel,
    estimate_airlight,
    window_min,
)
from surgiatm.errors import ArgumentError, DomainError, ShapeError
from surgiatm.imgcore import ImageBuffer, ScalarField


def brute_window_min(arr: np.ndarray, z: int) -> np.ndarray:
    """Direct padded-window minimum; the slow reference path."""
    r = z // 2
    padded = np.pad(arr, r, mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (z, z))
    return windows.min(axis=(2, 3))


def test_window_min_matches_brute_force_bitwise():
    rng = np.random.default_rng(101)
    for _ in range(40):
        h = int(rng.integers(1, 24))
        w = int(rng.integers(1, 24))
        z = int(rng.choice([1, 3, 5, 7, 9]))
        field = ScalarField.from_array(rng.uniform(-2.0, 2.0, (h, w)))
        got = window_min(field, z).data
        assert np.array_equal(got, brute_window_min(field.data, z))


def test_window_min_composition_equals_wider_window():
    rng = np.random.default_rng(102)
    f = ScalarField.from_array(rng.uniform(0, 1, (17, 23)))
    for z in (3, 5, 7):
        twice = window_min(window_min(f, z), z).data
        once = window_min(f, 2 * z - 1).data
        assert np.array_equal(twice, once)


def test_window_min_is_monotone():
    rng = np.random.default_rng(103)
    lo = rng.uniform(0, 0.5, (12, 12))
    hi = lo + rng.uniform(0, 0.5, (12, 12))
    wlo = window_min(ScalarField.from_array(lo), 5).data
    whi = window_min(ScalarField.from_array(hi), 5).data
    assert np.all(wlo <= whi)


def test_window_min_rejects_even_or_nonpositive_window():
    f = ScalarField.from_array(np.zeros((4, 4)))
    for z in (0, -3, 2, 8):
        with pytest.raises(ArgumentError):
            window_min(f, z)


def test_dark_channel_matches_brute_force_bitwise():
    rng = np.random.default_rng(104)
    a = Airlight((0.9, 0.85, 0.8))
    for _ in range(25):
        h = int(rng.integers(3, 20))
        w = int(rng.integers(3, 20))
        z = int(rng.choice([1, 3, 5]))
        img = ImageBuffer.from_array(rng.uniform(0, 1, (h, w, 3)))
        expect = np.clip(
            brute_window_min((img.data / a.as_array()).min(axis=2), z), 0.0, 1.0
        )
        assert np.array_equal(dark_channel(img, a, z).data, expect)


def test_dark_channel_with_unit_airlight_equals_denormalized():
    rng = np.random.default_rng(105)
    img = ImageBuffer.from_array(rng.uniform(0, 1, (14, 10, 3)))
    unit = Airlight((1.0, 1.0, 1.0))
    assert np.array_equal(
        dark_channel(img, unit, 7).data, denorm_dark_channel(img, 7).data
    )


def test_denorm_dark_channel_bounded_by_channel_min():
    rng = np.random.default_rng(106)
    img = ImageBuffer.from_array(rng.uniform(0, 1, (16, 16, 3)))
    dd = denorm_dark_channel(img, 5).data
    assert np.all(dd <= img.data.min(axis=2) + 1e-15)
    # z = 1 removes the spatial window entirely
    assert np.array_equal(
        denorm_dark_channel(img, 1).data, img.data.min(axis=2)
    )


def test_denorm_dark_channel_needs_three_channels():
    gray = ImageBuffer.from_array(np.zeros((4, 4)))
    with pytest.raises(ShapeError):
        denorm_dark_channel(gray, 3)


class TestAirlight:
    def test_validates_components(self):
        with pytest.raises(DomainError):
            Airlight((0.0, 0.5, 0.5))
        with pytest.raises(DomainError):
            Airlight((0.5, 0.5, 1.5))
        with pytest.raises(ArgumentError):
            Airlight((0.5, 0.5))

    def test_estimate_picks_brightest_dark_channel_region(self):
        img = np.full((10, 10, 3), 0.2)
        img[:2, :2] = (0.9, 0.8, 0.7)  # channel-min 0.7 beats 0.2 elsewhere
        est = estimate_airlight(ImageBuffer.from_array(img), 1, 0.04)
        assert est.a == pytest.approx((0.9, 0.8, 0.7), abs=1e-12)

    def test_estimate_floors_dark_scenes(self):
        est = estimate_airlight(ImageBuffer.from_array(np.zeros((8, 8, 3))), 3, 0.01)
        assert est.a == (1e-3, 1e-3, 1e-3)

    def test_estimate_rejects_bad_fraction(self):
        img = ImageBuffer.from_array(np.full((4, 4, 3), 0.5))
        for frac in (0.0, -0.1, 1.5):
            with pytest.raises(ArgumentError):
                estimate_airlight(img, 3, frac)


class TestDcpRestore:
    def test_config_validation(self):
        with pytest.raises(ArgumentError):
            DcpConfig(z=4)
        with pytest.raises(ArgumentError):
            DcpConfig(t0=0.0)
        with pytest.raises(ArgumentError):
            DcpConfig(airlight_fraction=0.0)

    def test_zero_dark_channel_frames_pass_through_bitwise(self):
        # One channel pinned to zero keeps the normalized dark channel at
        # zero, so transmission is 1 everywhere and restoration is exact.
        rng = np.random.default_rng(107)
        img = rng.uniform(0.1, 0.9, (12, 12, 3))
        img[:, :, 2] = 0.0
        buf = ImageBuffer.from_array(img)
        out = dcp_restore(buf, DcpConfig(z=5), airlight=Airlight((0.9, 0.9, 0.9)))
        assert np.array_equal(out.data, buf.data)

    def test_haze_over_dark_scene_is_removed(self):
        # Composite known haze over a zero-dark-channel scene, then invert
        # with the true airlight: the restoration should be near-exact.
        rng = np.random.default_rng(108)
        clean = rng.uniform(0.1, 0.8, (20, 20, 3))
        clean[:, :, 1] = 0.0
        a = np.array([0.9, 0.9, 0.9])
        t = 0.55
        hazy = ImageBuffer.from_array(clean * t + a * (1.0 - t))
        out = dcp_restore(
            hazy, DcpConfig(z=3, t0=0.1), airlight=Airlight(tuple(a))
        )
        assert np.mean(np.abs(out.data - clean)) < 5e-3

    def test_output_stays_in_range(self):
        rng = np.random.default_rng(109)
        img = ImageBuffer.from_array(rng.uniform(0, 1, (16, 16, 3)))
        out = dcp_restore(img, DcpConfig(z=5))
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_estimated_airlight_used_when_not_given(self):
        rng = np.random.default_rng(110)
        img = ImageBuffer.from_array(rng.uniform(0.3, 0.9, (16, 16, 3)))
        explicit = dcp_restore(
            img, DcpConfig(z=5),
            airlight=estimate_airlight(img, 5, DcpConfig().airlight_fraction),
        )
        implicit = dcp_restore(img, DcpConfig(z=5))
        assert np.array_equal(explicit.data, implicit.data)
