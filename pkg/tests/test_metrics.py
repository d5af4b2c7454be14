import math

import numpy as np
import pytest

from streamtomo.engine import UpdateEvent
from streamtomo.metrics import (CSV_FIELDS, MetricsCollector, load_slice_image,
                                make_ground_truth, read_quality_csv,
                                save_slice_image, ssim, write_pgm)
from streamtomo.phantoms import PhantomSpec, make_phantom
from streamtomo.projector import forward_project


# --------------------------------------------------------------------------
# structural similarity

def reference_ssim(a, b, data_range):
    """Direct-summation SSIM oracle: explicit loops over every valid
    11x11 window position with a hand-built Gaussian weight."""
    size = 11
    sigma = 1.5
    offsets = np.arange(size) - 5
    kernel_1d = np.exp(-offsets ** 2 / (2.0 * sigma ** 2))
    kernel = np.outer(kernel_1d, kernel_1d)
    kernel /= kernel.sum()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    height, width = a.shape
    values = []
    for i in range(height - size + 1):
        for j in range(width - size + 1):
            wa = a[i:i + size, j:j + size]
            wb = b[i:i + size, j:j + size]
            mu_a = (kernel * wa).sum()
            mu_b = (kernel * wb).sum()
            var_a = (kernel * wa * wa).sum() - mu_a ** 2
            var_b = (kernel * wb * wb).sum() - mu_b ** 2
            cov = (kernel * wa * wb).sum() - mu_a * mu_b
            values.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                          / ((mu_a ** 2 + mu_b ** 2 + c1)
                             * (var_a + var_b + c2)))
    return float(np.mean(values))


def test_ssim_identical_images_score_one(rng):
    image = rng.random((24, 24))
    assert ssim(image, image) == pytest.approx(1.0, abs=1e-12)


def test_ssim_matches_direct_summation_oracle(rng):
    a = rng.random((32, 32))
    b = np.clip(a + 0.2 * rng.standard_normal((32, 32)), 0.0, 1.5)
    expected = reference_ssim(a, b, data_range=1.0)
    assert ssim(a, b, data_range=1.0) == pytest.approx(expected, abs=1e-6)


def test_ssim_constant_pair_closed_form():
    a = np.full((16, 16), 0.4)
    b = np.full((16, 16), 0.6)
    c1 = (0.01 * 1.0) ** 2
    expected = (2 * 0.4 * 0.6 + c1) / (0.4 ** 2 + 0.6 ** 2 + c1)
    assert ssim(a, b, data_range=1.0) == pytest.approx(expected, rel=1e-12)


def test_ssim_is_symmetric_with_fixed_range(rng):
    a = rng.random((20, 20))
    b = rng.random((20, 20))
    assert ssim(a, b, data_range=1.0) \
        == pytest.approx(ssim(b, a, data_range=1.0), abs=1e-12)


def test_ssim_defaults_range_to_reference_span(rng):
    a = rng.random((20, 20))
    b = 2.0 * rng.random((20, 20)) + 1.0
    span = b.max() - b.min()
    assert ssim(a, b) == pytest.approx(ssim(a, b, data_range=span))


def test_ssim_penalizes_noise(rng):
    clean = make_phantom(PhantomSpec(kind="shepp_logan", size=48))
    low = np.clip(clean + 0.02 * rng.standard_normal(clean.shape), 0, None)
    high = np.clip(clean + 0.2 * rng.standard_normal(clean.shape), 0, None)
    assert ssim(high, clean) < ssim(low, clean) < 1.0


def test_ssim_input_validation(rng):
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))  # smaller than the window
    with pytest.raises(ValueError):
        ssim(np.zeros((16, 16)), np.zeros((16, 17)))
    with pytest.raises(ValueError):
        # constant reference has zero span and no default range
        ssim(rng.random((16, 16)), np.ones((16, 16)))


# --------------------------------------------------------------------------
# ground truth builder

def test_ground_truth_is_deterministic():
    phantom = make_phantom(PhantomSpec(kind="spheres", size=32, seed=6))
    angles = np.linspace(0.0, math.pi, 24, endpoint=False)
    sino = forward_project(phantom, angles, 32)
    a = make_ground_truth(sino, angles, 32, iterations=15)
    b = make_ground_truth(sino, angles, 32, iterations=15)
    np.testing.assert_array_equal(a, b)


def test_ground_truth_improves_with_iterations():
    phantom = make_phantom(PhantomSpec(kind="shepp_logan", size=48))
    angles = np.linspace(0.0, math.pi, 40, endpoint=False)
    sino = forward_project(phantom, angles, 48)
    rough = make_ground_truth(sino, angles, 48, iterations=4)
    converged = make_ground_truth(sino, angles, 48, iterations=40)
    assert ssim(converged, phantom) > ssim(rough, phantom)


# --------------------------------------------------------------------------
# collector and CSV

class FakeClock:
    def __init__(self):
        self.now = 100.0

    def __call__(self):
        return self.now


def make_event(slice_id, update_index, consumed=16):
    return UpdateEvent(slice_id=slice_id, update_index=update_index,
                       trigger_seq=0, recon_elapsed=0.0,
                       projections_consumed=consumed)


def test_collector_timing_and_rate_math(tmp_path, rng):
    truth = {0: rng.random((16, 16))}
    clock = FakeClock()
    csv_path = tmp_path / "metrics.csv"
    collector = MetricsCollector(truth, csv_path=csv_path, clock=clock)

    clock.now = 102.0
    quality, throughput = collector.record(make_event(0, 1), truth[0])
    assert quality.seconds_since_start == pytest.approx(2.0)
    assert throughput.refresh_seconds == pytest.approx(2.0)
    assert throughput.sustained_rate == pytest.approx(16 / 2.0)
    assert quality.ssim_conventional == pytest.approx(1.0)
    assert quality.ssim_enhanced is None

    clock.now = 105.0
    _, throughput = collector.record(make_event(0, 2), truth[0],
                                     enhanced=truth[0])
    assert throughput.refresh_seconds == pytest.approx(3.0)
    assert throughput.sustained_rate == pytest.approx(32 / 5.0)
    collector.close()

    rows = read_quality_csv(csv_path)
    assert len(rows) == 2
    assert rows[0]["ssim_enh"] is None
    assert rows[1]["ssim_enh"] == pytest.approx(1.0)
    assert rows[1]["projections"] == 32
    assert rows[1]["sustained_pps"] == pytest.approx(6.4)


def test_collector_tracks_slices_independently(rng):
    truth = {0: rng.random((16, 16)), 1: rng.random((16, 16))}
    clock = FakeClock()
    collector = MetricsCollector(truth, clock=clock)
    clock.now = 101.0
    collector.record(make_event(0, 1), truth[0])
    clock.now = 103.0
    _, throughput = collector.record(make_event(1, 1), truth[1])
    # slice 1's first refresh is measured from the start, not slice 0's event
    assert throughput.refresh_seconds == pytest.approx(3.0)
    assert len(collector.slice_curve(0)) == 1
    assert len(collector.slice_curve(1)) == 1
    collector.close()


def test_collector_without_truth_leaves_ssim_blank(tmp_path, rng):
    collector = MetricsCollector({}, csv_path=tmp_path / "metrics.csv")
    quality, _ = collector.record(make_event(0, 1), rng.random((16, 16)))
    assert quality.ssim_conventional is None
    collector.close()
    rows = read_quality_csv(tmp_path / "metrics.csv")
    assert rows[0]["ssim_conv"] is None


def test_csv_header_is_stable(tmp_path, rng):
    csv_path = tmp_path / "metrics.csv"
    collector = MetricsCollector({}, csv_path=csv_path)
    collector.record(make_event(0, 1), rng.random((16, 16)))
    collector.close()
    header = csv_path.read_text().splitlines()[0]
    assert header == ",".join(CSV_FIELDS)
    assert header == ("slice_id,update_index,t_seconds,projections,"
                      "ssim_conv,ssim_enh,refresh_s,sustained_pps")


# --------------------------------------------------------------------------
# image artifacts

def test_slice_image_round_trip(tmp_path, rng):
    values = rng.random((24, 24)).astype(np.float32)
    base = tmp_path / "s0001_u0003_conv"
    save_slice_image(base, values, slice_id=1, update_index=3)
    loaded, meta = load_slice_image(base)
    np.testing.assert_array_equal(loaded, values)
    assert meta["n"] == 24
    assert meta["slice_id"] == 1
    assert meta["update_index"] == 3
    assert meta["dtype"] == "float32"
    assert base.with_suffix(".pgm").exists()


def test_pgm_is_minmax_scaled(tmp_path):
    path = tmp_path / "preview.pgm"
    write_pgm(path, np.array([[0.0, 1.0], [2.0, 3.0]]))
    data = path.read_bytes()
    header, pixels = data.rsplit(b"\n", 1)
    assert header.split()[0] == b"P5"
    assert b"2 2" in header
    assert b"255" in header
    assert list(pixels) == [0, 85, 170, 255]


def test_save_slice_image_requires_square(tmp_path):
    with pytest.raises(ValueError):
        save_slice_image(tmp_path / "bad", np.zeros((4, 5)), 0, 0)
