import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from riscsi.chanest import (
    AnchorSeries,
    CciExtractor,
    InterpolatedChannel,
    LsEstimateSet,
    anchor,
    extract_cci,
    interpolate,
    interpolation_weights,
    ls_estimate,
    noise_gain,
    wideband_average,
    write_channel_csv,
)
from riscsi.grid import BwpConfig, CsiRsConfig, Pilots, generate_pilots, synthesize_received_grid


def _grid(h, prbs=10, cfg=None, **kw):
    cfg = cfg or CsiRsConfig.row2(BwpConfig(prbs))
    pilots = generate_pilots(cfg, 7)
    return cfg, pilots, synthesize_received_grid(cfg, pilots, h, **kw)


def test_ls_recovers_flat_channel():
    cfg, pilots, grid = _grid(0.3 - 0.4j)
    ls = ls_estimate(grid, pilots)
    assert np.allclose(ls.values, 0.3 - 0.4j, atol=1e-15)
    assert set(ls.as_dict()) == {tuple(c) for c in pilots.re_sets[0].tolist()}


def test_ls_identity_channel():
    _, pilots, grid = _grid(1.0)
    assert np.allclose(ls_estimate(grid, pilots).values, 1 + 0j, atol=1e-15)


def test_ls_noisy_mean_consistent():
    cfg = CsiRsConfig.row2(BwpConfig(500))
    pilots = generate_pilots(cfg, 1)
    h = 0.7 + 0.2j
    vals = np.concatenate([ls_estimate(synthesize_received_grid(cfg, pilots, h, 0.04, seed=s), pilots).values
                           for s in range(20)])
    assert vals.size == 10_000
    assert abs(vals.mean() - h) < 3 * np.sqrt(0.04 / vals.size)


def test_ls_on_explicit_re_subset_and_errors():
    cfg, pilots, grid = _grid(2.0)
    subset = pilots.re_sets[0][:3]
    assert np.allclose(ls_estimate(grid, pilots, subset).values, 2.0)
    with pytest.raises(ValueError, match="no pilot"):
        ls_estimate(grid, pilots, [(5, 5)])
    zero = Pilots(pilots.re_sets, (np.zeros_like(pilots.symbols[0]),))
    with pytest.raises(ValueError, match="zero-magnitude"):
        ls_estimate(grid, zero)


def test_anchor_of_constants_and_mean():
    coords = np.array([[0, 4], [1, 4], [12, 4], [13, 4]])
    ls = LsEstimateSet(coords, np.array([1 + 0j, 1j, 2.0, 2.0]))
    a = anchor(ls)
    assert a.subcarriers.tolist() == [0, 12]
    assert np.allclose(a.values, [0.5 + 0.5j, 2.0])
    assert a.n_grp.tolist() == [2, 2]


def test_anchor_flat_channel_every_rb():
    cfg, pilots, grid = _grid(-0.25 + 1j, cfg=CsiRsConfig.row3(BwpConfig(12), ports=1))
    a = anchor(ls_estimate(grid, pilots), cfg)
    assert len(a.values) == 12
    assert np.allclose(a.values, -0.25 + 1j, atol=1e-15)


def test_anchor_skips_rbs_without_pilots():
    ls = LsEstimateSet(np.array([[3, 4], [27, 4]]), np.array([1.0 + 0j, 3.0]))
    a = anchor(ls)
    assert a.subcarriers.tolist() == [3, 27]
    with pytest.raises(ValueError):
        anchor(LsEstimateSet(np.zeros((0, 2), int), np.zeros(0, complex)))


def test_cdm_pair_anchor_despreads_ports():
    cfg = CsiRsConfig.row3(BwpConfig(8), ports=2)
    pilots = generate_pilots(cfg, 2)
    grid = synthesize_received_grid(cfg, pilots, np.array([0.4 + 0.1j, -0.9j]))
    for port, h in enumerate([0.4 + 0.1j, -0.9j]):
        assert abs(extract_cci(grid, cfg, pilots, port=port).value - h) < 1e-12


def test_interpolation_constant_and_midpoint():
    bwp = BwpConfig(2)
    flat = interpolate(AnchorSeries(np.array([0, 12]), np.array([3j, 3j]), np.array([1, 1])), bwp)
    assert np.allclose(flat.values, 3j)
    ramp = interpolate(AnchorSeries(np.array([0, 12]), np.array([0j, 1]), np.array([1, 1])), bwp)
    assert ramp.values[6] == pytest.approx(0.5)
    assert ramp.values[0] == 0 and ramp.values[12] == 1
    assert np.all(ramp.values[12:] == 1)


def test_single_anchor_is_constant():
    out = interpolate(AnchorSeries(np.array([5]), np.array([2 - 1j]), np.array([1])), BwpConfig(3))
    assert np.all(out.values == 2 - 1j)


def test_linear_exact_on_affine_data():
    anchors = np.arange(0, 120, 12)
    values = 0.3 + 0.05j * anchors - 0.01 * anchors
    interp = interpolate(AnchorSeries(anchors, values, np.ones(10)), BwpConfig(10))
    k = np.arange(anchors[-1] + 1)
    assert np.max(np.abs(interp.values[k] - (0.3 + 0.05j * k - 0.01 * k))) < 1e-12
    assert np.allclose(interp.values[anchors], values)


@given(st.lists(st.integers(0, 239), min_size=1, max_size=20, unique=True), st.sampled_from([4, 12, 24, 48]))
@settings(max_examples=80, deadline=None)
def test_weights_rows_sum_to_one(anchors, taps):
    w = interpolation_weights(sorted(anchors), 240, taps)
    assert np.allclose(w.sum(axis=1), 1.0, atol=1e-14)
    assert np.all(w >= 0)


def test_weights_wide_gap_holds_nearer_anchor():
    w = interpolation_weights([0, 60], 61, 24)
    assert w[5, 0] == 1.0 and w[55, 1] == 1.0
    with pytest.raises(ValueError):
        interpolation_weights([12, 0], 24)
    with pytest.raises(ValueError):
        interpolation_weights([], 24)


def test_wideband_average_examples():
    assert wideband_average(InterpolatedChannel(np.full(5, 1 - 2j), None, None)).value == 1 - 2j
    assert wideband_average(InterpolatedChannel(np.array([1 + 0j, 0j]), None, None)).value == 0.5
    with pytest.raises(ValueError):
        wideband_average(InterpolatedChannel(np.zeros(0, complex), None, None))


@given(st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False),
       st.integers(1, 30), st.sampled_from(["row2", "row3"]))
@settings(max_examples=60, deadline=None)
def test_noiseless_pipeline_identity(h, prbs, row):
    bwp = BwpConfig(prbs)
    cfg = CsiRsConfig.row2(bwp) if row == "row2" else CsiRsConfig.row3(bwp, ports=1)
    pilots = generate_pilots(cfg, prbs)
    grid = synthesize_received_grid(cfg, pilots, h, scheduled_fraction=0.5, seed=prbs)
    assert abs(extract_cci(grid, cfg, pilots).value - h) < 1e-12 * max(1.0, abs(h))


def test_extraction_is_linear_in_grid():
    cfg, pilots, grid = _grid(0.8 + 0.3j, noise_var=0.1, seed=4)
    alpha = -1.5 + 2j
    a = extract_cci(grid.scaled(alpha), cfg, pilots).value
    b = alpha * extract_cci(grid, cfg, pilots).value
    assert abs(a - b) < 1e-12


def test_noise_gain_matches_monte_carlo():
    cfg = CsiRsConfig.row2(BwpConfig(20))
    pilots = generate_pilots(cfg, 0)
    est = np.array([extract_cci(synthesize_received_grid(cfg, pilots, 0.0, 1.0, seed=s), cfg, pilots).value
                    for s in range(3000)])
    assert np.var(est) == pytest.approx(noise_gain(cfg), rel=0.1)


def test_noise_gain_close_to_inverse_re_count():
    for prbs in (10, 50, 106):
        cfg = CsiRsConfig.row2(BwpConfig(prbs))
        assert noise_gain(cfg) == pytest.approx(1 / prbs, rel=0.1)
    pair = CsiRsConfig.row3(BwpConfig(50), ports=1)
    assert noise_gain(pair) == pytest.approx(noise_gain(CsiRsConfig.row2(BwpConfig(50))) / 2)


def test_channel_csv_dump(tmp_path):
    cfg, pilots, grid = _grid(1 + 1j, prbs=2)
    anchors = anchor(ls_estimate(grid, pilots))
    interp = interpolate(anchors, cfg.bwp)
    path = tmp_path / "chan.csv"
    write_channel_csv(interp, path, anchors)
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == 24
    assert [int(r["k"]) for r in rows if r["is_anchor"] == "1"] == [0, 12]
    assert float(rows[3]["re"]) == pytest.approx(1.0)


def test_extractor_estimator_api():
    cfg, pilots, grid = _grid(0.2 - 0.7j)
    est = CciExtractor(cfg, pilots)
    params = est.get_params()
    assert params["taps"] == 24 and params["config"] is cfg
    assert clone(est).get_params()["port"] == 0
    out = est.fit().transform([grid, grid.scaled(2)])
    assert np.allclose(out, [0.2 - 0.7j, 0.4 - 1.4j])
    assert est.noise_gain_ == pytest.approx(noise_gain(cfg))
    assert np.allclose(CciExtractor(cfg, pilots).fit_transform(grid), [0.2 - 0.7j])


def test_extractor_requires_fit_and_pilots():
    from sklearn.exceptions import NotFittedError
    cfg, pilots, grid = _grid(1.0)
    with pytest.raises(NotFittedError):
        CciExtractor(cfg, pilots).transform(grid)
    with pytest.raises(ValueError):
        CciExtractor(cfg).fit()
