import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riscsi._toml import ConfigError
from riscsi.grid import (
    BwpConfig,
    CdmType,
    CsiRsConfig,
    csirs_mask,
    enumerate_re_set,
    generate_pilots,
    synthesize_received_grid,
    write_grid_csv,
)


def _as_tuples(coords):
    return [tuple(int(v) for v in row) for row in coords]


def test_single_rb_two_re_pattern():
    cfg = CsiRsConfig.row3(BwpConfig(1))
    assert _as_tuples(enumerate_re_set(cfg)) == [(0, 4), (1, 4)]


def test_second_rb_advances_by_twelve():
    cfg = CsiRsConfig.row3(BwpConfig(2))
    assert _as_tuples(enumerate_re_set(cfg)) == [(0, 4), (1, 4), (12, 4), (13, 4)]


def test_full_bwp_count_matches_independent_loop():
    cfg = CsiRsConfig.row3(BwpConfig(106))
    expected = []
    for rb in range(106):
        for kp in (0, 1):
            expected.append((12 * rb + kp, 4))
    got = _as_tuples(enumerate_re_set(cfg))
    assert len(got) == 212
    assert sorted(got, key=lambda c: (c[1], c[0])) == got
    assert set(got) == set(expected)


def test_re_set_sorted_by_symbol_then_subcarrier():
    cfg = CsiRsConfig("custom", CdmType.NO_CDM, 1, (2,), (5,), (0,), (0, 3), BwpConfig(3))
    coords = enumerate_re_set(cfg)
    keys = [(n, m) for m, n in coords]
    assert keys == sorted(keys)
    assert len(coords) == 3 * cfg.res_per_rb


@given(st.integers(1, 40), st.integers(0, 10), st.integers(0, 13), st.sampled_from(["row2", "row3"]))
@settings(max_examples=60, deadline=None)
def test_coordinates_inside_grid_and_disjoint(prbs, k0, l0, row):
    bwp = BwpConfig(prbs)
    cfg = CsiRsConfig.row2(bwp, k0, l0) if row == "row2" else CsiRsConfig.row3(bwp, 2, k0, l0)
    for port in range(cfg.ports):
        coords = enumerate_re_set(cfg, port)
        assert np.all((coords[:, 0] >= 0) & (coords[:, 0] < prbs * 12))
        assert np.all((coords[:, 1] >= 0) & (coords[:, 1] < 14))
        assert len(set(_as_tuples(coords))) == len(coords) == prbs * cfg.res_per_rb
    assert np.array_equal(enumerate_re_set(cfg), enumerate_re_set(cfg))


def test_offsets_outside_rb_rejected():
    with pytest.raises(ValueError):
        CsiRsConfig.row3(BwpConfig(4), k0=11)
    with pytest.raises(ValueError):
        CsiRsConfig.row2(BwpConfig(4), l0=14)


def test_overlapping_groups_rejected():
    with pytest.raises(ValueError, match="overlap"):
        CsiRsConfig("custom", CdmType.NO_CDM, 1, (0, 0), (4, 4), (0,), (0,), BwpConfig(2))


def test_port_out_of_range_rejected():
    with pytest.raises(ValueError):
        enumerate_re_set(CsiRsConfig.row2(BwpConfig(2)), port=1)


def test_bwp_validation():
    with pytest.raises(ValueError):
        BwpConfig(0)
    with pytest.raises(ValueError):
        BwpConfig(10, scs_khz=120)
    assert BwpConfig(106, 30).num_subcarriers == 1272


def test_pilots_unit_modulus_and_deterministic():
    cfg = CsiRsConfig.row3(BwpConfig(20))
    a, b = generate_pilots(cfg, 0), generate_pilots(cfg, 0)
    for p in range(cfg.ports):
        assert np.array_equal(np.abs(a.symbols[p]), np.ones(len(a.symbols[p])))
        assert np.array_equal(a.symbols[p], b.symbols[p])
    assert not np.array_equal(a.symbols[0], generate_pilots(cfg, 1).symbols[0])


def test_cdm_ports_differ_by_cover():
    cfg = CsiRsConfig.row3(BwpConfig(5))
    pilots = generate_pilots(cfg, 3)
    ratio = pilots.symbols[1] / pilots.symbols[0]
    m = pilots.re_sets[0][:, 0]
    assert np.allclose(ratio, np.where(m % 12 == 0, 1.0, -1.0))


def test_noiseless_pilot_res_scale_by_h():
    cfg = CsiRsConfig.row2(BwpConfig(10))
    pilots = generate_pilots(cfg, 5)
    h = 0.5 + 0.5j
    grid = synthesize_received_grid(cfg, pilots, h)
    m, n = pilots.re_sets[0].T
    assert np.array_equal(grid.data[0, m, n], h * pilots.symbols[0])
    ls = grid.data[0, m, n] * np.conj(pilots.symbols[0]) / np.abs(pilots.symbols[0]) ** 2
    assert np.allclose(ls, h, rtol=0, atol=1e-15)


def test_unscheduled_res_are_zero():
    cfg = CsiRsConfig.row2(BwpConfig(10))
    grid = synthesize_received_grid(cfg, generate_pilots(cfg), 1 + 0j, scheduled_fraction=0.0)
    assert not grid.scheduled_mask.any()
    assert np.all(grid.data[0][~grid.pilot_mask] == 0)


def test_full_schedule_fills_every_non_pilot_re():
    cfg = CsiRsConfig.row2(BwpConfig(6))
    grid = synthesize_received_grid(cfg, generate_pilots(cfg), 2.0, scheduled_fraction=1.0, seed=2)
    assert np.all(grid.scheduled_mask == ~grid.pilot_mask)
    assert np.allclose(np.abs(grid.data[0]), 2.0)


def test_noise_variance_monte_carlo():
    cfg = CsiRsConfig.row2(BwpConfig(250))
    pilots = generate_pilots(cfg, 0)
    m, n = pilots.re_sets[0].T
    resid = []
    for s in range(40):
        grid = synthesize_received_grid(cfg, pilots, 1.0, noise_var=0.01, seed=s)
        resid.append(grid.data[0, m, n] - pilots.symbols[0])
    resid = np.concatenate(resid)
    assert resid.size == 10_000
    assert abs(np.var(resid) / 0.01 - 1) < 0.2


def test_grid_shape_and_multi_antenna_channel():
    cfg = CsiRsConfig.row3(BwpConfig(4))
    pilots = generate_pilots(cfg, 0)
    h = np.array([[1.0, 0.5j], [-1.0, 2.0]])
    grid = synthesize_received_grid(cfg, pilots, h)
    assert grid.data.shape == (2, 48, 14)
    assert grid.num_antennas == 2
    with pytest.raises(ValueError):
        synthesize_received_grid(cfg, pilots, np.ones(3))


def test_invalid_synthesis_arguments():
    cfg = CsiRsConfig.row2(BwpConfig(2))
    pilots = generate_pilots(cfg)
    with pytest.raises(ValueError):
        synthesize_received_grid(cfg, pilots, 1.0, noise_var=-1)
    with pytest.raises(ValueError):
        synthesize_received_grid(cfg, pilots, 1.0, scheduled_fraction=1.5)


def test_mask_counts_every_port_group():
    cfg = CsiRsConfig.row3(BwpConfig(7))
    assert csirs_mask(cfg).sum() == 14


def test_config_from_toml(tmp_path):
    path = tmp_path / "csirs.toml"
    path.write_text('[csirs]\nrow = "row3"\nports = 2\nk0 = 4\n\n[csirs.bwp]\nnum_prbs = 24\nscs_khz = 15\n')
    cfg = CsiRsConfig.from_file(path)
    assert cfg.cdm_type is CdmType.FD_CDM2
    assert cfg.bwp == BwpConfig(24, 15)
    assert _as_tuples(enumerate_re_set(cfg))[:2] == [(4, 4), (5, 4)]


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        CsiRsConfig.from_file(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[csirs\n")
    with pytest.raises(ConfigError):
        CsiRsConfig.from_file(bad)
    wrong = tmp_path / "wrong.toml"
    wrong.write_text('[csirs]\nrow = "row2"\nbogus = 1\n')
    with pytest.raises(ConfigError):
        CsiRsConfig.from_file(wrong)


def test_grid_csv_dump(tmp_path):
    cfg = CsiRsConfig.row2(BwpConfig(1))
    grid = synthesize_received_grid(cfg, generate_pilots(cfg), 1j, scheduled_fraction=1.0)
    path = tmp_path / "grid.csv"
    write_grid_csv(grid, path)
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == 12 * 14
    assert list(rows[0]) == ["m", "n", "re", "im", "is_pilot", "is_scheduled"]
    assert sum(int(r["is_pilot"]) for r in rows) == 1
    assert abs(complex(float(rows[4]["re"]), float(rows[4]["im"]))) == pytest.approx(1.0)
