import numpy as np
import pytest

from degflow import background as bgm
from degflow import io as dio
from degflow.fields import GridSpec, HermitianField, ScalarField
from degflow.regularize import InitialData, smooth_ladder
from degflow.solvers import SolverConfig, flow_run


def test_scalar_snapshot_roundtrip(tmp_path, rng):
    g = GridSpec(2, 8)
    f = ScalarField(g, rng.standard_normal(g.shape))
    dio.write_field(tmp_path / "f.dfld", f)
    back = dio.read_field(tmp_path / "f.dfld")
    assert back.grid == g
    np.testing.assert_array_equal(back.values, f.values)


def test_hermitian_snapshot_roundtrip(tmp_path, rng):
    g = GridSpec(2, 8)
    z = rng.standard_normal(g.shape) + 1j * rng.standard_normal(g.shape)
    vals = np.zeros(g.shape + (2, 2), dtype=complex)
    vals[..., 0, 0] = 1 + rng.random(g.shape)
    vals[..., 1, 1] = 2 + rng.random(g.shape)
    vals[..., 0, 1] = z
    vals[..., 1, 0] = np.conj(z)
    H = HermitianField(g, vals)
    dio.write_field(tmp_path / "h.dfld", H)
    back = dio.read_field(tmp_path / "h.dfld")
    np.testing.assert_array_equal(back.values, H.values)


def test_snapshot_header(tmp_path):
    g = GridSpec(1, 16)
    dio.write_field(tmp_path / "f.dfld", ScalarField.constant(g, 2.0))
    raw = (tmp_path / "f.dfld").read_bytes()
    assert raw[:4] == b"DFLD"
    assert len(raw) == dio._HEADER.size + 16 * 16 * 8
    (tmp_path / "bad.dfld").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError):
        dio.read_field(tmp_path / "bad.dfld")


def test_ladder_roundtrip(tmp_path):
    g = GridSpec(1, 16)
    bg = bgm.BackgroundFamily(g, 1.0, 1.0)
    v = ScalarField.from_function(g, lambda x, y: 0.01 * np.cos(2 * np.pi * x) + 0 * y)
    lad = smooth_ladder(bg, InitialData(v), J=3)
    dio.write_ladder(tmp_path / "lad", lad)
    back = dio.read_ladder(tmp_path / "lad")
    assert back.eps == lad.eps and back.strict == lad.strict
    for (_, a), (_, b) in zip(lad.entries, back.entries):
        np.testing.assert_array_equal(a.values, b.values)


def test_trajectory_roundtrip(tmp_path):
    g = GridSpec(1, 16)
    bg = bgm.BackgroundFamily(g, 1.0, 0.5)
    v = ScalarField.from_function(g, lambda x, y: 0.02 * np.cos(2 * np.pi * x) + 0 * y)
    tr = flow_run(bg, v, 0.2, SolverConfig(K=8), sample_times=[0.1, 0.2])
    dio.write_trajectory(tmp_path / "tr", tr)
    back = dio.read_trajectory(tmp_path / "tr", bg)
    np.testing.assert_allclose(back.times, tr.times, rtol=0, atol=0)
    for a, b in zip(tr.states, back.states):
        np.testing.assert_array_equal(a.u.values, b.u.values)
        np.testing.assert_allclose(a.u_t.values, b.u_t.values, atol=1e-10)


def test_reports_csv_format(tmp_path):
    rows = [dict(check="c", rung=0, t=0.1, value=1 / 3, margin=-0.5, passed=True)]
    dio.write_reports_csv(tmp_path / "r.csv", rows)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "check,rung,t,value,margin,passed"
    assert lines[1] == "c,0,0.10000000000000001,0.33333333333333331,-0.5,1"
