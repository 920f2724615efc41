import json
import math
import subprocess
import sys

import numpy as np
import pytest

from sphlight.envmap import EquirectMap, source_map
from sphlight.needlet import NeedletCoeffs, analyze, build_frame
from sphlight.pipeline.cli import main
from sphlight.pipeline.coeffile import CoeffFile, CoeffFileError, read_coeffs, write_coeffs
from sphlight.pipeline.fit import fit_coefficients, two_source_target
from sphlight.pipeline.pfm import PFMError, decode_pfm, encode_pfm, read_pfm, write_pfm
from sphlight.sphgeom import nearest_point
from sphlight.transport import TransportConfig


@pytest.fixture(scope="module")
def pm():
    return build_frame(2.0, 3, "paper_matching")


@pytest.fixture
def target_pfm(tmp_path):
    path = tmp_path / "target.pfm"
    write_pfm(two_source_target(), path)
    return path


# ---- PFM ----


def test_pfm_header_example():
    payload = np.arange(24, dtype="<f4")
    data = decode_pfm(b"PF\n4 2\n-1.0\n" + payload.tobytes())
    assert data.shape == (2, 4, 3)
    # bottom row is stored first
    assert np.array_equal(data[1].ravel(), payload[:12])


def test_pfm_big_endian():
    payload = np.arange(24, dtype=">f4")
    data = decode_pfm(b"PF\n4 2\n1.0\n" + payload.tobytes())
    assert np.array_equal(data[1].ravel(), np.arange(12, dtype=np.float32))


@pytest.mark.filterwarnings("ignore:panorama is")
def test_pfm_roundtrip_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(10):
        raw = (rng.exponential(3.0, (int(rng.integers(2, 20)), int(rng.integers(4, 40)), 3))).astype(np.float32)
        path = tmp_path / f"m{i}.pfm"
        write_pfm(raw, path)
        back = read_pfm(path).data.astype(np.float32)
        assert back.tobytes() == raw.tobytes()


@pytest.mark.parametrize(
    "blob, match",
    [
        (b"Pf\n4 2\n-1.0\n" + bytes(32), "not supported"),
        (b"P6\n4 2\n255\n", "not a PFM"),
        (b"PF\n4 2\n-1.0\n" + bytes(10), "payload"),
        (b"PF\nfour two\n-1.0\n", "dimensions"),
        (b"PF\n4", "header"),
    ],
)
def test_pfm_malformed(blob, match):
    with pytest.raises(PFMError, match=match):
        decode_pfm(blob)


def test_pfm_rejects_nan_and_negative(tmp_path):
    bad = np.ones((2, 4, 3), dtype="<f4")
    bad[0, 0, 0] = np.nan
    p = tmp_path / "nan.pfm"
    p.write_bytes(encode_pfm(bad))
    with pytest.raises(PFMError, match="NaN"):
        read_pfm(p)
    bad[0, 0, 0] = -1
    p.write_bytes(encode_pfm(bad))
    with pytest.raises(PFMError, match="negative"):
        read_pfm(p)
    with pytest.raises(PFMError):
        write_pfm(bad, tmp_path / "x.pfm")


# ---- coefficient files ----


def test_coeffile_roundtrip(tmp_path, pm):
    rng = np.random.default_rng(1)
    c = NeedletCoeffs(rng.normal(size=3), [rng.normal(size=(n, 3)) for n in pm.counts])
    path = tmp_path / "c.json"
    write_coeffs(CoeffFile.from_frame(pm, c, note="x"), path)
    back = read_coeffs(path)
    assert back.coeffs.dc.tolist() == c.dc.tolist()
    assert all(np.array_equal(a, b) for a, b in zip(back.coeffs.bands, c.bands))
    assert back.provenance == {"note": "x"}
    d = json.loads(path.read_text())
    assert d["version"] == 1 and d["counts"] == [12, 48, 192]
    assert len(d["bands"][0]) == 3 and len(d["bands"][0][0]) == 12


@pytest.mark.parametrize(
    "mutate, match",
    [
        (lambda d: d.update(version=2), "version"),
        (lambda d: d.update(scheme="icosa"), "scheme"),
        (lambda d: d.update(counts=[12, 48, 190]), "counts"),
        (lambda d: d["bands"].pop(), "counts"),
        (lambda d: d.pop("dc"), "malformed"),
        (lambda d: d.update(B=0.5), "invalid"),
    ],
)
def test_coeffile_invalid(pm, mutate, match):
    d = CoeffFile.from_frame(pm, NeedletCoeffs.zeros(pm)).to_dict()
    mutate(d)
    with pytest.raises(CoeffFileError, match=match):
        CoeffFile.from_dict(d)


# ---- CLI ----


def test_cli_analyze_synthesize(tmp_path, target_pfm, capsys):
    coeffs = tmp_path / "c.json"
    assert main(["analyze", str(target_pfm), str(coeffs)]) == 0
    cf = read_coeffs(coeffs)
    assert cf.counts == [12, 48, 192]
    out = tmp_path / "rec.pfm"
    assert main(["synthesize", str(coeffs), str(out), "-H", "32"]) == 0
    assert read_pfm(out).shape == (32, 64, 3)
    assert "negative samples clamped" in capsys.readouterr().err


def test_cli_sparsify_huge_lambda(tmp_path, target_pfm):
    coeffs = tmp_path / "c.json"
    assert main(["analyze", str(target_pfm), str(coeffs), "--sparsify", "1e9", "--bands", "1,2,3"]) == 0
    cf = read_coeffs(coeffs)
    assert all(np.all(b == 0) for b in cf.coeffs.bands)
    dense = analyze(read_pfm(target_pfm), build_frame())
    assert np.array_equal(cf.coeffs.dc, dense.dc)
    assert cf.provenance["lambda"] == 1e9


def test_cli_sparsify_default_bands(tmp_path, target_pfm):
    coeffs, out = tmp_path / "c.json", tmp_path / "s.json"
    main(["analyze", str(target_pfm), str(coeffs)])
    assert main(["sparsify", str(coeffs), str(out), "--lambda", "1e9"]) == 0
    before, after = read_coeffs(coeffs), read_coeffs(out)
    assert np.array_equal(before.coeffs.band(1), after.coeffs.band(1))
    assert np.all(after.coeffs.band(2) == 0) and np.all(after.coeffs.band(3) == 0)


def test_cli_zero_coeffs_dc_one(tmp_path, pm):
    coeffs, out = tmp_path / "c.json", tmp_path / "o.pfm"
    write_coeffs(CoeffFile.from_frame(pm, NeedletCoeffs.zeros(pm, (1.0, 1.0, 1.0))), coeffs)
    assert main(["synthesize", str(coeffs), str(out), "-H", "8"]) == 0
    assert np.allclose(read_pfm(out).data, 1.0, atol=1e-6)


def test_cli_std(tmp_path, target_pfm, capsys):
    rep = tmp_path / "r.json"
    assert main(["std", str(target_pfm), str(target_pfm), "--points", "48", "--report", str(rep)]) == 0
    value = float(capsys.readouterr().out.split()[0])
    d = json.loads(rep.read_text())
    assert len(d["per_channel"]) == 3
    assert value == pytest.approx(d["std"], rel=1e-9)


def test_cli_frame_info(capsys):
    assert main(["frame-info", "--jmax", "2"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["total_coefficients"] == 60


def test_cli_exit_codes(tmp_path, target_pfm):
    assert main([]) == 2
    assert main(["analyze"]) == 2
    assert main(["frame-info", "--scheme", "bogus"]) == 2
    assert main(["fit-demo"]) == 2
    assert main(["analyze", str(tmp_path / "missing.pfm"), str(tmp_path / "o.json")]) == 3
    grey = tmp_path / "grey.pfm"
    grey.write_bytes(b"Pf\n4 2\n-1.0\n" + bytes(32))
    assert main(["analyze", str(grey), str(tmp_path / "o.json")]) == 3
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["synthesize", str(bad), str(tmp_path / "o.pfm")]) == 3
    small = tmp_path / "small.pfm"
    write_pfm(np.ones((8, 16, 3), np.float32), small)
    assert main(["analyze", str(small), str(tmp_path / "o.json")]) == 3
    zero = tmp_path / "zero.pfm"
    write_pfm(np.zeros((64, 128, 3), np.float32), zero)
    assert main(["std", str(target_pfm), str(zero)]) == 3
    # a learning rate this large makes the quadratic term blow up
    assert main(["fit-demo", "--synthetic", "--loss", "l2", "--iters", "20", "--lr", "50", "--points", "12"]) == 4


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sphlight.pipeline.cli", "frame-info"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["total_coefficients"] == 252


# ---- fit demo ----


def test_fit_zero_lr_is_constant(pm):
    report, pred = fit_coefficients(two_source_target(), pm, "l2", iters=5, lr=0.0, std_points=12)
    assert len(report.trace) == 5
    first = report.trace[0]
    assert all(t[0] == first[0] and t[2] == first[2] for t in report.trace)
    # the traced stl term is a warm-started solve at the fit tolerance
    assert all(t[1] == pytest.approx(first[1], rel=1e-8) for t in report.trace)
    assert all(np.all(b == 0) for b in pred.bands)
    assert report.std_final == report.std_initial


def test_fit_traces_both_terms(pm):
    report, _ = fit_coefficients(two_source_target(), pm, "l2", iters=3, lr=0.1, std_points=12)
    assert all(len(t) == 3 and t[1] != 0 for t in report.trace)
    assert report.trace[-1][0] < report.trace[0][0]


def test_fit_rejects_bad_args(pm):
    with pytest.raises(ValueError):
        fit_coefficients(two_source_target(), pm, "l1")
    with pytest.raises(ValueError):
        fit_coefficients(two_source_target(), pm, iters=0)


def test_synthetic_target_seeded():
    a, b = two_source_target(seed=4), two_source_target(seed=4)
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, two_source_target(seed=5).data)


def test_stl_only_fit_localizes(pm):
    src = (1.0, 2.0)
    target = source_map(64, 128, [src], [(4.0, 4.0, 4.0)], kappa=20.0, ambient=0.05)
    _, pred = fit_coefficients(target, pm, "stl", iters=300, lr=0.1, cfg=TransportConfig(aux_fraction=0.0), std_points=12)
    band = pm.bands[0]
    assert int(np.argmax(pred.band(1).sum(1))) == int(nearest_point([src[0]], [src[1]], band.theta, band.phi)[0])
