import json

import numpy as np
import pytest

from pet import cli
from pet import io as pio


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    assert run("synth", "--kind", "binary", "--width", 16, "--height", 16, "--M", 3, "--seed", 1, "--out", d) == 0
    return d


def test_parse_kernel():
    assert cli.parse_kernel("binomial").weights.shape == (3, 3)
    assert cli.parse_kernel("delta").radius == 0
    assert cli.parse_kernel("gaussian:1.0:2").radius == 2
    hp = cli.parse_kernel("highpass:binomial")
    assert hp.weights.sum() == pytest.approx(0.0)
    for bad in ("gaussian:x", "gaussian:1:2:3", "teapot", "gaussian:-1"):
        with pytest.raises(cli.ConfigError):
            cli.parse_kernel(bad)


def test_synth_outputs(scene):
    assert sorted(p.name for p in scene.iterdir()) == ["reference.pfm", "report.json", "stack.pes"]
    rep = json.loads((scene / "report.json").read_text())
    assert rep["result"]["scene"]["kind"] == "binary"
    assert "out" not in rep["config"] and "threads" not in rep["config"]


def test_synth_sine_mul_and_bank(tmp_path):
    assert run("synth", "--kind", "sine_mul", "--width", 8, "--height", 8, "--M", 2, "--out", tmp_path / "a") == 0
    assert len(list((tmp_path / "a").iterdir())) == 3
    assert pio.read_stack(tmp_path / "a" / "stack.pes").aux is not None
    assert run("synth", "--kind", "heaviside_bank", "--count", 4, "--width", 4, "--height", 4,
               "--out", tmp_path / "b") == 0
    assert (tmp_path / "b" / "reference.pes").exists()


@pytest.mark.parametrize("method,extra", [
    ("vertical-iterative", ["--T", 3]),
    ("vertical-iterative", ["--T", 2, "--power-set", 7, "--order", "random"]),
    ("error-diffusion", []),
    ("dither", ["--mask-size", 16]),
    ("histogram", ["--mask-size", 16]),
])
def test_vertical_methods(scene, tmp_path, method, extra):
    out = tmp_path / "o"
    assert run("optimize", method, "--stack", scene / "stack.pes", "--surrogate", scene / "reference.pfm",
               "--out", out, *extra) == 0
    assert (out / "selection.pgm").exists()
    img = pio.read_pfm(out / "image.pfm")
    assert img.shape == (16, 16)
    rep = json.loads((out / "report.json").read_text())
    assert rep["inputs"]["stack"]["sha256"] == pio.sha256_file(scene / "stack.pes")
    if method == "vertical-iterative":
        trace = (out / "trace.csv").read_text().splitlines()
        assert trace[0] == "sweep,energy"
        assert float(trace[-1].split(",")[1]) == pytest.approx(rep["result"]["energy"], rel=1e-9)


@pytest.fixture(scope="module")
def image_pair(tmp_path_factory):
    d = tmp_path_factory.mktemp("img")
    rng = np.random.default_rng(0)
    pio.write_pfm(d / "est.pfm", rng.random((16, 16)).astype(np.float32))
    pio.write_pfm(d / "sur.pfm", np.full((16, 16), 0.5, np.float32))
    return d


@pytest.mark.parametrize("method,extra", [
    ("horizontal-iterative", ["--T", 3]),
    ("horizontal-iterative", ["--T", 2, "--R", 1, "--r", 2, "--metric", "euclidean"]),
    ("permutation", ["--mask-size", 16, "--tile", 4]),
    ("shaped-noise", ["--T", 2, "--target", "highpass:gaussian:1.0"]),
])
def test_horizontal_methods(image_pair, tmp_path, method, extra):
    out = tmp_path / "o"
    assert run("optimize", method, "--image", image_pair / "est.pfm", "--surrogate", image_pair / "sur.pfm",
               "--out", out, *extra) == 0
    perm = pio.read_permutation_csv(out / "permutation.csv", (16, 16))
    assert pio.read_displacement_pgm(out / "displacement.pgm") == perm
    est = pio.read_pfm(image_pair / "est.pfm")
    np.testing.assert_array_equal(pio.read_pfm(out / "image.pfm"), perm.apply(est))


def test_demodulated_horizontal(tmp_path):
    assert run("synth", "--kind", "sine_mul", "--width", 12, "--height", 12, "--M", 1, "--out", tmp_path / "s") == 0
    out = tmp_path / "o"
    assert run("optimize", "horizontal-iterative", "--stack", tmp_path / "s" / "stack.pes", "--demodulate",
               "--surrogate", tmp_path / "s" / "reference.pfm", "--T", 2, "--out", out) == 0
    assert (out / "image.pfm").exists()


def test_apriori(tmp_path):
    spec = tmp_path / "scene.json"
    spec.write_text(json.dumps({"kind": "heaviside_bank", "width": 8, "height": 8, "M": 2, "count": 2}))
    out = tmp_path / "o"
    assert run("optimize", "apriori", "--scene", spec, "--T", 2, "--weights", "uniform", "--out", out) == 0
    assert (out / "permutation.csv").exists() and (out / "trace.csv").exists()
    spec.write_text(json.dumps({"kind": "constant"}))
    assert run("optimize", "apriori", "--scene", spec, "--out", out) == cli.EXIT_CONFIG


def test_analyze_modes(image_pair, tmp_path):
    est, sur = image_pair / "est.pfm", image_pair / "sur.pfm"
    assert run("analyze", "spectrum", "--image", est, "--ref", sur, "--bins", 8, "--out", tmp_path / "a") == 0
    rows = (tmp_path / "a" / "radial.csv").read_text().splitlines()
    assert rows[0] == "radius,power,count" and len(rows) == 9
    assert pio.read_pgm16(tmp_path / "a" / "spectrum.pgm").shape == (16, 16)
    assert run("analyze", "tiled-spectrum", "--image", est, "--tile", 8, "--out", tmp_path / "b") == 0
    assert run("analyze", "tiled-spectrum", "--image", est, "--tile", 32, "--out", tmp_path / "b") == cli.EXIT_CONFIG
    assert run("analyze", "metrics", "--image", est, "--ref", sur, "--out", tmp_path / "c") == 0
    m = json.loads((tmp_path / "c" / "metrics.json").read_text())
    assert {"mse", "pmse", "energy", "low_freq_ratio"} <= set(m)
    assert run("analyze", "compare", "--inputs", est, sur, "--ref", sur, "--out", tmp_path / "d") == 0
    rows = json.loads((tmp_path / "d" / "compare.json").read_text())
    assert rows[0]["mse"] == 0.0


def test_exit_codes(scene, image_pair, tmp_path):
    out = tmp_path / "o"
    stack, sur = scene / "stack.pes", scene / "reference.pfm"
    assert run("optimize", "vertical-iterative", "--stack", stack, "--surrogate", sur, "--confidence", 1.5,
               "--out", out) == cli.EXIT_CONFIG
    assert run("optimize", "vertical-iterative", "--stack", tmp_path / "missing.pes", "--surrogate", sur,
               "--out", out) == cli.EXIT_IO
    assert run("optimize", "vertical-iterative", "--stack", stack, "--out", out) == cli.EXIT_CONFIG
    small = tmp_path / "small.pfm"
    pio.write_pfm(small, np.zeros((4, 4), np.float32))
    assert run("optimize", "dither", "--stack", stack, "--surrogate", small, "--out", out) == cli.EXIT_CONFIG
    assert run("optimize", "error-diffusion", "--stack", stack, "--surrogate", sur, "--order", "random",
               "--out", out) == cli.EXIT_CONFIG
    assert run("synth", "--kind", "teapot", "--out", out) == cli.EXIT_CONFIG
    bad = tmp_path / "bad.pfm"
    bad.write_bytes(b"P7\n1 1\n-1.0\n" + bytes(4))
    assert run("analyze", "metrics", "--image", bad, "--ref", bad, "--out", out) == cli.EXIT_IO
    assert run("--threads", 0, "synth", "--kind", "constant", "--out", out) == cli.EXIT_CONFIG


def test_numeric_exit(image_pair, tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "perceptual_energy", lambda *a, **k: float("nan"))
    assert run("optimize", "horizontal-iterative", "--image", image_pair / "est.pfm", "--surrogate",
               image_pair / "sur.pfm", "--T", 1, "--out", tmp_path / "o") == cli.EXIT_NUMERIC


def test_rerun_is_byte_identical(scene, tmp_path):
    args = ["optimize", "vertical-iterative", "--stack", scene / "stack.pes", "--surrogate", scene / "reference.pfm",
            "--order", "random", "--seed", 7, "--T", 3]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
