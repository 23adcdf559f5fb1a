import io
import json
import subprocess
import sys

import pytest

from lag_geoflow.cli import dumps, run

FIBER = '{"coeffs":[[1,0],[0,0],[-1,0]],"n":2}'
FIBER3 = '{"coeffs":[[1,0],[0,0],[-1,0]],"n":3}'


def call(*argv):
    buf = io.StringIO()
    code = run(list(argv), stdout=buf)
    return code, buf.getvalue()


@pytest.fixture(scope="module")
def cycles(tmp_path_factory):
    d = tmp_path_factory.mktemp("cycles")
    out = {}
    for name, fib, arc in [
        ("round", FIBER, "[[1,0],[-2,0]]"),
        ("par03", FIBER, "[[1,0],[-2,1.2],[0,-1.2]]"),
        ("round3", FIBER3, "[[1,0],[-2,0]]"),
        ("par02_3", FIBER3, "[[1,0],[-2,0.8],[0,-0.8]]"),
        ("par04_3", FIBER3, "[[1,0],[-2,1.6],[0,-1.6]]"),
    ]:
        path = d / f"{name}.json"
        code, _ = call("cycle", "--fiber", fib, "--arc", arc, "--N", "64", "--out", str(path))
        assert code == 0
        out[name] = str(path)
    return out


def test_roots():
    code, text = call("roots", "--fiber", FIBER)
    assert code == 0
    obj = json.loads(text)
    assert sorted(r[0] for r in obj["roots"]) == [-1.0, 1.0]


def test_double_root_exit_code(tmp_path):
    bad = tmp_path / "bad_double_root.json"
    bad.write_text('{"coeffs":[[1,0],[0,0],[-2,0],[0,0],[1,0]],"n":2}')
    code, text = call("roots", "--fiber", str(bad))
    assert code == 2
    assert json.loads(text)["error"]["kind"] == "DegenerateRoots"


def test_missing_file():
    code, text = call("roots", "--fiber", "/nonexistent/fiber.json")
    assert code == 2
    assert json.loads(text)["error"]["kind"] == "InvalidInput"


def test_positivity(cycles):
    code, text = call("positivity", "--cycle", cycles["round"])
    obj = json.loads(text)
    assert code == 0
    assert obj["is_positive"] is True
    assert obj["margin"] > 0.99


def test_bvp_with_svg(cycles, tmp_path):
    svg = tmp_path / "out.svg"
    code, text = call("bvp", "--fiber", FIBER, "--cycle0", cycles["round"], "--cycle1", cycles["par03"],
                      "--t", "0,0.25,0.5,0.75,1", "--svg", str(svg))
    assert code == 0
    obj = json.loads(text)
    assert len(obj["snapshots"]) == 5
    assert obj["distance"] > 0
    assert {"times", "s", "h", "diagnostics"} <= set(obj)
    body = svg.read_text()
    assert body.startswith("<svg") and body.count("<polyline") == 7


def test_bvp_then_verify(cycles, tmp_path):
    out = tmp_path / "path.json"
    times = ",".join(str(i / 20) for i in range(21))
    code, _ = call("bvp", "--cycle0", cycles["round3"], "--cycle1", cycles["par02_3"], "--t", times, "--out", str(out))
    assert code == 0
    code, text = call("verify", "--path", str(out))
    obj = json.loads(text)
    assert code == 0
    assert obj["residual"] <= 1e-3
    assert obj["horizontality"] <= 1e-6


def test_distance_triangle_match(cycles):
    code, text = call("distance", "--cycle0", cycles["round"], "--cycle1", cycles["par03"])
    assert code == 0 and json.loads(text)["distance"] == pytest.approx(0.6211902784, rel=1e-6)
    code, text = call("triangle", "--cycle0", cycles["round3"], "--cycle1", cycles["par02_3"], "--cycle2", cycles["par04_3"])
    assert code == 0 and json.loads(text)["residual"] <= 1e-3
    code, text = call("match", "--cycle0", cycles["round"], "--cycle1", cycles["par03"])
    assert code == 0 and json.loads(text)["orientation"] == 1


def test_ivp_and_csv(cycles, tmp_path):
    csv = tmp_path / "snap.csv"
    code, text = call("ivp", "--cycle", cycles["round3"], "--h-fourier", "0,0.05", "--T", "0.2", "--dt", "0.05",
                      "--csv", str(csv))
    assert code == 0
    obj = json.loads(text)
    assert obj["times"][-1] == pytest.approx(0.2)
    files = sorted(tmp_path.glob("snap_*.csv"))
    assert len(files) == len(obj["times"])
    assert files[0].read_text().startswith("u,re_zeta,im_zeta,re_z,im_z,mu")


def test_numeric_error_exit_code(cycles):
    code, text = call("ivp", "--cycle", cycles["round3"], "--h-fourier", "0,0,10", "--T", "1", "--dt", "0.01")
    assert code == 3
    assert json.loads(text)["error"]["kind"] == "StepUnstable"


def test_not_isotopic_exit_code(tmp_path, cycles):
    flipped = tmp_path / "flipped.json"
    call("cycle", "--fiber", FIBER, "--arc", "[[-1,0],[2,0.4],[0,-0.4]]", "--N", "64", "--out", str(flipped))
    code, text = call("match", "--cycle0", cycles["round"], "--cycle1", str(flipped))
    assert code == 2
    assert json.loads(text)["error"]["kind"] == "NotIsotopic"


def test_leaves_csv_svg(cycles, tmp_path):
    code, text = call("leaves", "--cycle", cycles["par03"], "--count", "4", "--length", "0.5",
                      "--csv", str(tmp_path / "l.csv"), "--svg", str(tmp_path / "l.svg"))
    assert code == 0
    leaves = json.loads(text)["leaves"]
    assert len(leaves) == 8
    assert all(lf["residual"] <= 1e-8 for lf in leaves)
    assert (tmp_path / "l.csv").read_text().startswith("chart_tag,")


def test_tolerance_override_echoed(cycles):
    code, text = call("positivity", "--cycle", cycles["round"], "--tol", "positivity_floor=0.5", "--threads", "4")
    meta = json.loads(text)["meta"]
    assert meta["tolerances"]["positivity_floor"] == 0.5
    assert meta["threads"] == 4
    code, text = call("positivity", "--cycle", cycles["round"], "--tol", "no_such_key=1")
    assert code == 2


def test_threads_env(cycles, monkeypatch):
    monkeypatch.setenv("LAG_GEOFLOW_THREADS", "3")
    _, text = call("roots", "--fiber", FIBER)
    assert json.loads(text)["meta"]["threads"] == 3


def test_deterministic_bytes(cycles):
    argv = ("bvp", "--cycle0", cycles["round3"], "--cycle1", cycles["par02_3"])
    assert call(*argv)[1] == call(*argv)[1]


def test_dumps_precision():
    assert dumps({"b": 0.1, "a": [1, 2.5]}) == '{\n  "a": [1, 2.5],\n  "b": 0.10000000000000001\n}'
    assert json.loads(dumps(1 / 3)) == 1 / 3


def test_console_script():
    res = subprocess.run([sys.executable, "-m", "lag_geoflow", "roots", "--fiber", FIBER],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert "roots" in json.loads(res.stdout)
