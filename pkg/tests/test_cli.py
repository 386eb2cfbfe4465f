import io
import json
import math

import numpy as np
import pytest

from tsdyn import __version__
from tsdyn.cli import build_parser, main, run


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


@pytest.fixture
def z_files(tmp_path):
    return (write(tmp_path, "z.json", {"builtin": "integers"}),
            write(tmp_path, "sys.json", {"n": 1, "A": {"pieces": [[[-0.5]]]}, "rhs": {"pieces": [[1.0]]}}))


def invoke(argv):
    out = io.StringIO()
    rc = run(build_parser().parse_args(argv), out)
    return rc, out.getvalue()


def read_csv(path):
    with open(path) as fh:
        head = fh.readline().strip().split(",")
    return head, np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def test_analyze_report(z_files):
    scale, system = z_files
    rc, out = invoke(["analyze", "--scale", scale, "--system", system, "--format", "json"])
    rep = json.loads(out)
    assert rc == 0 and rep["tsdyn_version"] == __version__
    assert rep["config"]["command"] == "analyze"
    r = rep["result"]
    assert r["regressivity"]["regressive"] and r["regressivity"]["positively_regressive"]
    assert r["syndetic"] == {"syndetic": True, "sup_gap": 1.0}
    h = r["hyperbolicity"]
    assert h["status"] == "hyperbolic" and h["rank"] == 1
    assert h["lambda0"] == pytest.approx(1.0) and h["C"] == pytest.approx(1.0, abs=1e-9)


def test_solve_csv(z_files, tmp_path):
    scale, system = z_files
    out = str(tmp_path / "x.csv")
    rc, _ = invoke(["solve", "--scale", scale, "--system", system, "--out", out, "--horizon", "10"])
    head, data = read_csv(out)
    assert rc == 0 and head == ["t", "s", "x_1", "residual"]
    assert np.abs(data[:, 2] - 2.0).max() <= 1e-9
    res = data[:, 3]
    assert np.nanmax(res) <= 1e-9


def test_rescale_csv(tmp_path):
    scale = write(tmp_path, "p.json", {"builtin": "pulse", "a": 1, "b": 1})
    out = str(tmp_path / "s.csv")
    rc, _ = invoke(["rescale", "--scale", scale, "--grid", "0:4:1", "--out", out])
    _, data = read_csv(out)
    assert rc == 0
    assert data[2, 1] == pytest.approx(1 + math.log(2), abs=1e-15)


def test_lift_and_probe(z_files, tmp_path):
    scale, system = z_files
    out = str(tmp_path / "a.csv")
    rc, _ = invoke(["lift", "--scale", scale, "--system", system, "--out", out, "--grid", "0:0.6:0.1"])
    _, data = read_csv(out)
    assert rc == 0 and np.allclose(data[:, 1], -1.0)
    rc, a = invoke(["probe", "--scale", scale, "--system", system, "--seed", "3", "--trials", "4", "--format", "json"])
    rc, b = invoke(["probe", "--scale", scale, "--system", system, "--seed", "3", "--trials", "4", "--format", "json"])
    assert json.loads(a)["result"]["status"] == "consistent" and a == b


def test_nonlinear_and_manifold(tmp_path):
    scale = write(tmp_path, "r.json", {"builtin": "reals"})
    system = write(tmp_path, "s.json", {"n": 2, "A": {"pieces": [[[-1.0, 0.0], [0.0, 1.0]]]}})
    pert = write(tmp_path, "g.json", {"family": "quadratic_coupling", "r0": 1.0, "coeffs": [[1, 0, 0, 1.0]]})
    out = str(tmp_path / "m.csv")
    rc, rep = invoke(["manifold", "--scale", scale, "--system", system, "--perturbation", pert,
                      "--lambda", "0.5", "--grid=-0.2:0.2:0.1", "--relaxed", "--out", out, "--format", "json"])
    _, data = read_csv(out)
    assert rc == 0 and json.loads(rep)["result"]["violations"]
    assert np.abs(data[:, 3] + data[:, 0] ** 2 / 3).max() < 1e-6
    zs = write(tmp_path, "z.json", {"builtin": "integers"})
    zsys = write(tmp_path, "zs.json", {"n": 1, "A": {"pieces": [[[-0.5]]]}})
    zg = write(tmp_path, "zg.json", {"family": "sine", "amp": [0.1], "W": [[1.0]], "bias": [0.05]})
    out = str(tmp_path / "n.csv")
    rc, _ = invoke(["solve", "--nonlinear", "--scale", zs, "--system", zsys, "--perturbation", zg,
                    "--out", out, "--horizon", "10"])
    _, data = read_csv(out)
    assert rc == 0 and np.ptp(data[:, 2]) < 1e-9


def test_errors_name_file_and_field(tmp_path, capsys):
    scale = write(tmp_path, "bad.json", {"intervals": [[0, 2], [1, 3]], "period": 4})
    assert main(["rescale", "--scale", scale]) == 1
    err = capsys.readouterr().err.strip()
    assert err.startswith("ERROR INPUT_INVALID:") and "bad.json" in err and "intervals" in err
    assert len(err.splitlines()) == 1
    z = write(tmp_path, "z.json", {"builtin": "integers"})
    sysf = write(tmp_path, "s.json", {"n": 2, "A": {"pieces": [[[1.0]]]}})
    assert main(["analyze", "--scale", z, "--system", sysf]) == 1
    err = capsys.readouterr().err
    assert "s.json" in err and "A.pieces[0]" in err
    assert main(["analyze", "--scale", str(tmp_path / "nope.json"), "--system", sysf]) == 1
    assert "ERROR INPUT_INVALID" in capsys.readouterr().err


def test_not_regressive_error(tmp_path, capsys):
    z = write(tmp_path, "z.json", {"builtin": "integers"})
    sysf = write(tmp_path, "s.json", {"n": 1, "A": {"pieces": [[[-1.0]]]}, "rhs": {"pieces": [[1.0]]}})
    assert main(["solve", "--scale", z, "--system", sysf]) == 1
    assert capsys.readouterr().err.startswith("ERROR NOT_REGRESSIVE:")
