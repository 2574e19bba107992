import hashlib
import json
from pathlib import Path

import numpy as np

from pdelin.cli import main


def _write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


VOLTERRA_SIM = """
[simulate]
family = volterra
mode = whitenoise
f0 = parabola
n = 1e5
seed = 3
"""


def test_simulate_minimal_volterra(tmp_path):
    cfg = _write(tmp_path / "sim.ini", VOLTERRA_SIM)
    rc = main(["simulate", str(cfg), "--out", str(tmp_path / "out")])
    assert rc == 0
    out = tmp_path / "out"
    assert (out / "seq.csv").exists()
    assert (out / "truth_v0.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 3
    assert manifest["command"] == "simulate"


def test_simulate_missing_n_exits_2(tmp_path):
    cfg = _write(
        tmp_path / "bad.ini",
        "[simulate]\nfamily = volterra\n",
    )
    rc = main(["simulate", str(cfg), "--out", str(tmp_path / "o")])
    assert rc == 2


def test_simulate_malformed_config_exits_2(tmp_path):
    cfg = _write(tmp_path / "broken.ini", "family = volterra\nno section header")
    rc = main(["simulate", str(cfg), "--out", str(tmp_path / "o")])
    assert rc == 2


def test_simulate_deterministic_hashes(tmp_path):
    cfg = _write(tmp_path / "sim.ini", VOLTERRA_SIM)
    h = []
    for sub in ("a", "b"):
        rc = main(["simulate", str(cfg), "--out", str(tmp_path / sub)])
        assert rc == 0
        h.append(hashlib.sha256((tmp_path / sub / "seq.csv").read_bytes()).hexdigest())
    assert h[0] == h[1]


def test_simulate_design_mode(tmp_path):
    cfg = _write(
        tmp_path / "sim.ini",
        "[simulate]\nfamily = schrodinger\nmode = design\nf0 = parabola\n"
        "n = 256\nm = 16\nd = 1\nseed = 1\n",
    )
    rc = main(["simulate", str(cfg), "--out", str(tmp_path / "des")])
    assert rc == 0
    lines = (tmp_path / "des" / "design.csv").read_text().strip().splitlines()
    assert lines[0] == "x1,y"
    assert len(lines) == 17


def _simulated_dir(tmp_path):
    cfg = _write(tmp_path / "sim.ini", VOLTERRA_SIM)
    out = tmp_path / "out"
    assert main(["simulate", str(cfg), "--out", str(out)]) == 0
    return out


def test_infer_eb_emits_trace(tmp_path):
    out = _simulated_dir(tmp_path)
    rc = main(
        ["infer", str(out / "seq.csv"), "--eb", "--draws", "100",
         "--out", str(tmp_path / "inf")]
    )
    assert rc == 0
    trace = (tmp_path / "inf" / "eb_trace.csv").read_text().strip().splitlines()
    assert trace[0] == "alpha,objective"
    assert len(trace) >= 65  # header + 64 grid rows
    assert (tmp_path / "inf" / "posterior.csv").exists()
    assert (tmp_path / "inf" / "bands.csv").exists()


def test_infer_fixed_alpha_no_trace(tmp_path):
    out = _simulated_dir(tmp_path)
    rc = main(
        ["infer", str(out / "seq.csv"), "--alpha", "1.0", "--draws", "50",
         "--out", str(tmp_path / "inf2")]
    )
    assert rc == 0
    assert not (tmp_path / "inf2" / "eb_trace.csv").exists()


def test_infer_band_construction_level(tmp_path):
    out = _simulated_dir(tmp_path)
    rc = main(
        ["infer", str(out / "seq.csv"), "--eb", "--draws", "500",
         "--level", "0.95", "--out", str(tmp_path / "inf3")]
    )
    assert rc == 0
    lines = (tmp_path / "inf3" / "bands.csv").read_text().strip().splitlines()
    assert lines[0] == "x,mean,lo,hi"
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    assert np.all(rows[:, 2] <= rows[:, 3] + 1e-12)


def test_infer_requires_exactly_one_mode(tmp_path):
    out = _simulated_dir(tmp_path)
    rc = main(["infer", str(out / "seq.csv"), "--eb", "--hb"])
    assert rc == 2
    rc = main(["infer", str(out / "seq.csv")])
    assert rc == 2


def test_infer_floor_violation_exits_3(tmp_path):
    out = _simulated_dir(tmp_path)
    rc = main(
        ["infer", str(out / "seq.csv"), "--alpha", "1.0", "--draws", "20",
         "--delta0", "1e9", "--out", str(tmp_path / "inf4")]
    )
    assert rc == 3


def test_infer_schema_mismatch_exits_2(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\n")
    meta = {"kind": "sequence", "family": "volterra", "d": 1, "n": 10.0, "N": 1,
            "f0": "parabola", "seed": 0}
    (tmp_path / "bad.csv.meta.json").write_text(json.dumps(meta))
    rc = main(["infer", str(bad), "--eb"])
    assert rc == 2


def test_experiment_unknown_study_exits_2(tmp_path):
    cfg = _write(tmp_path / "e.ini", "[experiment]\nn = 1e4\n")
    rc = main(["experiment", "nosuch", str(cfg)])
    assert rc == 2


def test_experiment_darcy_refinement(tmp_path):
    cfg = _write(tmp_path / "e.ini", "[experiment]\n")
    rc = main(
        ["experiment", "darcy-refinement", str(cfg), "--out", str(tmp_path / "ref")]
    )
    assert rc == 0
    assert (tmp_path / "ref" / "refinement.csv").exists()
    assert (tmp_path / "ref" / "manifest.json").exists()


def test_experiment_figure_with_assertions(tmp_path):
    cfg = _write(
        tmp_path / "fig.ini",
        "[experiment]\nfamily = volterra\nf0 = parabola\nn = 1e5\n"
        "draws = 100\ngrid_points = 65\nmin_containment = 0.0\n"
        "max_excluded = 0.5\n[prior]\nmode = eb\n",
    )
    rc = main(["experiment", "figure", str(cfg), "--out", str(tmp_path / "figout")])
    assert rc == 0
    assert (tmp_path / "figout" / "summary.json").exists()


def test_experiment_figure_assertion_failure_exits_4(tmp_path):
    cfg = _write(
        tmp_path / "fig.ini",
        "[experiment]\nfamily = volterra\nf0 = parabola\nn = 1e4\n"
        "draws = 60\ngrid_points = 65\nmin_containment = 1.01\n"
        "[prior]\nmode = eb\n",
    )
    rc = main(["experiment", "figure", str(cfg), "--out", str(tmp_path / "figout")])
    assert rc == 4


def test_experiment_spline_basis_unavailable(tmp_path):
    cfg = _write(
        tmp_path / "fig.ini",
        "[experiment]\nfamily = volterra\nf0 = parabola\nn = 1e4\n"
        "basis = spline\n[prior]\nmode = eb\n",
    )
    rc = main(["experiment", "figure", str(cfg), "--out", str(tmp_path / "figout")])
    assert rc == 2


def test_experiment_byte_identical_outputs(tmp_path):
    ini = (
        "[experiment]\nfamily = volterra\nf0 = parabola\nn = 1e4\n"
        "draws = 60\ngrid_points = 65\nseed = 9\n[prior]\nmode = eb\n"
    )
    cfg = _write(tmp_path / "fig.ini", ini)
    digests = []
    for sub in ("r1", "r2"):
        rc = main(["experiment", "figure", str(cfg), "--out", str(tmp_path / sub)])
        assert rc == 0
        data = b""
        for p in sorted((tmp_path / sub).rglob("*.csv")):
            data += p.read_bytes()
        digests.append(hashlib.sha256(data).hexdigest())
    assert digests[0] == digests[1]


def test_basis_audit(tmp_path):
    out = tmp_path / "audit.csv"
    rc = main(["basis-audit", "volterra", "--max-index", "10", "--out", str(out)])
    assert rc == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "ell,kappa,sign,index_tuple"
    assert len(lines) == 11


def test_infer_design_data(tmp_path):
    cfg = _write(
        tmp_path / "sim.ini",
        "[simulate]\nfamily = schrodinger\nmode = design\nf0 = parabola\n"
        "n = 4096\nm = 64\nd = 1\nseed = 2\n",
    )
    out = tmp_path / "des"
    assert main(["simulate", str(cfg), "--out", str(out)]) == 0
    rc = main(
        ["infer", str(out / "design.csv"), "--eb", "--draws", "50",
         "--out", str(tmp_path / "dinf")]
    )
    assert rc == 0
    assert (tmp_path / "dinf" / "posterior.csv").exists()
    assert (tmp_path / "dinf" / "bands.csv").exists()
