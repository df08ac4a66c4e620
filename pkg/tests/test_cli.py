import json

import numpy as np
import pytest

from multihom.cli import main
from multihom.fixtures import laminate_1d
from multihom.integrand import integrand_to_json


def _cfg(tmp_path, name, body):
    path = tmp_path / name
    path.write_text(json.dumps(body), encoding="utf-8")
    return str(path)


def test_cell_command_and_determinism(tmp_path):
    out = tmp_path / "out"
    cfg = _cfg(tmp_path, "cell.json", {
        "command": "cell",
        "integrand": {"fixture": "laminate"},
        "z": [1.0],
        "cell_grid": {"N": 64},
        "output_dir": str(out),
    })
    assert main(["cell", cfg]) == 0
    first = (out / "cell.csv").read_bytes(), (out / "corrector.csv").read_bytes()
    assert main(["cell", cfg]) == 0
    second = (out / "cell.csv").read_bytes(), (out / "corrector.csv").read_bytes()
    assert first == second
    assert (out / "manifest.txt").exists()
    header, row = (out / "cell.csv").read_text().strip().splitlines()
    value = float(row.split(",")[1])
    assert abs(value - 1.6) / 1.6 < 1e-3


def test_run_dispatches_on_config_command(tmp_path):
    out = tmp_path / "out"
    cfg = _cfg(tmp_path, "ce.json", {
        "command": "counterexample",
        "variant": "diag_even_xy",
        "h_list": [2, 3, 4, 5, 6, 7],
        "p": 2,
        "output_dir": str(out),
    })
    assert main(["run", cfg]) == 0
    lines = (out / "counterexample.csv").read_text().strip().splitlines()
    ratios = [line.split(",")[-1] for line in lines[1:]]
    assert ratios == ["1", "2", "1", "2", "1", "2"]


def test_command_mismatch_exits_2(tmp_path):
    cfg = _cfg(tmp_path, "c.json", {"command": "cell", "integrand": {"fixture": "laminate"},
                                    "z": [1.0]})
    assert main(["gamma", cfg]) == 2


def test_unknown_key_exits_2(tmp_path):
    cfg = _cfg(tmp_path, "c.json", {"command": "cell", "integrand": {"fixture": "laminate"},
                                    "z": [1.0], "zgird": {}})
    assert main(["cell", cfg]) == 2


def test_json_syntax_error_exits_2(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{"command": "cell",,}', encoding="utf-8")
    assert main(["cell", str(path)]) == 2


def test_missing_integrand_exits_2(tmp_path):
    cfg = _cfg(tmp_path, "c.json", {"command": "cell", "z": [1.0]})
    assert main(["cell", cfg]) == 2


def test_audit_flags_nonconvex_fixture(tmp_path):
    out = tmp_path / "out"
    cfg = _cfg(tmp_path, "a.json", {"command": "audit",
                                    "integrand": {"fixture": "nonconvex-demo"},
                                    "samples": 1024, "output_dir": str(out)})
    assert main(["audit", cfg]) == 1
    body = (out / "audit.csv").read_text()
    assert "midpoint convexity" in body
    manifest = (out / "manifest.txt").read_text()
    assert "exit_status: 1" in manifest


def test_audit_clean_laminate(tmp_path):
    out = tmp_path / "out"
    cfg = _cfg(tmp_path, "a.json", {"command": "audit", "integrand": {"fixture": "laminate"},
                                    "samples": 1024, "output_dir": str(out)})
    assert main(["audit", cfg]) == 0


def test_integrand_file_loading(tmp_path):
    doc = integrand_to_json(laminate_1d())
    fpath = tmp_path / "integrand.json"
    fpath.write_text(json.dumps(doc), encoding="utf-8")
    out = tmp_path / "out"
    cfg = _cfg(tmp_path, "c.json", {"command": "cell", "integrand": "integrand.json",
                                    "z": [1.0], "cell_grid": {"N": 32},
                                    "output_dir": str(out)})
    assert main(["cell", cfg]) == 0


def test_gamma_command_quick(tmp_path):
    out = tmp_path / "out"
    cfg = _cfg(tmp_path, "g.json", {
        "command": "gamma",
        "integrand": {"fixture": "constant-p2"},
        "scales": [1],
        "eps_list": [0.25, 0.125],
        "domain": {"M": 64},
        "z": [1.0],
        "reference": 1.0,
        "output_dir": str(out),
    })
    assert main(["gamma", cfg]) == 0
    lines = (out / "gamma.csv").read_text().strip().splitlines()
    assert len(lines) == 3
    gaps = [float(line.split(",")[3]) for line in lines[1:]]
    assert max(gaps) < 1e-8


def test_eps_young_joint_iterate_commands(tmp_path):
    out_eps = tmp_path / "eps_out"
    cfg = _cfg(tmp_path, "e.json", {
        "command": "eps", "integrand": {"fixture": "laminate"}, "scales": [1],
        "eps": 0.125, "domain": {"M": 256}, "z": [1.0], "output_dir": str(out_eps),
        "solver": {"tol_energy": 1e-9, "max_iter": 30000},
    })
    assert main(["eps", cfg]) == 0
    assert (out_eps / "u.csv").exists()

    out_y = tmp_path / "young_out"
    cfg = _cfg(tmp_path, "y.json", {
        "command": "young", "integrand": {"fixture": "laminate"}, "scales": [1],
        "eps": 0.125, "domain": {"M": 256}, "z": [1.0], "y_bins": 2, "z_bins": 16,
        "z_range": [-2.5, 2.5], "output_dir": str(out_y),
        "solver": {"tol_energy": 1e-9, "max_iter": 30000},
    })
    assert main(["young", cfg]) == 0
    assert (out_y / "young.csv").exists() and (out_y / "centers.csv").exists()

    out_j = tmp_path / "joint_out"
    cfg = _cfg(tmp_path, "j.json", {
        "command": "joint", "integrand": {"fixture": "two-scale-laminate"},
        "z": [1.0], "cell_grid": {"N": 16}, "output_dir": str(out_j),
    })
    assert main(["joint", cfg]) == 0
    row = (out_j / "joint.csv").read_text().strip().splitlines()[1]
    assert float(row.split(",")[1]) == pytest.approx(2.0, abs=1e-3)

    out_i = tmp_path / "it_out"
    cfg = _cfg(tmp_path, "i.json", {
        "command": "iterate", "integrand": {"fixture": "laminate"},
        "zgrid": {"zmax": 1.0, "m": 3}, "cell_grid": {"N": 64},
        "output_dir": str(out_i),
    })
    assert main(["iterate", cfg]) == 0
    assert (out_i / "fhom.csv").exists()


def test_plot_renders_figures(tmp_path):
    out = tmp_path / "out"
    cfg = _cfg(tmp_path, "c.json", {"command": "cell", "integrand": {"fixture": "laminate"},
                                    "z": [1.0], "cell_grid": {"N": 32},
                                    "output_dir": str(out)})
    assert main(["cell", cfg, "--plot"]) == 0
    assert (out / "corrector.png").exists()
    # a second render pass over the same directory also succeeds
    assert main(["plot", str(out)]) == 0


def test_counterexample_bad_samples_exits_2(tmp_path):
    cfg = _cfg(tmp_path, "c.json", {"command": "counterexample", "variant": "diag_even_xy",
                                    "h_list": [2, 3], "samples": 12})
    assert main(["counterexample", cfg, "--out", str(tmp_path / "o")]) == 2


def test_cell_rejects_counterexample_fixture(tmp_path):
    cfg = _cfg(tmp_path, "c.json", {"command": "cell",
                                    "integrand": {"fixture": "borel-diag-even-xy"},
                                    "z": [1.0]})
    assert main(["cell", cfg, "--out", str(tmp_path / "o")]) == 2


def test_gamma_artifacts_byte_identical(tmp_path):
    out = tmp_path / "out"
    cfg = _cfg(tmp_path, "g.json", {
        "command": "gamma", "integrand": {"fixture": "laminate"}, "scales": [1],
        "eps_list": [0.25, 0.125], "domain": {"M": 256}, "z": [1.0], "reference": 1.6,
        "solver": {"tol_energy": 1e-9, "max_iter": 30000}, "output_dir": str(out),
    })
    assert main(["gamma", cfg]) == 0
    first = (out / "gamma.csv").read_bytes()
    assert main(["gamma", cfg]) == 0
    assert (out / "gamma.csv").read_bytes() == first


def test_run_without_command_exits_2(tmp_path):
    cfg = _cfg(tmp_path, "c.json", {"integrand": {"fixture": "laminate"}, "z": [1.0]})
    assert main(["run", cfg]) == 2


def test_grid_caps_enforced(tmp_path):
    cfg = _cfg(tmp_path, "c.json", {"command": "cell", "integrand": {"fixture": "laminate"},
                                    "z": [1.0], "cell_grid": {"N": 4096}})
    assert main(["cell", cfg, "--out", str(tmp_path / "o")]) == 2


def test_nonconverged_solve_exits_1(tmp_path):
    out = tmp_path / "out"
    cfg = _cfg(tmp_path, "c.json", {
        "command": "cell", "integrand": {"fixture": "laminate"}, "z": [1.0],
        "cell_grid": {"N": 64}, "solver": {"max_iter": 3}, "output_dir": str(out),
    })
    assert main(["cell", cfg]) == 1
    manifest = (out / "manifest.txt").read_text()
    assert "exit_status: 1" in manifest and "converged: False" in manifest
