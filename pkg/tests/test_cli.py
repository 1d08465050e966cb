import csv
import json
import math

import numpy as np
import pytest

from vortexpair.cli import EXIT_CONFIG, EXIT_OK, EXIT_WINDOW, main, validate_config
from vortexpair.field import load_field


def patch_config(**over):
    cfg = {
        "grid": {"x1_min": -1.6, "x1_max": 1.6, "x2_max": 3.2, "nx": 64, "ny": 64},
        "profile": {"kind": "patch", "value": 1.0, "area": math.pi * 0.25},
        "solver": {"lam": 0.05},
        "evolution": {"T": 2.0, "dt": None, "cfl": 2.0, "p": 4.0, "audit_every": 1},
        "stability": {"kind": "additive-nonnegative", "magnitude": 0.05,
                      "magnitude_units": "l2_fraction", "area_budget": 3.0, "T": 2.0},
        "rng_seed": 7,
    }
    for k, v in over.items():
        cfg[k] = {**cfg[k], **v} if isinstance(v, dict) else v
    return cfg


def write(tmp_path, cfg, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_validate_clean_config_lists_nothing(tmp_path, capsys):
    cfg = patch_config(profile={"area": 0.05}, solver={"lam": 1.0})
    assert validate_config(cfg) == ([], [])
    assert main(["validate", "--config", write(tmp_path, cfg)]) == EXIT_OK
    assert capsys.readouterr().out == ""


def test_validate_cites_support_height(tmp_path, capsys):
    errors, warnings = validate_config(patch_config())
    assert errors == []
    assert any("support_height_z" in w for w in warnings)
    assert main(["validate", "--config", write(tmp_path, patch_config())]) == EXIT_OK
    assert "support_height_z" in capsys.readouterr().out


def test_validate_lists_every_violation(tmp_path, capsys):
    cfg = patch_config(solver={"lam": -1.0}, grid={"nx": 100})
    errors, _ = validate_config(cfg)
    assert len(errors) >= 2
    assert any("lam" in e for e in errors) and any("nx" in e or "spacing" in e for e in errors)
    assert main(["validate", "--config", write(tmp_path, cfg)]) == EXIT_CONFIG
    out = capsys.readouterr().out
    assert "lam" in out


def test_negative_lambda_exits_2(tmp_path, capsys):
    cfg = patch_config(solver={"lam": -0.1})
    assert main(["solve", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "lambda" in capsys.readouterr().err
    assert not (tmp_path / "o" / "zeta_star.csv").exists()


def test_missing_ladder_file(tmp_path):
    cfg = patch_config(profile={"kind": "ladder_file", "path": "nope.csv"})
    errors, _ = validate_config(cfg)
    assert any("nope.csv" in e for e in errors)


def test_solve_smoke(tmp_path):
    out = tmp_path / "run"
    assert main(["solve", "--config", write(tmp_path, patch_config()), "--out", str(out)]) == EXIT_OK
    z = load_field(out / "zeta_star.csv")
    assert z.grid.nx == 64 and np.all(z.values >= 0)
    objs = [float(r["objective"]) for r in read_rows(out / "trace.csv")]
    assert all(b >= a - 1e-10 * abs(a) for a, b in zip(objs, objs[1:]))
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["lemma9_constants"]["c_log"] == pytest.approx(math.log(216))
    assert meta["config"]["solver"]["lam"] == 0.05
    for key in ("rng", "wall_clock_s", "versions"):
        assert key in meta


def test_evolve_and_stability_from_state(tmp_path):
    out = tmp_path / "run"
    cfg = write(tmp_path, patch_config())
    assert main(["solve", "--config", cfg, "--out", str(out)]) == EXIT_OK
    state = str(out / "zeta_star.csv")
    assert main(["evolve", "--config", cfg, "--state", state, "--out", str(tmp_path / "ev")]) == EXIT_OK
    rows = read_rows(tmp_path / "ev" / "audit.csv")
    assert float(rows[-1]["t"]) == pytest.approx(2.0)
    assert main(["stability", "--config", cfg, "--state", state, "--out", str(tmp_path / "st")]) == EXIT_OK
    rows = read_rows(tmp_path / "st" / "stability.csv")
    assert list(rows[0])[:4] == ["t", "dist2", "dist_y", "best_shift"]


def test_stability_window_too_short_exits_3(tmp_path, capsys):
    out = tmp_path / "run"
    cfg = write(tmp_path, patch_config())
    main(["solve", "--config", cfg, "--out", str(out)])
    long_run = write(tmp_path, patch_config(stability={"T": 400.0}), "long.json")
    code = main(["stability", "--config", long_run, "--state", str(out / "zeta_star.csv"),
                 "--out", str(tmp_path / "st")])
    assert code == EXIT_WINDOW
    assert "clearance" in capsys.readouterr().err
    assert not (tmp_path / "st" / "stability.csv").exists()


def test_rerun_is_byte_identical(tmp_path):
    cfg = write(tmp_path, patch_config())
    for name in ("a", "b"):
        assert main(["stability", "--config", cfg, "--out", str(tmp_path / name)]) == EXIT_OK
    for f in ("zeta_star.csv", "trace.csv", "omega0.csv", "stability.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
