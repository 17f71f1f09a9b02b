import json
from pathlib import Path

import pytest
import yaml

from binjump import __version__
from binjump.cli import main
from binjump.config import DEFAULTS, config_hash, load_config
from binjump.errors import ConfigError

ROOT = Path(__file__).resolve().parents[1]

SMALL = {
    "grid": {"M": 8},
    "numerics": {"N_max": 2, "dt": 0.05, "t": 0.3},
    "duality": {"pairs": 2},
    "mc": {"replicas": 50, "N": 3, "T": 0.3, "snapshots": [0.0, 0.3]},
    "kinetic": {"T": 0.2},
}


def write_cfg(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


def run_dir(out):
    dirs = sorted(Path(out).iterdir())
    assert len(dirs) == 1
    return dirs[0]


def test_shipped_default_config_matches_defaults():
    assert load_config(ROOT / "configs" / "default.yaml") == DEFAULTS


@pytest.mark.parametrize(
    "cmd,files",
    [
        ("bounds", ["bounds.csv", "conditions.csv"]),
        ("evolve-hierarchy", ["norms.csv", "state/level_1.csv", "state/level_2.csv"]),
        ("correlations", ["k1.csv", "k2.csv"]),
        ("verify-duality", ["duality.csv"]),
        ("vlasov-study", ["vlasov.csv"]),
        ("kinetic", ["p_t.csv", "invariants.csv"]),
        ("mc", ["k1_mc.csv", "k2_mc.csv"]),
    ],
)
def test_subcommands_write_artifacts(tmp_path, cmd, files):
    cfg = write_cfg(tmp_path, SMALL)
    out = tmp_path / "out"
    assert main([cmd, "--config", cfg, "--out", str(out)]) == 0
    d = run_dir(out)
    assert d.name.startswith(cmd + "-")
    for f in files:
        assert (d / f).exists(), f
    man = json.loads((d / "manifest.json").read_text())
    assert man["version"] == __version__ and man["seed"] == 0 and man["config"]["experiment"] == cmd
    assert man["status"] == "pass"
    first = (d / files[0]).read_text().splitlines()
    assert first[0].startswith("# ") and "," in first[1]


def test_norms_csv_columns(tmp_path):
    out = tmp_path / "out"
    main(["evolve-hierarchy", "--config", write_cfg(tmp_path, SMALL), "--out", str(out)])
    header = (run_dir(out) / "norms.csv").read_text().splitlines()[1]
    assert header == "t,n,X_n-norm,bound,weighted-norm,contraction-margin"


def test_identical_runs_are_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main(["mc", "--config", cfg, "--seed", "5", "--out", str(out)]) == 0
        outs.append(run_dir(out))
    assert outs[0].name == outs[1].name
    for f in ("k1_mc.csv", "k2_mc.csv", "manifest.json"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()


def test_directories_are_content_addressed(tmp_path):
    cfg = write_cfg(tmp_path, SMALL)
    out = tmp_path / "out"
    main(["bounds", "--config", cfg, "--out", str(out)])
    main(["bounds", "--config", cfg, "--seed", "3", "--out", str(out)])
    assert len(list(out.iterdir())) == 2
    a = load_config(cfg, {"experiment": "bounds"})
    b = load_config(cfg, {"experiment": "bounds", "seed": 3})
    assert config_hash(a) != config_hash(b)


def test_negative_kappa_is_a_schema_error(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"kernel": {"kappa": -0.5}})
    assert main(["bounds", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "kappa" in capsys.readouterr().err
    with pytest.raises(ConfigError) as ei:
        load_config(cfg)
    assert ei.value.field == "kernel.kappa" and ei.value.actual == -0.5


@pytest.mark.parametrize(
    "data,field",
    [
        ({"grid": {"M": 1}}, "grid.M"),
        ({"grid": {"M": "x"}}, "grid.M"),
        ({"unknown": 1}, "unknown"),
        ({"numerics": {"substep_fraction": 0.5}}, "numerics.substep_fraction"),
        ({"kernel": {"kind": "spline"}}, "kernel.kind"),
        ({"correlations": {"t_fraction": 0.99}}, "correlations.t_fraction"),
        ({"kernel": {"a": {"preset": "geometric", "r": 1.5}}}, "kernel.a.r"),
    ],
)
def test_schema_errors_name_the_field(tmp_path, data, field):
    from binjump.config import build_grid, build_kernel

    def resolve():
        c = load_config(write_cfg(tmp_path, data))
        build_kernel(c, build_grid(c))

    with pytest.raises(ConfigError) as ei:
        resolve()
    assert ei.value.field == field


def test_kernel_preset_error_surfaces_at_run(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"kernel": {"a": {"preset": "geometric", "r": 1.5}}})
    assert main(["bounds", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "kernel.a.r" in capsys.readouterr().err


def test_precondition_error_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {**SMALL, "initial": {"p": {"preset": "constant", "value": 2.0}}})
    assert main(["kinetic", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "C" in capsys.readouterr().err


def test_tabulated_kernel_from_csv(tmp_path):
    import numpy as np

    from binjump.discretization import TorusGrid, write_tensor_csv
    from binjump.kernel import example_kernel

    g = TorusGrid(1, 1.0, 4)
    write_tensor_csv(tmp_path / "k.csv", example_kernel(g).tensor, g)
    cfg = write_cfg(tmp_path, {"grid": {"M": 4}, "kernel": {"kind": "tabulated", "file": str(tmp_path / "k.csv")}})
    assert main(["bounds", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = (run_dir(tmp_path / "o") / "bounds.csv").read_text().splitlines()
    B = float([r for r in rows if r.startswith("B,")][0].split(",")[1])
    assert np.isclose(B, example_kernel(g).bounds.B)


def test_verify_subset(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"verify": {"criteria": [1, 3]}})
    assert main(["verify", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    text = capsys.readouterr().out
    assert "[PASS] 1." in text and "[PASS] 3." in text
    rows = (run_dir(tmp_path / "o") / "verify.csv").read_text().splitlines()
    assert rows[1] == "criterion,name,passed,seconds" and len(rows) == 4
