import io
import json
import math
from pathlib import Path

import pytest

from expem.cli import (
    ExperimentConfig,
    load_config,
    main,
    parse_config,
    run_check,
    run_moments,
)
from expem.estimators import ConvergenceTable
from expem.exceptions import ConfigError
from expem.presets import preset

SMALL = """
[model]
preset = {preset}

[grid]
T = 1
q_list = 3..5
q_ref = 7

[mc]
n_traj = 120
seed = 5
threads = 1

[output]
directory = {out}
formats = csv, json
"""


def _write_cfg(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _run(argv):
    buf = io.StringIO()
    code = main(argv, out=buf)
    return code, buf.getvalue()


# --- parsing ----------------------------------------------------------------------


def test_parse_preset_and_sections():
    cfg = parse_config(SMALL.format(preset="case1", out="o"))
    assert cfg.model == preset("case1")
    assert cfg.q_list == (3, 4, 5) and cfg.q_ref == 7
    assert (cfg.n_traj, cfg.seed, cfg.threads) == (120, 5, 1)
    assert cfg.out_dir == Path("o") and cfg.formats == ("csv", "json")


def test_parse_explicit_model_and_overrides():
    cfg = parse_config("""
[model]
kind = polynomial
b0 = 1
B1 = 1
B2 = 2.5
Sigma = 1  # inline comment
[mc]
thread_count = 3
[grid]
q_list = 4, 6, 8
""")
    assert (cfg.model.b0, cfg.model.B1, cfg.model.B2) == (1.0, 1.0, 2.5)
    assert cfg.threads == 3
    assert cfg.q_list == (4, 6, 8)
    over = parse_config("[model]\npreset = case1\nB2 = 1\n")
    assert over.model.B2 == 1.0 and over.model.b0 == preset("case1").b0


def test_desk_scale_defaults():
    cfg = parse_config("[model]\npreset = case1\n")
    assert (cfg.n_traj, cfg.q_ref, cfg.q_list) == (10_000, 16, tuple(range(6, 13)))


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("[grid]\nq_ref = 4\n", "missing [model]"),
        ("[model]\npreset = case1\n[grid]\nq_list = 6..12\nq_ref = 12\n", "q_ref"),
        ("[model]\npreset = case1\n[mc]\nn_traj = lots\n", "n_traj"),
        ("[model]\npreset = case1\nBogus = 3\n", "Bogus"),
        ("[model]\npreset = case1\n[extra]\na = 1\n", "[extra]"),
        ("[model]\npreset = case1\n[output]\nformats = csv, xml\n", "xml"),
        ("[model]\nbeta = 0.5\n", "[model]"),
        ("[model]\npreset = case1\n[experiment]\nkind = fly\n", "kind"),
        ("not an ini file", "cfg.ini"),
    ],
)
def test_config_errors_name_the_field(text, fragment):
    with pytest.raises(ConfigError) as exc:
        parse_config(text, "cfg.ini")
    assert fragment in str(exc.value)
    assert "cfg.ini" in str(exc.value)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")
    assert _run(["check", "--config", str(tmp_path / "absent.ini")])[0] == 2


def test_q_ref_not_above_levels_exits_2(tmp_path):
    text = SMALL.format(preset="case1", out=tmp_path / "o").replace("q_ref = 7", "q_ref = 5")
    assert _run(["converge", "--config", _write_cfg(tmp_path, text)])[0] == 2
    assert not (tmp_path / "o").exists()


def test_kind_mismatch_exits_2(tmp_path):
    text = SMALL.format(preset="case1", out=tmp_path) + "[experiment]\nkind = stability\n"
    assert _run(["converge", "--config", _write_cfg(tmp_path, text)])[0] == 2


# --- converge ---------------------------------------------------------------------


def test_converge_writes_outputs(tmp_path):
    out = tmp_path / "o"
    cfg = _write_cfg(tmp_path, SMALL.format(preset="case6", out=out) + "emit_trajectories = 2\n")
    code, text = _run(["converge", "--config", cfg])
    assert code == 0
    lines = (out / "table.csv").read_text().splitlines()
    assert lines[0].startswith("q,dt,l2_sup")
    assert [ln.split(",")[0] for ln in lines[1:]] == ["3", "4", "5"]
    assert "fitted rate" in text
    assert (out / "traj_0.csv").exists() and (out / "traj_1.csv").exists()
    assert not (out / "traj_2.csv").exists()


def test_json_report_roundtrip_is_byte_identical(tmp_path):
    out = tmp_path / "o"
    assert _run(["converge", "--config", _write_cfg(tmp_path, SMALL.format(preset="case1",
                                                                           out=out))])[0] == 0
    text = (out / "table.json").read_text()
    assert ConvergenceTable.from_json(text).to_json() + "\n" == text
    assert json.dumps(json.loads(text), indent=2, sort_keys=True) + "\n" == text


def test_csv_identical_across_threads_and_runs(tmp_path):
    cfg = _write_cfg(tmp_path, SMALL.format(preset="case5", out=tmp_path / "unused"))
    blobs = []
    for i, threads in enumerate(("1", "3", "3")):
        out = tmp_path / f"run{i}"
        assert _run(["converge", "--config", cfg, "--threads", threads, "--out", str(out)])[0] == 0
        blobs.append((out / "table.csv").read_bytes())
    assert blobs[0] == blobs[1] == blobs[2]


def test_seed_flag_changes_result(tmp_path):
    cfg = _write_cfg(tmp_path, SMALL.format(preset="case5", out=tmp_path / "unused"))
    _run(["converge", "--config", cfg, "--out", str(tmp_path / "a")])
    _run(["converge", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "6"])
    assert (tmp_path / "a" / "table.json").read_bytes() != (tmp_path / "b" / "table.json").read_bytes()


def test_gbm_notice_and_float_noise_errors(tmp_path):
    out = tmp_path / "o"
    code, text = _run(["converge", "--config", _write_cfg(tmp_path, SMALL.format(preset="gbm",
                                                                                 out=out))])
    assert code == 0
    assert "exact scheme" in text
    table = ConvergenceTable.from_json((out / "table.json").read_text())
    assert math.isnan(table.fitted_rate)
    assert all(r.l2_sup <= 1e-10 for r in table.rows)


# --- stability --------------------------------------------------------------------


STAB = """
[model]
preset = stability
[stability]
T = {T}
dt = 0.001
[output]
directory = {out}
emit_trajectories = true
"""


def test_stability_subcommand(tmp_path):
    out = tmp_path / "s"
    code, text = _run(["stability", "--config", _write_cfg(tmp_path, STAB.format(T=2, out=out))])
    assert code == 0
    assert "xi_star" in text
    kv = dict(line.split(",", 1) for line in (out / "table.csv").read_text().splitlines()[1:])
    assert abs(float(kv["xi_star"]) ** 2 - 2 / 13) <= 1e-10
    assert kv["xi_lower_root"] == kv["xi_star"] == kv["xi_upper_root"]
    assert (out / "report.txt").exists() and (out / "traj_0.csv").exists()
    assert json.loads((out / "table.json").read_text())["T_long"] == 2.0


def test_stability_empty_run(tmp_path):
    out = tmp_path / "s"
    code, text = _run(["stability", "--config", _write_cfg(tmp_path, STAB.format(T=0, out=out))])
    assert code == 0
    data = json.loads((out / "table.json").read_text())
    assert data["crossings"] == 0 and data["band_occupancy"] == 0.0 and data["empty_run"]
    assert "empty run" in text


def test_stability_rejects_non_prototype(tmp_path):
    text = STAB.format(T=1, out=tmp_path).replace("stability\n", "case8\n", 1)
    assert _run(["stability", "--config", _write_cfg(tmp_path, text)])[0] == 2


# --- check and moments ------------------------------------------------------------


def _cfg(name, tmp_path, **kw):
    return ExperimentConfig(model=preset(name), out_dir=tmp_path, **kw)


def test_check_case3(tmp_path):
    r = run_check(_cfg("case3", tmp_path))
    assert r.kappa_strong == 0
    assert r.kappa_weak == pytest.approx(-29 / 3, abs=1e-12)
    assert (tmp_path / "table.csv").exists()
    assert json.loads((tmp_path / "table.json").read_text())["kappa_strong"] == 0


def test_check_case5_warns(tmp_path):
    r = run_check(_cfg("case5", tmp_path))
    assert r.kappa_strong == -4
    assert r.warnings


def test_check_case8_delta(tmp_path):
    r = run_check(_cfg("case8", tmp_path, eps=0.1))
    assert r.delta_eps == pytest.approx(4.6e-5, rel=0.02)


def test_check_subcommand_prints_flags(tmp_path):
    cfg = _write_cfg(tmp_path, "[model]\npreset = case1\n[output]\ndirectory = %s\n" % tmp_path)
    code, text = _run(["check", "--config", cfg])
    assert code == 0
    assert "kappa_strong: 4" in text and "feller_nonexplosion: True" in text


def test_moments_mu_above_B2_warns(tmp_path):
    cfg = _cfg("case6", tmp_path, q_list=(4,), n_traj=50, mu=1.5)
    rows = run_moments(cfg)
    assert any("outside" in n for n in cfg.notices)
    assert math.isfinite(rows[0].exp_moment_stopped)


def test_moments_mu_zero_column_is_one(tmp_path):
    cfg = _cfg("case6", tmp_path, q_list=(3, 4), n_traj=40, mu=0.0)
    assert [r.exp_moment_stopped for r in run_moments(cfg)] == [1.0, 1.0]
    assert not cfg.notices
    assert (tmp_path / "table.csv").read_text().splitlines()[0].startswith("q,dt,moment")


def test_moments_gbm_second_moment(tmp_path):
    # E X_T^2 = exp((2 B1 + Sigma^2) T) for GBM started at 1
    m = preset("gbm")
    row = run_moments(_cfg("gbm", tmp_path, q_list=(6,), n_traj=20_000, mu=0.0))[0]
    exact = math.exp(2 * m.B1 + m.Sigma**2)
    assert abs(row.moment - exact) <= 3 * row.moment_se


def test_moments_subcommand(tmp_path):
    text = SMALL.format(preset="case6", out=tmp_path / "m")
    code, printed = _run(["moments", "--config", _write_cfg(tmp_path, text)])
    assert code == 0
    assert printed.count("q=") == 3
