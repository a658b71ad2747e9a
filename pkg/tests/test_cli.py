import json

import pytest
from click.testing import CliRunner

from blastdose.cli import ENV_ROOT, RunConfig, cli

FAST = {
    "cohort": {"n_subjects": 3, "sessions_per_subject": 2, "extra_session_subjects": 0, "case_subject": None,
               "duration_h": [0.3, 0.4], "saccade_fraction": 0.5},
    "max_train": 600,
    "min_session_hours": 0.2,
}


def run_pipeline(root, cfg_path, jobs=1):
    res = CliRunner().invoke(cli, ["--config", str(cfg_path), "--out", str(root), "--jobs", str(jobs), "run"])
    assert res.exit_code == 0, res.output
    return res


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    cfg = base / "cfg.json"
    cfg.write_text(json.dumps(FAST))
    run_pipeline(base / "a", cfg, jobs=1)
    run_pipeline(base / "b", cfg, jobs=2)
    return base


def test_every_stage_writes_manifest(runs):
    for stage in ("simulate", "dose", "features", "change", "train", "score", "fuse", "correlate", "report"):
        m = json.loads((runs / "a" / stage / "manifest.json").read_text())
        assert m["stage"] == stage and len(m["config_hash"]) == 64 and m["outputs"]


def test_rerun_byte_identical(runs):
    a, b = tree_bytes(runs / "a"), tree_bytes(runs / "b")
    assert a.keys() == b.keys()
    differing = [k for k in a if a[k] != b[k]]
    assert not differing


def test_report_outputs(runs):
    rep = runs / "a" / "report"
    for name in ("fig4.csv", "fig4.svg", "fig3_crossings.csv", "fig3.svg", "table1.csv", "table2.csv", "table3.csv"):
        assert (rep / name).stat().st_size > 0
    header = (rep / "fig4.csv").read_text().splitlines()[0]
    assert header == "threshold_db,metric,rho"


def test_starved_modality_is_recorded(runs):
    skipped = json.loads((runs / "a" / "train" / "skipped.json").read_text())
    folds = json.loads((runs / "a" / "train" / "folds.json").read_text())
    assert "blink" in folds and not set(skipped) & set(folds)
    assert all(not v for m in folds.values() for v in m["leakage"].values())


def test_correlate_without_fuse_names_fuse(tmp_path):
    res = CliRunner().invoke(cli, ["--out", str(tmp_path), "correlate"])
    assert res.exit_code != 0
    assert "fuse" in res.output


def test_features_without_simulate(tmp_path):
    res = CliRunner().invoke(cli, ["--out", str(tmp_path), "features"])
    assert res.exit_code != 0 and "simulate" in res.output


def test_output_root_from_env(tmp_path):
    res = CliRunner().invoke(cli, ["train"], env={ENV_ROOT: str(tmp_path / "envroot")})
    assert res.exit_code != 0 and "envroot" in res.output


def test_bad_config_rejected(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"thresholds": [150, 140]}))
    res = CliRunner().invoke(cli, ["--config", str(p), "--out", str(tmp_path), "fuse"])
    assert res.exit_code != 0 and "sorted" in res.output
    p.write_text(json.dumps({"not_a_key": 1}))
    res = CliRunner().invoke(cli, ["--config", str(p), "--out", str(tmp_path), "fuse"])
    assert res.exit_code != 0 and "not_a_key" in res.output


def test_flag_overrides():
    cfg = RunConfig.load(None, seed=7, thresholds=(140.0, 150.0), fusion="maxima")
    assert (cfg.seed, cfg.thresholds, cfg.fusion) == (7, (140.0, 150.0), "maxima")
    assert RunConfig().min_session_hours == 1.0 and RunConfig().min_frames == 25
