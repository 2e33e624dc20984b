import json

import numpy as np
import pytest

from loopsmith.cli import main
from loopsmith.config import DEFAULTS, PipelineConfig, load_config
from loopsmith.errors import DomainError, MissingArtifact
from loopsmith.io import read_csv, read_json, sha256_file
from loopsmith.lti import poles, second_order_plant
from loopsmith.pipeline import STAGES, emit_plots, run_pipeline, run_stage

SMALL = {
    "synthesis": {"multistarts": 2, "max_evals": 1500},
    "hybrid": {"Tend": 3.0},
    "discretization": {"Ts": [0.05, 0.5]},
}

MODEL_FILES = ("excitation_u.csv", "excitation_y.csv", "frf.csv", "loewner_model.json", "reduced_model.json")


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    manifest = run_pipeline(PipelineConfig(SMALL), out=out)
    return out, read_json(manifest)


def hashes(manifest):
    return {a["path"]: a["sha256"] for a in manifest["artifacts"]}


def test_defaults():
    cfg = PipelineConfig()
    assert cfg.plant == {"d": 0.2, "w1": 10.0, "k": 1.0}
    assert cfg.loewner["f_max_fraction"] == pytest.approx(1 / 3)
    assert cfg.reduction["r"] == 2
    assert cfg.synthesis["nc"] == 2 and cfg.synthesis["Wk"] == 1e-9
    assert cfg.discretization["Ts"] == [0.01, 0.05, 0.1, 0.2, 0.5]
    assert cfg.hybrid["N"] == 10 and cfg.hybrid["u_min"] == 0 and cfg.hybrid["u_max"] == 1
    assert cfg.to_dict()["version"] == DEFAULTS["version"]


def test_config_round_trip(tmp_path):
    cfg = PipelineConfig({"synthesis": {"seed": 7}, "hybrid": {"Tend": 2.5}})
    cfg.save(tmp_path / "c.json")
    assert load_config(tmp_path / "c.json") == cfg
    assert load_config() == PipelineConfig()


@pytest.mark.parametrize(
    "doc",
    [
        {"plant": {"d": 1.5}},
        {"plant": {"zeta": 0.1}},
        {"version": 99},
        {"excitation": {"kind": "noise"}},
        {"hybrid": {"u_min": 2.0}},
        {"discretization": {"Ts": []}},
        {"synthesis": {"Wu": [1, 2]}},
    ],
)
def test_config_rejects(doc):
    with pytest.raises(DomainError):
        PipelineConfig(doc)


def test_excite_defaults(tmp_path):
    run_stage("excite", PipelineConfig(), out=tmp_path)
    header, cols = read_csv(tmp_path / "excitation_u.csv")
    assert header == ["t", "u"]
    assert len(cols["t"]) == 6001
    assert np.diff(cols["t"]) == pytest.approx(np.full(6000, 0.01))
    rep = read_json(tmp_path / "excite_report.json")
    assert rep["config"]["excitation"]["fs"] == 100.0
    assert set(rep["config"]) == {"plant", "excitation"}


@pytest.mark.parametrize("kind", ["prbs", "impulse"])
def test_excite_other_signals(tmp_path, kind):
    run_stage("excite", PipelineConfig({"excitation": {"kind": kind, "T": 5.0}}), out=tmp_path)
    _, cols = read_csv(tmp_path / "excitation_u.csv")
    assert len(cols["u"]) == 501
    assert set(np.unique(cols["u"])) <= {0.0, 1.0}


def test_missing_upstream_artifact(tmp_path):
    with pytest.raises(MissingArtifact) as info:
        run_stage("reduce", PipelineConfig(), out=tmp_path)
    assert info.value.stage == "reduce"
    with pytest.raises(DomainError):
        run_stage("polish", PipelineConfig(), out=tmp_path)


def test_manifest_lists_hashed_artifacts(small_run):
    out, manifest = small_run
    paths = [a["path"] for a in manifest["artifacts"]]
    assert len(paths) >= 12
    for a in manifest["artifacts"]:
        assert sha256_file(out / a["path"]) == a["sha256"]
    for stage in STAGES:
        assert f"{stage}_report.json" in paths


def test_reports_embed_config(small_run):
    out, _ = small_run
    for stage in STAGES:
        rep = read_json(out / f"{stage}_report.json")
        assert rep["stage"] == stage
        assert rep["config"]


def test_reduced_poles_match_plant(small_run):
    out, _ = small_run
    from loopsmith.io import load_system

    Hr = load_system(out / "reduced_model.json")
    assert Hr.n == 2
    pr, pg = poles(Hr).values, poles(second_order_plant()).values
    for p in pg:
        assert np.min(np.abs(pr - p)) / abs(p) < 1e-2


def test_margins_artifact(small_run):
    out, _ = small_run
    m = read_json(out / "margins.json")
    for key in ("GainMargin", "GMFrequency", "PhaseMargin", "PMFrequency", "DelayMargin", "DMFrequency", "Stable"):
        assert key in m
    assert m["Stable"] is True


def test_simulate_report_records_every_run(small_run):
    out, _ = small_run
    runs = read_json(out / "simulate_report.json")["runs"]
    assert {(r["Ts"], r["mode"]) for r in runs} == {(0.05, "zoh"), (0.05, "pwm"), (0.5, "zoh"), (0.5, "pwm")}
    assert all(isinstance(r["diverged"], bool) for r in runs)


def test_plot_data(small_run):
    out, manifest = small_run
    paths = [a["path"] for a in manifest["artifacts"]]
    assert "plots/bode_plant.csv" in paths and "plots/plot_bode.py" in paths
    _, b = read_csv(out / "plots" / "bode_plant.csv")
    f_peak = b["f_hz"][np.argmax(b["gain_db"])]
    # resonant peak of a second-order section: w0 sqrt(1 - 2 d^2)
    w0 = np.sqrt(10.0**2 + 0.2**2)
    assert f_peak == pytest.approx(w0 * np.sqrt(1 - 2 * 0.2**2) / (2 * np.pi), rel=0.01)
    assert f_peak == pytest.approx(10 / (2 * np.pi), rel=0.05)
    assert abs(b["phase_deg"][0]) < 1.0
    assert b["phase_deg"][-1] == pytest.approx(-180.0, abs=5.0)
    header, ny = read_csv(out / "plots" / "nyquist_loop.csv")
    assert "modulus_margin" in header
    assert ny["modulus_margin"][0] == pytest.approx(read_json(out / "margins.json")["ModMargin"])
    assert (out / "plots" / "pwm_500ms.csv").exists()
    compile((out / "plots" / "plot_bode.py").read_text(), "plot_bode.py", "exec")
    compile((out / "plots" / "plot_traces.py").read_text(), "plot_traces.py", "exec")


def test_emit_plots_needs_manifest(tmp_path):
    with pytest.raises(MissingArtifact):
        emit_plots(tmp_path / "manifest.json")


def test_rerun_is_hash_identical(small_run, tmp_path):
    _, first = small_run
    second = read_json(run_pipeline(PipelineConfig(SMALL), out=tmp_path))
    assert hashes(first) == hashes(second)


def test_seed_only_changes_synthesis_outputs(small_run, tmp_path):
    _, first = small_run
    doc = json.loads(json.dumps(SMALL))
    doc["synthesis"]["seed"] = 12345
    other = read_json(run_pipeline(PipelineConfig(doc), out=tmp_path))
    h1, h2 = hashes(first), hashes(other)
    for name in MODEL_FILES + ("estimate_report.json", "interpolate_report.json", "reduce_report.json"):
        assert h1[name] == h2[name]


def test_cli_exit_codes(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"reduction": {"max_iter": 1, "tol": 1e-300}}))
    out = tmp_path / "out"
    assert main(["excite", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["synthesize", "--config", str(cfg), "--out", str(out)]) == 2
    assert "MissingArtifact" in capsys.readouterr().err
    assert main(["estimate", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["interpolate", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["reduce", "--config", str(cfg), "--out", str(out)]) == 3
    assert "NoConvergence" in capsys.readouterr().err


def test_cli_seed_and_slow_sampling_run(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({**SMALL, "discretization": {"Ts": [0.5]}}))
    out = tmp_path / "out"
    assert main(["pipeline", "--config", str(cfg), "--out", str(out), "--seed", "3"]) == 0
    assert read_json(out / "synthesize_report.json")["config"]["synthesis"]["seed"] == 3
    runs = read_json(out / "simulate_report.json")["runs"]
    assert [r["mode"] for r in runs] == ["zoh", "pwm"]
