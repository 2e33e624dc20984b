"""Stage runner for the identification, reduction, synthesis and sampled-control pipeline.

Each stage reads the files of the previous one from the output directory and
writes its own artifacts plus a JSON report that embeds the configuration
sections it consumed. Reports hold no timestamps or timings, so a rerun with
the same configuration reproduces every file byte for byte.
"""

from __future__ import annotations

import logging
import time
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .discretize import DiscreteSystem, compare_cd, freq_response_z, tustin
from .errors import DomainError, MissingArtifact
from .hybrid import PwmConfig, baseline_deviation, continuous_closed_loop, simulate_hybrid
from .io import (
    atomic_write_text,
    load_system,
    read_json,
    save_system,
    sha256_file,
    system_to_dict,
    write_csv,
    write_json,
)
from .loewner import loewner_fit
from .lti import RationalWeight, freqresp, hinf_norm, interconnect, poles, second_order_plant
from .margins import margins, nyquist_data
from .reduction import itia_reduce
from .signals import (
    FrequencyData,
    SignalTrace,
    estimate_frf,
    gen_chirp,
    gen_impulse,
    gen_prbs,
    measure_response,
)
from .synthesis import StructuredController, build_generalized_plant, closed_loop_channels, synthesize

logger = logging.getLogger(__name__)

__all__ = ["STAGES", "run_stage", "run_pipeline", "emit_plots", "ts_label"]

STAGES = ("excite", "estimate", "interpolate", "reduce", "synthesize", "discretize", "simulate")

U_CSV, Y_CSV = "excitation_u.csv", "excitation_y.csv"
FRF_CSV = "frf.csv"
LOEWNER_JSON = "loewner_model.json"
REDUCED_JSON = "reduced_model.json"
CONTROLLER_JSON = "controller.json"
MARGINS_JSON = "margins.json"
SYN_LOG_CSV = "synthesis_log.csv"
CONFIG_JSON = "config.json"
MANIFEST_JSON = "manifest.json"


def ts_label(Ts):
    """File-name tag of a sample time, e.g. ``50ms``."""
    return f"{Ts * 1000:g}ms"


def _plant(cfg):
    p = cfg.plant
    return second_order_plant(p["d"], p["w1"], p["k"])


def _report(out, stage, cfg, sections, body):
    doc = {"stage": stage, "config": cfg.subset(*sections), **body}
    return write_json(out / f"{stage}_report.json", doc)


def _poles_list(sys):
    return sorted(poles(sys).values.tolist(), key=lambda z: (z.real, z.imag))


def _load_controller(out):
    doc = read_json(out / CONTROLLER_JSON)
    return StructuredController.from_dict(doc["controller"])


# ---------------------------------------------------------------- stages


def _excite(cfg, out):
    ex = cfg.excitation
    fs, T, ov = ex["fs"], ex["T"], int(ex["oversample"])
    kind = ex["kind"]
    prm = ex["params"][kind]
    if kind == "chirp":
        fine = gen_chirp(prm["f0"], prm["f1"], T, fs * ov, prm["amp"])
    else:
        n = int(np.floor(T * fs + 1e-9)) + 1
        if kind == "prbs":
            coarse = gen_prbs(n, fs, prm["chip_min"], prm["chip_max"], prm["seed"], tuple(prm["levels"]))
        else:
            coarse = gen_impulse(prm["width"], n, fs, prm["amp"])
        held = np.repeat(coarse.samples, ov)[: (n - 1) * ov + 1]
        fine = SignalTrace(0.0, coarse.dt / ov, held, "u")
    u, y = measure_response(_plant(cfg), fine, ov)
    u.to_csv(out / U_CSV)
    y.to_csv(out / Y_CSV)
    _report(out, "excite", cfg, ("plant", "excitation"), {"samples": len(u), "fs": u.fs, "integration_fs": fine.fs})


def _estimate(cfg, out):
    u = SignalTrace.from_csv(out / U_CSV)
    y = SignalTrace.from_csv(out / Y_CSV)
    est = cfg.estimation
    data = estimate_frf(u, y, est["min_input_mag_rel"], est["f_max"])
    data.to_csv(out / FRF_CSV)
    # diagnostic against the known plant inside the trusted band
    band = data.omega <= 2 * np.pi * cfg.f_nyquist * cfg.loewner["f_max_fraction"]
    G = freqresp(_plant(cfg), 1j * data.omega[band])[:, 0, 0]
    err = float(np.max(np.abs(data.values[band] - G) / np.abs(G))) if band.any() else None
    _report(
        out,
        "estimate",
        cfg,
        ("plant", "estimation", "loewner"),
        {"bins": len(data), "bins_in_band": int(band.sum()), "max_rel_error_in_band": err},
    )


def _interpolate(cfg, out):
    data = FrequencyData.from_csv(out / FRF_CSV)
    lw = cfg.loewner
    f_max = cfg.f_nyquist * lw["f_max_fraction"]
    model, diag, info = loewner_fit(data, f_max=f_max, undersample=int(lw["undersample"]), tol_rel=lw["tol"])
    save_system(out / LOEWNER_JSON, model)
    _report(
        out,
        "interpolate",
        cfg,
        ("loewner", "excitation"),
        {"f_max_hz": f_max, "diagnostics": diag.to_dict(), "stabilization": info, "order": model.n,
         "poles": _poles_list(model)},
    )


def _reduce(cfg, out):
    model = load_system(out / LOEWNER_JSON)
    red = cfg.reduction
    hi = 2 * np.pi * cfg.f_nyquist * cfg.loewner["f_max_fraction"]
    Hr, rep = itia_reduce(model, int(red["r"]), max_iter=int(red["max_iter"]), tol=red["tol"], band=(0.0, hi))
    save_system(out / REDUCED_JSON, Hr)
    pr, pg = poles(Hr).values, poles(_plant(cfg)).values
    if len(pr) == len(pg):
        err = float(max(np.min(np.abs(pr - p)) / abs(p) for p in pg))
    else:
        err = None
    _report(
        out,
        "reduce",
        cfg,
        ("reduction", "loewner", "excitation", "plant"),
        {"report": rep.to_dict(), "poles": _poles_list(Hr), "plant_poles": _poles_list(_plant(cfg)),
         "max_rel_pole_error": err},
    )


def _synthesize(cfg, out):
    Hr = load_system(out / REDUCED_JSON)
    syn = cfg.synthesis
    gp = build_generalized_plant(Hr, RationalWeight(*syn["Wu"]), RationalWeight(*syn["We"]))
    res = synthesize(
        gp,
        nc=int(syn["nc"]),
        Wk=syn["Wk"],
        multistarts=int(syn["multistarts"]),
        max_evals=int(syn["max_evals"]),
        seed=int(syn["seed"]),
    )
    K = res.controller
    write_json(out / CONTROLLER_JSON, {"controller": K.to_dict(), "system": system_to_dict(K.system)})
    improving = [row for i, row in enumerate(res.log) if i == 0 or row[3] < res.log[i - 1][3]]
    cols = np.array(improving, dtype=float).reshape(-1, 4).T
    write_csv(out / SYN_LOG_CSV, ["start", "eval", "f", "best"], cols)

    G = _plant(cfg)
    L = interconnect("series", K.system, G)
    mr = margins(L)
    write_json(out / MARGINS_JSON, mr.console())
    ch = closed_loop_channels(gp, K)
    cl_true = interconnect("feedback_unity", L)
    body = {
        "result": res.to_dict(),
        "controller_poles": _poles_list(K.system),
        "stable_with_plant": bool(poles(cl_true).stable),
        "static_gain_T_ry": float(abs(freqresp(ch["T_ry"], [1e-6j])[0, 0, 0])),
        "closed_loop_peak": float(hinf_norm(cl_true)[0]) if poles(cl_true).stable else None,
        "open_loop_peak": float(hinf_norm(G)[0]),
        "margins": mr.console(),
    }
    _report(out, "synthesize", cfg, ("synthesis", "plant"), body)


def _compare_grid(cfg, Ts):
    d = cfg.discretization
    return np.logspace(np.log10(d["f_min_hz"]), np.log10(0.5 / Ts), int(d["grid_points"]))


def _discretize(cfg, out):
    K = _load_controller(out).system
    d = cfg.discretization
    f_sweep = cfg.sweep_f_max
    sweep_grid = np.logspace(np.log10(d["f_min_hz"]), np.log10(f_sweep), int(d["grid_points"]))
    rows = []
    for Ts in d["Ts"]:
        Kz = tustin(K, Ts)
        write_json(out / f"kz_{ts_label(Ts)}.json", Kz.to_dict())
        tab = compare_cd(K, Kz, _compare_grid(cfg, Ts), fraction=d["compare_fraction"])
        tab.to_csv(out / f"compare_{ts_label(Ts)}.csv")
        sweep = compare_cd(K, Kz, sweep_grid, f_max=f_sweep).max_gain_deviation
        dc = abs(freq_response_z(Kz, 0.0) - freqresp(K, [0.0])[0, 0, 0])
        rows.append(
            {"Ts": Ts, "gain_deviation_below_fraction": tab.max_gain_deviation, "band_edge_hz": tab.band_edge_hz,
             "sweep_deviation": sweep, "dc_error": float(dc)}
        )
    devs = [r["sweep_deviation"] for r in sorted(rows, key=lambda r: r["Ts"])]
    _report(
        out,
        "discretize",
        cfg,
        ("discretization",),
        {"sample_times": rows, "sweep_f_max_hz": f_sweep,
         "sweep_strictly_increasing": all(a < b for a, b in zip(devs, devs[1:]))},
    )


def _simulate(cfg, out):
    K = _load_controller(out).system
    G = _plant(cfg)
    hy = cfg.hybrid
    pwm = PwmConfig(int(hy["N"]), hy["u_min"], hy["u_max"])
    rows = []
    for Ts in cfg.discretization["Ts"]:
        path = out / f"kz_{ts_label(Ts)}.json"
        Kz = DiscreteSystem.from_dict(read_json(path))
        for mode, p in (("zoh", None), ("pwm", pwm)):
            res = simulate_hybrid(G, Kz, hy["amplitude"], hy["Tend"], pwm=p, M=int(hy["M"]))
            stem = f"hybrid_{mode}_{ts_label(Ts)}"
            res.to_csv(out / f"{stem}_fine.csv", out / f"{stem}_ctrl.csv")
            m = res.metrics()
            m["mode"] = mode
            m["baseline_deviation_rms"] = baseline_deviation(res, G, K)
            m["held_energy"] = res.held_energy
            rows.append(m)
    _report(out, "simulate", cfg, ("hybrid", "discretization", "plant"), {"runs": rows})


_RUNNERS = {
    "excite": _excite,
    "estimate": _estimate,
    "interpolate": _interpolate,
    "reduce": _reduce,
    "synthesize": _synthesize,
    "discretize": _discretize,
    "simulate": _simulate,
}


def run_stage(stage, cfg, out=None):
    """Run one stage into ``out`` (default ``cfg.output``) and return the directory.

    Errors propagate with the stage name attached as ``exc.stage``.
    """
    if stage not in _RUNNERS:
        raise DomainError(f"unknown stage {stage!r}; expected one of {STAGES}")
    if not isinstance(cfg, PipelineConfig):
        cfg = PipelineConfig(cfg)
    out = Path(cfg.output if out is None else out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        _RUNNERS[stage](cfg, out)
    except Exception as exc:
        exc.stage = stage
        raise
    logger.info("stage %s finished in %.2f s", stage, time.perf_counter() - t0)
    return out


def _write_manifest(out):
    files = sorted(
        p for p in out.rglob("*") if p.is_file() and p.name != MANIFEST_JSON and not p.name.startswith(".")
    )
    entries = [
        {"path": p.relative_to(out).as_posix(), "sha256": sha256_file(p), "bytes": p.stat().st_size} for p in files
    ]
    write_json(out / MANIFEST_JSON, {"version": 1, "artifacts": entries})
    return out / MANIFEST_JSON


def run_pipeline(cfg, out=None, plots=True):
    """All stages in order, then plot data, then ``manifest.json``. Returns the manifest path.

    A failing stage stops the run; files of completed stages stay in place.
    """
    if not isinstance(cfg, PipelineConfig):
        cfg = PipelineConfig(cfg)
    out = Path(cfg.output if out is None else out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / CONFIG_JSON)
    for stage in STAGES:
        run_stage(stage, cfg, out)
    manifest = _write_manifest(out)
    if plots:
        emit_plots(manifest)
        manifest = _write_manifest(out)
    return manifest


# ---------------------------------------------------------------- plot data


_BODE_SCRIPT = """import csv
import sys

import matplotlib.pyplot as plt

fig, (ax_g, ax_p) = plt.subplots(2, 1, sharex=True)
for path in sys.argv[1:] or {files!r}:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    f = [float(r["f_hz"]) for r in rows]
    ax_g.semilogx(f, [float(r["gain_db"]) for r in rows], label=path)
    ax_p.semilogx(f, [float(r["phase_deg"]) for r in rows])
ax_g.set_ylabel("gain [dB]")
ax_p.set_ylabel("phase [deg]")
ax_p.set_xlabel("frequency [Hz]")
ax_g.legend()
plt.show()
"""

_NYQUIST_SCRIPT = """import csv

import matplotlib.pyplot as plt

with open("nyquist_loop.csv") as fh:
    rows = list(csv.DictReader(fh))
with open("nyquist_circle.csv") as fh:
    circle = list(csv.DictReader(fh))
plt.plot([float(r["re"]) for r in rows], [float(r["im"]) for r in rows], label="L(iw)")
plt.plot([float(r["mirror_re"]) for r in rows], [float(r["mirror_im"]) for r in rows], "--", label="L(-iw)")
plt.plot([float(r["re"]) for r in circle], [float(r["im"]) for r in circle], ":", label="modulus margin")
plt.plot([-1], [0], "r+")
plt.axis("equal")
plt.legend()
plt.show()
"""

_TRACE_SCRIPT = """import csv
import sys

import matplotlib.pyplot as plt

for path in sys.argv[1:] or {files!r}:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    t = [float(r["t"]) for r in rows]
    for key in rows[0]:
        if key != "t":
            plt.plot(t, [float(r[key]) for r in rows], label=f"{{path}}: {{key}}")
plt.xlabel("time [s]")
plt.legend()
plt.show()
"""


def _bode_csv(path, f, H):
    with np.errstate(divide="ignore"):
        gain = 20 * np.log10(np.abs(H))
    phase = np.degrees(np.unwrap(np.angle(H)))
    return write_csv(path, ["f_hz", "gain_db", "phase_deg"], [f, gain, phase])


def emit_plots(manifest):
    """Write Bode, Nyquist, step and PWM-trace CSVs plus plotting scripts to ``plots/``.

    The inputs are the artifacts next to ``manifest``. Returns the written paths.
    """
    manifest = Path(manifest)
    if not manifest.exists():
        raise MissingArtifact(f"missing artifact {manifest}")
    out = manifest.parent
    cfg = PipelineConfig(read_json(out / CONFIG_JSON))
    dest = out / "plots"
    dest.mkdir(exist_ok=True)
    written = []
    f = np.logspace(-2, np.log10(cfg.f_nyquist), 800)
    s = 2j * np.pi * f

    G = _plant(cfg)
    bode = {"bode_plant.csv": G}
    if (out / LOEWNER_JSON).exists():
        bode["bode_loewner.csv"] = load_system(out / LOEWNER_JSON)
    if (out / REDUCED_JSON).exists():
        bode["bode_reduced.csv"] = load_system(out / REDUCED_JSON)
    K = _load_controller(out).system if (out / CONTROLLER_JSON).exists() else None
    if K is not None:
        bode["bode_controller.csv"] = K
        bode["bode_loop.csv"] = interconnect("series", K, G)
    for name, sys in bode.items():
        written.append(_bode_csv(dest / name, f, freqresp(sys, s)[:, 0, 0]))
    if (out / FRF_CSV).exists():
        data = FrequencyData.from_csv(out / FRF_CSV)
        pos = data.omega > 0
        written.append(_bode_csv(dest / "bode_frf.csv", data.omega[pos] / (2 * np.pi), data.values[pos]))
    written.append(
        atomic_write_text(dest / "plot_bode.py", _BODE_SCRIPT.format(files=sorted(n for n in bode) + ["bode_frf.csv"]))
    )

    if K is not None:
        L = interconnect("series", K, G)
        mm = read_json(out / MARGINS_JSON)["ModMargin"] if (out / MARGINS_JSON).exists() else None
        nd = nyquist_data(L, 2 * np.pi * f, modulus_margin=mm)
        keys = ["omega", "re", "im", "mirror_re", "mirror_im"]
        written.append(
            write_csv(
                dest / "nyquist_loop.csv",
                keys + ["modulus_margin"],
                [nd[k] for k in keys] + [np.full(len(f), nd["modulus_margin"])],
            )
        )
        written.append(write_csv(dest / "nyquist_circle.csv", ["re", "im"], [nd["circle_re"], nd["circle_im"]]))
        written.append(atomic_write_text(dest / "plot_nyquist.py", _NYQUIST_SCRIPT))

        hy = cfg.hybrid
        t = np.linspace(0.0, hy["Tend"], int(round(hy["Tend"] / 1e-3)) + 1)
        y = continuous_closed_loop(G, K, hy["amplitude"], t)
        written.append(write_csv(dest / "step.csv", ["t", "r", "y"], [t, np.full(len(t), hy["amplitude"]), y]))
        traces = ["step.csv"]
        for Ts in cfg.discretization["Ts"]:
            src = out / f"hybrid_pwm_{ts_label(Ts)}_fine.csv"
            if src.exists():
                name = f"pwm_{ts_label(Ts)}.csv"
                atomic_write_text(dest / name, src.read_text())
                written.append(dest / name)
                traces.append(name)
        written.append(atomic_write_text(dest / "plot_traces.py", _TRACE_SCRIPT.format(files=traces)))
    return written

