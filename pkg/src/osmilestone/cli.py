"""``osm`` command line: fit, predict, simulate, report.

Every subcommand reads a JSON config (see README) and accepts flag
overrides. All randomness derives from the single ``--seed``; outputs are
byte-identical for a given config and seed whatever ``--threads`` is.
"""

import argparse
import json
import os
import sys
import warnings
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .bma import WeightError, bma_ppd, weights_from_fits
from .mcmc import ConvergenceWarning, MCMCSettings, PosteriorDraws, SamplerError
from .models import BAVE_COMPONENTS, MODEL_BUILDERS, build_model
from .prediction import (
    PredictionError,
    death_count_at,
    milestone_nth_death,
    predicted_km,
    probability_of_success,
)
from .simulation import METHODS, ScenarioConfig, derived_seed, run_study
from .stats import fmt_float, hpd_interval
from .trial import DataError, iso_to_day, load_trial, snapshot_at_date, snapshot_at_kth_death, write_snapshot

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------


def _read_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    base = Path(path).parent
    data = cfg.get("data")
    if isinstance(data, dict):
        for key in ("longitudinal", "events"):
            if key in data and not os.path.isabs(data[key]):
                data[key] = str(base / data[key])
    if "output_dir" in cfg and not os.path.isabs(cfg["output_dir"]):
        cfg["output_dir"] = str(base / cfg["output_dir"])
    return cfg


def _settings(cfg):
    raw = dict(cfg.get("mcmc", {}))
    allowed = {f.name for f in fields(MCMCSettings)}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown mcmc settings {sorted(unknown)}")
    raw["seed"] = cfg["seed"]
    try:
        return MCMCSettings(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad mcmc settings: {exc}") from None


def _model_list(cfg, subjects=None):
    names = cfg.get("models", ["baveJM"])
    if isinstance(names, str):
        names = [n.strip() for n in names.split(",") if n.strip()]
    out = []
    for nm in names:
        if nm == "baveJM":
            has_nt = subjects is None or any(s.nt.indicator for s in subjects)
            for lab, comp in BAVE_COMPONENTS.items():
                if lab == "NT" and not has_nt:
                    continue
                if comp not in out:
                    out.append(comp)
        elif nm in MODEL_BUILDERS:
            if nm not in out:
                out.append(nm)
        else:
            raise ConfigError(f"unknown model {nm!r}")
    return out


def _out_dir(cfg):
    out = Path(cfg.get("output_dir", "osm_out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_snapshot(cfg):
    data = cfg.get("data")
    if not isinstance(data, dict) or "longitudinal" not in data or "events" not in data:
        raise ConfigError("config needs data.longitudinal and data.events paths")
    for key in ("longitudinal", "events"):
        if not os.path.exists(data[key]):
            raise ConfigError(f"data file not found: {data[key]}")
    subjects = load_trial(data["longitudinal"], data["events"], data.get("n_covariates"))
    snap_cfg = cfg.get("snapshot", {})
    if "cutoff_date" in snap_cfg:
        return snapshot_at_date(subjects, iso_to_day(snap_cfg["cutoff_date"]))
    if "kth_death" in snap_cfg:
        return snapshot_at_kth_death(subjects, int(snap_cfg["kth_death"]))
    last = max(s.randomization_date + s.os.time * 365.25 / 12.0 for s in subjects)
    return snapshot_at_date(subjects, last)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_fit(cfg, workers, strict=False):
    snap = _load_snapshot(cfg)
    out = _out_dir(cfg)
    write_snapshot(snap, out / "snapshot_longitudinal.csv", out / "snapshot_events.csv")
    settings = _settings(cfg)
    problems = []
    for name in _model_list(cfg, snap.subjects):
        model = build_model(name, snap.subjects)
        s = replace(settings, seed=derived_seed(settings.seed, name))
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConvergenceWarning)
            draws = model.fit(s, workers=workers)
        conv = [str(w.message) for w in caught if issubclass(w.category, ConvergenceWarning)]
        mdir = out / name
        draws.save(mdir / "posterior")
        draws.to_csv(mdir / "draws.csv")
        diag = {"model": name, "chains": s.chains, "iters": s.iters, "seed": s.seed,
                "parameters": draws.diagnostics(), "convergence_warnings": conv}
        _write_json(mdir / "diagnostics.json", diag)
        if conv:
            problems.append(name)
            print(f"warning: {name}: {conv[0]}", file=sys.stderr)
    if strict and problems:
        return EXIT_NUMERIC
    return EXIT_OK


def _ppd_for(name, snap, out, seed):
    mdir = out / name / "posterior"
    if not (mdir / "meta.json").exists():
        raise ConfigError(f"no posterior draws for {name} in {out}; run `osm fit` first")
    model = build_model(name, snap.subjects)
    draws = PosteriorDraws.load(mdir)
    return model, draws, model.ppd(draws, derived_seed(seed, "ppd", name))


def cmd_predict(cfg, workers):
    snap = _load_snapshot(cfg)
    out = _out_dir(cfg)
    pred = cfg.get("prediction", {})
    method = pred.get("method", "baveJM")
    seed = cfg["seed"]
    summary = {"method": method}
    if method == "baveJM":
        fits, ppds = {}, []
        for lab, name in BAVE_COMPONENTS.items():
            if name not in _model_list({"models": ["baveJM"]}, snap.subjects):
                continue
            model, draws, ppd = _ppd_for(name, snap, out, seed)
            fits[lab] = (model, draws)
            ppds.append(ppd)
        weights = weights_from_fits(fits, pred.get("prior_model_probs"))
        weights.to_csv(out / "weights.csv")
        weights.to_json(out / "weights_summary.json")
        ppd = bma_ppd(weights, ppds, derived_seed(seed, "mixture"))
        summary["mean_weights"] = weights.summary()["mean_weights"]
    elif method in MODEL_BUILDERS:
        _, _, ppd = _ppd_for(method, snap, out, seed)
    else:
        raise ConfigError(f"unknown prediction method {method!r}")
    ppd.to_csv(out / "ppd.csv")
    ppd.save(out / "ppd.npz")

    target = int(pred.get("target_n", len(snap.subjects)))
    fc = milestone_nth_death(ppd, snap, target)
    fc.draws_to_csv(out / "milestone_draws.csv")
    fc.to_json(out / "forecast.json", draws_path="milestone_draws.csv")
    summary["milestone"] = {"target_n": target, "median_date": fc.median_date,
                            "hpd90": [fc.hpd90.lower, fc.hpd90.upper]}

    dates = pred.get("dates", [])
    with open(out / "death_counts.csv", "w") as fh:
        fh.write("date,q05,median,q95,mean\n")
        for d in dates:
            c = death_count_at(ppd, snap, iso_to_day(d))
            q = np.quantile(c, [0.05, 0.5, 0.95])
            fh.write(f"{d},{fmt_float(q[0])},{fmt_float(q[1])},{fmt_float(q[2])},{fmt_float(c.mean())}\n")

    arms = {s.experimental for s in snap.subjects}
    if len(arms) == 2:
        pos = probability_of_success(ppd, snap, target, float(pred.get("alpha", 0.05)),
                                     bool(pred.get("one_sided", False)))
        summary["probability_of_success"] = pos
        tau = pred.get("tau_months")
        band = predicted_km(ppd, snap, tau=tau)
        band.to_csv(out / "km_band.csv")
        if band.rmst_diff is not None:
            with open(out / "rmst_draws.csv", "w") as fh:
                fh.write("iter,rmst_diff_months\n")
                for t, v in enumerate(band.rmst_diff):
                    fh.write(f"{t},{fmt_float(v)}\n")
            h = hpd_interval(band.rmst_diff)
            summary["rmst_difference"] = {"tau_months": tau, "median": float(np.median(band.rmst_diff)),
                                          "hpd90": [h.lower, h.upper]}
    _write_json(out / "prediction_summary.json", summary)
    return EXIT_OK


def cmd_simulate(cfg, workers):
    sim = dict(cfg.get("simulation", {}))
    methods = tuple(sim.pop("methods", ("baveJM", "marginal")))
    ks = tuple(sim.pop("snapshot_ks", (100, 200, 300, 350)))
    reps = int(sim.pop("replicates", 10))
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown simulation methods {bad}")
    allowed = {f.name for f in fields(ScenarioConfig)}
    unknown = set(sim) - allowed
    if unknown:
        raise ConfigError(f"unknown scenario settings {sorted(unknown)}")
    sim["seed"] = cfg["seed"]
    try:
        scenario = ScenarioConfig(**sim)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    report = run_study(scenario, methods, ks, reps, _settings(cfg), workers=workers)
    out = _out_dir(cfg)
    report.to_csv(out / "eval_report.csv")
    report.replicates_to_csv(out / "eval_replicates.csv")
    report.curves_to_csv(out / "eval_curves.csv")
    return EXIT_OK


def cmd_report(cfg, workers):
    out = Path(cfg.get("output_dir", "osm_out"))
    need = ["forecast.json", "milestone_draws.csv", "death_counts.csv", "prediction_summary.json"]
    missing = [n for n in need if not (out / n).exists()]
    if missing:
        raise ConfigError(f"missing prediction artifacts {missing}; run `osm predict` first")
    forecast = json.loads((out / "forecast.json").read_text())
    summary = json.loads((out / "prediction_summary.json").read_text())
    draws = np.loadtxt(out / "milestone_draws.csv", delimiter=",", skiprows=1, usecols=(1, 3), ndmin=2)
    lines = ["Milestone forecast", "------------------"]
    lines.append(f"target death: {forecast['target_n']}")
    lines.append(f"median date: {forecast['median_date']}")
    lines.append(f"90% HPD: {forecast['hpd90'][0]} to {forecast['hpd90'][1]}")
    lines.append(f"median months from first randomization: {float(np.median(draws[:, 1])):.3f}")
    lines += ["", "Death counts", "------------"]
    counts = (out / "death_counts.csv").read_text().strip().splitlines()[1:]
    if counts:
        for row in counts:
            d, q05, med, q95, _ = row.split(",")
            lines.append(f"{d}: median {float(med):.1f} (90% interval {float(q05):.1f} to {float(q95):.1f})")
    else:
        lines.append("no query dates requested")
    lines += ["", "Probability of success", "----------------------"]
    pos = summary.get("probability_of_success")
    lines.append("not computed (single arm)" if pos is None else f"{pos:.4f}")
    lines += ["", "Model weights", "-------------"]
    mw = summary.get("mean_weights")
    if mw:
        lines += [f"w_{k}: {v:.4f}" for k, v in sorted(mw.items())]
    else:
        lines.append(f"single model: {summary.get('method')}")
    lines += ["", "RMST difference", "---------------"]
    rm = summary.get("rmst_difference")
    if rm:
        lines.append(f"tau {rm['tau_months']} months: median {rm['median']:.3f} "
                     f"(90% HPD {rm['hpd90'][0]:.3f} to {rm['hpd90'][1]:.3f})")
    else:
        lines.append("not computed (set prediction.tau_months)")
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    _write_json(out / "report.json", {
        "forecast": forecast,
        "milestone_median_day": float(np.median(draws[:, 0])),
        "probability_of_success": pos,
        "mean_weights": mw,
        "rmst_difference": rm,
        "death_counts": counts,
    })
    print("\n".join(lines))
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "simulate": cmd_simulate, "report": cmd_report}


def build_parser():
    ap = argparse.ArgumentParser(prog="osm", description="Event-milestone forecasting from interim trial data.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--threads", type=int, help="worker cap (default: OSM_THREADS or all cores)")
        p.add_argument("--out", help="output directory (overrides config)")
        if name == "fit":
            p.add_argument("--models", help="comma-separated model names or baveJM")
            p.add_argument("--strict", action="store_true", help="exit 4 on convergence warnings")
        if name == "predict":
            p.add_argument("--method", help="model name or baveJM")
            p.add_argument("--target-n", type=int, help="death index to forecast")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _read_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        cfg.setdefault("seed", 0)
        if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
            raise ConfigError("seed must be a nonnegative integer")
        if args.out:
            cfg["output_dir"] = args.out
        if getattr(args, "models", None):
            cfg["models"] = args.models
        if getattr(args, "method", None):
            cfg.setdefault("prediction", {})["method"] = args.method
        if getattr(args, "target_n", None):
            cfg.setdefault("prediction", {})["target_n"] = args.target_n
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be positive")
        if args.threads is not None:
            workers = args.threads
        elif os.environ.get("OSM_THREADS"):
            workers = max(1, int(os.environ["OSM_THREADS"]))
        else:
            workers = os.cpu_count() or 1
        if args.command == "fit":
            return cmd_fit(cfg, workers, strict=args.strict)
        return COMMANDS[args.command](cfg, workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, PredictionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SamplerError, WeightError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
