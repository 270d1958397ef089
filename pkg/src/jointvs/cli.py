"""Command-line orchestration: simulate, fit, select, predict, evaluate, replicate.

All commands are deterministic given (config, seed).  Exit codes: 0 success
(warnings allowed), 2 usage or data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from .dynpred import FittedModelBundle, PredictionRequest, risk_draws, risk_point
from .errors import ConfigError, DataError, JointVSError, NumericalError
from .hazard import default_knots
from .longitudinal import load_dataset, write_dataset
from .metrics import ipcw_auc, ipcw_brier, landmark_case_control_counts
from .replicate import (
    load_records,
    prediction_table,
    run_grid,
    run_replicate,
    save_records,
    selection_table,
)
from .samplers import McmcControl, PriorConfig, SpikeSlabConfig
from .selection import build_report, report_from_csv, report_to_csv
from .simgen import ScenarioConfig, simulate_dataset, split_train_validation, write_truth
from .stage1 import fit_one_marker, load_fit, predict_random_effects, save_fit
from .stage2 import SelectionModelData, fit_selection_model, refit_selected
from .dynpred import trajectories_from_fits


def default_config() -> dict:
    """Full default configuration; every paper-underspecified constant lives here."""
    return {
        "seed": 0,
        "quadrature_nodes": 15,
        "baseline_intervals": 5,
        "trends": {},
        "scenario": {
            "n_subjects": 1000,
            "n_markers": 10,
            "sigma2": 0.5,
            "rho": 0.1,
            "alpha_star": 1.0,
            "gamma_star": 1.0,
            "pattern": "common",
            "baseline_heights": [0.25, 0.25],
            "train_fraction": 0.5,
        },
        "priors": {
            "coef_var": 100.0,
            "sigma2_shape": 0.01,
            "sigma2_rate": 0.01,
            "baseline_shape": 0.01,
            "baseline_rate": 0.01,
        },
        "spike_slab": {
            "family": "ds",
            "spike_var": 1e-3,
            "slab_shape": 0.01,
            "slab_rate": 0.01,
            "beta_a": 1.0,
            "beta_b": 1.0,
        },
        "mcmc": {
            "stage1": {"chains": 2, "iters": 6000, "burnin": 3000, "thin": 2},
            "stage2": {"chains": 2, "iters": 6000, "burnin": 3000, "thin": 2},
            "refit": {"chains": 2, "iters": 4000, "burnin": 2000, "thin": 2},
        },
        "effects_prediction": {"n_kept": 500, "burnin": 200, "thin": 1},
        "selection": {"rule": "lbfdr", "lbfdr_threshold": 0.05, "bf_threshold": 1.0},
        "prediction": {
            "landmarks": [0.0, 0.25, 0.5, 0.75],
            "window": 0.25,
            "n_param_draws": 200,
            "n_effect_draws": 5,
            "use_refit": True,
        },
        "replicate": {
            "replicates": 20,
            "n_subjects": 600,
            "families": ["cs", "ds"],
            "rules": ["bf", "lbfdr"],
            "scenarios": [{"label": "easy", "rho": 0.1, "sigma2": 0.5,
                           "alpha_star": 1.0, "gamma_star": 1.0}],
        },
    }


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in out:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(val, dict) and isinstance(out[key], dict):
            out[key] = {**out[key], **val}
        else:
            out[key] = val
    return out


def load_config(path, seed=None) -> dict:
    cfg = default_config()
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"config root must be a JSON object: {path}")
        cfg = _deep_merge(cfg, user)
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def _write_csv_with_header(df: pd.DataFrame, path, cfg: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# config_sha256={config_hash(cfg)}\n")
        df.to_csv(fh, index=False)


def _scenario_from_config(cfg: dict) -> ScenarioConfig:
    kwargs = dict(cfg["scenario"])
    kwargs.pop("label", None)
    if "baseline_heights" in kwargs:
        kwargs["baseline_heights"] = tuple(kwargs["baseline_heights"])
    return ScenarioConfig(**kwargs)


def _mcmc_from(cfg: dict, key: str) -> McmcControl:
    return McmcControl(seed=int(cfg["seed"]), **cfg["mcmc"][key])


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, args.seed)
    scen = _scenario_from_config(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset, truth = simulate_dataset(scen, seed=int(cfg["seed"]))
    train, valid, train_idx, valid_idx = split_train_validation(
        dataset, (scen.train_fraction, 1.0 - scen.train_fraction), seed=int(cfg["seed"]) + 1
    )
    write_dataset(train, out / "train_long.csv", out / "train_subjects.csv")
    if valid.n_subjects:
        write_dataset(valid, out / "validation_long.csv", out / "validation_subjects.csv")
    truth["train_ids"] = [dataset.subjects[i].id for i in train_idx]
    truth["validation_ids"] = [dataset.subjects[i].id for i in valid_idx]
    truth["config_sha256"] = config_hash(cfg)
    write_truth(truth, out / "truth.json")
    rates = truth["event_rates"]
    print(
        f"simulated {dataset.n_subjects} subjects "
        f"(train {train.n_subjects} / validation {valid.n_subjects}); "
        f"cause-1 rate {rates['cause_1']:.3f}, cause-2 rate {rates['cause_2']:.3f}, "
        f"censored {rates['censored']:.3f}"
    )
    return 0


def _load_train(args, cfg):
    data_dir = Path(args.data)
    long_path = data_dir / "train_long.csv"
    subj_path = data_dir / "train_subjects.csv"
    if not long_path.exists() or not subj_path.exists():
        raise DataError(f"missing train CSVs under {data_dir}")
    return load_dataset(long_path, subj_path, trends=cfg["trends"])


def cmd_fit(args) -> int:
    cfg = load_config(args.config, args.seed)
    train = _load_train(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    priors = PriorConfig(**cfg["priors"])
    n_nodes = int(cfg["quadrature_nodes"])
    knots = default_knots(
        train.event_times(), train.causes(), n_intervals=int(cfg["baseline_intervals"])
    )

    fits = []
    for k in range(train.n_markers):
        fit = fit_one_marker(
            train, k, priors, _mcmc_from(cfg, "stage1"), knots=knots, n_nodes=n_nodes,
            predict_control=cfg["effects_prediction"],
        )
        save_fit(fit, out / f"stage1_{fit.marker}.json")
        fits.append(fit)
        flag = "" if fit.diagnostics["converged"] else "  [convergence warning: R-hat > 1.1]"
        print(f"stage 1 marker {fit.marker}: max R-hat {fit.diagnostics['max_rhat']:.3f}{flag}")

    traj = trajectories_from_fits(fits, [f.bhat for f in fits])
    data2 = SelectionModelData(
        traj, train.event_times(), train.causes(), train.covariate_matrix(), knots,
        n_nodes=n_nodes,
    )
    ss_cfg = SpikeSlabConfig(**cfg["spike_slab"])
    fit2 = fit_selection_model(data2, ss_cfg, priors, _mcmc_from(cfg, "stage2"))

    np.savez_compressed(
        out / f"stage2_draws_{ss_cfg.family}.npz",
        knots=knots,
        marker_names=np.array([m.name for m in train.markers]),
        covariate_names=np.array([f"w{j + 1}" for j in range(train.n_covariates)]),
        **fit2.draws,
    )
    _write_draws_csv(fit2, train, out / f"stage2_draws_{ss_cfg.family}.csv")
    report = build_report(
        fit2, [m.name for m in train.markers],
        [f"w{j + 1}" for j in range(train.n_covariates)],
        beta_a=ss_cfg.beta_a, beta_b=ss_cfg.beta_b, rule=cfg["selection"]["rule"],
        lbfdr_threshold=cfg["selection"]["lbfdr_threshold"],
        bf_threshold=cfg["selection"]["bf_threshold"],
    )
    summary = report.entries.drop(columns=["selected"]).to_dict(orient="records")
    with open(out / f"stage2_summary_{ss_cfg.family}.json", "w", encoding="utf-8") as fh:
        json.dump({"config_sha256": config_hash(cfg), "rows": summary}, fh, indent=1)
    diag = {
        "stage1": {
            f.marker: {"max_rhat": f.diagnostics["max_rhat"], "converged": f.diagnostics["converged"]}
            for f in fits
        },
        "stage2": {
            "max_rhat": fit2.diagnostics["max_rhat"],
            "converged": fit2.diagnostics["converged"],
        },
    }
    with open(out / "diagnostics.json", "w", encoding="utf-8") as fh:
        json.dump(diag, fh, indent=1)
    if not fit2.diagnostics["converged"]:
        print(f"stage 2: convergence warning, max R-hat {fit2.diagnostics['max_rhat']:.3f}")
    else:
        print(f"stage 2 ({ss_cfg.family}): max R-hat {fit2.diagnostics['max_rhat']:.3f}")
    return 0


def _write_draws_csv(fit2, train, path) -> None:
    marker_names = [m.name for m in train.markers]
    cov_names = [f"w{j + 1}" for j in range(train.n_covariates)]
    frames = []
    n_draws = fit2.draws["gamma"].shape[0]
    iters = np.arange(n_draws)
    for l in range(fit2.draws["gamma"].shape[1]):
        for j, name in enumerate(cov_names):
            frames.append(pd.DataFrame({
                "iteration": iters,
                "parameter": f"gamma[{l + 1}][{name}]",
                "value": fit2.draws["gamma"][:, l, j],
            }))
            frames.append(pd.DataFrame({
                "iteration": iters,
                "parameter": f"incl_gamma[{l + 1}][{name}]",
                "value": fit2.draws["gamma_incl"][:, l, j].astype(float),
            }))
        for k, name in enumerate(marker_names):
            frames.append(pd.DataFrame({
                "iteration": iters,
                "parameter": f"alpha[{l + 1}][{name}]",
                "value": fit2.draws["alpha"][:, l, k],
            }))
            frames.append(pd.DataFrame({
                "iteration": iters,
                "parameter": f"incl_alpha[{l + 1}][{name}]",
                "value": fit2.draws["alpha_incl"][:, l, k].astype(float),
            }))
        for kk in range(fit2.draws["lam"].shape[2]):
            frames.append(pd.DataFrame({
                "iteration": iters,
                "parameter": f"lam[{l + 1}][{kk + 1}]",
                "value": fit2.draws["lam"][:, l, kk],
            }))
    pd.concat(frames, ignore_index=True).to_csv(path, index=False)


class _NpzSelectionFit:
    """SelectionFit-shaped view over a saved stage-2 draws archive."""

    def __init__(self, path):
        archive = np.load(path, allow_pickle=False)
        self.draws = {k: archive[k] for k in ("gamma", "alpha", "gamma_incl", "alpha_incl", "lam")}
        self.knots = archive["knots"]
        self.marker_names = [str(x) for x in archive["marker_names"]]
        self.covariate_names = [str(x) for x in archive["covariate_names"]]

    @property
    def n_causes(self):
        return self.draws["alpha"].shape[1]


def _find_stage2(fit_dir: Path, family=None):
    candidates = sorted(fit_dir.glob("stage2_draws_*.npz"))
    if family:
        candidates = [c for c in candidates if c.stem.endswith(family)]
    if not candidates:
        raise DataError(f"no stage-2 draws archive under {fit_dir}")
    return candidates[0]


def cmd_select(args) -> int:
    cfg = load_config(args.config, args.seed)
    fit_dir = Path(args.fit)
    npz = _NpzSelectionFit(_find_stage2(fit_dir, cfg["spike_slab"]["family"]))
    report = build_report(
        npz, npz.marker_names, npz.covariate_names,
        beta_a=cfg["spike_slab"]["beta_a"], beta_b=cfg["spike_slab"]["beta_b"],
        rule=cfg["selection"]["rule"],
        lbfdr_threshold=cfg["selection"]["lbfdr_threshold"],
        bf_threshold=cfg["selection"]["bf_threshold"],
    )
    report_to_csv(report, args.out)
    n_sel = int(report.entries["selected"].sum())
    print(f"selected {n_sel} of {len(report.entries)} coefficients "
          f"under the {cfg['selection']['rule']} rule -> {args.out}")
    return 0


def _load_marker_fits(fit_dir: Path):
    paths = sorted(fit_dir.glob("stage1_*.json"))
    if not paths:
        raise DataError(f"no stage-1 fit artifacts under {fit_dir}")
    return [load_fit(p) for p in paths]


def cmd_predict(args) -> int:
    cfg = load_config(args.config, args.seed)
    fit_dir = Path(args.fit)
    data_dir = Path(args.data)
    long_path = data_dir / "validation_long.csv"
    subj_path = data_dir / "validation_subjects.csv"
    if not long_path.exists():
        long_path = data_dir / "train_long.csv"
        subj_path = data_dir / "train_subjects.csv"
    dataset = load_dataset(long_path, subj_path, trends=cfg["trends"])

    fits_by_name = {f.marker: f for f in _load_marker_fits(fit_dir)}
    fits = [fits_by_name[m.name] for m in dataset.markers]
    knots = fits[0].knots
    npz = _NpzSelectionFit(_find_stage2(fit_dir, cfg["spike_slab"]["family"]))

    if cfg["prediction"]["use_refit"] and not args.raw_posterior:
        if args.report:
            report_df = report_from_csv(args.report)
            sel = report_df[report_df["selected"]]
        else:
            report = build_report(
                npz, npz.marker_names, npz.covariate_names,
                beta_a=cfg["spike_slab"]["beta_a"], beta_b=cfg["spike_slab"]["beta_b"],
                rule=cfg["selection"]["rule"],
                lbfdr_threshold=cfg["selection"]["lbfdr_threshold"],
                bf_threshold=cfg["selection"]["bf_threshold"],
            )
            sel = report.entries[report.entries["selected"]]
        mask_gamma = np.zeros((npz.n_causes, len(npz.covariate_names)), dtype=bool)
        mask_alpha = np.zeros((npz.n_causes, len(npz.marker_names)), dtype=bool)
        for _, row in sel.iterrows():
            l = int(row["cause"]) - 1
            if row["name"] in npz.covariate_names:
                mask_gamma[l, npz.covariate_names.index(row["name"])] = True
            else:
                mask_alpha[l, npz.marker_names.index(row["name"])] = True
        train = _load_train(args, cfg) if (data_dir / "train_long.csv").exists() else dataset
        traj_train = trajectories_from_fits(fits, [f.bhat for f in fits])
        data2 = SelectionModelData(
            traj_train,
            np.array([float(s) for s in _train_times(train, fits)]),
            _train_causes(train, fits),
            _train_covariates(train, fits),
            knots, n_nodes=int(cfg["quadrature_nodes"]),
        )
        refit = refit_selected(data2, mask_gamma, mask_alpha,
                               PriorConfig(**cfg["priors"]), _mcmc_from(cfg, "refit"))
        gammas, alphas, lam = refit.posterior_means()
        hazard_draws = refit.draws
    else:
        gammas = npz.draws["gamma"].mean(axis=0)
        alphas = npz.draws["alpha"].mean(axis=0)
        lam = npz.draws["lam"].mean(axis=0)
        hazard_draws = {k: npz.draws[k] for k in ("gamma", "alpha", "lam")}

    bundle = FittedModelBundle(
        marker_fits=fits, gammas=gammas, alphas=alphas, lam=lam, knots=knots,
        hazard_draws=hazard_draws, n_nodes=int(cfg["quadrature_nodes"]),
    )

    landmarks = [args.landmark] if args.landmark is not None else cfg["prediction"]["landmarks"]
    window = args.window if args.window is not None else cfg["prediction"]["window"]
    req_base = dict(
        n_param_draws=cfg["prediction"]["n_param_draws"],
        n_effect_draws=cfg["prediction"]["n_effect_draws"],
    )
    rows = []
    for s in landmarks:
        req = PredictionRequest(landmark=float(s), window=float(window), **req_base)
        for i, subj in enumerate(dataset.subjects):
            if subj.event_time <= req.landmark:
                continue
            point = risk_point(bundle, dataset, i, req, seed=int(cfg["seed"]))
            _, summary = risk_draws(bundle, dataset, i, req, seed=int(cfg["seed"]))
            rows.append(
                {
                    "id": subj.id,
                    "s": req.landmark,
                    "t": req.window,
                    "risk": point,
                    "lo95": summary["lo95"],
                    "hi95": summary["hi95"],
                }
            )
    df = pd.DataFrame(rows, columns=["id", "s", "t", "risk", "lo95", "hi95"])
    _write_csv_with_header(df, args.out, cfg)
    print(f"wrote {len(df)} risk predictions -> {args.out}")
    return 0


def _train_times(train, fits):
    return train.event_times()


def _train_causes(train, fits):
    return train.causes()


def _train_covariates(train, fits):
    return train.covariate_matrix()


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, args.seed)
    pred = pd.read_csv(args.pred, comment="#")
    for col in ("id", "s", "t", "risk"):
        if col not in pred.columns:
            raise DataError(f"{args.pred}: missing column {col!r}")
    data_dir = Path(args.data)
    subj_path = data_dir / "validation_subjects.csv"
    if not subj_path.exists():
        subj_path = data_dir / "train_subjects.csv"
    subj = pd.read_csv(subj_path)
    subj["id"] = subj["id"].astype(str)
    pred["id"] = pred["id"].astype(str)
    merged = pred.merge(subj[["id", "event_time", "cause"]], on="id", how="left")
    if merged["event_time"].isna().any():
        raise DataError("predictions reference subjects missing from the data")

    rows = []
    for (s, t), grp in merged.groupby(["s", "t"]):
        auc = ipcw_auc(grp["risk"].to_numpy(), grp["event_time"].to_numpy(),
                       grp["cause"].to_numpy(), float(s), float(t))
        bs = ipcw_brier(grp["risk"].to_numpy(), grp["event_time"].to_numpy(),
                        grp["cause"].to_numpy(), float(s), float(t))
        n_cases, n_controls = landmark_case_control_counts(
            grp["event_time"].to_numpy(), grp["cause"].to_numpy(), float(s), float(t)
        )
        rows.append({"s": s, "t": t, "auc": auc, "bs": bs,
                     "n_cases": n_cases, "n_controls": n_controls})
    df = pd.DataFrame(rows, columns=["s", "t", "auc", "bs", "n_cases", "n_controls"])
    _write_csv_with_header(df, args.out, cfg)
    print(df.to_string(index=False))
    return 0


def cmd_replicate(args) -> int:
    cfg = load_config(args.config, args.seed)
    if args.full:
        cfg["replicate"]["replicates"] = 100
        cfg["replicate"]["n_subjects"] = 1000
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = args.jobs or os.cpu_count() or 1

    def progress(done, total, rec):
        print(f"[{done}/{total}] {rec['scenario']} replicate {rec['replicate']}", flush=True)

    records = run_grid(cfg, jobs=jobs, progress=progress)
    save_records(records, out / "replicate_records.json")
    sel = selection_table(records)
    prd = prediction_table(records)
    _write_csv_with_header(sel, out / "selection_table.csv", cfg)
    _write_csv_with_header(prd, out / "prediction_table.csv", cfg)
    with open(out / "config_resolved.json", "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=1)
    print(sel[(sel["metric"] == "tpr") & (sel["block"] == "total")].to_string(index=False))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jointvs",
        description="Two-stage Bayesian variable selection for joint longitudinal "
        "and competing-risks models",
    )
    parser.add_argument("--print-config", action="store_true",
                        help="print the default configuration as JSON and exit")
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="master seed override")

    p = sub.add_parser("simulate", help="generate a synthetic dataset with ground truth")
    common(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit", help="run stage-1 marker fits and the stage-2 selection model")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("select", help="turn stage-2 draws into a selection report")
    common(p)
    p.add_argument("--fit", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("predict", help="landmark risk predictions for at-risk subjects")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--fit", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None, help="selection report CSV (else recomputed)")
    p.add_argument("--landmark", type=float, default=None)
    p.add_argument("--window", type=float, default=None)
    p.add_argument("--raw-posterior", action="store_true",
                   help="use the spike-and-slab posterior instead of the refit")

    p = sub.add_parser("evaluate", help="IPCW AUC / Brier score of a prediction file")
    common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("replicate", help="desk-scale replication grid")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--full", action="store_true",
                   help="paper-scale grid (100 replicates of N=1000)")
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "select": cmd_select,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "replicate": cmd_replicate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_config:
        print(json.dumps(default_config(), indent=1))
        return 0
    if not args.command:
        parser.print_help()
        return 2
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except JointVSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
