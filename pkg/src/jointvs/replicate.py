"""Desk-scale replication harness: simulate, fit both spike-and-slab
families, select under both rules, refit, predict and score, over a grid of
scenarios and replicates.

One replicate is a self-contained task keyed by (master seed, scenario
index, replicate index); tasks run on a process pool and return small
records that the aggregator turns into the selection and prediction tables.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict

import numpy as np
import pandas as pd

from .dynpred import cause1_risks, trajectories_from_fits
from .hazard import PolynomialTrajectories, default_knots
from .longitudinal import LongitudinalDataset
from .metrics import confusion_metrics, ipcw_auc, ipcw_brier
from .samplers import McmcControl, PriorConfig, SpikeSlabConfig
from .selection import build_report
from .simgen import ScenarioConfig, effect_vectors, simulate_dataset, split_train_validation
from .stage1 import fit_one_marker, predict_random_effects
from .stage2 import SelectionModelData, fit_selection_model, refit_selected

FAMILIES = ("cs", "ds")
RULES = ("bf", "lbfdr")
BLOCKS = ("total", "markers", "covariates")


def _mcmc(config: dict, key: str, seed: int) -> McmcControl:
    block = dict(config["mcmc"][key])
    block["seed"] = seed
    return McmcControl(**block)


def run_replicate(config: dict, scenario_index: int, replicate_index: int) -> dict:
    """Full pipeline for one simulated dataset; returns the metric record."""
    warnings.simplefilter("ignore")
    rep_cfg = config["replicate"]
    scen_over = rep_cfg["scenarios"][scenario_index]
    scen_kwargs = {**config["scenario"], **scen_over}
    scen_label = scen_kwargs.pop("label", f"scenario{scenario_index}")
    scen = ScenarioConfig(n_subjects=rep_cfg["n_subjects"], **scen_kwargs)
    master = int(config["seed"])
    sim_seed = ((master * 1000003 + scenario_index) * 1009 + replicate_index) & 0x7FFFFFFF

    dataset, truth = simulate_dataset(scen, seed=sim_seed)
    train, valid, train_idx, valid_idx = split_train_validation(
        dataset, (scen.train_fraction, 1.0 - scen.train_fraction), seed=sim_seed + 1
    )

    priors = PriorConfig(**config["priors"])
    n_nodes = int(config["quadrature_nodes"])
    knots = default_knots(
        train.event_times(), train.causes(), n_intervals=int(config["baseline_intervals"])
    )

    marker_fits = [
        fit_one_marker(
            train, k, priors,
            _mcmc(config, "stage1", sim_seed + 10 + k),
            knots=knots, n_nodes=n_nodes,
            predict_control=config["effects_prediction"],
        )
        for k in range(train.n_markers)
    ]
    traj_train = trajectories_from_fits(marker_fits, [f.bhat for f in marker_fits])
    sel_data = SelectionModelData(
        traj_train, train.event_times(), train.causes(), train.covariate_matrix(),
        knots, n_nodes=n_nodes,
    )

    marker_names = [m.name for m in train.markers]
    covariate_names = [f"w{j + 1}" for j in range(train.n_covariates)]
    alphas_true, gammas_true = effect_vectors(scen)
    marker_mask_true = alphas_true != 0.0
    covariate_mask_true = gammas_true != 0.0

    sel_cfg_base = dict(config["spike_slab"])
    selection_cfg = config["selection"]
    record = {
        "scenario": scen_label,
        "replicate": replicate_index,
        "selection": {},
        "prediction": {},
    }

    masks = {}
    for family in rep_cfg["families"]:
        ss_cfg = SpikeSlabConfig(**{**sel_cfg_base, "family": family})
        fit2 = fit_selection_model(
            sel_data, ss_cfg, priors, _mcmc(config, "stage2", sim_seed + 100)
        )
        for rule in rep_cfg["rules"]:
            report = build_report(
                fit2, marker_names, covariate_names,
                beta_a=ss_cfg.beta_a, beta_b=ss_cfg.beta_b, rule=rule,
                lbfdr_threshold=selection_cfg["lbfdr_threshold"],
                bf_threshold=selection_cfg["bf_threshold"],
            )
            m_mask = report.mask("marker")
            c_mask = report.mask("covariate")
            masks[(family, rule)] = (c_mask, m_mask)
            cm_all = confusion_metrics(
                np.concatenate([m_mask.ravel(), c_mask.ravel()]),
                np.concatenate([marker_mask_true.ravel(), covariate_mask_true.ravel()]),
            )
            cm_markers = confusion_metrics(m_mask, marker_mask_true)
            cm_covs = confusion_metrics(c_mask, covariate_mask_true)
            record["selection"][f"{family}/{rule}"] = {
                "total": asdict(cm_all),
                "markers": asdict(cm_markers),
                "covariates": asdict(cm_covs),
                "marker_mask": m_mask.tolist(),
                "covariate_mask": c_mask.tolist(),
            }

    # bias-reduction refits, deduplicated by mask
    refits = {}
    for key, (c_mask, m_mask) in masks.items():
        sig = (c_mask.tobytes(), m_mask.tobytes())
        if sig not in refits:
            refits[sig] = refit_selected(
                sel_data, c_mask, m_mask, priors,
                _mcmc(config, "refit", sim_seed + 200),
            )

    # landmark risk predictions on the validation set
    pred_cfg = config["prediction"]
    landmarks = pred_cfg["landmarks"]
    window = float(pred_cfg["window"])
    b_valid_true = np.array(truth["random_effects"])[valid_idx]
    coeffs_true = np.zeros((valid.n_subjects, valid.n_markers, 2))
    coeffs_true[:, :, 0] = scen.beta[0] + b_valid_true[:, 0::2]
    coeffs_true[:, :, 1] = scen.beta[1] + b_valid_true[:, 1::2]
    traj_real = PolynomialTrajectories(coeffs_true)
    real_knots = np.array([0.0, max(scen.grid_end * 1.01, max(landmarks) + window + 1e-6)])
    lam_real = np.array([[h] for h in scen.baseline_heights])

    times_v = valid.event_times()
    causes_v = valid.causes()
    omega_v = valid.covariate_matrix()

    for s in landmarks:
        s = float(s)
        at_risk = np.nonzero(times_v > s)[0]
        if at_risk.size == 0:
            continue
        sub = valid.subset(at_risk)
        bhats = [
            predict_random_effects(
                fit, sub, s=s,
                n_kept=config["effects_prediction"]["n_kept"],
                burnin=config["effects_prediction"]["burnin"],
                seed=sim_seed + 300,
            )
            for fit in marker_fits
        ]
        traj_hat = trajectories_from_fits(marker_fits, bhats)
        omega_sub = omega_v[at_risk]

        variants = {}
        for (family, rule), (c_mask, m_mask) in masks.items():
            refit = refits[(c_mask.tobytes(), m_mask.tobytes())]
            g_hat, a_hat, lam_hat = refit.posterior_means()
            variants[f"{family}/{rule}"] = cause1_risks(
                g_hat, a_hat, lam_hat, knots, traj_hat, omega_sub, s, window, n_nodes
            )
        traj_real_sub = PolynomialTrajectories(traj_real.coeffs[at_risk])
        variants["real"] = cause1_risks(
            gammas_true, alphas_true, lam_real, real_knots,
            traj_real_sub, omega_sub, s, window, n_nodes,
        )

        t_sub, d_sub = times_v[at_risk], causes_v[at_risk]
        for name, risks in variants.items():
            record["prediction"].setdefault(name, {})[f"s={s:g}"] = {
                "auc": ipcw_auc(risks, t_sub, d_sub, s, window),
                "bs": ipcw_brier(risks, t_sub, d_sub, s, window),
            }
    return record


def _task(args):
    config, si, ri = args
    return run_replicate(config, si, ri)


def run_grid(config: dict, jobs: int = 1, progress=None) -> list:
    """All (scenario, replicate) records, deterministic regardless of pool order."""
    rep_cfg = config["replicate"]
    tasks = [
        (config, si, ri)
        for si in range(len(rep_cfg["scenarios"]))
        for ri in range(int(rep_cfg["replicates"]))
    ]
    records = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for i, rec in enumerate(pool.map(_task, tasks)):
                records.append(rec)
                if progress:
                    progress(i + 1, len(tasks), rec)
    else:
        for i, t in enumerate(tasks):
            records.append(_task(t))
            if progress:
                progress(i + 1, len(tasks), records[-1])
    return records


def selection_table(records: list) -> pd.DataFrame:
    """Mean/SD of TPR, FPR, MCC per scenario, family/rule and block."""
    rows = []
    scenarios = sorted({r["scenario"] for r in records})
    for scen in scenarios:
        recs = [r for r in records if r["scenario"] == scen]
        keys = sorted({k for r in recs for k in r["selection"]})
        for key in keys:
            family, rule = key.split("/")
            for block in BLOCKS:
                for metric in ("tpr", "fpr", "mcc"):
                    vals = np.array([r["selection"][key][block][metric] for r in recs])
                    rows.append(
                        {
                            "scenario": scen,
                            "family": family,
                            "rule": rule,
                            "block": block,
                            "metric": metric,
                            "est": float(vals.mean()),
                            "sd": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
                            "n": vals.size,
                        }
                    )
    return pd.DataFrame(rows)


def prediction_table(records: list) -> pd.DataFrame:
    """Mean/SD of AUC and Brier score per scenario, variant and landmark."""
    rows = []
    scenarios = sorted({r["scenario"] for r in records})
    for scen in scenarios:
        recs = [r for r in records if r["scenario"] == scen]
        variants = sorted({k for r in recs for k in r["prediction"]})
        for variant in variants:
            landmarks = sorted(
                {s for r in recs for s in r["prediction"].get(variant, {})},
                key=lambda x: float(x.split("=")[1]),
            )
            for skey in landmarks:
                for metric in ("auc", "bs"):
                    vals = np.array(
                        [
                            r["prediction"][variant][skey][metric]
                            for r in recs
                            if skey in r["prediction"].get(variant, {})
                        ]
                    )
                    vals = vals[np.isfinite(vals)]
                    if vals.size == 0:
                        continue
                    rows.append(
                        {
                            "scenario": scen,
                            "variant": variant,
                            "s": float(skey.split("=")[1]),
                            "metric": metric,
                            "est": float(vals.mean()),
                            "sd": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
                            "n": vals.size,
                        }
                    )
    return pd.DataFrame(rows)


def save_records(records: list, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(records, fh)


def load_records(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
