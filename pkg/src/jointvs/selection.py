"""Turn posterior indicator draws into lBFDR values, Bayes factors and decisions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError
from .stage2 import SelectionFit

LBFDR_THRESHOLD = 0.05
BF_THRESHOLD = 1.0

REPORT_COLUMNS = ["name", "cause", "est", "sd", "ci2.5", "ci97.5", "lbfdr", "bf", "selected"]


def lbfdr(indicator_draws) -> float:
    """Fraction of draws with the coefficient excluded (included == 0)."""
    draws = np.asarray(indicator_draws)
    if draws.size < 1:
        raise DataError("lbfdr needs at least one indicator draw")
    return float(np.mean(draws == 0))


def bayes_factor(lbfdr_value: float, a: float = 1.0, b: float = 1.0) -> float:
    """BF = (1 - lBFDR)/lBFDR * b/a; 0 maps to +inf, 1 maps to 0."""
    if not 0.0 <= lbfdr_value <= 1.0:
        raise DataError(f"lbfdr must lie in [0, 1], got {lbfdr_value}")
    if a <= 0 or b <= 0:
        raise DataError("Beta hyperparameters must be positive")
    if lbfdr_value == 0.0:
        return math.inf
    return (1.0 - lbfdr_value) / lbfdr_value * (b / a)


def decide(
    lbfdr_value: float,
    bf_value: float,
    rule: str = "lbfdr",
    lbfdr_threshold: float = LBFDR_THRESHOLD,
    bf_threshold: float = BF_THRESHOLD,
) -> bool:
    """Selection flag under the configured rule; inequalities are strict."""
    if rule == "lbfdr":
        return lbfdr_value < lbfdr_threshold
    if rule == "bf":
        return bf_value > bf_threshold
    raise ConfigError(f"unknown selection rule {rule!r}; expected 'lbfdr' or 'bf'")


@dataclass
class SelectionReport:
    """Per-coefficient posterior summaries and decisions, Table-5 layout."""

    entries: pd.DataFrame
    rule: str
    lbfdr_threshold: float = LBFDR_THRESHOLD
    bf_threshold: float = BF_THRESHOLD

    def mask(self, kind: str) -> np.ndarray:
        """Selected flags as an (L, n) boolean array for 'marker' or 'covariate' rows."""
        sub = self.entries[self.entries["kind"] == kind]
        causes = sorted(sub["cause"].unique())
        names = list(dict.fromkeys(sub["name"]))
        out = np.zeros((len(causes), len(names)), dtype=bool)
        for _, row in sub.iterrows():
            out[causes.index(row["cause"]), names.index(row["name"])] = row["selected"]
        return out


def build_report(
    fit: SelectionFit,
    marker_names,
    covariate_names,
    beta_a: float = 1.0,
    beta_b: float = 1.0,
    rule: str = "lbfdr",
    lbfdr_threshold: float = LBFDR_THRESHOLD,
    bf_threshold: float = BF_THRESHOLD,
) -> SelectionReport:
    """Summarize stage-2 draws into the per-coefficient selection report."""
    rows = []
    n_causes = fit.n_causes
    for l in range(n_causes):
        for kind, names, vals, incl in (
            ("covariate", covariate_names, fit.draws["gamma"], fit.draws["gamma_incl"]),
            ("marker", marker_names, fit.draws["alpha"], fit.draws["alpha_incl"]),
        ):
            for j, name in enumerate(names):
                v = vals[:, l, j]
                fdr = lbfdr(incl[:, l, j])
                bf = bayes_factor(fdr, beta_a, beta_b)
                rows.append(
                    {
                        "name": name,
                        "cause": l + 1,
                        "kind": kind,
                        "est": float(v.mean()),
                        "sd": float(v.std(ddof=1)),
                        "ci2.5": float(np.quantile(v, 0.025)),
                        "ci97.5": float(np.quantile(v, 0.975)),
                        "lbfdr": fdr,
                        "bf": bf,
                        "selected": decide(fdr, bf, rule, lbfdr_threshold, bf_threshold),
                    }
                )
    return SelectionReport(
        entries=pd.DataFrame(rows),
        rule=rule,
        lbfdr_threshold=lbfdr_threshold,
        bf_threshold=bf_threshold,
    )


def report_to_csv(report: SelectionReport, path) -> None:
    """Write the report with the fixed column set; infinite BFs render as 'Inf'."""
    df = report.entries[REPORT_COLUMNS].copy()
    df["bf"] = df["bf"].map(lambda x: "Inf" if math.isinf(x) else f"{x:.6g}")
    df["selected"] = df["selected"].astype(bool)
    df.to_csv(path, index=False)


def report_from_csv(path) -> pd.DataFrame:
    df = pd.read_csv(path)
    missing = [c for c in REPORT_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing report columns {missing}")
    df["bf"] = df["bf"].map(lambda x: math.inf if str(x).strip() == "Inf" else float(x))
    return df
