"""Selection and prediction accuracy: confusion metrics and IPCW AUC/Brier.

The censoring distribution is estimated by Kaplan-Meier on the landmark
at-risk set with censorings as the terminal events; ties resolve with events
before censorings.  Cause-2 events inside the prediction window count as
controls for cause-1 discrimination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class ConfusionMetrics:
    tpr: float
    fpr: float
    mcc: float
    mcc_degenerate: bool = False


def confusion_metrics(selected, truth) -> ConfusionMetrics:
    """TPR, FPR and Matthews correlation of a selection mask against truth.

    A zero factor in the MCC denominator flags the result degenerate and
    returns MCC = 0.
    """
    sel = np.asarray(selected, dtype=bool).ravel()
    tru = np.asarray(truth, dtype=bool).ravel()
    if sel.shape != tru.shape or sel.size < 1:
        raise DataError(f"mask lengths differ or empty: {sel.shape} vs {tru.shape}")
    tp = float(np.sum(sel & tru))
    tn = float(np.sum(~sel & ~tru))
    fp = float(np.sum(sel & ~tru))
    fn = float(np.sum(~sel & tru))
    tpr = tp / (tp + fn) if tp + fn > 0 else 0.0
    fpr = fp / (fp + tn) if fp + tn > 0 else 0.0
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return ConfusionMetrics(tpr, fpr, 0.0, mcc_degenerate=True)
    mcc = (tp * tn - fp * fn) / np.sqrt(denom)
    return ConfusionMetrics(tpr, fpr, float(mcc), mcc_degenerate=False)


class CensoringKM:
    """Kaplan-Meier estimate of the censoring survival G(t) = P(C > t).

    Censorings (cause 0) are the events of this estimator; subjects whose
    outcome occurs at the same timestamp leave the risk set first.
    """

    def __init__(self, times, causes):
        times = np.asarray(times, dtype=float)
        causes = np.asarray(causes, dtype=int)
        order = np.argsort(times, kind="stable")
        times, causes = times[order], causes[order]
        jump_times = []
        factors = []
        for t in np.unique(times[causes == 0]):
            at_risk = float(np.sum(times >= t))
            events_here = float(np.sum((times == t) & (causes != 0)))
            cens_here = float(np.sum((times == t) & (causes == 0)))
            denom = at_risk - events_here
            if denom <= 0:
                factor = 0.0
            else:
                factor = max(0.0, 1.0 - cens_here / denom)
            jump_times.append(t)
            factors.append(factor)
        self.jump_times = np.asarray(jump_times)
        self.survival_after = np.cumprod(factors) if factors else np.empty(0)

    def left(self, t):
        """G(t-): product of factors at jump times strictly before t."""
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.jump_times, t, side="left")
        out = np.where(idx == 0, 1.0, self.survival_after[np.maximum(idx - 1, 0)]
                       if self.survival_after.size else 1.0)
        return out if out.ndim else float(out)


def _landmark_parts(risks, times, causes, s, t):
    risks = np.asarray(risks, dtype=float)
    times = np.asarray(times, dtype=float)
    causes = np.asarray(causes, dtype=int)
    at_risk = times > s
    if risks.shape != times.shape:
        raise DataError("risks and observed times must align")
    r, tt, dd = risks[at_risk], times[at_risk], causes[at_risk]
    horizon = s + t
    case = (tt <= horizon) & (dd == 1)
    control = (tt > horizon) | ((tt <= horizon) & (dd >= 2))
    km = CensoringKM(tt, dd)
    g = km.left(np.minimum(tt, horizon))
    with np.errstate(divide="ignore"):
        w = np.where(g > 0, 1.0 / g, 0.0)
    # subjects censored inside the window carry no weight
    w = np.where((dd == 0) & (tt <= horizon), 0.0, w)
    return r, case, control, w


def ipcw_auc(risks, times, causes, s: float, t: float) -> float:
    """IPCW AUC for cause-1 risk over (s, s+t] among subjects at risk at s.

    Returns NaN when the window holds no cases or no controls.
    """
    r, case, control, w = _landmark_parts(risks, times, causes, s, t)
    if not case.any() or not control.any():
        return float("nan")
    rc, wc = r[case], w[case]
    rk, wk = r[control], w[control]
    gt = (rc[:, None] > rk[None, :]).astype(float)
    eq = (rc[:, None] == rk[None, :]).astype(float)
    num = np.sum(wc[:, None] * wk[None, :] * (gt + 0.5 * eq))
    den = np.sum(wc) * np.sum(wk)
    if den == 0:
        return float("nan")
    return float(num / den)


def ipcw_brier(risks, times, causes, s: float, t: float) -> float:
    """IPCW Brier score of cause-1 risk over (s, s+t] among subjects at risk at s."""
    r, case, control, w = _landmark_parts(risks, times, causes, s, t)
    n = r.size
    if n == 0:
        return float("nan")
    d = case.astype(float)
    return float(np.sum(w * (d - r) ** 2) / n)


def landmark_case_control_counts(times, causes, s: float, t: float):
    """(n_cases, n_controls) in the window, for reporting."""
    times = np.asarray(times, dtype=float)
    causes = np.asarray(causes, dtype=int)
    at_risk = times > s
    tt, dd = times[at_risk], causes[at_risk]
    horizon = s + t
    n_cases = int(np.sum((tt <= horizon) & (dd == 1)))
    n_controls = int(np.sum((tt > horizon) | ((tt <= horizon) & (dd >= 2))))
    return n_cases, n_controls
