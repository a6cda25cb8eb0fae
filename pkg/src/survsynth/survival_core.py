"""Cox proportional hazards, Kaplan-Meier, concordance, and calibration.

The Cox fit maximizes the Efron-tie-corrected partial log-likelihood minus a
ridge term (penalizer/2)*||beta||^2 by Newton-Raphson with step-halving, and
carries a Breslow baseline survival curve for absolute-risk predictions.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .data_io import SurvivalDataset

Z_95 = 1.959963984540054  # two-sided 95% normal quantile


class FitError(RuntimeError):
    """Raised when a Cox fit cannot proceed or converge."""

    def __init__(self, message: str, collinear_columns: list | None = None):
        super().__init__(message)
        self.collinear_columns = collinear_columns or []


class CalibrationError(RuntimeError):
    pass


@dataclass
class CoxModel:
    coefficients: np.ndarray
    standard_errors: np.ndarray
    baseline_times: np.ndarray  # ascending unique event times
    baseline_survival: np.ndarray  # S0 at those times, non-increasing, in (0,1]
    penalizer: float
    converged: bool
    n_iterations: int
    feature_names: list[str]

    def to_dict(self) -> dict:
        return {
            "format": "cox-model",
            "version": 1,
            "feature_names": self.feature_names,
            "coefficients": self.coefficients.tolist(),
            "standard_errors": self.standard_errors.tolist(),
            "baseline_times": self.baseline_times.tolist(),
            "baseline_survival": self.baseline_survival.tolist(),
            "penalizer": self.penalizer,
            "converged": self.converged,
            "n_iterations": self.n_iterations,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CoxModel":
        if doc.get("format") != "cox-model":
            raise FitError("not a cox-model document")
        return cls(
            coefficients=np.asarray(doc["coefficients"], dtype=np.float64),
            standard_errors=np.asarray(doc["standard_errors"], dtype=np.float64),
            baseline_times=np.asarray(doc["baseline_times"], dtype=np.float64),
            baseline_survival=np.asarray(doc["baseline_survival"], dtype=np.float64),
            penalizer=float(doc["penalizer"]),
            converged=bool(doc["converged"]),
            n_iterations=int(doc["n_iterations"]),
            feature_names=list(doc["feature_names"]),
        )


def _efron_ll_grad_hess(xs, ts, es, beta, want_derivatives=True):
    """Log partial likelihood (Efron ties) with gradient and Hessian.

    Rows must be sorted ascending by time. Iterates unique times from last to
    first, growing the risk-set accumulators: xp0 = sum of w, xp1 = sum of w*x,
    xp2 = sum of w*x*x^T over the current risk set, with w = exp(lp - max lp).
    The centering cancels in all three quantities.
    """
    n, p = xs.shape
    lp = xs @ beta
    lp -= lp.max()
    w = np.exp(lp)

    boundaries = np.flatnonzero(np.diff(ts)) + 1
    starts = np.concatenate([[0], boundaries])
    stops = np.concatenate([boundaries, [n]])

    ll = 0.0
    grad = np.zeros(p)
    hess = np.zeros((p, p))
    xp0 = 0.0
    xp1 = np.zeros(p)
    xp2 = np.zeros((p, p))
    for gi in range(len(starts) - 1, -1, -1):
        rows = slice(starts[gi], stops[gi])
        wv = w[rows]
        xv = xs[rows]
        xp0 += wv.sum()
        xp1 += wv @ xv
        if want_derivatives:
            xp2 += (xv * wv[:, None]).T @ xv

        fail = es[rows] == 1.0
        d = int(fail.sum())
        if d == 0:
            continue
        xf = xv[fail]
        wf = wv[fail]
        wf0 = wf.sum()
        wf1 = wf @ xf
        j = np.arange(d) / d
        c0 = xp0 - j * wf0
        ll += lp[rows][fail].sum() - np.log(c0).sum()
        if not want_derivatives:
            continue
        num1 = xp1[None, :] - np.outer(j, wf1)  # (d, p)
        ratio = num1 / c0[:, None]
        grad += xf.sum(axis=0) - ratio.sum(axis=0)
        wf2 = (xf * wf[:, None]).T @ xf
        term2 = (xp2[None, :, :] - j[:, None, None] * wf2[None, :, :]) / c0[:, None, None]
        hess -= term2.sum(axis=0) - np.einsum("lp,lq->pq", ratio, ratio)
    if want_derivatives:
        return ll, grad, hess
    return ll


def partial_loglik(dataset: SurvivalDataset, beta: np.ndarray, penalizer: float = 0.0) -> float:
    """Penalized Efron partial log-likelihood at an arbitrary beta (diagnostics/oracles)."""
    order = np.argsort(dataset.durations, kind="stable")
    ll = _efron_ll_grad_hess(
        dataset.features[order], dataset.durations[order], dataset.events[order],
        np.asarray(beta, dtype=np.float64), want_derivatives=False,
    )
    return float(ll - 0.5 * penalizer * np.dot(beta, beta))


def partial_loglik_gradient(dataset: SurvivalDataset, beta: np.ndarray, penalizer: float = 0.0) -> np.ndarray:
    order = np.argsort(dataset.durations, kind="stable")
    _, grad, _ = _efron_ll_grad_hess(
        dataset.features[order], dataset.durations[order], dataset.events[order],
        np.asarray(beta, dtype=np.float64),
    )
    return grad - penalizer * np.asarray(beta, dtype=np.float64)


def _most_collinear_columns(x: np.ndarray, names: list[str]) -> list[str]:
    sd = x.std(axis=0)
    keep = sd > 0
    if keep.sum() < 2:
        return [names[i] for i in np.nonzero(~keep)[0]]
    xs = (x[:, keep] - x[:, keep].mean(axis=0)) / sd[keep]
    corr = (xs.T @ xs) / len(x)
    np.fill_diagonal(corr, 0.0)
    i, j = np.unravel_index(np.argmax(np.abs(corr)), corr.shape)
    kept_names = [names[k] for k in np.nonzero(keep)[0]]
    return sorted({kept_names[i], kept_names[j]})


def _breslow_baseline(xs, ts, es, beta):
    """Breslow baseline survival at the unique event times (sorted input)."""
    lp = xs @ beta
    shift = lp.max()
    w = np.exp(lp - shift)
    # risk-set denominator at each row's time = sum of w over rows with t >= that time
    w_rev_cumsum = np.cumsum(w[::-1])[::-1]
    event_times = []
    increments = []
    i = 0
    n = len(ts)
    while i < n:
        j = i
        while j < n and ts[j] == ts[i]:
            j += 1
        d = int(es[i:j].sum())
        if d > 0:
            denominator = w_rev_cumsum[i] * math.exp(shift)
            event_times.append(ts[i])
            increments.append(d / denominator)
        i = j
    h0 = np.cumsum(increments)
    return np.asarray(event_times), np.exp(-h0)


def fit_coxph(
    dataset: SurvivalDataset,
    penalizer: float = 1e-4,
    max_iter: int = 100,
    tol: float = 1e-7,
) -> CoxModel:
    """Newton-Raphson Cox fit with Efron ties, ridge penalty, and step-halving."""
    x = dataset.features
    if np.any(np.isnan(x)):
        raise FitError("features contain missing cells; impute first")
    if penalizer < 0:
        raise FitError("penalizer must be >= 0")
    if dataset.events.sum() < 1:
        raise FitError("no events in dataset")
    constant = [dataset.specs[j].name for j in range(x.shape[1]) if np.ptp(x[:, j]) == 0.0]
    if constant:
        raise FitError(f"constant feature columns: {constant}", collinear_columns=constant)

    order = np.argsort(dataset.durations, kind="stable")
    xs = np.ascontiguousarray(x[order])
    ts = dataset.durations[order]
    es = dataset.events[order]
    p = x.shape[1]

    beta = np.zeros(p)
    ll, grad, hess = _efron_ll_grad_hess(xs, ts, es, beta)
    ll -= 0.5 * penalizer * beta @ beta
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        grad_pen = grad - penalizer * beta
        hess_pen = hess - penalizer * np.eye(p)
        try:
            delta = np.linalg.solve(-hess_pen, grad_pen)
        except np.linalg.LinAlgError:
            raise FitError(
                "singular information matrix; near-collinear columns: "
                f"{_most_collinear_columns(xs, dataset.feature_names)}",
                collinear_columns=_most_collinear_columns(xs, dataset.feature_names),
            )
        if not np.all(np.isfinite(delta)):
            raise FitError("non-finite Newton step")
        if np.max(np.abs(delta)) < tol:
            converged = True
            break

        # step-halving guards fits on near-collinear data; acceptance is relative
        # because the log-likelihood magnitude grows with n
        step = 1.0
        ll_floor = ll - 1e-9 * (abs(ll) + 1.0)
        for _ in range(11):
            candidate = beta + step * delta
            new_ll, new_grad, new_hess = _efron_ll_grad_hess(xs, ts, es, candidate)
            new_ll -= 0.5 * penalizer * candidate @ candidate
            if np.isfinite(new_ll) and new_ll >= ll_floor:
                break
            step *= 0.5
        else:
            raise FitError("step-halving exhausted without likelihood improvement")
        beta = beta + step * delta
        ll, grad, hess = new_ll, new_grad, new_hess
        if np.max(np.abs(step * delta)) < tol:
            converged = True
            break
    if not converged:
        raise FitError(f"no convergence in {max_iter} Newton iterations")

    info = -(hess - penalizer * np.eye(p))
    try:
        covariance = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cols = _most_collinear_columns(xs, dataset.feature_names)
        raise FitError(f"singular information matrix; near-collinear columns: {cols}", cols)
    se = np.sqrt(np.clip(np.diag(covariance), 0.0, None))

    baseline_times, baseline_survival = _breslow_baseline(xs, ts, es, beta)
    return CoxModel(
        coefficients=beta,
        standard_errors=se,
        baseline_times=baseline_times,
        baseline_survival=baseline_survival,
        penalizer=penalizer,
        converged=converged,
        n_iterations=iterations,
        feature_names=dataset.feature_names,
    )


def log_partial_hazard(model: CoxModel, features: np.ndarray) -> np.ndarray:
    """X @ beta per row."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != len(model.coefficients):
        raise FitError(
            f"feature width {features.shape[-1]} does not match {len(model.coefficients)} coefficients"
        )
    return features @ model.coefficients


@dataclass
class HREntry:
    name: str
    hr: float
    ci_low: float
    ci_high: float
    contains_one: bool = field(init=False)

    def __post_init__(self):
        self.contains_one = self.ci_low <= 1.0 <= self.ci_high


@dataclass
class HRTable:
    entries: list[HREntry]

    def by_name(self, name: str) -> HREntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            e.name: {"hr": e.hr, "ci_low": e.ci_low, "ci_high": e.ci_high, "contains_one": e.contains_one}
            for e in self.entries
        }


def hazard_ratio_table(model: CoxModel) -> HRTable:
    """exp(beta) with 95% Wald intervals exp(beta +/- 1.96 se)."""
    entries = [
        HREntry(
            name=name,
            hr=float(np.exp(b)),
            ci_low=float(np.exp(b - Z_95 * s)),
            ci_high=float(np.exp(b + Z_95 * s)),
        )
        for name, b, s in zip(model.feature_names, model.coefficients, model.standard_errors)
    ]
    return HRTable(entries)


@dataclass
class KMCurve:
    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    events_at: np.ndarray

    def survival_at(self, t) -> np.ndarray:
        """Step-function evaluation; 1 before the first event time."""
        t = np.asarray(t, dtype=np.float64)
        idx = np.searchsorted(self.times, t, side="right")
        padded = np.concatenate([[1.0], self.survival])
        return padded[idx]

    def to_dict(self) -> dict:
        return {
            "times": self.times.tolist(),
            "survival": self.survival.tolist(),
            "at_risk": self.at_risk.tolist(),
            "events_at": self.events_at.tolist(),
        }


def kaplan_meier(durations: np.ndarray, events: np.ndarray) -> KMCurve:
    """Product-limit estimator defined at the distinct event times."""
    durations = np.asarray(durations, dtype=np.float64)
    events = np.asarray(events, dtype=np.float64)
    if len(durations) == 0:
        raise ValueError("empty input")
    if len(durations) != len(events):
        raise ValueError("durations and events must have equal length")
    order = np.argsort(durations, kind="stable")
    ts = durations[order]
    es = events[order]
    n = len(ts)

    times = []
    at_risk = []
    events_at = []
    i = 0
    while i < n:
        j = i
        while j < n and ts[j] == ts[i]:
            j += 1
        d = int(es[i:j].sum())
        if d > 0:
            times.append(ts[i])
            at_risk.append(n - i)
            events_at.append(d)
        i = j
    times = np.asarray(times)
    at_risk = np.asarray(at_risk, dtype=np.int64)
    events_at = np.asarray(events_at, dtype=np.int64)
    survival = np.cumprod(1.0 - events_at / at_risk) if len(times) else np.empty(0)
    return KMCurve(times, survival, at_risk, events_at)


def concordance_index(durations, events, risk_scores) -> float:
    """Harrell's C over comparable pairs.

    The earlier member of a pair must be an event; equal-duration pairs are
    comparable only when exactly one member is an event. Tied risk scores
    contribute 0.5.
    """
    t = np.asarray(durations, dtype=np.float64)
    e = np.asarray(events, dtype=np.float64)
    r = np.asarray(risk_scores, dtype=np.float64)
    if not (len(t) == len(e) == len(r)):
        raise ValueError("durations, events, and risk_scores must have equal length")
    concordant = 0.0
    comparable = 0
    for i in np.nonzero(e == 1.0)[0]:
        later = (t > t[i]) | ((t == t[i]) & (e == 0.0))
        m = int(later.sum())
        if m == 0:
            continue
        comparable += m
        rj = r[later]
        concordant += float(np.sum(r[i] > rj)) + 0.5 * float(np.sum(r[i] == rj))
    if comparable == 0:
        raise ValueError("no comparable pairs")
    return concordant / comparable


def _baseline_survival_at(model: CoxModel, t: float) -> float:
    if len(model.baseline_times) == 0:
        return 1.0
    idx = int(np.searchsorted(model.baseline_times, t, side="right"))
    if idx == 0:
        return 1.0
    # flat extrapolation beyond the last event time
    return float(model.baseline_survival[min(idx, len(model.baseline_survival)) - 1])


def predicted_risk_at(model: CoxModel, features: np.ndarray, t: float) -> np.ndarray:
    """Per-row probability of an event by time t: 1 - S0(t)^exp(lp)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    lp = log_partial_hazard(model, features)
    s0 = _baseline_survival_at(model, t)
    if s0 <= 0.0:
        return np.ones_like(lp)
    return 1.0 - np.exp(np.exp(lp) * math.log(s0))


@dataclass
class CalibrationResult:
    slope: float
    d_delta1: float
    points: list[tuple[float, float]]  # (mean predicted risk, observed risk) per bin
    time_horizon: float

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "d_delta1": self.d_delta1,
            "time_horizon": self.time_horizon,
            "points": [[p, o] for p, o in self.points],
        }


def calibration(
    model: CoxModel,
    dataset: SurvivalDataset,
    t: float,
    n_bins: int = 10,
) -> CalibrationResult:
    """Observed-vs-predicted risk across quantile bins at horizon t.

    Observed risk per bin is 1 - KM(t) within the bin, so censoring before t
    does not bias it. The slope comes from unweighted least squares of observed
    on predicted across bin points (intercept fitted and discarded).
    """
    if n_bins < 2:
        raise CalibrationError("n_bins must be >= 2")
    if dataset.n_rows < n_bins:
        raise CalibrationError("fewer rows than bins")
    predicted = predicted_risk_at(model, dataset.features, t)
    if np.ptp(predicted) < 1e-12:
        raise CalibrationError("degenerate bins: constant predicted risk")

    order = np.argsort(predicted, kind="stable")
    bins = np.array_split(order, n_bins)
    points: list[tuple[float, float]] = []
    for b, rows in enumerate(bins):
        if np.sum(dataset.durations[rows] >= t) == 0:
            raise CalibrationError(f"bin {b} has zero at-risk subjects at t={t:g}")
        km = kaplan_meier(dataset.durations[rows], dataset.events[rows])
        observed = 1.0 - float(km.survival_at(t))
        points.append((float(predicted[rows].mean()), observed))

    xs = np.array([p for p, _ in points])
    ys = np.array([o for _, o in points])
    var = np.var(xs)
    if var <= 0.0:
        raise CalibrationError("degenerate bins: identical bin means")
    slope = float(np.cov(xs, ys, ddof=0)[0, 1] / var)
    return CalibrationResult(slope=slope, d_delta1=abs(slope - 1.0), points=points, time_horizon=t)
