"""Seeded stand-in versions of the four benchmark survival datasets.

The public GBSG2 / ACTG320 / WHAS500 / FLChain tables cannot be redistributed
with this package, so this module simulates datasets with the same schemas,
marginal distributions, and survival structure: covariates follow the published
summary statistics, event times come from a Weibull proportional-hazards law
using the published coefficient estimates, and censoring is tuned to the
published event rates and duration quartiles. The resulting tables exercise
every pipeline stage end to end; they are not the real study data and fits on
them reproduce the published hazard ratios only up to sampling noise.

Usage: python -m survsynth.demo_data --out DIR [--dataset NAME]
"""

import argparse
import importlib.resources
from pathlib import Path

import numpy as np

from .data_io import DatasetSchema, SurvivalDataset, load_schema, save_schema, write_dataset

DATASET_NAMES = ("gbsg2", "actg320", "whas500", "flchain")


def packaged_schema(name: str) -> DatasetSchema:
    """Load one of the four benchmark schemas shipped with the package."""
    if name not in DATASET_NAMES:
        raise ValueError(f"unknown dataset {name!r}; expected one of {DATASET_NAMES}")
    ref = importlib.resources.files("survsynth") / "schemas" / f"{name}.json"
    with importlib.resources.as_file(ref) as path:
        return load_schema(path)


def _simulate_durations(lp, rng, shape, scale, censor_lo, censor_hi, censor_beta=None, integer=True):
    """Weibull PH event times against an enrollment-style censoring window."""
    n = len(lp)
    u = rng.random(n)
    t_event = scale * np.power(-np.log(u) / np.exp(lp), 1.0 / shape)
    if censor_beta is None:
        t_censor = rng.uniform(censor_lo, censor_hi, size=n)
    else:
        a, b = censor_beta
        t_censor = censor_lo + (censor_hi - censor_lo) * rng.beta(a, b, size=n)
    events = (t_event <= t_censor).astype(np.float64)
    durations = np.minimum(t_event, t_censor)
    if integer:
        durations = np.maximum(np.round(durations), 1.0)
    return durations, events


def _multinomial_column(rng, n, probs):
    """Category index per row for a (p0, p1, ...) specification."""
    return rng.choice(len(probs), size=n, p=np.asarray(probs) / np.sum(probs))


def make_gbsg2(seed: int = 2201) -> SurvivalDataset:
    """686 breast-cancer-study rows; all twelve features binary."""
    rng = np.random.default_rng(seed)
    n = 686
    age_cat = _multinomial_column(rng, n, (0.1808, 0.5306, 0.2886))
    meno_p = np.select([age_cat == 0, age_cat == 1], [0.04, 0.52], default=0.88)
    menopause = (rng.random(n) < meno_p).astype(float)
    size_cat = _multinomial_column(rng, n, (0.258, 0.43, 0.312))
    node_probs = np.array([[0.64, 0.27, 0.09], [0.56, 0.30, 0.14], [0.47, 0.33, 0.20]])
    nodes_cat = np.array([_multinomial_column(rng, 1, node_probs[c])[0] for c in size_cat])
    grade_cat = _multinomial_column(rng, n, (0.1152, 0.672, 0.2128))
    prog = (rng.random(n) < 0.3746).astype(float)
    oest_p = np.where(prog == 1.0, 0.70, 0.1845)
    oest = (rng.random(n) < oest_p).astype(float)
    therapy = (rng.random(n) < 0.3397).astype(float)

    features = np.column_stack(
        [
            (age_cat == 1).astype(float),
            (age_cat == 2).astype(float),
            menopause,
            (size_cat == 1).astype(float),
            (size_cat == 2).astype(float),
            (grade_cat == 1).astype(float),
            (grade_cat == 2).astype(float),
            (nodes_cat == 1).astype(float),
            (nodes_cat == 2).astype(float),
            prog,
            oest,
            therapy,
        ]
    )
    beta = np.array([-0.45, -0.43, 0.27, 0.20, 0.27, 0.55, 0.56, 0.68, 1.25, 0.61, 0.00, -0.41])
    durations, events = _simulate_durations(
        features @ beta, rng, shape=1.2, scale=6000.0, censor_lo=400.0, censor_hi=2900.0
    )
    schema = packaged_schema("gbsg2")
    return SurvivalDataset(features, list(schema.features), durations, events, name="gbsg2")


def make_actg320(seed: int = 2202) -> SurvivalDataset:
    """1151 HIV-trial rows; low event rate, administrative censoring."""
    rng = np.random.default_rng(seed)
    n = 1151
    age = np.clip(np.round(rng.lognormal(np.log(38.0), 0.23, n)), 18, 75)
    sex_male = (rng.random(n) < 0.8566).astype(float)
    cd4 = (rng.random(n) < 0.5256).astype(float)
    treatment = (rng.random(n) < 0.4970).astype(float)
    impairment = _multinomial_column(rng, n, (0.35, 0.48, 0.13, 0.04)).astype(float)
    zdv = np.clip(np.round(rng.lognormal(np.log(20.0), 0.9, n)), 0, 240)

    features = np.column_stack([age, sex_male, cd4, treatment, impairment, zdv])
    beta = np.array([0.0198, -0.0726, -0.8916, -0.6733, 0.6575, 0.0])
    lp = features @ beta
    lp -= lp.mean()
    durations, events = _simulate_durations(
        lp, rng, shape=1.0, scale=3400.0, censor_lo=30.0, censor_hi=364.0, censor_beta=(2.5, 1.2)
    )
    schema = packaged_schema("actg320")
    return SurvivalDataset(features, list(schema.features), durations, events, name="actg320")


def make_whas500(seed: int = 2203) -> SurvivalDataset:
    """500 heart-attack-study rows with correlated vitals."""
    rng = np.random.default_rng(seed)
    n = 500
    corr = np.eye(5)
    corr[0, 1] = corr[1, 0] = -0.30  # age vs bmi
    corr[3, 4] = corr[4, 3] = 0.60  # sysbp vs diasbp
    corr[2, 4] = corr[4, 2] = 0.20  # heart rate vs diasbp
    z = rng.multivariate_normal(np.zeros(5), corr, size=n, method="cholesky")
    age = np.clip(np.round(70.0 + 14.0 * z[:, 0]), 30, 104)
    bmi = np.round(25.67 * np.exp(0.175 * z[:, 1]), 2)
    heart_rate = np.round(80.5 * np.exp(0.2137 * z[:, 2]), 2)
    sysbp = np.round(np.clip(149.0 + 35.0 * z[:, 3], 70, 270), 2)
    diasbp = np.round(np.clip(76.3 + 30.0 * z[:, 4], 8, 190), 2)
    older = (age - 70.0) / 14.0
    sex_female = (rng.random(n) < _sigmoid(-0.60 + 0.45 * older)).astype(float)
    cvd = (rng.random(n) < 0.802).astype(float)
    af = (rng.random(n) < _sigmoid(-2.15 + 0.45 * older)).astype(float)
    chf = (rng.random(n) < _sigmoid(-0.95 + 0.40 * older)).astype(float)
    mi_recurrent = (rng.random(n) < 0.316).astype(float)
    mi_qwave = (rng.random(n) < 0.294).astype(float)

    features = np.column_stack(
        [age, bmi, sex_female, heart_rate, sysbp, diasbp, cvd, af, chf, mi_recurrent, mi_qwave]
    )
    beta = np.array(
        [0.0488, -0.0408, -0.274, 0.00995, 0.0, -0.0101, 0.00995, 0.131, 0.7747, 0.0392, -0.1625]
    )
    lp = features @ beta
    lp -= lp.mean()
    durations, events = _simulate_durations(
        lp, rng, shape=0.6, scale=4100.0, censor_lo=300.0, censor_hi=2100.0
    )
    schema = packaged_schema("whas500")
    return SurvivalDataset(features, list(schema.features), durations, events, name="whas500")


def make_flchain(seed: int = 2204, missing_creatinine: float = 0.06) -> SurvivalDataset:
    """7874 serum-free-light-chain rows, with missing creatinine cells for imputation."""
    rng = np.random.default_rng(seed)
    n = 7874
    age_bracket = (_multinomial_column(rng, n, (0.40, 0.33, 0.17, 0.08, 0.02)) + 5).astype(float)
    sex_male = (rng.random(n) < 0.446).astype(float)
    common = rng.standard_normal(n)
    kappa = np.round(1.23 * np.exp(0.445 * (0.65 * common + 0.76 * rng.standard_normal(n))), 3)
    lam = np.round(1.53 * np.exp(0.336 * (0.65 * common + 0.76 * rng.standard_normal(n))), 3)
    total = kappa + lam
    flc_decile = (np.argsort(np.argsort(total)) * 10 // n + 1).astype(float)
    flc_top = (flc_decile == 10).astype(float)
    creatinine = np.round(
        1.00 * np.exp(0.20 * rng.standard_normal(n) + 0.09 * sex_male + 0.02 * (age_bracket - 6)), 2
    )

    features = np.column_stack(
        [age_bracket, sex_male, creatinine, flc_top, flc_decile, kappa, lam, (rng.random(n) < 0.0126).astype(float)]
    )
    beta = np.array([0.936, 0.262, 0.049, 0.329, 0.049, 0.0296, 0.122, 0.131])
    lp = features @ beta
    lp -= lp.mean()
    durations, events = _simulate_durations(
        lp, rng, shape=1.0, scale=18000.0, censor_lo=1200.0, censor_hi=5215.0, censor_beta=(2.6, 0.7)
    )
    if missing_creatinine > 0:
        holes = rng.random(n) < missing_creatinine
        features[holes, 2] = np.nan
    schema = packaged_schema("flchain")
    return SurvivalDataset(features, list(schema.features), durations, events, name="flchain")


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


MAKERS = {
    "gbsg2": make_gbsg2,
    "actg320": make_actg320,
    "whas500": make_whas500,
    "flchain": make_flchain,
}


def make_dataset(name: str, seed: int | None = None) -> SurvivalDataset:
    if name not in MAKERS:
        raise ValueError(f"unknown dataset {name!r}; expected one of {DATASET_NAMES}")
    return MAKERS[name]() if seed is None else MAKERS[name](seed)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="output directory for CSV + schema files")
    parser.add_argument("--dataset", choices=DATASET_NAMES, help="only this dataset (default: all)")
    args = parser.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = [args.dataset] if args.dataset else list(DATASET_NAMES)
    for name in names:
        ds = make_dataset(name)
        write_dataset(ds, out / f"{name}.csv")
        save_schema(packaged_schema(name), out / f"{name}.schema.json")
        print(f"{name}: {ds.n_rows} rows, event rate {ds.events.mean():.4f} -> {out / (name + '.csv')}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
