"""Comparison generators and resamplers: SMOTE, ADASYN, undersamplers, VAE, WGAN, ensembles.

Class labels for the imbalance methods come from the Event indicator (minority =
the rarer value). Neighbor searches run in the preprocessed feature space plus a
min-max-scaled duration axis so unscaled durations cannot dominate distances.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data_io import (
    BINARY,
    MULTI_BINARY,
    NUMERIC,
    SurvivalDataset,
    concat_datasets,
    resolve_groups,
)
from .neural import (
    AdamState,
    DenseNet,
    Linear,
    NeuralError,
    ReLU,
    Sigmoid,
    adam_step,
    mse_loss,
)
from .preprocess import PreprocessState, apply_preprocess, boxcox_inverse, preprocess
from .survival_core import fit_coxph, log_partial_hazard

VAE_LATENT_DIM = 32
WGAN_LATENT_DIM = 32
KL_WEIGHT = 0.001
CORRELATION_WEIGHT = 0.1
CORR_EPS = 1e-5


@dataclass
class ResamplePlan:
    method: str = "smote"  # smote | adasyn | random_under | tomek | ncr | none
    k_neighbors: int = 5
    target_ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if not (0.0 < self.target_ratio <= 1.0):
            raise ValueError("target_ratio must be in (0, 1]")


def _minority_label(events: np.ndarray) -> float:
    ones = float(np.sum(events == 1.0))
    return 1.0 if ones <= len(events) - ones else 0.0


def _neighbor_space(dataset: SurvivalDataset) -> np.ndarray:
    """Preprocessed features plus a min-max-scaled duration column."""
    tau, _ = preprocess(dataset)
    span = np.ptp(dataset.durations)
    scaled = (dataset.durations - dataset.durations.min()) / span if span > 0 else np.zeros(dataset.n_rows)
    return np.column_stack([tau, scaled])


def _knn_indices(query: np.ndarray, pool: np.ndarray, k: int, skip_identity_offset: int | None = None):
    """Indices of the k nearest pool rows per query row (chunked brute force).

    When `skip_identity_offset` is given, query row i is assumed to be pool row
    i + offset and is excluded from its own neighbor list.
    """
    nq = query.shape[0]
    out = np.empty((nq, k), dtype=np.int64)
    chunk = max(1, int(2**22 // max(pool.shape[0], 1)))
    for start in range(0, nq, chunk):
        stop = min(start + chunk, nq)
        d2 = ((query[start:stop, None, :] - pool[None, :, :]) ** 2).sum(axis=2)
        if skip_identity_offset is not None:
            rows = np.arange(start, stop) + skip_identity_offset
            d2[np.arange(stop - start), rows] = np.inf
        out[start:stop] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def _round_binaries(features: np.ndarray, specs) -> None:
    for j, s in enumerate(specs):
        if s.kind in (BINARY, MULTI_BINARY):
            features[:, j] = np.where(features[:, j] >= 0.5, 1.0, 0.0)


def _interpolated_rows(dataset, plan, minority_idx, counts_per_row, rng):
    """SMOTE-style linear interpolation between minority rows and their minority neighbors."""
    space = _neighbor_space(dataset)
    minority_space = space[minority_idx]
    k = plan.k_neighbors
    if k >= len(minority_idx):
        raise ValueError(f"k_neighbors={k} must be smaller than the minority size {len(minority_idx)}")
    neighbors = _knn_indices(minority_space, minority_space, k, skip_identity_offset=0)

    new_features = []
    new_durations = []
    for local_i, count in enumerate(counts_per_row):
        for _ in range(count):
            local_j = neighbors[local_i, rng.integers(k)]
            lam = rng.random()
            xi = dataset.features[minority_idx[local_i]]
            xj = dataset.features[minority_idx[local_j]]
            di = dataset.durations[minority_idx[local_i]]
            dj = dataset.durations[minority_idx[local_j]]
            new_features.append(xi + lam * (xj - xi))
            new_durations.append(di + lam * (dj - di))
    if not new_features:
        return dataset.copy()
    feats = np.asarray(new_features)
    _round_binaries(feats, dataset.specs)
    resolve_groups(feats, dataset.specs)
    label = _minority_label(dataset.events)
    addition = SurvivalDataset(
        features=feats,
        specs=list(dataset.specs),
        durations=np.asarray(new_durations),
        events=np.full(len(feats), label),
        name=dataset.name,
        duration_column=dataset.duration_column,
        event_column=dataset.event_column,
    )
    return concat_datasets(dataset, addition)


def _n_to_make(n_minority: int, n_majority: int, target_ratio: float) -> int:
    return max(0, int(round(target_ratio * n_majority)) - n_minority)


def smote_augment(dataset: SurvivalDataset, plan: ResamplePlan) -> SurvivalDataset:
    """Append interpolated minority rows (features AND duration interpolate)."""
    rng = np.random.default_rng(plan.seed)
    label = _minority_label(dataset.events)
    minority_idx = np.nonzero(dataset.events == label)[0]
    majority = dataset.n_rows - len(minority_idx)
    if len(minority_idx) <= plan.k_neighbors:
        raise ValueError("minority class too small for k_neighbors")
    total = _n_to_make(len(minority_idx), majority, plan.target_ratio)
    counts = np.bincount(rng.integers(len(minority_idx), size=total), minlength=len(minority_idx))
    return _interpolated_rows(dataset, plan, minority_idx, counts, rng)


def adasyn_augment(dataset: SurvivalDataset, plan: ResamplePlan) -> SurvivalDataset:
    """SMOTE with per-row sample counts allocated by classification difficulty."""
    rng = np.random.default_rng(plan.seed)
    label = _minority_label(dataset.events)
    minority_idx = np.nonzero(dataset.events == label)[0]
    majority = dataset.n_rows - len(minority_idx)
    if len(minority_idx) <= plan.k_neighbors:
        raise ValueError("minority class too small for k_neighbors")
    total = _n_to_make(len(minority_idx), majority, plan.target_ratio)

    space = _neighbor_space(dataset)
    # request one extra neighbor: a minority row's own position ranks first and is dropped
    k_query = min(plan.k_neighbors + 1, dataset.n_rows)
    neighbors = _knn_indices(space[minority_idx], space, k_query, skip_identity_offset=None)
    difficulties = np.empty(len(minority_idx))
    for i, mi in enumerate(minority_idx):
        nb = [j for j in neighbors[i] if j != mi][: plan.k_neighbors]
        difficulties[i] = float(np.mean(dataset.events[nb] != label)) if nb else 0.0
    counts = _largest_remainder_allocation(difficulties, total)
    return _interpolated_rows(dataset, plan, minority_idx, counts, rng)


def _largest_remainder_allocation(weights: np.ndarray, total: int) -> np.ndarray:
    """Integer allocation proportional to weights; uniform fallback when all are zero."""
    if total == 0:
        return np.zeros(len(weights), dtype=np.int64)
    if np.sum(weights) == 0.0:
        weights = np.ones_like(weights)
    quota = weights / weights.sum() * total
    base = np.floor(quota).astype(np.int64)
    short = total - int(base.sum())
    if short > 0:
        order = np.argsort(-(quota - base), kind="stable")
        base[order[:short]] += 1
    return base


def random_undersample(dataset: SurvivalDataset, plan: ResamplePlan) -> SurvivalDataset:
    """Subsample the majority class (without replacement) down to the minority count."""
    rng = np.random.default_rng(plan.seed)
    label = _minority_label(dataset.events)
    minority_idx = np.nonzero(dataset.events == label)[0]
    majority_idx = np.nonzero(dataset.events != label)[0]
    keep_majority = min(len(majority_idx), int(round(len(minority_idx) / plan.target_ratio)))
    chosen = rng.choice(majority_idx, size=keep_majority, replace=False)
    keep = np.sort(np.concatenate([minority_idx, chosen]))
    return dataset.subset(keep)


def tomek_links(dataset: SurvivalDataset) -> tuple[np.ndarray, SurvivalDataset]:
    """Remove the majority member of every cross-class mutual-nearest-neighbor pair."""
    if dataset.n_rows < 2:
        raise ValueError("need at least two rows")
    space = _neighbor_space(dataset)
    nn = _knn_indices(space, space, 1, skip_identity_offset=0)[:, 0]
    label = _minority_label(dataset.events)
    removed = []
    for i in range(dataset.n_rows):
        j = nn[i]
        if nn[j] == i and dataset.events[i] != dataset.events[j]:
            majority_member = i if dataset.events[i] != label else j
            removed.append(majority_member)
    removed = np.unique(np.asarray(removed, dtype=np.int64))
    keep = np.setdiff1d(np.arange(dataset.n_rows), removed)
    return removed, dataset.subset(keep)


def ncr_clean(dataset: SurvivalDataset, k: int = 3) -> SurvivalDataset:
    """Edited-nearest-neighbor cleaning: drop majority rows their neighbors vote against."""
    if k < 1:
        raise ValueError("k must be >= 1")
    label = _minority_label(dataset.events)
    majority_idx = np.nonzero(dataset.events != label)[0]
    if len(majority_idx) == 0 or len(majority_idx) == dataset.n_rows:
        return dataset.copy()
    space = _neighbor_space(dataset)
    k_eff = min(k, dataset.n_rows - 1)
    neighbors = _knn_indices(space[majority_idx], space, min(k_eff + 1, dataset.n_rows),
                             skip_identity_offset=None)
    removed = []
    for i, mi in enumerate(majority_idx):
        nb = [j for j in neighbors[i] if j != mi][:k_eff]
        votes_minority = float(np.sum(dataset.events[nb] == label))
        if votes_minority > len(nb) / 2.0:
            removed.append(mi)
    keep = np.setdiff1d(np.arange(dataset.n_rows), np.asarray(removed, dtype=np.int64))
    return dataset.subset(keep)


# ---------------------------------------------------------------------------
# one-hot representation shared by the VAE and WGAN
# ---------------------------------------------------------------------------


@dataclass
class OneHotCodec:
    """Maps a dataset to the generative-baseline representation and back.

    Numerics use the fitted [0,1] transform; every binary column becomes a
    complementary pair; Duration is min-max scaled and Event one-hot encoded,
    both generated columns for these baselines only.
    """

    state: PreprocessState
    specs: list = field(default_factory=list)
    duration_min: float = 0.0
    duration_max: float = 1.0
    name: str = ""
    duration_column: str = "Duration"
    event_column: str = "Event"

    @classmethod
    def fit(cls, dataset: SurvivalDataset) -> "OneHotCodec":
        _, state = preprocess(dataset)
        return cls(
            state=state,
            specs=list(dataset.specs),
            duration_min=float(dataset.durations.min()),
            duration_max=float(dataset.durations.max()),
            name=dataset.name,
            duration_column=dataset.duration_column,
            event_column=dataset.event_column,
        )

    @property
    def width(self) -> int:
        w = 0
        for s in self.specs:
            w += 1 if s.kind == NUMERIC else 2
        return w + 1 + 2  # + duration + event pair

    def encode(self, dataset: SurvivalDataset) -> np.ndarray:
        tau = apply_preprocess(dataset, self.state)
        cols = []
        for j, s in enumerate(self.specs):
            if s.kind == NUMERIC:
                cols.append(tau[:, j])
            else:
                cols.append(1.0 - tau[:, j])
                cols.append(tau[:, j])
        span = self.duration_max - self.duration_min
        scaled = (dataset.durations - self.duration_min) / span if span > 0 else np.zeros(dataset.n_rows)
        cols.append(np.clip(scaled, 0.0, 1.0))
        cols.append(1.0 - dataset.events)
        cols.append(dataset.events)
        return np.column_stack(cols)

    def decode(self, matrix: np.ndarray) -> SurvivalDataset:
        matrix = np.clip(np.asarray(matrix, dtype=np.float64), 0.0, 1.0)
        n = matrix.shape[0]
        features = np.empty((n, len(self.specs)))
        pos = 0
        for j, s in enumerate(self.specs):
            if s.kind == NUMERIC:
                t = self.state.numeric[s.name]
                y = matrix[:, pos] * t.post_range + t.post_min
                x = boxcox_inverse(y, t.lam) - t.shift
                x = np.clip(x, t.observed_min, t.observed_max)
                if t.levels is not None:
                    lv = np.asarray(t.levels)
                    snap = np.clip(np.searchsorted(lv, x), 1, len(lv) - 1)
                    left, right = lv[snap - 1], lv[snap]
                    x = np.where(x - left <= right - x, left, right)
                features[:, j] = x
                pos += 1
            else:
                features[:, j] = (matrix[:, pos + 1] >= matrix[:, pos]).astype(np.float64)
                pos += 2
        resolve_groups(features, self.specs)
        durations = self.duration_min + matrix[:, pos] * (self.duration_max - self.duration_min)
        durations = np.clip(durations, 0.0, None)
        events = (matrix[:, pos + 2] >= matrix[:, pos + 1]).astype(np.float64)
        return SurvivalDataset(
            features=features,
            specs=list(self.specs),
            durations=durations,
            events=events,
            name=self.name,
            duration_column=self.duration_column,
            event_column=self.event_column,
        )


def correlation_loss(x: np.ndarray, target_corr: np.ndarray, eps: float = CORR_EPS):
    """Frobenius distance between batch correlation matrices, with its gradient.

    Columns are standardized with an epsilon guard so constant columns contribute
    zero correlation instead of NaN.
    """
    n = x.shape[0]
    mean = x.mean(axis=0)
    var = x.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    z = (x - mean) * inv_std
    corr = z.T @ z / n
    diff = corr - target_corr
    loss = float(np.sqrt(np.sum(diff * diff)))
    if loss < 1e-12:
        # the Frobenius norm is not differentiable at zero; a near-zero loss
        # would turn float noise into an arbitrary unit-norm direction
        return loss, np.zeros_like(x)
    dcorr = diff / loss
    dz = z @ (dcorr + dcorr.T) / n
    dx = inv_std / n * (n * dz - dz.sum(axis=0) - z * (dz * z).sum(axis=0))
    return loss, dx


def batch_correlation(x: np.ndarray, eps: float = CORR_EPS) -> np.ndarray:
    mean = x.mean(axis=0)
    z = (x - mean) / np.sqrt(x.var(axis=0) + eps)
    return z.T @ z / x.shape[0]


@dataclass
class VaeModel:
    encoder: DenseNet
    mu_head: DenseNet
    logvar_head: DenseNet
    decoder: DenseNet
    codec: OneHotCodec
    latent_dim: int = VAE_LATENT_DIM


def build_vae(input_dim: int, codec: OneHotCodec, seed: int = 0) -> VaeModel:
    rng = np.random.default_rng(seed)
    encoder = DenseNet([Linear(input_dim, 128, rng), ReLU(), Linear(128, 64, rng), ReLU()])
    mu_head = DenseNet([Linear(64, VAE_LATENT_DIM, rng)])
    logvar_head = DenseNet([Linear(64, VAE_LATENT_DIM, rng)])
    decoder = DenseNet(
        [Linear(VAE_LATENT_DIM, 64, rng), ReLU(), Linear(64, 128, rng), ReLU(),
         Linear(128, input_dim, rng), Sigmoid()]
    )
    return VaeModel(encoder, mu_head, logvar_head, decoder, codec)


def kl_standard_normal(mu: np.ndarray, logvar: np.ndarray) -> float:
    """Mean per-sample KL(q || N(0, I)) with q diagonal Gaussian."""
    per_sample = -0.5 * np.sum(1.0 + logvar - mu * mu - np.exp(logvar), axis=1)
    return float(per_sample.mean())


def train_vae(
    dataset: SurvivalDataset,
    epochs: int = 1000,
    batch: int = 32,
    lr: float = 0.001,
    seed: int = 0,
) -> tuple[VaeModel, list[float]]:
    """Reconstruction MSE + 0.001 KL + 0.1 correlation loss, reparameterized sampling."""
    codec = OneHotCodec.fit(dataset)
    data = codec.encode(dataset)
    model = build_vae(data.shape[1], codec, seed=seed)
    rng = np.random.default_rng(seed + 1)
    params = (
        model.encoder.parameters()
        + model.mu_head.parameters()
        + model.logvar_head.parameters()
        + model.decoder.parameters()
    )
    adam = AdamState.for_params(params, lr=lr)
    n = data.shape[0]
    losses: list[float] = []
    for _ in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch):
            rows = order[start : start + batch]
            xb = data[rows]
            b = len(rows)
            enc, cache_e = model.encoder.forward(xb, train=True)
            mu, cache_mu = model.mu_head.forward(enc, train=True)
            logvar, cache_lv = model.logvar_head.forward(enc, train=True)
            noise = rng.standard_normal(mu.shape)
            sigma = np.exp(0.5 * logvar)
            z = mu + sigma * noise
            out, cache_d = model.decoder.forward(z, train=True)

            l_mse, dout = mse_loss(out, xb)
            l_corr, dcorr = correlation_loss(out, batch_correlation(xb))
            l_kl = kl_standard_normal(mu, logvar)
            loss = l_mse + KL_WEIGHT * l_kl + CORRELATION_WEIGHT * l_corr
            if not math.isfinite(loss):
                raise NeuralError("non-finite VAE loss")
            epoch_loss += loss * b

            grads_d, dz = model.decoder.backward(cache_d, dout + CORRELATION_WEIGHT * dcorr)
            dmu = dz + KL_WEIGHT * mu / b
            dlv = dz * noise * 0.5 * sigma + KL_WEIGHT * 0.5 * (np.exp(logvar) - 1.0) / b
            grads_mu, de_mu = model.mu_head.backward(cache_mu, dmu)
            grads_lv, de_lv = model.logvar_head.backward(cache_lv, dlv)
            grads_e, _ = model.encoder.backward(cache_e, de_mu + de_lv)
            adam_step(params, grads_e + grads_mu + grads_lv + grads_d, adam)
            for net in (model.encoder, model.mu_head, model.logvar_head, model.decoder):
                net.touch()
        losses.append(epoch_loss / n)

    final_logvar, _ = model.logvar_head.forward(model.encoder.forward(data, train=False)[0], train=False)
    if float(np.mean(np.abs(final_logvar))) < 1e-3:
        warnings.warn("VAE latent collapse: mean |logvar| < 1e-3", RuntimeWarning)
    return model, losses


def vae_generate(model: VaeModel, n: int, state: PreprocessState, seed: int = 0) -> SurvivalDataset:
    """Decode z ~ N(0, I) and postprocess back to a schema-valid dataset."""
    del state  # numerics invert through the codec's fitted state
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, model.latent_dim))
    out, _ = model.decoder.forward(z, train=False)
    return model.codec.decode(out)


@dataclass
class WganModel:
    generator: DenseNet
    critic: DenseNet
    codec: OneHotCodec
    clip_value: float = 0.01
    latent_dim: int = WGAN_LATENT_DIM


def build_wgan(input_dim: int, codec: OneHotCodec, clip: float = 0.01, seed: int = 0) -> WganModel:
    if clip <= 0:
        raise ValueError("clip must be > 0")
    rng = np.random.default_rng(seed)
    generator = DenseNet(
        [Linear(WGAN_LATENT_DIM, 64, rng), ReLU(), Linear(64, 128, rng), ReLU(),
         Linear(128, input_dim, rng), Sigmoid()]
    )
    critic = DenseNet([Linear(input_dim, 128, rng), ReLU(), Linear(128, 64, rng), ReLU(), Linear(64, 1, rng)])
    return WganModel(generator, critic, codec, clip_value=clip)


def train_wgan(
    dataset: SurvivalDataset,
    epochs: int = 500,
    n_critic: int = 5,
    clip: float = 0.01,
    lr: float = 1e-4,
    batch: int = 32,
    seed: int = 0,
) -> tuple[WganModel, list[float]]:
    """Weight-clipped critic, n_critic critic steps per generator step."""
    codec = OneHotCodec.fit(dataset)
    data = codec.encode(dataset)
    model = build_wgan(data.shape[1], codec, clip=clip, seed=seed)
    rng = np.random.default_rng(seed + 1)
    gen_params = model.generator.parameters()
    critic_params = model.critic.parameters()
    adam_g = AdamState.for_params(gen_params, lr=lr)
    adam_c = AdamState.for_params(critic_params, lr=lr)
    n = data.shape[0]
    losses: list[float] = []
    for _ in range(epochs):
        critic_loss = 0.0
        for _ in range(n_critic):
            real = data[rng.integers(n, size=batch)]
            z = rng.standard_normal((batch, model.latent_dim))
            fake, _ = model.generator.forward(z, train=False)
            out_f, cache_f = model.critic.forward(fake, train=True)
            out_r, cache_r = model.critic.forward(real, train=True)
            critic_loss = float(out_f.mean() - out_r.mean())
            if not math.isfinite(critic_loss):
                raise NeuralError("non-finite critic loss")
            gf, _ = model.critic.backward(cache_f, np.full_like(out_f, 1.0 / batch))
            gr, _ = model.critic.backward(cache_r, np.full_like(out_r, -1.0 / batch))
            adam_step(critic_params, [a + b for a, b in zip(gf, gr)], adam_c)
            model.critic.touch()
            for p in critic_params:
                np.clip(p, -clip, clip, out=p)
        z = rng.standard_normal((batch, model.latent_dim))
        fake, cache_g = model.generator.forward(z, train=True)
        out, cache_c = model.critic.forward(fake, train=True)
        gen_loss = float(-out.mean())
        if not math.isfinite(gen_loss):
            raise NeuralError("non-finite generator loss")
        _, dfake = model.critic.backward(cache_c, np.full_like(out, -1.0 / batch))
        grads_g, _ = model.generator.backward(cache_g, dfake)
        adam_step(gen_params, grads_g, adam_g)
        model.generator.touch()
        losses.append(critic_loss)
    spread = _critic_spread(model, data, rng)
    if spread < 1e-9:
        warnings.warn("WGAN critic collapse: constant critic output", RuntimeWarning)
    return model, losses


def _critic_spread(model: WganModel, data: np.ndarray, rng) -> float:
    sample = data[rng.integers(data.shape[0], size=min(256, data.shape[0]))]
    out, _ = model.critic.forward(sample, train=False)
    return float(out.std())


def wgan_generate(model: WganModel, n: int, state: PreprocessState, seed: int = 0) -> SurvivalDataset:
    del state
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, model.latent_dim))
    out, _ = model.generator.forward(z, train=False)
    return model.codec.decode(out)


def bootstrap_ensemble_scores(
    dataset: SurvivalDataset,
    test_features: np.ndarray,
    n_estimators: int = 10,
    penalizer: float = 1e-4,
    seed: int = 0,
    bootstrap: bool = True,
    max_retries: int = 10,
) -> np.ndarray:
    """Average log-partial-hazard over CoxPH fits on with-replacement resamples."""
    if n_estimators < 1:
        raise ValueError("n_estimators must be >= 1")
    seeds = np.random.SeedSequence(seed).spawn(n_estimators)
    scores = np.zeros(np.asarray(test_features).shape[0])
    for est_seed in seeds:
        rng = np.random.default_rng(est_seed)
        if bootstrap:
            sample = None
            for _ in range(max_retries):
                rows = rng.integers(dataset.n_rows, size=dataset.n_rows)
                if dataset.events[rows].sum() >= 1:
                    sample = dataset.subset(rows)
                    break
            if sample is None:
                raise RuntimeError(f"no events in any of {max_retries} bootstrap resamples")
        else:
            sample = dataset
        model = fit_coxph(sample, penalizer=penalizer)
        scores += log_partial_hazard(model, test_features)
    return scores / n_estimators
