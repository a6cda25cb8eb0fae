"""Distilled mixture encoder, reconstruction decoder, and the generation pipeline.

The encoder trunk (64-32-16, linear+relu+batchnorm) is trained with full-batch
Adam to reproduce the Cox teacher's risk scores through a mixture-weighted sum
of logits; the decoder maps the 16-dim latent back to the [0,1] feature space.
Generation is bijective: synthetic row i derives only from real row i, with
Event and Duration copied verbatim.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data_io import (
    BINARY,
    NUMERIC,
    FeatureSpec,
    SurvivalDataset,
    mice_impute,
    validate_schema,
)
from .neural import (
    AdamState,
    BatchNorm,
    DenseNet,
    Linear,
    NeuralError,
    ReLU,
    Sigmoid,
    Softmax,
    adam_step,
    mse_loss,
    net_from_dict,
    net_to_dict,
)
from .preprocess import PreprocessState, postprocess
from .survival_core import CoxModel, log_partial_hazard

TRUNK_WIDTHS = (64, 32, 16)
LATENT_DIM = TRUNK_WIDTHS[-1]
DECODER_WIDTHS = (128, 128)
DEFAULT_NUM_MIXTURES = 5
DEFAULT_ENCODER_EPOCHS = 10_000
DEFAULT_DECODER_EPOCHS = 20_000
DEFAULT_LR = 0.001
EXP_GUARD = 700.0  # exp() overflow threshold for float64


def derive_seed(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2**63)


@dataclass
class DcmEncoder:
    """Trunk network plus logits and softmax mixture-weight heads."""

    trunk: DenseNet
    output_head: DenseNet
    mixture_head: DenseNet
    num_mixtures: int
    input_dim: int
    source_fingerprint: str | None = None

    def parameters(self) -> list[np.ndarray]:
        return (
            self.trunk.parameters()
            + self.output_head.parameters()
            + self.mixture_head.parameters()
        )

    def touch(self) -> None:
        self.trunk.touch()
        self.output_head.touch()
        self.mixture_head.touch()


def build_dcm_encoder(
    input_dim: int, num_mixtures: int = DEFAULT_NUM_MIXTURES, seed: int = 0
) -> DcmEncoder:
    rng = np.random.default_rng(seed)
    layers = []
    prev = input_dim
    for width in TRUNK_WIDTHS:
        layers += [Linear(prev, width, rng), ReLU(), BatchNorm(width)]
        prev = width
    trunk = DenseNet(layers)
    output_head = DenseNet([Linear(LATENT_DIM, num_mixtures, rng)])
    mixture_head = DenseNet([Linear(LATENT_DIM, num_mixtures, rng), Softmax()])
    return DcmEncoder(trunk, output_head, mixture_head, num_mixtures, input_dim)


def build_synthnet(output_dim: int, latent_dim: int = LATENT_DIM, seed: int = 0) -> DenseNet:
    rng = np.random.default_rng(seed)
    return DenseNet(
        [
            Linear(latent_dim, DECODER_WIDTHS[0], rng),
            ReLU(),
            Linear(DECODER_WIDTHS[0], DECODER_WIDTHS[1], rng),
            ReLU(),
            Linear(DECODER_WIDTHS[1], output_dim, rng),
            Sigmoid(),
        ]
    )


def teacher_targets(model: CoxModel, features: np.ndarray) -> np.ndarray:
    """exp(X @ beta): the distillation soft targets."""
    lp = log_partial_hazard(model, features)
    return np.exp(np.minimum(lp, EXP_GUARD))


def _encoder_heads(encoder: DcmEncoder, x: np.ndarray, train: bool):
    h, cache_t = encoder.trunk.forward(x, train=train)
    logits, cache_o = encoder.output_head.forward(h, train=train)
    weights, cache_m = encoder.mixture_head.forward(h, train=train)
    return h, logits, weights, (cache_t, cache_o, cache_m)


def dcm_risk_score(encoder: DcmEncoder, features: np.ndarray, train: bool = False) -> np.ndarray:
    """Mixture-weighted sum of logits, one score per row."""
    _, logits, weights, _ = _encoder_heads(encoder, np.asarray(features, dtype=np.float64), train)
    return (logits * weights).sum(axis=1)


def mixture_assignments(encoder: DcmEncoder, features: np.ndarray) -> np.ndarray:
    """Softmax mixture weights per row (diagnostics: cluster structure lives here)."""
    _, _, weights, _ = _encoder_heads(encoder, np.asarray(features, dtype=np.float64), False)
    return weights


def train_dcm(
    encoder: DcmEncoder,
    features: np.ndarray,
    targets: np.ndarray,
    epochs: int = DEFAULT_ENCODER_EPOCHS,
    lr: float = DEFAULT_LR,
    seed: int = 0,
) -> tuple[DcmEncoder, list[float]]:
    """Full-batch Adam on MSE(risk score, teacher target).

    Training is deterministic: full-batch, no sampling; `seed` is accepted for
    interface stability. epochs=0 returns the encoder unchanged.
    """
    del seed
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if len(y) != x.shape[0]:
        raise ValueError("targets length does not match feature rows")
    params = encoder.parameters()
    state = AdamState.for_params(params, lr=lr)
    losses: list[float] = []
    for _ in range(epochs):
        _, logits, weights, (cache_t, cache_o, cache_m) = _encoder_heads(encoder, x, True)
        score = (logits * weights).sum(axis=1)
        loss, dscore = mse_loss(score, y)
        if not math.isfinite(loss):
            raise NeuralError("non-finite distillation loss")
        losses.append(loss)
        dlogits = dscore[:, None] * weights
        dweights = dscore[:, None] * logits
        grads_o, dh_o = encoder.output_head.backward(cache_o, dlogits)
        grads_m, dh_m = encoder.mixture_head.backward(cache_m, dweights)
        grads_t, _ = encoder.trunk.backward(cache_t, dh_o + dh_m)
        adam_step(params, grads_t + grads_o + grads_m, state)
        encoder.touch()
    return encoder, losses


def encode_latent(encoder: DcmEncoder, features: np.ndarray) -> np.ndarray:
    """Final trunk activation (infer mode), n x 16."""
    h, _ = encoder.trunk.forward(np.asarray(features, dtype=np.float64), train=False)
    return h


def train_synthnet(
    decoder: DenseNet,
    latents: np.ndarray,
    tau: np.ndarray,
    epochs: int = DEFAULT_DECODER_EPOCHS,
    lr: float = DEFAULT_LR,
    seed: int = 0,
) -> tuple[DenseNet, list[float]]:
    """Full-batch Adam on reconstruction MSE in the [0,1] feature space."""
    del seed
    h = np.asarray(latents, dtype=np.float64)
    t = np.asarray(tau, dtype=np.float64)
    if h.shape[0] != t.shape[0]:
        raise ValueError("latent/target row counts differ")
    params = decoder.parameters()
    state = AdamState.for_params(params, lr=lr)
    losses: list[float] = []
    for _ in range(epochs):
        out, cache = decoder.forward(h, train=True)
        loss, dout = mse_loss(out, t)
        if not math.isfinite(loss):
            raise NeuralError("non-finite reconstruction loss")
        losses.append(loss)
        grads, _ = decoder.backward(cache, dout)
        adam_step(params, grads, state)
        decoder.touch()
    return decoder, losses


class FingerprintError(RuntimeError):
    pass


def generate(
    encoder: DcmEncoder,
    decoder: DenseNet,
    dataset: SurvivalDataset,
    state: PreprocessState,
    clamp_counts: dict | None = None,
) -> SurvivalDataset:
    """One synthetic row per real row, in source order; Event/Duration copied verbatim."""
    if encoder.source_fingerprint is not None:
        if dataset.fingerprint() != encoder.source_fingerprint:
            raise FingerprintError(
                "generation source differs from the training source (fingerprint mismatch)"
            )
    latents = encode_latent(encoder, dataset.features)
    tau_hat, _ = decoder.forward(latents, train=False)
    synthetic = postprocess(tau_hat, state, dataset, clamp_counts=clamp_counts)
    report = validate_schema(synthetic)
    if not report.passed:
        raise RuntimeError(f"generated dataset failed schema validation: {report.to_dict()}")
    return synthetic


def generate_perturbed(
    encoder: DcmEncoder,
    decoder: DenseNet,
    dataset: SurvivalDataset,
    state: PreprocessState,
    noise_scale: float,
    seed: int = 0,
    copy_outcomes: bool = False,
    mice_iterations: int = 5,
) -> SurvivalDataset:
    """Latent-perturbation variant: h' = h + delta, outcomes imputed rather than copied.

    delta is Gaussian with per-dimension scale noise_scale * latent std, so one
    noise_scale value is meaningful across datasets. Unless `copy_outcomes` is
    set, Event and Duration are chained-equation imputed from the synthetic
    features (regressions fit where the real rows have observed outcomes),
    durations clipped at 0 and events thresholded to {0,1}.
    """
    if noise_scale < 0:
        raise ValueError("noise_scale must be >= 0")
    if encoder.source_fingerprint is not None:
        if dataset.fingerprint() != encoder.source_fingerprint:
            raise FingerprintError(
                "generation source differs from the training source (fingerprint mismatch)"
            )
    latents = encode_latent(encoder, dataset.features)
    rng = np.random.default_rng(seed)
    scale = noise_scale * latents.std(axis=0)
    perturbed = latents + rng.standard_normal(latents.shape) * scale
    tau_hat, _ = decoder.forward(perturbed, train=False)
    synthetic = postprocess(tau_hat, state, dataset)
    if copy_outcomes:
        return synthetic

    # stack real rows (outcomes observed) over synthetic rows (outcomes missing)
    # so the chained regressions are fit on real data and applied to synthetic.
    n = dataset.n_rows
    stacked_specs = list(dataset.specs) + [
        FeatureSpec(dataset.duration_column, NUMERIC),
        FeatureSpec(dataset.event_column, BINARY),
    ]
    top = np.column_stack([dataset.features, dataset.durations, dataset.events])
    bottom = np.column_stack(
        [synthetic.features, np.full(n, np.nan), np.full(n, np.nan)]
    )
    container = SurvivalDataset(
        features=np.vstack([top, bottom]),
        specs=stacked_specs,
        durations=np.zeros(2 * n),
        events=np.zeros(2 * n),
        name=dataset.name,
    )
    imputed = mice_impute(container, n_iterations=mice_iterations)
    durations = np.clip(imputed.features[n:, -2], 0.0, None)
    events = imputed.features[n:, -1]
    return SurvivalDataset(
        features=synthetic.features,
        specs=list(dataset.specs),
        durations=durations,
        events=events,
        name=dataset.name,
        duration_column=dataset.duration_column,
        event_column=dataset.event_column,
    )


@dataclass
class GenerationRun:
    """Reproducibility record for one trained generator."""

    seed: int
    source_fingerprint: str
    num_mixtures: int
    encoder_epochs: int
    decoder_epochs: int
    lr: float
    penalizer: float
    encoder_losses: list[float] = field(repr=False, default_factory=list)
    decoder_losses: list[float] = field(repr=False, default_factory=list)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "source_fingerprint": self.source_fingerprint,
            "num_mixtures": self.num_mixtures,
            "encoder_epochs": self.encoder_epochs,
            "decoder_epochs": self.decoder_epochs,
            "lr": self.lr,
            "penalizer": self.penalizer,
            "encoder_loss_first": self.encoder_losses[0] if self.encoder_losses else None,
            "encoder_loss_final": self.encoder_losses[-1] if self.encoder_losses else None,
            "decoder_loss_first": self.decoder_losses[0] if self.decoder_losses else None,
            "decoder_loss_final": self.decoder_losses[-1] if self.decoder_losses else None,
        }


@dataclass
class TrainedGenerator:
    teacher: CoxModel
    encoder: DcmEncoder
    decoder: DenseNet
    state: PreprocessState
    run: GenerationRun


def fit_generator(
    dataset: SurvivalDataset,
    penalizer: float = 1e-4,
    num_mixtures: int = DEFAULT_NUM_MIXTURES,
    encoder_epochs: int = DEFAULT_ENCODER_EPOCHS,
    decoder_epochs: int = DEFAULT_DECODER_EPOCHS,
    lr: float = DEFAULT_LR,
    seed: int = 0,
    teacher: CoxModel | None = None,
) -> TrainedGenerator:
    """Teacher fit, distillation, and decoder training in one pass over a dataset."""
    from .preprocess import preprocess  # local import keeps module load order flat
    from .survival_core import fit_coxph

    if teacher is None:
        teacher = fit_coxph(dataset, penalizer=penalizer)
    targets = teacher_targets(teacher, dataset.features)
    encoder = build_dcm_encoder(
        dataset.features.shape[1], num_mixtures, seed=derive_seed(seed, "encoder-init")
    )
    _, encoder_losses = train_dcm(encoder, dataset.features, targets, epochs=encoder_epochs, lr=lr)
    tau, state = preprocess(dataset)
    latents = encode_latent(encoder, dataset.features)
    decoder = build_synthnet(tau.shape[1], seed=derive_seed(seed, "decoder-init"))
    _, decoder_losses = train_synthnet(decoder, latents, tau, epochs=decoder_epochs, lr=lr)
    encoder.source_fingerprint = dataset.fingerprint()
    run = GenerationRun(
        seed=seed,
        source_fingerprint=encoder.source_fingerprint,
        num_mixtures=num_mixtures,
        encoder_epochs=encoder_epochs,
        decoder_epochs=decoder_epochs,
        lr=lr,
        penalizer=penalizer,
        encoder_losses=encoder_losses,
        decoder_losses=decoder_losses,
    )
    return TrainedGenerator(teacher, encoder, decoder, state, run)


# ---------------------------------------------------------------------------
# encoder checkpoints
# ---------------------------------------------------------------------------


def encoder_to_dict(encoder: DcmEncoder) -> dict:
    return {
        "format": "dcm-encoder",
        "version": 1,
        "num_mixtures": encoder.num_mixtures,
        "input_dim": encoder.input_dim,
        "source_fingerprint": encoder.source_fingerprint,
        "trunk": net_to_dict(encoder.trunk),
        "output_head": net_to_dict(encoder.output_head),
        "mixture_head": net_to_dict(encoder.mixture_head),
    }


def encoder_from_dict(doc: dict) -> DcmEncoder:
    if doc.get("format") != "dcm-encoder":
        raise NeuralError("not a dcm-encoder checkpoint")
    return DcmEncoder(
        trunk=net_from_dict(doc["trunk"]),
        output_head=net_from_dict(doc["output_head"]),
        mixture_head=net_from_dict(doc["mixture_head"]),
        num_mixtures=doc["num_mixtures"],
        input_dim=doc["input_dim"],
        source_fingerprint=doc.get("source_fingerprint"),
    )


def save_encoder(encoder: DcmEncoder, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(encoder_to_dict(encoder), fh, sort_keys=True)
        fh.write("\n")


def load_encoder(path) -> DcmEncoder:
    with open(path, "r", encoding="utf-8") as fh:
        return encoder_from_dict(json.load(fh))
