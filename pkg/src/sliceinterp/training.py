"""Adam, the four training regimes, evaluation and the k-gap ablation."""

from __future__ import annotations

import copy
import csv
import io
import logging
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .baselines import interpolate_linear, interpolate_nearest
from .checkpoint import save_checkpoint
from .diffusion import NoiseSchedule, ddpm_training_loss, make_linear_schedule, sample
from .metrics import MetricsReport, SampleRecord, fmt6, psnr, ssim
from .models import ModelConfig, PatchDiscriminator, build_discriminator, build_model
from .nn import Module
from .volume import TripletSample, Volume, build_dataset, stack_triplets

log = logging.getLogger(__name__)


# -- Adam -------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, state: AdamState) -> None:
    """One bias-corrected Adam update, in place, on every entry of ``params`` (name -> Parameter)."""
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise ValueError(f"no gradient for parameters: {missing[:5]}")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, p in params.items():
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= (state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(p.data.dtype)


def _trainable(model: Module) -> dict:
    return dict(model.named_parameters())


def _step(model: Module, state: AdamState) -> None:
    params = _trainable(model)
    for p in params.values():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
    adam_step(params, state)


# -- configs and histories ----------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 25
    batch_size: int = 4
    lr: float = 1e-4
    seed: int = 0
    lambda_adv: float = 0.0
    lambda_fm: float = 0.0
    diffusion_steps: int = 100
    beta1: float = 1e-4
    betaT: float = 0.02
    samples_per_epoch: int | None = None

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if self.lambda_adv < 0 or self.lambda_fm < 0 or self.lr < 0:
            raise ValueError("loss weights and learning rate must be non-negative")


def paper_train_config(regime: str) -> TrainConfig:
    presets = {
        "deterministic": TrainConfig(epochs=25, batch_size=4),
        "gan_basic": TrainConfig(epochs=25, batch_size=4, lambda_adv=0.001),
        "gan_improved": TrainConfig(epochs=10, batch_size=4, lambda_adv=0.01, lambda_fm=0.1),
        "ddpm": TrainConfig(epochs=20, batch_size=8, diffusion_steps=100),
    }
    return presets[regime]


def desk_train_config(regime: str) -> TrainConfig:
    """CPU-budget variant: 10 epochs at lr 1e-3, 25 diffusion steps; loss weights unchanged."""
    base = paper_train_config(regime)
    return replace(base, epochs=10, lr=1e-3, diffusion_steps=25)


def regime_of(arch: str) -> str:
    return {"edsr": "deterministic", "unet": "deterministic", "ddpm_unet": "ddpm"}.get(arch, arch)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    disc_loss: float = float("nan")


@dataclass
class TrainHistory:
    selection: str
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    checkpoint_path: str | None = None

    @property
    def best_val(self) -> float:
        return self.epochs[self.best_epoch - 1].val_loss

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "disc_loss", "best"])
        for r in self.epochs:
            w.writerow([r.epoch, fmt6(r.train_loss), fmt6(r.val_loss), fmt6(r.disc_loss), int(r.epoch == self.best_epoch)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), newline="")

    def summary(self) -> str:
        lines = [
            f"Epoch {r.epoch}: Train loss {r.train_loss:.4f}, Val loss {r.val_loss:.4f}"
            + (" (best)" if r.epoch == self.best_epoch else "")
            for r in self.epochs
        ]
        return "\n".join(lines)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def _require(triplets, name: str) -> None:
    if not triplets:
        raise ValueError(f"{name} split is empty")


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


def _epoch_order(rng: np.random.Generator, n: int, config: TrainConfig) -> np.ndarray:
    order = rng.permutation(n)
    if config.samples_per_epoch is not None:
        order = order[: config.samples_per_epoch]
    return order


class _Selector:
    """Keeps the best-so-far weights and (optionally) writes them as a checkpoint."""

    def __init__(self, model, model_config, history, checkpoint_path, extra=None):
        self.model, self.model_config, self.history = model, model_config, history
        self.path, self.extra = checkpoint_path, extra
        self.best_state = None

    def offer(self, record: EpochRecord) -> None:
        self.history.epochs.append(record)
        if self.history.best_epoch == 0 or record.val_loss < self.history.best_val:
            self.history.best_epoch = record.epoch
            self.best_state = copy.deepcopy(self.model.state_dict())
            if self.path is not None and self.model_config is not None:
                save_checkpoint(self.model, self.model_config, self.path, self.extra)
                self.history.checkpoint_path = str(self.path)

    def restore(self) -> None:
        if self.best_state is not None:
            self.model.load_state_dict(self.best_state)


def validation_l1(model: Module, triplets: Sequence[TripletSample], batch_size: int = 16) -> float:
    cond, target = stack_triplets(list(triplets))
    model.eval()
    total = 0.0
    with ad.no_grad():
        for start in range(0, len(cond), batch_size):
            pred = model(Tensor(cond[start : start + batch_size]))
            total += float(np.abs(pred.data - target[start : start + batch_size]).sum(dtype=np.float64))
    model.train()
    return total / target.size


# -- deterministic (L1) -----------------------------------------------------------------


def train_deterministic(
    model: Module,
    train: Sequence[TripletSample],
    val: Sequence[TripletSample],
    config: TrainConfig,
    model_config: ModelConfig | None = None,
    checkpoint_path=None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainHistory:
    """Minimise L1(model(lower, upper), target); keep the epoch with the lowest val L1."""
    return train_gan(model, None, train, val, config, model_config, checkpoint_path, on_epoch)


# -- GAN --------------------------------------------------------------------------------


def _feature_matching(real_feats: list[np.ndarray], fake_feats: list[Tensor]) -> Tensor:
    total = None
    for r, f in zip(real_feats, fake_feats):
        term = ad.l1_loss(f, Tensor(r, dtype=f.dtype))
        total = term if total is None else total + term
    return total * (1.0 / len(fake_feats))


def train_gan(
    generator: Module,
    discriminator: PatchDiscriminator | None,
    train: Sequence[TripletSample],
    val: Sequence[TripletSample],
    config: TrainConfig,
    model_config: ModelConfig | None = None,
    checkpoint_path=None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainHistory:
    """Alternate one discriminator step and one generator step per batch.

    Generator loss is L1 + lambda_adv * BCE(D(G(x)), 1) + lambda_fm * feature
    matching; with ``discriminator=None`` this is plain L1 training.
    """
    _require(train, "train")
    _require(val, "val")
    cond, target = stack_triplets(list(train))
    rng = _rng(config.seed)
    g_opt = AdamState(lr=config.lr)
    d_opt = AdamState(lr=config.lr)
    history = TrainHistory("val_l1")
    selector = _Selector(generator, model_config, history, checkpoint_path)
    generator.train()
    adversarial = discriminator is not None

    for epoch in range(1, config.epochs + 1):
        order = _epoch_order(rng, len(cond), config)
        g_total = d_total = 0.0
        for idx in _batches(order, config.batch_size):
            x, y = Tensor(cond[idx]), Tensor(target[idx])
            fake = generator(x)
            if adversarial:
                d_real = discriminator(y)
                d_fake = discriminator(fake.detach())
                d_loss = (ad.bce_with_logits(d_real, 1.0) + ad.bce_with_logits(d_fake, 0.0)) * 0.5
                discriminator.zero_grad()
                d_loss.backward()
                _step(discriminator, d_opt)
                d_total += d_loss.item() * len(idx)

            loss = ad.l1_loss(fake, y)
            if adversarial:
                fake_feats, score = discriminator.features(fake)
                if config.lambda_adv > 0:
                    loss = loss + ad.bce_with_logits(score, 1.0) * config.lambda_adv
                if config.lambda_fm > 0:
                    with ad.no_grad():
                        real_feats = [f.data for f in discriminator.features(y)[0]]
                    loss = loss + _feature_matching(real_feats, fake_feats) * config.lambda_fm
            generator.zero_grad()
            loss.backward()
            _step(generator, g_opt)
            g_total += loss.item() * len(idx)

        n = len(order)
        record = EpochRecord(epoch, g_total / n, validation_l1(generator, val), d_total / n if adversarial else float("nan"))
        log.info("epoch %d train %.5f val %.5f", epoch, record.train_loss, record.val_loss)
        selector.offer(record)
        if on_epoch:
            on_epoch(record)
    selector.restore()
    return history


# -- DDPM --------------------------------------------------------------------------------


def ddpm_validation_loss(model, val: Sequence[TripletSample], schedule: NoiseSchedule, seed: int, batch_size: int = 8) -> float:
    """Noise-prediction MSE over the val set with timesteps and noise fixed by ``seed``."""
    cond, target = stack_triplets(list(val))
    rng = _rng(seed)
    total = 0.0
    if isinstance(model, Module):
        model.eval()
    with ad.no_grad():
        for start in range(0, len(cond), batch_size):
            c, x0 = cond[start : start + batch_size], target[start : start + batch_size]
            t = rng.integers(1, schedule.T + 1, size=len(c))
            eps = rng.standard_normal(x0.shape).astype(np.float32)
            total += ddpm_training_loss(model, x0, c, t, eps, schedule).item() * x0.size
    if isinstance(model, Module):
        model.train()
    return total / target.size


VAL_SEED_OFFSET = 7919


def train_ddpm(
    model: Module,
    train: Sequence[TripletSample],
    val: Sequence[TripletSample],
    config: TrainConfig,
    model_config: ModelConfig | None = None,
    checkpoint_path=None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainHistory:
    _require(train, "train")
    _require(val, "val")
    schedule = make_linear_schedule(config.diffusion_steps, config.beta1, config.betaT)
    cond, target = stack_triplets(list(train))
    rng = _rng(config.seed)
    opt = AdamState(lr=config.lr)
    history = TrainHistory("val_noise_mse")
    extra = {"diffusion_steps": config.diffusion_steps, "beta1": config.beta1, "betaT": config.betaT}
    selector = _Selector(model, model_config, history, checkpoint_path, extra)
    model.train()
    for epoch in range(1, config.epochs + 1):
        order = _epoch_order(rng, len(cond), config)
        total = 0.0
        for idx in _batches(order, config.batch_size):
            t = rng.integers(1, schedule.T + 1, size=len(idx))
            eps = rng.standard_normal(target[idx].shape).astype(np.float32)
            loss = ddpm_training_loss(model, target[idx], cond[idx], t, eps, schedule)
            model.zero_grad()
            loss.backward()
            _step(model, opt)
            total += loss.item() * len(idx)
        val_loss = ddpm_validation_loss(model, val, schedule, config.seed + VAL_SEED_OFFSET)
        record = EpochRecord(epoch, total / len(order), val_loss)
        log.info("epoch %d train %.5f val %.5f", epoch, record.train_loss, record.val_loss)
        selector.offer(record)
        if on_epoch:
            on_epoch(record)
    selector.restore()
    return history


# -- evaluation ---------------------------------------------------------------------------

Predictor = Callable[[np.ndarray, Sequence[TripletSample]], np.ndarray]


def baseline_predictor(name: str) -> Predictor:
    if name == "linear":
        return lambda cond, _: interpolate_linear(cond[:, :1], cond[:, 1:])
    if name in ("nearest", "nearest_lower"):
        return lambda cond, _: interpolate_nearest(cond[:, :1], cond[:, 1:], "lower")
    if name == "nearest_upper":
        return lambda cond, _: interpolate_nearest(cond[:, :1], cond[:, 1:], "upper")
    raise ValueError(f"unknown baseline {name!r}")


def model_predictor(model: Module) -> Predictor:
    def predict(cond, _):
        model.eval()
        with ad.no_grad():
            return model(Tensor(cond)).data

    return predict


def triplet_seed(seed: int, t: TripletSample) -> int:
    return (int(seed) * 1_000_003 + zlib.crc32(t.patient_id.encode()) * 4099 + t.slice_index) % (2**63)


def ddpm_predictor(model: Module, schedule: NoiseSchedule, seed: int) -> Predictor:
    """One reverse-process sample per triplet, seeded per triplet so batching does not matter."""

    def predict(cond, triplets):
        model.eval()
        return sample(model, cond, schedule, [triplet_seed(seed, t) for t in triplets])

    return predict


def evaluate(
    predict: Predictor,
    triplets: Sequence[TripletSample],
    k: int,
    method: str,
    batch_size: int = 16,
) -> MetricsReport:
    triplets = list(triplets)
    if not triplets:
        raise ValueError("cannot evaluate on an empty test set")
    report = MetricsReport(method, k)
    for start in range(0, len(triplets), batch_size):
        chunk = triplets[start : start + batch_size]
        cond, target = stack_triplets(chunk)
        pred = np.asarray(predict(cond, chunk))
        for t, p, y in zip(chunk, pred, target):
            report.records.append(SampleRecord(t.patient_id, t.slice_index, psnr(p[0], y[0]), ssim(p[0], y[0])))
    return report


# -- end-to-end helpers ---------------------------------------------------------------------


@dataclass
class TrainedMethod:
    arch: str
    model: Module
    model_config: ModelConfig
    history: TrainHistory
    discriminator: Module | None = None


def train_architecture(
    model_config: ModelConfig,
    train: Sequence[TripletSample],
    val: Sequence[TripletSample],
    config: TrainConfig,
    checkpoint_path=None,
    on_epoch=None,
) -> TrainedMethod:
    """Build and train ``model_config.arch`` with its regime (L1, GAN or DDPM)."""
    model = build_model(model_config, seed=config.seed)
    regime = regime_of(model_config.arch)
    disc = None
    if regime == "ddpm":
        history = train_ddpm(model, train, val, config, model_config, checkpoint_path, on_epoch)
    elif regime == "deterministic":
        history = train_deterministic(model, train, val, config, model_config, checkpoint_path, on_epoch)
    else:
        variant = "basic" if regime == "gan_basic" else "improved"
        disc = build_discriminator(variant, seed=config.seed + 1, base_channels=model_config.disc_channels)
        history = train_gan(model, disc, train, val, config, model_config, checkpoint_path, on_epoch)
    return TrainedMethod(model_config.arch, model, model_config, history, disc)


def predictor_for(trained: TrainedMethod, config: TrainConfig, eval_seed: int = 0) -> Predictor:
    if regime_of(trained.arch) == "ddpm":
        schedule = make_linear_schedule(config.diffusion_steps, config.beta1, config.betaT)
        return ddpm_predictor(trained.model, schedule, eval_seed)
    return model_predictor(trained.model)


@dataclass
class AblationRow:
    arch: str
    k: int
    report: MetricsReport
    history: TrainHistory


def ablate_k(
    model_config: ModelConfig,
    ks: Sequence[int],
    volumes: list[Volume],
    config: TrainConfig,
    split_seed: int = 0,
    ratios=(0.70, 0.15, 0.15),
    min_slices: int = 20,
) -> list[AblationRow]:
    """Train and test the same architecture once per gap k on one patient split."""
    rows = []
    for k in ks:
        ds = build_dataset(volumes, k, ratios, split_seed, min_slices)
        trained = train_architecture(model_config, ds.splits["train"], ds.splits["val"], config)
        report = evaluate(predictor_for(trained, config), ds.splits["test"], k, model_config.arch)
        rows.append(AblationRow(model_config.arch, k, report, trained.history))
    return rows


def format_ablation_table(rows: Sequence[AblationRow]) -> str:
    """Architectures as rows, PSNR/SSIM column pairs per k, plus a relative-improvement row."""
    ks = sorted({r.k for r in rows})
    archs = list(dict.fromkeys(r.arch for r in rows))
    cell = {(r.arch, r.k): r.report for r in rows}
    header = ["arch"] + [f"{m}_k{k}" for k in ks for m in ("psnr", "ssim")]
    out = [",".join(header)]
    for a in archs:
        vals = []
        for k in ks:
            rep = cell.get((a, k))
            vals += [fmt6(rep.psnr_mean), fmt6(rep.ssim_mean)] if rep else ["", ""]
        out.append(",".join([a] + vals))
    if len(ks) >= 2:
        lo, hi = ks[-1], ks[0]
        imp = []
        for metric in ("psnr_mean", "ssim_mean"):
            m_lo = np.mean([getattr(cell[(a, lo)], metric) for a in archs if (a, lo) in cell])
            m_hi = np.mean([getattr(cell[(a, hi)], metric) for a in archs if (a, hi) in cell])
            imp.append((m_hi - m_lo) / m_lo)
        out.append(",".join(["improvement"] + [""] * (2 * len(ks) - 2) + [fmt6(imp[0]), fmt6(imp[1])]))
    return "\n".join(out) + "\n"
