"""Training machinery: focal loss, noise schedules, AdamW, the loop, K-fold.

The loss smooths targets, computes stable BCE from logits, and reweights by
alpha * (1 - exp(-BCE))^gamma; gradients flow through the focusing factor.
Feature noise is Gaussian with per-column std proportional to the column's
range over the current batch and is applied to training batches only.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, NumericError
from .evaluation import auc
from .features import FeatureBundle, prepare_bundles
from .model import ReadmissionModel, collate
from .tensor import Tensor


@dataclass
class LossConfig:
    alpha: float = 0.25
    gamma: float = 2.0
    smooth: float = 0.1
    reduction: str = "mean"

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if not 0.0 <= self.smooth < 1.0:
            raise ConfigError(f"smooth must be in [0, 1), got {self.smooth}")
        if self.reduction not in ("mean", "sum", "none"):
            raise ConfigError(f"unknown reduction {self.reduction!r}")


def label_smooth(t, smooth):
    """t' = (1 - smooth) * t + smooth / 2."""
    return (1.0 - smooth) * np.asarray(t, dtype=float) + 0.5 * smooth


def focal_loss(logits, targets, cfg):
    """Label-smoothing focal loss over a batch of logits.

    Steps: smooth the 0/1 targets, take elementwise BCE-with-logits,
    set p_t = exp(-BCE), weight by alpha * (1 - p_t)^gamma, then reduce.
    Differentiable with respect to the logits.
    """
    targets = np.asarray(targets, dtype=float)
    if targets.shape != logits.shape:
        raise ConfigError(
            f"logits shape {logits.shape} != targets shape {targets.shape}"
        )
    if targets.size < 1:
        raise ConfigError("focal_loss needs at least one element")
    smoothed = label_smooth(targets, cfg.smooth)
    bce = T.bce_with_logits(logits, smoothed)
    if cfg.gamma == 0.0:
        weighted = T.scale(bce, cfg.alpha)
    else:
        p_t = T.texp(T.neg(bce))
        focus = T.pow_const(T.add_const(T.neg(p_t), 1.0), cfg.gamma)
        weighted = T.scale(T.mul(focus, bce), cfg.alpha)
    if cfg.reduction == "mean":
        return weighted.mean()
    if cfg.reduction == "sum":
        return weighted.sum()
    return weighted


# ---------------------------------------------------------------------------
# schedules


@dataclass
class NoiseSchedule:
    kind: str = "linear"            # linear | sinusoidal | none
    r_initial: float = 0.01
    r_final: float = 0.1
    warmup: int = None              # None -> total epochs
    amplitude: float = 0.05
    period: float = 40.0
    intercept: float = 0.0

    def __post_init__(self):
        if self.kind not in ("linear", "sinusoidal", "none"):
            raise ConfigError(f"unknown noise schedule kind {self.kind!r}")
        if self.kind == "linear" and (self.r_initial < 0 or self.r_final < 0):
            raise ConfigError("noise ratios must be >= 0")
        if self.kind == "sinusoidal" and self.period <= 0:
            raise ConfigError("sinusoidal period must be positive")

    def ratio(self, epoch, total_epochs):
        if self.kind == "none":
            return 0.0
        if self.kind == "linear":
            w = self.warmup if self.warmup is not None else total_epochs
            return noise_ratio_linear(epoch, w, self.r_initial, self.r_final)
        return noise_ratio_sinusoidal(epoch, self.amplitude, self.period, self.intercept)


def noise_ratio_linear(epoch, warmup, r_initial, r_final):
    """Linear ramp from r_initial to r_final over ``warmup`` epochs, then flat."""
    if warmup < 1:
        raise ConfigError(f"warmup must be >= 1, got {warmup}")
    if epoch >= warmup:
        return r_final
    frac = epoch / warmup
    return r_initial * (1.0 - frac) + r_final * frac


def noise_ratio_sinusoidal(epoch, amplitude, period, intercept):
    """amplitude * sin(2*pi*epoch/period) + intercept, clamped at 0."""
    if period <= 0:
        raise ConfigError(f"period must be positive, got {period}")
    r = amplitude * math.sin(2.0 * math.pi * epoch / period) + intercept
    return max(r, 0.0)


def inject_noise(features, ratio, rng):
    """Add Gaussian noise with per-column std (max - min) * ratio over the batch.

    Constant columns get zero noise; ratio 0 returns an unchanged copy.
    """
    if ratio < 0:
        raise ValueError(f"noise ratio must be >= 0, got {ratio}")
    features = np.asarray(features, dtype=float)
    if ratio == 0 or features.size == 0:
        return features.copy()
    std = (features.max(axis=0) - features.min(axis=0)) * ratio
    return features + rng.standard_normal(features.shape) * std


def cosine_lr(epoch, lr_max, lr_min, total):
    """Cosine annealing from lr_max (epoch 0) to lr_min (epoch == total)."""
    if not 0 <= epoch <= total:
        raise ValueError(f"epoch {epoch} outside [0, {total}]")
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * epoch / total))


# ---------------------------------------------------------------------------
# optimizer


class AdamW:
    """Adam with decoupled weight decay and bias correction."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.01):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(f"{name}: grad shape {g.shape} != param {p.data.shape}")
            if self.weight_decay:
                p.data -= lr * self.weight_decay * p.data
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def clip_gradients(params, max_norm):
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if norm > max_norm > 0:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= factor
    return norm


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    epochs: int = 100
    lr_max: float = 1e-3
    lr_min: float = 5e-4
    batch_size: int = 32
    loss: LossConfig = field(default_factory=LossConfig)
    noise: NoiseSchedule = field(default_factory=NoiseSchedule)
    grad_clip: float = 1.0
    weight_decay: float = 0.01
    seed: int = 0
    kfold: int = None               # set when training as part of a K-fold run

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr_min > self.lr_max:
            raise ConfigError(f"lr_min {self.lr_min} exceeds lr_max {self.lr_max}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.kfold is not None and self.kfold < 2:
            raise ConfigError(f"kfold must be >= 2, got {self.kfold}")


@dataclass
class TrainResult:
    model: ReadmissionModel
    history: list                   # dicts: epoch, train_loss, val_auc, lr, noise_ratio
    best_epoch: int
    best_val_auc: float
    seconds_per_epoch: float


def _noisy_batch(bundles, modalities, ratio, rng):
    """Apply range-proportional noise per modality across the whole batch."""
    if ratio == 0:
        return bundles
    out = []
    stacked = {}
    for mod in modalities:
        rows = np.concatenate([np.asarray(b.get(mod)) for b in bundles], axis=0)
        stacked[mod] = inject_noise(rows, ratio, rng)
    offsets = {mod: 0 for mod in modalities}
    for b in bundles:
        nb = FeatureBundle()
        for mod in modalities:
            mat = np.asarray(b.get(mod))
            lo = offsets[mod]
            setattr(nb, mod, stacked[mod][lo:lo + mat.shape[0]])
            offsets[mod] += mat.shape[0]
        out.append(nb)
    return out


def predict_logits(model, bundles, batch_size=256):
    """Eval-mode logits for a list of bundles (no dropout, no noise)."""
    dt = model.config.np_dtype()
    out = np.empty(len(bundles))
    for lo in range(0, len(bundles), batch_size):
        chunk = bundles[lo:lo + batch_size]
        batch = collate(chunk, model.config.modalities, dtype=dt)
        out[lo:lo + len(chunk)] = model.forward_batch(batch).data
    return out


def predict_proba(model, bundles, batch_size=256):
    return T._sigmoid_np(predict_logits(model, bundles, batch_size))


def train(model, train_bundles, train_labels, val_bundles, val_labels, cfg):
    """Run the full training loop; returns the best-validation-AUC snapshot.

    Per epoch: seeded shuffle, per-batch feature noise, forward, focal loss,
    backward, gradient clipping, AdamW step at the cosine-annealed rate.
    Aborts with NumericError on a non-finite loss.
    """
    n = len(train_bundles)
    if n == 0 or len(val_bundles) == 0:
        raise DataError("training and validation sets must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(model.params, lr=cfg.lr_max, weight_decay=cfg.weight_decay)
    modalities = model.config.modalities
    dt = model.config.np_dtype()
    lr_total = max(cfg.epochs - 1, 1)

    history = []
    best_auc = -np.inf
    best_state = None
    best_epoch = -1
    total_seconds = 0.0
    val_labels = np.asarray(val_labels, dtype=int)
    single_class_val = val_labels.min() == val_labels.max()

    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        lr = cosine_lr(epoch, cfg.lr_max, cfg.lr_min, lr_total)
        ratio = cfg.noise.ratio(epoch, cfg.epochs)
        order = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            bundles = _noisy_batch([train_bundles[i] for i in idx], modalities, ratio, rng)
            batch = collate(bundles, modalities, dtype=dt)
            logits = model.forward_batch(batch, training=True, rng=rng)
            loss = focal_loss(logits, train_labels[idx], cfg.loss)
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise NumericError(
                    f"non-finite training loss at epoch {epoch}, batch {lo // cfg.batch_size}"
                )
            model.zero_grad()
            loss.backward()
            clip_gradients(model.params, cfg.grad_clip)
            opt.step(lr=lr)
            epoch_loss += loss_val * len(idx)

        if single_class_val:
            val_auc = float("nan")
        else:
            val_auc = auc(predict_proba(model, val_bundles), val_labels)
        total_seconds += time.perf_counter() - started
        history.append({
            "epoch": epoch,
            "train_loss": epoch_loss / n,
            "val_auc": val_auc,
            "lr": lr,
            "noise_ratio": ratio,
        })
        if not math.isnan(val_auc) and val_auc > best_auc:
            best_auc = val_auc
            best_state = model.get_state()
            best_epoch = epoch

    if best_state is not None:
        model.set_state(best_state)
    return TrainResult(
        model=model,
        history=history,
        best_epoch=best_epoch,
        best_val_auc=float(best_auc) if best_state is not None else float("nan"),
        seconds_per_epoch=total_seconds / cfg.epochs,
    )


def write_history_csv(history, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("epoch,train_loss,val_auc,lr,noise_ratio\n")
        for row in history:
            fh.write(
                f"{row['epoch']},{row['train_loss']!r},{row['val_auc']!r},"
                f"{row['lr']!r},{row['noise_ratio']!r}\n"
            )


# ---------------------------------------------------------------------------
# K-fold ensembling


@dataclass
class Ensemble:
    members: list                   # ReadmissionModel
    fold_val_aucs: list
    selection: object = None
    tfidf: object = None

    def predict_bundle(self, bundle):
        probs = [T._sigmoid_np(np.array([m.forward(bundle)]))[0] for m in self.members]
        return float(np.mean(probs))

    def predict_bundles(self, bundles):
        return np.mean([predict_proba(m, bundles) for m in self.members], axis=0)


def ensemble_predict(ensemble, bundle):
    """Arithmetic mean of member probabilities for one admission."""
    if not ensemble.members:
        raise ConfigError("ensemble has no members")
    return ensemble.predict_bundle(bundle)


def patient_folds(records, k, seed=0):
    """Assign patients to k disjoint folds; returns a fold index per record."""
    if k < 2:
        raise ConfigError(f"K must be >= 2, got {k}")
    patients = sorted({r.patient_id for r in records})
    if len(patients) < k:
        raise DataError(f"need at least {k} patients for {k}-fold, got {len(patients)}")
    rng = np.random.default_rng(seed)
    shuffled = [patients[i] for i in rng.permutation(len(patients))]
    fold_of = {pid: i % k for i, pid in enumerate(shuffled)}
    return np.array([fold_of[r.patient_id] for r in records], dtype=int)


def _train_fold(args):
    (records, fold_ids, fold, model_cfg_json, train_cfg, selection, tfidf) = args
    from .model import ModelConfig

    cfg = ModelConfig.from_json(model_cfg_json)
    cfg.seed = cfg.seed + fold
    train_recs = [r for r, f in zip(records, fold_ids) if f != fold]
    val_recs = [r for r, f in zip(records, fold_ids) if f == fold]
    caps = dict(max_days=cfg.max_days, max_images=cfg.max_images, max_notes=cfg.max_notes)
    tb, tl = prepare_bundles(train_recs, cfg.modalities, selection, tfidf, **caps)
    vb, vl = prepare_bundles(val_recs, cfg.modalities, selection, tfidf, **caps)
    fold_train_cfg = TrainConfig(
        epochs=train_cfg.epochs, lr_max=train_cfg.lr_max, lr_min=train_cfg.lr_min,
        batch_size=train_cfg.batch_size, loss=train_cfg.loss, noise=train_cfg.noise,
        grad_clip=train_cfg.grad_clip, weight_decay=train_cfg.weight_decay,
        seed=train_cfg.seed + fold,
    )
    model = ReadmissionModel(cfg)
    result = train(model, tb, tl, vb, vl, fold_train_cfg)
    return result.model.get_state(), result.best_val_auc, result.history


def kfold_train(records, model_cfg, train_cfg, k=10, fold_seed=0,
                selection=None, tfidf=None, jobs=1):
    """Train K patient-grouped fold models and return them as an Ensemble.

    Fold i trains on all other folds and validates on fold i; per-fold RNG
    seeds are the base seeds plus the fold index, so folds are reproducible
    independently of execution order or parallelism.
    """
    fold_ids = patient_folds(records, k, seed=fold_seed)
    jobs_args = [
        (records, fold_ids, fold, model_cfg.to_json(), train_cfg, selection, tfidf)
        for fold in range(k)
    ]
    if jobs > 1:
        results = _parallel_folds(jobs_args, jobs)
    else:
        results = [_train_fold(a) for a in jobs_args]

    members = []
    val_aucs = []
    for fold, (state, val_auc, _history) in enumerate(results):
        cfg = ModelConfigCopy(model_cfg, seed=model_cfg.seed + fold)
        m = ReadmissionModel(cfg)
        m.set_state(state)
        members.append(m)
        val_aucs.append(val_auc)
    return Ensemble(members=members, fold_val_aucs=val_aucs,
                    selection=selection, tfidf=tfidf)


def ModelConfigCopy(cfg, **overrides):
    from .model import ModelConfig

    obj = cfg.to_json()
    obj.update(overrides)
    return ModelConfig.from_json(obj)


def _parallel_folds(jobs_args, jobs):
    from concurrent.futures import ProcessPoolExecutor

    try:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_train_fold, jobs_args))
    except (OSError, PermissionError):
        return [_train_fold(a) for a in jobs_args]
