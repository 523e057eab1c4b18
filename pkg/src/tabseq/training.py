"""Training mechanisms: direct supervised training, and decoupled masked-cell
pretraining followed by fine-tuning, plus token masking, entity-level data
splitting, and shipped hyperparameter presets.

Everything here is deterministic given (config, seed, data): batch order,
dropout masks, and token masks are all drawn from streams derived from the
run seed, and Adam updates are serial.
"""

from __future__ import annotations

import csv
import importlib.resources
import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DivergenceError, VocabularyMismatch
from .metrics import f1, rmse
from .models import HierarchicalModel, ModelSpec, build_model
from .nn import Adam, cross_entropy, mse
from .nn import tensor as T
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .preprocess import MASK, N_SPECIALS, PreprocessArtifact
from .schema import SequenceWindow


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    dropout: float = 0.0
    batch_size: int = 64
    epochs: int = 10
    mlm_probability: float | None = None
    window_size: int = 10
    stride: int = 5
    seed: int = 0
    patience: int | None = 5
    val_fraction: float = 0.15
    test_fraction: float = 0.15

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ConfigError("learning rate must be >= 0")
        if self.optimizer != "adam":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.mlm_probability is not None and not 0.0 < self.mlm_probability < 1.0:
            raise ConfigError("MLM probability must lie in (0, 1)")

    def to_json(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}

    @classmethod
    def from_json(cls, doc: dict) -> "TrainConfig":
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(f"bad train config: {exc}") from exc


@dataclass
class TrainHistory:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_metric: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def append(self, epoch, train_loss, val_loss, val_metric, seconds):
        self.epochs.append(epoch)
        self.train_loss.append(train_loss)
        self.val_loss.append(val_loss)
        self.val_metric.append(val_metric)
        self.seconds.append(seconds)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "val_metric", "seconds"])
            for row in zip(self.epochs, self.train_loss, self.val_loss,
                           self.val_metric, self.seconds):
                writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def split_entity_names(entities, val_fraction: float, test_fraction: float, seed: int):
    """Shuffle entity names and partition them into (train, val, test) sets."""
    entities = sorted(entities)
    order = _rng(seed, 0xE).permutation(len(entities))
    shuffled = [entities[i] for i in order]
    n_val = int(round(val_fraction * len(entities)))
    n_test = int(round(test_fraction * len(entities)))
    val_set = set(shuffled[:n_val])
    test_set = set(shuffled[n_val : n_val + n_test])
    train_set = set(shuffled[n_val + n_test :])
    return train_set, val_set, test_set


def split_entities(windows: list[SequenceWindow], val_fraction: float,
                   test_fraction: float, seed: int):
    """Partition windows entity-wise into train/val/test (no entity leakage)."""
    train_set, val_set, test_set = split_entity_names(
        {w.entity for w in windows}, val_fraction, test_fraction, seed
    )
    train = [w for w in windows if w.entity in train_set]
    val = [w for w in windows if w.entity in val_set]
    test = [w for w in windows if w.entity in test_set]
    return train, val, test


def mask_tokens(ids: np.ndarray, p: float, rng: np.random.Generator):
    """Independently mask non-special cells with probability p.

    Returns (masked ids, boolean mask, original ids). Cells already holding
    special tokens (PAD/MASK/UNK/CLS) are never selected.
    """
    if not 0.0 < p < 1.0:
        raise ConfigError("masking probability must lie in (0, 1)")
    eligible = ids >= N_SPECIALS
    mask = (rng.random(ids.shape) < p) & eligible
    masked = ids.copy()
    masked[mask] = MASK
    return masked, mask, ids


def _forward(model, inputs, train, rng):
    if isinstance(model, HierarchicalModel):
        ids, raw = inputs
        return model(ids, raw=raw, train=train, rng=rng)
    (x,) = inputs
    return model(x, train=train, rng=rng)


def _batch(inputs, idx):
    return tuple(a[idx] if a is not None else None for a in inputs)


def _supervised_loss(model, inputs, y, train=False, rng=None):
    out = _forward(model, inputs, train, rng)
    if model.spec.head == "binary":
        return cross_entropy(out, y.astype(np.int64))
    return mse(T.reshape(out, y.shape), T.Tensor(y))


def predict_scores(model, inputs, batch_size: int = 512) -> np.ndarray:
    """Positive-class probability (binary head) or raw prediction (regressor)."""
    n = len(inputs[0])
    out = []
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        logits = _forward(model, _batch(inputs, idx), False, None).data
        if model.spec.head == "binary":
            shifted = logits - logits.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            out.append(e[:, 1] / e.sum(axis=1))
        else:
            out.append(logits.reshape(-1))
    return np.concatenate(out)


def _val_metric(model, inputs, y) -> float:
    scores = predict_scores(model, inputs)
    if model.spec.head == "binary":
        return f1(scores >= 0.5, y)[2]
    return -rmse(scores, y)  # higher is better, like the F1 branch


def _check_divergence(losses: list[float]) -> None:
    if not np.isfinite(losses[-1]):
        raise DivergenceError(f"loss became non-finite at epoch {len(losses)}")
    if len(losses) >= 4 and all(l > 10.0 * losses[0] for l in losses[-3:]):
        raise DivergenceError("loss exceeded 10x its initial value for 3 epochs")


def _fit(model, loss_fn, n_train, eval_fn, cfg: TrainConfig):
    """Shared mini-batch loop: seeded shuffling, Adam, early stopping on the
    monitored loss, best-state restoration."""
    opt = Adam(model.trainable_parameters(), lr=cfg.learning_rate)
    history = TrainHistory()
    best_loss, best_state, since_best = np.inf, None, 0
    train_losses = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = _rng(cfg.seed, 1, epoch).permutation(n_train)
        drop_rng = _rng(cfg.seed, 2, epoch)
        batch_losses = []
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            opt.zero_grad()
            loss = loss_fn(idx, drop_rng)
            loss.backward()
            opt.step()
            batch_losses.append(loss.item())
        train_loss = float(np.mean(batch_losses))
        train_losses.append(train_loss)
        _check_divergence(train_losses)

        val_loss, val_metric = eval_fn()
        monitored = train_loss if val_loss is None else val_loss
        history.append(epoch, train_loss, np.nan if val_loss is None else val_loss,
                       np.nan if val_metric is None else val_metric,
                       time.perf_counter() - t0)
        if monitored < best_loss:
            best_loss, best_state, since_best = monitored, model.state(), 0
        else:
            since_best += 1
            if cfg.patience is not None and since_best >= cfg.patience:
                break
    if best_state is not None:
        model.load_state(best_state)
    return model, history, best_loss


def train_supervised(model, train_data, val_data, cfg: TrainConfig):
    """Direct supervised training; returns (best model, history).

    ``train_data``/``val_data`` are (inputs, labels) pairs where inputs is a
    tuple of arrays matching the model family (features, or ids plus raw
    values).
    """
    train_inputs, train_y = train_data
    n_train = len(train_y)
    if n_train == 0:
        raise ConfigError("no training samples")

    def loss_fn(idx, drop_rng):
        return _supervised_loss(model, _batch(train_inputs, idx), train_y[idx],
                                train=True, rng=drop_rng)

    def eval_fn():
        if val_data is None or len(val_data[1]) == 0:
            return None, None
        val_inputs, val_y = val_data
        losses = []
        for start in range(0, len(val_y), 512):
            idx = np.arange(start, min(start + 512, len(val_y)))
            losses.append(
                (_supervised_loss(model, _batch(val_inputs, idx), val_y[idx]).item(),
                 len(idx))
            )
        val_loss = sum(l * n for l, n in losses) / len(val_y)
        return val_loss, _val_metric(model, val_inputs, val_y)

    model, history, _ = _fit(model, loss_fn, n_train, eval_fn, cfg)
    return model, history


def pretrain_mlm(model: HierarchicalModel, ids: np.ndarray, raw: np.ndarray | None,
                 cfg: TrainConfig):
    """Masked-cell pretraining; monitors and early-stops on the training loss."""
    if cfg.mlm_probability is None:
        raise ConfigError("pretraining needs an MLM probability")
    n = len(ids)
    if n == 0:
        raise ConfigError("no pretraining windows")

    def loss_fn(idx, drop_rng):
        # fresh mask pattern per batch, drawn from the epoch's seeded stream
        masked, mask, targets = mask_tokens(ids[idx], cfg.mlm_probability, drop_rng)
        return model.mlm_loss(masked, targets, mask,
                              raw=raw[idx] if raw is not None else None,
                              train=True, rng=drop_rng)

    model, history, _ = _fit(model, loss_fn, n, lambda: (None, None), cfg)
    return model, history


def save_pretrained(path, model: HierarchicalModel, artifact: PreprocessArtifact,
                    seed: int) -> None:
    save_checkpoint(path, model.state(), model.spec.to_json(),
                    vocab_hash=artifact.content_hash(), seed=seed)


def fine_tune(checkpoint_path, train_data, val_data, cfg: TrainConfig,
              artifact: PreprocessArtifact, head: str = "binary"):
    """Attach a fresh task head to a pretrained encoder and train end to end."""
    header, state = load_checkpoint(checkpoint_path)
    if header["vocab_hash"] != artifact.content_hash():
        raise VocabularyMismatch(
            "checkpoint was built against a different preprocessing artifact"
        )
    spec = replace(ModelSpec.from_json(header["model_spec"]), head=head)
    model = build_model(spec, seed=cfg.seed, vocab=artifact.vocab)
    encoder_state = {k: v for k, v in state.items() if not k.startswith("task_head.")}
    for name, tensor in model.named_parameters().items():
        if name in encoder_state:
            tensor.data = np.asarray(encoder_state[name], dtype=tensor.data.dtype).copy()
    return train_supervised(model, train_data, val_data, cfg)


# -- shipped presets --------------------------------------------------------

PRESET_NAMES = (
    "fraud_tabbert",
    "fraud_twintower",
    "fraud_luna",
    "default_tabbert",
    "default_twintower",
    "default_lightgbm",
)


def load_preset(name: str) -> dict:
    """Load a shipped hyperparameter preset by name (verbatim JSON)."""
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    ref = importlib.resources.files("tabseq.presets").joinpath(f"{name}.json")
    return json.loads(ref.read_text(encoding="utf-8"))


def preset_train_config(preset: dict, **overrides) -> TrainConfig:
    """Map a preset document onto a TrainConfig (architecture fields ignored)."""
    kwargs = dict(
        learning_rate=preset["learning_rate"],
        optimizer=preset.get("optimizer", "adam").lower(),
        dropout=preset.get("dropout", 0.0),
        batch_size=preset["batch_size"],
        mlm_probability=preset.get("mlm_probability"),
        window_size=preset["window_size"],
        stride=preset.get("stride") or 1,
    )
    if preset.get("seed") is not None:
        kwargs["seed"] = preset["seed"]
    kwargs.update(overrides)
    return TrainConfig(**kwargs)
