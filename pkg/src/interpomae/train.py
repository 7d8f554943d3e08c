"""Three-phase training, Adam, and checkpoint persistence.

Phase 1 pretrains encoder and decoder as a plain autoencoder, phase 2 fits
the interpolator to teacher codes with everything else frozen, phase 3 trains
all three networks on masked inputs. Training state is resumable at every
epoch boundary, and resuming reproduces the uninterrupted run bitwise.
"""

from __future__ import annotations

import io
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore
from .data import Blocks, MaskSpec, NormStats, Uniform, UniformRange, check_mask_spec, min_masked, sample_mask
from .model import ModelBundle, ModelConfig, autoencode, embed_pair, loss_auto, loss_embed, loss_recon, masked_forward

log = logging.getLogger(__name__)

PHASE_PREFIXES = {1: ("enc.", "dec."), 2: ("interp.",), 3: ("enc.", "interp.", "dec.")}
DONE = 4


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    phase1_epochs: int = 200
    phase2_epochs: int = 200
    phase3_epochs: int = 400
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    mask_spec: MaskSpec = Uniform(2)
    seed: int = 0
    shuffle: bool = True
    joint_mask_spec: MaskSpec | None = None  # phase-3 override of mask_spec

    def __post_init__(self):
        if min(self.phase1_epochs, self.phase2_epochs, self.phase3_epochs) < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")

    def phase_mask(self, phase: int) -> MaskSpec:
        if phase == 3 and self.joint_mask_spec is not None:
            return self.joint_mask_spec
        return self.mask_spec

    def epochs(self, phase: int) -> int:
        return (self.phase1_epochs, self.phase2_epochs, self.phase3_epochs)[phase - 1]


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: ParamStore,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place, for every name in ``grads``."""
    state.t += 1
    t = state.t
    for name, g in grads.items():
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        params[name] = params[name] - lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class TrainState:
    """Everything needed to continue a run from an epoch boundary."""

    bundle: ModelBundle
    config: TrainConfig
    phase: int = 1
    epoch: int = 0  # completed epochs within ``phase``
    adam: AdamState = field(default_factory=AdamState)
    rng_state: dict = field(default_factory=dict)
    history: list[tuple[int, int, float]] = field(default_factory=list)

    @classmethod
    def start(cls, bundle: ModelBundle, config: TrainConfig) -> "TrainState":
        rng = np.random.default_rng(config.seed)
        state = cls(bundle.copy(), config, rng_state=rng.bit_generator.state)
        state._skip_empty_phases()
        return state

    @property
    def done(self) -> bool:
        return self.phase >= DONE

    def _skip_empty_phases(self):
        while not self.done and self.epoch >= self.config.epochs(self.phase):
            self.phase += 1
            self.epoch = 0
            self.adam = AdamState()


def _batch_loss(phase: int, bundle: ModelBundle, x: np.ndarray, spec: MaskSpec, rng) -> ad.Node:
    T = bundle.config.T
    if phase == 1:
        return loss_auto(x, autoencode(bundle, x))
    mask = sample_mask(T, spec, rng)
    if phase == 2:
        teacher, restored = embed_pair(bundle, x, mask.masked)
        return loss_embed(teacher, restored)
    return loss_recon(x, masked_forward(bundle, x, mask.masked))


def _check_data(bundle: ModelBundle, data: np.ndarray) -> None:
    cfg = bundle.config
    if data.ndim != 4 or len(data) == 0:
        raise TrainingError(f"training data must be a non-empty [n, T, P, C] array, got shape {data.shape}")
    if data.shape[1:] != (cfg.T, cfg.P, cfg.C):
        raise TrainingError(f"data grid {data.shape[1:]} does not match model ({cfg.T}, {cfg.P}, {cfg.C})")


def run_epoch(state: TrainState, data: np.ndarray) -> float:
    """Train one epoch of the current phase and return its mean loss."""
    cfg = state.config
    phase = state.phase
    spec = cfg.phase_mask(phase)
    if phase in (2, 3):
        check_mask_spec(state.bundle.config.T, spec)
        if phase == 2 and min_masked(spec) == 0:
            raise TrainingError("phase 2 needs at least one masked patch (embedding loss undefined)")
    rng = np.random.default_rng()
    rng.bit_generator.state = state.rng_state
    order = rng.permutation(len(data)) if cfg.shuffle else np.arange(len(data))
    prefixes = PHASE_PREFIXES[phase]
    total = 0.0
    for b, start in enumerate(range(0, len(data), cfg.batch_size)):
        x = data[order[start : start + cfg.batch_size]]
        try:
            loss = _batch_loss(phase, state.bundle, x, spec, rng)
        except ad.NonFiniteError as exc:
            raise TrainingError(f"phase {phase}, epoch {state.epoch + 1}, batch {b}: {exc}") from exc
        value = float(loss.value)
        if not np.isfinite(value):
            raise TrainingError(f"phase {phase}, epoch {state.epoch + 1}, batch {b}: non-finite loss")
        grads = ad.backward(loss, state.bundle.params)
        grads = {k: g for k, g in grads.items() if k.startswith(prefixes)}
        adam_step(state.bundle.params, grads, state.adam, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        total += value * len(x)
    mean = total / len(data)
    state.rng_state = rng.bit_generator.state
    state.epoch += 1
    state.history.append((phase, state.epoch, mean))
    log.info("phase %d epoch %d loss %.6g", phase, state.epoch, mean)
    state._skip_empty_phases()
    return mean


def fit(
    state: TrainState,
    data: np.ndarray,
    max_epochs: int | None = None,
    on_epoch: Callable[[TrainState], None] | None = None,
) -> TrainState:
    """Run epochs until training is done (or ``max_epochs`` more have run)."""
    _check_data(state.bundle, data)
    count = 0
    while not state.done and (max_epochs is None or count < max_epochs):
        run_epoch(state, data)
        count += 1
        if on_epoch is not None:
            on_epoch(state)
    return state


def train(bundle: ModelBundle, data: np.ndarray, config: TrainConfig) -> tuple[ModelBundle, list[tuple[int, int, float]]]:
    """All three phases from scratch; returns the trained bundle and loss log."""
    state = fit(TrainState.start(bundle, config), data)
    return state.bundle, state.history


def _single_phase(phase: int, bundle: ModelBundle, data: np.ndarray, config: TrainConfig):
    epochs = [0, 0, 0]
    epochs[phase - 1] = config.epochs(phase)
    cfg = TrainConfig(**{**_config_fields(config), "phase1_epochs": epochs[0], "phase2_epochs": epochs[1], "phase3_epochs": epochs[2]})
    _check_data(bundle, data)
    if phase == 2:
        check_mask_spec(bundle.config.T, cfg.mask_spec)
        if min_masked(cfg.mask_spec) == 0:
            raise TrainingError("phase 2 needs at least one masked patch (embedding loss undefined)")
    state = fit(TrainState.start(bundle, cfg), data)
    return state.bundle, [loss for _, _, loss in state.history]


def phase1_pretrain(bundle, data, config):
    """Autoencoder pretraining of encoder and decoder; returns ``(bundle, losses)``."""
    return _single_phase(1, bundle, data, config)


def phase2_interpolator(bundle, data, config):
    """Embedding-loss training of the interpolator only."""
    return _single_phase(2, bundle, data, config)


def phase3_joint(bundle, data, config):
    """Joint reconstruction-loss training of encoder, interpolator and decoder."""
    return _single_phase(3, bundle, data, config)


def _config_fields(config: TrainConfig) -> dict:
    return {f: getattr(config, f) for f in TrainConfig.__dataclass_fields__}


def write_log(history, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write("phase,epoch,loss\n")
        for phase, epoch, loss in history:
            fh.write(f"{phase},{epoch},{loss!r}\n")


# ---------------------------------------------------------------- checkpoints
#
# Layout: the 8-byte magic b"IMAECKPT", a little-endian uint32 format version,
# a uint64 header length, the UTF-8 JSON header (sorted keys), then float64
# little-endian blobs in the order listed in header["tensors"], each entry
# {"name", "shape", "offset"} with offset counted from the end of the header.

MAGIC = b"IMAECKPT"
VERSION = 1


def _spec_to_json(spec: MaskSpec | None) -> dict | None:
    if spec is None:
        return None
    if isinstance(spec, Uniform):
        return {"mode": "uniform", "m": spec.m}
    if isinstance(spec, UniformRange):
        return {"mode": "range", "lo": spec.lo, "hi": spec.hi}
    return {"mode": "blocks", "count": spec.count, "size": spec.size}


def _spec_from_json(d: dict | None) -> MaskSpec | None:
    if d is None:
        return None
    if d["mode"] == "uniform":
        return Uniform(int(d["m"]))
    if d["mode"] == "range":
        return UniformRange(int(d["lo"]), int(d["hi"]))
    return Blocks(int(d["count"]), int(d["size"]))


def save_checkpoint(path: str | Path, state: TrainState) -> None:
    Path(path).write_bytes(checkpoint_bytes(state))


def checkpoint_bytes(state: TrainState) -> bytes:
    tensors: list[tuple[str, np.ndarray]] = []
    tensors += [(f"param/{k}", v) for k, v in state.bundle.params.items()]
    tensors += [(f"adam_m/{k}", v) for k, v in state.adam.m.items()]
    tensors += [(f"adam_v/{k}", v) for k, v in state.adam.v.items()]
    norm = state.bundle.norm
    if norm is not None:
        tensors += [("norm/min", norm.min), ("norm/max", norm.max)]

    index, blobs, offset = [], [], 0
    for name, arr in tensors:
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)

    train_cfg = _config_fields(state.config)
    train_cfg["mask_spec"] = _spec_to_json(state.config.mask_spec)
    train_cfg["joint_mask_spec"] = _spec_to_json(state.config.joint_mask_spec)
    header = {
        "model_config": asdict(state.bundle.config),
        "train_config": train_cfg,
        "phase": state.phase,
        "epoch": state.epoch,
        "adam_t": state.adam.t,
        "rng_state": state.rng_state,
        "history": [[p, e, repr(l)] for p, e, l in state.history],
        "tensors": index,
        "data_bytes": offset,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IQ", VERSION, len(head)))
    buf.write(head)
    for raw in blobs:
        buf.write(raw)
    return buf.getvalue()


def load_checkpoint(path: str | Path) -> TrainState:
    return checkpoint_from_bytes(Path(path).read_bytes())


def checkpoint_from_bytes(raw: bytes) -> TrainState:
    if len(raw) < len(MAGIC) + 12:
        raise CheckpointError("unexpected end of checkpoint")
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, head_len = struct.unpack_from("<IQ", raw, len(MAGIC))
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version {version} not supported (expected {VERSION})")
    start = len(MAGIC) + 12
    if len(raw) < start + head_len:
        raise CheckpointError("unexpected end of checkpoint")
    header = json.loads(raw[start : start + head_len].decode())
    body = raw[start + head_len :]
    if len(body) < header["data_bytes"]:
        raise CheckpointError("unexpected end of checkpoint")
    if len(body) > header["data_bytes"]:
        raise CheckpointError("trailing bytes after checkpoint data")

    arrays: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arrays[entry["name"]] = np.frombuffer(body, dtype="<f8", count=count, offset=entry["offset"]).reshape(shape).astype(np.float64)

    model_cfg = ModelConfig(**header["model_config"])
    params = ParamStore((k[len("param/"):], v) for k, v in arrays.items() if k.startswith("param/"))
    norm = None
    if "norm/min" in arrays:
        norm = NormStats(arrays["norm/min"], arrays["norm/max"])
    try:
        bundle = ModelBundle(model_cfg, params, norm)
    except ValueError as exc:
        raise CheckpointError(f"checkpoint shape mismatch: {exc}") from exc

    tc = dict(header["train_config"])
    tc["mask_spec"] = _spec_from_json(tc["mask_spec"])
    tc["joint_mask_spec"] = _spec_from_json(tc.get("joint_mask_spec"))
    adam = AdamState(
        {k[len("adam_m/"):]: v for k, v in arrays.items() if k.startswith("adam_m/")},
        {k[len("adam_v/"):]: v for k, v in arrays.items() if k.startswith("adam_v/")},
        header["adam_t"],
    )
    return TrainState(
        bundle,
        TrainConfig(**tc),
        header["phase"],
        header["epoch"],
        adam,
        header["rng_state"],
        [(p, e, float(l)) for p, e, l in header["history"]],
    )
