"""Encoder, interpolator and decoder networks and their three losses.

Shapes: a batch of grids is ``[B, T, P, C]``; a single grid ``[T, P, C]`` is
treated as ``B = 1``. Patches are flattened step-major, channel-minor, so a
patch ``[P, C]`` becomes the vector ``patch.reshape(P * C)``.

Parameter names are ``enc.*`` (stacked GRU + projection to the latent
width), ``interp.*`` (dense layers) and ``dec.*`` (stacked GRU + projection
back to patch space). There is no mask-token parameter: masked slots enter
the interpolator as zero codes with a zero in the visibility indicator.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node, ParamStore
from .data import NormStats


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    T: int
    P: int
    C: int
    d: int = 8
    enc_layers: int = 2
    dec_layers: int = 2
    enc_hidden: int = 24
    dec_hidden: int = 24
    interp_layers: int = 3  # dense layers in total: tanh hidden layers, then a linear output
    interp_hidden: int | None = None  # defaults to 4 * T * d
    seed: int = 0

    def __post_init__(self):
        if self.interp_hidden is None:
            object.__setattr__(self, "interp_hidden", 4 * self.T * self.d)
        for k, v in asdict(self).items():
            if k != "seed" and v < 1:
                raise ModelError(f"config field {k} must be positive, got {v}")
        if self.d > self.enc_hidden:
            raise ModelError(f"latent width {self.d} exceeds encoder hidden width {self.enc_hidden}")

    @property
    def patch_dim(self) -> int:
        return self.P * self.C


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter name and shape, in initialization order."""
    shapes: dict[str, tuple[int, ...]] = {}

    def gru(prefix, n_in, n_hidden):
        for gate in ("z", "r", "h"):
            shapes[f"{prefix}.W_{gate}"] = (n_in, n_hidden)
            shapes[f"{prefix}.U_{gate}"] = (n_hidden, n_hidden)
            shapes[f"{prefix}.b_{gate}"] = (n_hidden,)

    n_in = cfg.patch_dim
    for i in range(cfg.enc_layers):
        gru(f"enc.gru{i}", n_in, cfg.enc_hidden)
        n_in = cfg.enc_hidden
    shapes["enc.proj.W"] = (cfg.enc_hidden, cfg.d)
    shapes["enc.proj.b"] = (cfg.d,)

    # interp_layers dense layers in total; the last one is linear onto the grid
    n_in = cfg.T * (cfg.d + 1)
    last = cfg.interp_layers - 1
    for i in range(last):
        shapes[f"interp.fc{i}.W"] = (n_in, cfg.interp_hidden)
        shapes[f"interp.fc{i}.b"] = (cfg.interp_hidden,)
        n_in = cfg.interp_hidden
    shapes[f"interp.fc{last}.W"] = (n_in, cfg.T * cfg.d)
    shapes[f"interp.fc{last}.b"] = (cfg.T * cfg.d,)

    n_in = cfg.d
    for i in range(cfg.dec_layers):
        gru(f"dec.gru{i}", n_in, cfg.dec_hidden)
        n_in = cfg.dec_hidden
    shapes["dec.proj.W"] = (cfg.dec_hidden, cfg.patch_dim)
    shapes["dec.proj.b"] = (cfg.patch_dim,)
    return shapes


@dataclass
class ModelBundle:
    config: ModelConfig
    params: ParamStore
    norm: NormStats | None = None

    def __post_init__(self):
        expected = param_shapes(self.config)
        if list(expected) != self.params.names():
            raise ModelError("parameter names do not match the configuration")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ModelError(
                    f"parameter {name!r} has shape {list(self.params[name].shape)}, expected {list(shape)}"
                )

    def copy(self) -> "ModelBundle":
        return ModelBundle(self.config, self.params.copy(), self.norm)


def init_params(cfg: ModelConfig, norm: NormStats | None = None) -> ModelBundle:
    """Glorot-uniform weights, zero biases, update-gate biases at +1."""
    rng = np.random.default_rng(cfg.seed)
    store = ParamStore()
    for name, shape in param_shapes(cfg).items():
        if len(shape) == 2:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            store.add(name, rng.uniform(-bound, bound, size=shape))
        elif name.endswith(".b_z"):
            store.add(name, np.ones(shape))
        else:
            store.add(name, np.zeros(shape))
    return ModelBundle(cfg, store, norm)


@dataclass
class LatentGrid:
    codes: Node  # [B, T, d]
    visible: np.ndarray  # [T], 1.0 where the slot holds an encoded patch

    @property
    def complete(self) -> bool:
        return bool(np.all(self.visible == 1.0))


def _dense(params: ParamStore, prefix: str, x: Node) -> Node:
    W = params.leaf(f"{prefix}.W")
    b = params.leaf(f"{prefix}.b")
    return ad.add(ad.matmul(x, W), ad.broadcast_rows(b, x.shape[0]))


def gru_cell(params: ParamStore, prefix: str, x: Node, h: Node) -> Node:
    """One GRU step; ``h' = z * h + (1 - z) * candidate``."""
    B = x.shape[0]

    def gate(g, hidden):
        return ad.add(
            ad.add(ad.matmul(x, params.leaf(f"{prefix}.W_{g}")), ad.matmul(hidden, params.leaf(f"{prefix}.U_{g}"))),
            ad.broadcast_rows(params.leaf(f"{prefix}.b_{g}"), B),
        )

    z = ad.sigmoid(gate("z", h))
    r = ad.sigmoid(gate("r", h))
    cand = ad.tanh(gate("h", ad.mul(r, h)))
    return ad.add(ad.mul(z, h), ad.sub(cand, ad.mul(z, cand)))


def run_gru(params: ParamStore, prefix: str, layers: int, hidden: int, steps: list[Node]) -> list[Node]:
    """Stacked GRU over a list of ``[B, n_in]`` inputs; returns top-layer states."""
    B = steps[0].shape[0]
    seq = steps
    for i in range(layers):
        h = ad.constant(np.zeros((B, hidden)))
        out = []
        for x in seq:
            h = gru_cell(params, f"{prefix}.gru{i}", x, h)
            out.append(h)
        seq = out
    return seq


def _batched(x) -> Node:
    x = ad.as_node(x)
    if x.value.ndim == 3:
        x = ad.reshape(x, (1,) + x.shape)
    if x.value.ndim != 4:
        raise ModelError(f"expected patches [B, K, P, C] or [K, P, C], got {list(x.shape)}")
    return x


def encode(bundle: ModelBundle, patches, slot_indices) -> LatentGrid:
    """Encode ``K`` visible patches and place their codes at ``slot_indices``."""
    cfg = bundle.config
    x = _batched(patches)
    B, K = x.shape[0], x.shape[1]
    slots = [int(s) for s in slot_indices]
    if K < 1:
        raise ModelError("encoder needs at least one visible patch")
    if len(slots) != K:
        raise ModelError(f"{K} patches but {len(slots)} slot indices")
    if any(s < 0 or s >= cfg.T for s in slots) or any(b <= a for a, b in zip(slots, slots[1:])):
        raise ModelError(f"slot indices {slots} must be strictly increasing within [0, {cfg.T})")
    if x.shape[2:] != (cfg.P, cfg.C):
        raise ModelError(f"patch shape {list(x.shape[2:])} does not match config ({cfg.P}, {cfg.C})")

    flat = ad.reshape(x, (B, K, cfg.patch_dim))
    steps = [ad.take(flat, (slice(None), k)) for k in range(K)]
    tops = run_gru(bundle.params, "enc", cfg.enc_layers, cfg.enc_hidden, steps)
    codes = {s: _dense(bundle.params, "enc.proj", h) for s, h in zip(slots, tops)}
    zero = ad.constant(np.zeros((B, cfg.d)))
    grid = ad.stack([codes.get(t, zero) for t in range(cfg.T)], axis=1)
    visible = np.zeros(cfg.T)
    visible[slots] = 1.0
    return LatentGrid(grid, visible)


def interpolate(bundle: ModelBundle, grid: LatentGrid) -> LatentGrid:
    """Restore a complete latent grid from the visible codes and the indicator."""
    cfg = bundle.config
    if not np.any(grid.visible == 1.0):
        raise ModelError("interpolator requires at least one visible code")
    B = grid.codes.shape[0]
    flat = ad.reshape(grid.codes, (B, cfg.T * cfg.d))
    indicator = ad.constant(np.tile(grid.visible, (B, 1)))
    h = ad.concat([flat, indicator], axis=1)
    for i in range(cfg.interp_layers - 1):
        h = ad.tanh(_dense(bundle.params, f"interp.fc{i}", h))
    out = _dense(bundle.params, f"interp.fc{cfg.interp_layers - 1}", h)
    return LatentGrid(ad.reshape(out, (B, cfg.T, cfg.d)), np.ones(cfg.T))


def decode(bundle: ModelBundle, grid: LatentGrid) -> Node:
    """Map a complete latent grid to patches ``[B, T, P, C]``."""
    cfg = bundle.config
    if not grid.complete:
        raise ModelError("decoder needs a fully populated latent grid")
    B = grid.codes.shape[0]
    steps = [ad.take(grid.codes, (slice(None), t)) for t in range(cfg.T)]
    tops = run_gru(bundle.params, "dec", cfg.dec_layers, cfg.dec_hidden, steps)
    out = ad.stack([_dense(bundle.params, "dec.proj", h) for h in tops], axis=1)
    return ad.reshape(out, (B, cfg.T, cfg.P, cfg.C))


def autoencode(bundle: ModelBundle, x) -> Node:
    """Full-visibility path E -> D used in pretraining (no interpolator)."""
    x = _batched(x)
    grid = encode(bundle, x, range(bundle.config.T))
    return decode(bundle, grid)


def masked_forward(bundle: ModelBundle, x, masked) -> Node:
    """E on visible patches -> I -> D; returns patches for all ``T`` slots."""
    x = _batched(x)
    hidden = set(int(i) for i in masked)
    visible = [t for t in range(bundle.config.T) if t not in hidden]
    grid = encode(bundle, ad.take(x, (slice(None), visible)), visible)
    return decode(bundle, interpolate(bundle, grid))


def _patch_norm_loss(op: str, a, b) -> Node:
    a, b = ad.as_node(a), ad.as_node(b)
    if a.shape != b.shape:
        raise ad.ShapeError(f"{op}: shape mismatch {list(a.shape)} vs {list(b.shape)}")
    if a.value.ndim < 2:
        raise ad.ShapeError(f"{op}: expected at least [T, ...], got {list(a.shape)}")
    if a.value.ndim == 2 or (op != "loss_embed" and a.value.ndim == 3):
        a = ad.reshape(a, (1,) + a.shape)
        b = ad.reshape(b, (1,) + b.shape)
    B, T = a.shape[0], a.shape[1]
    diff = ad.reshape(ad.sub(a, b), (B, T, -1))
    norms = ad.sqrt_eps(ad.sum(ad.mul(diff, diff), axis=2))
    return ad.scale(ad.sum(norms), 1.0 / B)


def loss_auto(x, x_hat) -> Node:
    """Sum over patches of the unsquared L2 patch error, averaged over the batch."""
    return _patch_norm_loss("loss_auto", x, x_hat)


def loss_recon(x, x_hat) -> Node:
    """Same form as :func:`loss_auto`; ``x_hat`` comes from the masked path."""
    return _patch_norm_loss("loss_recon", x, x_hat)


def loss_embed(teacher, restored) -> Node:
    """Sum of code distances at masked slots, ``[M, d]`` or ``[B, M, d]``.

    The teacher side is detached, so no gradient reaches whatever produced it.
    """
    teacher = ad.detach(ad.as_node(teacher))
    restored = ad.as_node(restored)
    if restored.value.ndim >= 2 and restored.shape[-2] == 0:
        raise ModelError("embedding loss undefined with no masked patches")
    return _patch_norm_loss("loss_embed", teacher, restored)


def embed_pair(bundle: ModelBundle, x, masked) -> tuple[Node, Node]:
    """Teacher codes (full input, detached) and restored codes at ``masked`` slots."""
    cfg = bundle.config
    x = _batched(x)
    masked = sorted(int(i) for i in masked)
    if not masked:
        raise ModelError("embedding loss undefined with no masked patches")
    teacher = encode(bundle, ad.detach(x), range(cfg.T)).codes
    teacher = ad.detach(ad.take(teacher, (slice(None), masked)))
    visible = [t for t in range(cfg.T) if t not in set(masked)]
    grid = encode(bundle, ad.take(x, (slice(None), visible)), visible)
    # encoder frozen while the interpolator learns
    grid = LatentGrid(ad.detach(grid.codes), grid.visible)
    restored = ad.take(interpolate(bundle, grid).codes, (slice(None), masked))
    return teacher, restored
