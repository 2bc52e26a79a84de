"""GCN embedding refiner with cosine and FC pair scorers.

Each GCN layer computes ``H' = L H W^T`` with no bias and no activation, so a
stack of layers is a linear map of the propagated features. The general
message-passing form (message function, aggregation, update) is not
implemented; a new layer type would slot in next to ``gcn_forward`` with its
own backward rule in :mod:`graphdiar.losses`.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import _kernels
from .graph import DegenerateInputError

MODEL_MAGIC = b"GNNREF1\n"
SCORERS = ("cosine", "fc")
_SCORER_TAG = {"cosine": 0, "fc": 1}
DEFAULT_FC_HIDDEN = 64


class ConfigError(ValueError):
    pass


class UsageError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class FCHead:
    w_hidden: np.ndarray  # (H, 2 D')
    b_hidden: np.ndarray  # (H,)
    w_out: np.ndarray  # (H,)
    b_out: np.ndarray  # (1,)

    @property
    def hidden(self) -> int:
        return self.w_hidden.shape[0]


@dataclass(frozen=True, eq=False)
class RefinerModel:
    gcn_weights: tuple
    scorer: str = "cosine"
    fc: Optional[FCHead] = None

    def __post_init__(self):
        ws = tuple(np.array(w, dtype=np.float64) for w in self.gcn_weights)
        if not ws:
            raise ConfigError("model needs at least one GCN layer")
        for k in range(1, len(ws)):
            if ws[k].shape[1] != ws[k - 1].shape[0]:
                raise ConfigError(
                    f"layer {k} expects input dim {ws[k].shape[1]}, previous layer outputs {ws[k - 1].shape[0]}"
                )
        if self.scorer not in SCORERS:
            raise ConfigError(f"unknown scorer {self.scorer!r}")
        if self.scorer == "fc":
            if self.fc is None:
                raise ConfigError("fc scorer requires FC parameters")
            if self.fc.w_hidden.shape[1] != 2 * ws[-1].shape[0]:
                raise ConfigError("FC input dim must be twice the GCN output dim")
        for w in ws:
            w.setflags(write=False)
        object.__setattr__(self, "gcn_weights", ws)
        for name, arr in self.params().items():
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"parameter {name} is not finite")

    @property
    def dims(self) -> list:
        return [self.gcn_weights[0].shape[1]] + [w.shape[0] for w in self.gcn_weights]

    @property
    def in_dim(self) -> int:
        return self.gcn_weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.gcn_weights[-1].shape[0]

    def params(self) -> dict:
        """Named parameter arrays, in checkpoint order."""
        out = {f"gcn.{k}": w for k, w in enumerate(self.gcn_weights)}
        if self.fc is not None:
            out["fc.w_hidden"] = self.fc.w_hidden
            out["fc.b_hidden"] = self.fc.b_hidden
            out["fc.w_out"] = self.fc.w_out
            out["fc.b_out"] = self.fc.b_out
        return out

    def with_params(self, params: dict) -> "RefinerModel":
        ws = [params[f"gcn.{k}"] for k in range(len(self.gcn_weights))]
        fc = None
        if self.fc is not None:
            fc = FCHead(
                np.array(params["fc.w_hidden"], dtype=np.float64),
                np.array(params["fc.b_hidden"], dtype=np.float64),
                np.array(params["fc.w_out"], dtype=np.float64),
                np.array(params["fc.b_out"], dtype=np.float64).reshape(1),
            )
        return RefinerModel(tuple(ws), self.scorer, fc)

    def checksum(self) -> str:
        return hashlib.sha256(model_to_bytes(self)).hexdigest()


def identity_model(dim: int, n_layers: int = 2) -> RefinerModel:
    return RefinerModel(tuple(np.eye(dim) for _ in range(n_layers)), "cosine")


def init_model(dims, scorer: str = "cosine", seed: int = 0, fc_hidden: int = DEFAULT_FC_HIDDEN) -> RefinerModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for every parameter.

    ``dims`` lists the feature size at each layer boundary, e.g. ``[128, 64, 64]``
    for two layers. A list of ``(in, out)`` pairs is also accepted and must chain.
    """
    dims = list(dims)
    if dims and isinstance(dims[0], (tuple, list)):
        for k in range(1, len(dims)):
            if dims[k][0] != dims[k - 1][1]:
                raise ConfigError(f"layer dims do not chain: {dims[k - 1]} -> {dims[k]}")
        dims = [dims[0][0]] + [d[1] for d in dims]
    if len(dims) < 2 or any(int(d) <= 0 for d in dims):
        raise ConfigError(f"invalid layer dims {dims}")
    if scorer not in SCORERS:
        raise ConfigError(f"unknown scorer {scorer!r}")
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    ws = tuple(uniform((dims[k + 1], dims[k]), dims[k]) for k in range(len(dims) - 1))
    fc = None
    if scorer == "fc":
        d_in = 2 * dims[-1]
        fc = FCHead(
            uniform((fc_hidden, d_in), d_in),
            uniform((fc_hidden,), d_in),
            uniform((fc_hidden,), fc_hidden),
            uniform((1,), fc_hidden),
        )
    return RefinerModel(ws, scorer, fc)


# --- forward -----------------------------------------------------------------


@dataclass(eq=False)
class ForwardPass:
    """Intermediates of one forward pass, consumed by ``losses.backward``."""

    model: RefinerModel
    L: np.ndarray
    inputs: list  # per-layer propagated inputs L H_k
    z: np.ndarray
    affinity: Optional[np.ndarray] = None
    scorer_cache: dict = field(default_factory=dict)


def gcn_forward(model: RefinerModel, L, X) -> ForwardPass:
    x = np.asarray(getattr(X, "values", X), dtype=np.float64)
    lap = np.asarray(L, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.in_dim:
        raise ConfigError(f"embedding dim {x.shape[-1]} does not match model input dim {model.in_dim}")
    if lap.shape != (x.shape[0], x.shape[0]):
        raise ConfigError(f"propagation matrix shape {lap.shape} does not match {x.shape[0]} nodes")
    h = x
    inputs = []
    for w in model.gcn_weights:
        p = lap @ h
        inputs.append(p)
        h = p @ w.T
    return ForwardPass(model, lap, inputs, h)


def _normalize_rows(z):
    norms = np.linalg.norm(z, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise DegenerateInputError(f"refined embedding row {int(zero[0])} has zero norm (model collapse)")
    return z / norms[:, None], norms


def refined_affinity_cosine(Z) -> np.ndarray:
    zn, _ = _normalize_rows(np.asarray(getattr(Z, "z", Z), dtype=np.float64))
    a = zn @ zn.T
    np.fill_diagonal(a, 1.0)
    return a


def _split_hidden(model: RefinerModel, z: np.ndarray):
    d = z.shape[1]
    wa = model.fc.w_hidden[:, :d]
    wb = model.fc.w_hidden[:, d:]
    return z @ wa.T, z @ wb.T


def _require_fc(model: RefinerModel):
    if model.scorer != "fc" or model.fc is None:
        raise UsageError("model has no FC pair scorer")


def _fc_one(fc: FCHead, z_first, z_second):
    pre = fc.w_hidden @ np.concatenate([z_first, z_second]) + fc.b_hidden
    h = np.where(pre > 0, pre, np.expm1(np.minimum(pre, 0.0)))
    return 1.0 / (1.0 + np.exp(-(fc.w_out @ h + fc.b_out[0])))


def fc_pair_score(model: RefinerModel, z_i, z_j) -> float:
    """Pair probability, averaged over both concatenation orders."""
    _require_fc(model)
    z_i = np.asarray(z_i, dtype=np.float64)
    z_j = np.asarray(z_j, dtype=np.float64)
    return float(0.5 * (_fc_one(model.fc, z_i, z_j) + _fc_one(model.fc, z_j, z_i)))


def refined_affinity_fc(model: RefinerModel, Z) -> np.ndarray:
    _require_fc(model)
    z = np.asarray(getattr(Z, "z", Z), dtype=np.float64)
    ua, ub = _split_hidden(model, z)
    fc = model.fc
    return _kernels.active.fc_pair_matrix(ua, ub, fc.b_hidden, fc.w_out, float(fc.b_out[0]))


def score_forward(fp: ForwardPass) -> np.ndarray:
    """Fill ``fp.affinity`` with the model's scorer output."""
    model = fp.model
    if model.scorer == "cosine":
        zn, norms = _normalize_rows(fp.z)
        a = zn @ zn.T
        np.fill_diagonal(a, 1.0)
        fp.scorer_cache = {"zn": zn, "norms": norms}
    else:
        ua, ub = _split_hidden(model, fp.z)
        fc = model.fc
        a = _kernels.active.fc_pair_matrix(ua, ub, fc.b_hidden, fc.w_out, float(fc.b_out[0]))
        fp.scorer_cache = {"ua": ua, "ub": ub}
    fp.affinity = a
    return a


def forward(model: RefinerModel, L, X) -> ForwardPass:
    fp = gcn_forward(model, L, X)
    score_forward(fp)
    return fp


# --- checkpoints -------------------------------------------------------------


def model_to_bytes(model: RefinerModel) -> bytes:
    parts = [MODEL_MAGIC, struct.pack("<I", len(model.gcn_weights))]
    for w in model.gcn_weights:
        parts.append(struct.pack("<II", *w.shape))
    for w in model.gcn_weights:
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
    parts.append(struct.pack("<B", _SCORER_TAG[model.scorer]))
    if model.fc is not None:
        fc = model.fc
        parts.append(struct.pack("<I", fc.hidden))
        for arr in (fc.w_hidden, fc.b_hidden, fc.w_out, fc.b_out):
            parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def model_from_bytes(data: bytes) -> RefinerModel:
    if not data.startswith(MODEL_MAGIC):
        raise ConfigError("not a refiner checkpoint (bad magic)")
    off = len(MODEL_MAGIC)

    def take(fmt):
        nonlocal off
        vals = struct.unpack_from(fmt, data, off)
        off += struct.calcsize(fmt)
        return vals

    def take_array(shape):
        nonlocal off
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
        off += 8 * count
        return arr

    try:
        (n_layers,) = take("<I")
        shapes = [take("<II") for _ in range(n_layers)]
        ws = tuple(take_array(s) for s in shapes)
        (tag,) = take("<B")
        scorer = {v: k for k, v in _SCORER_TAG.items()}[tag]
        fc = None
        if scorer == "fc":
            (hidden,) = take("<I")
            d_in = 2 * shapes[-1][0]
            fc = FCHead(take_array((hidden, d_in)), take_array((hidden,)), take_array((hidden,)), take_array((1,)))
    except (struct.error, ValueError, KeyError) as exc:
        raise ConfigError(f"corrupt checkpoint: {exc}") from None
    if off != len(data):
        raise ConfigError("trailing bytes in checkpoint")
    return RefinerModel(ws, scorer, fc)


def save_model(model: RefinerModel, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> RefinerModel:
    return model_from_bytes(Path(path).read_bytes())
