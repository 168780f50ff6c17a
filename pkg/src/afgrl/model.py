"""GCN encoder, MLP predictor, hand-written reverse pass, Adam and EMA.

Layer recipe (encoder): ``H = PReLU(BN(A_norm @ X @ W))``.
Predictor: ``Z = PReLU(BN(H @ W1)) @ W2``.

Parameters live in small dataclasses whose arrays are updated in place by
:func:`adam_step` and :func:`ema_update`. Every tensor has a stable dotted
name (``encoder.0.weight``, ``predictor.w1``, ...) used for gradients and
checkpoints.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .errors import DimensionError, NumericalError
from .numerics import CsrMatrix, Rng, spmm

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
PRELU_INIT = 0.25

TRAIN = "train"
EVAL = "eval"


def glorot(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    enabled: bool = True

    @classmethod
    def init(cls, dim: int, enabled: bool = True) -> "BatchNorm":
        return cls(np.ones(dim), np.zeros(dim), np.zeros(dim), np.ones(dim), enabled)

    def tensors(self, prefix: str) -> Iterator[Tuple[str, np.ndarray, bool]]:
        yield f"{prefix}.weight", self.gamma, True
        yield f"{prefix}.bias", self.beta, True
        yield f"{prefix}.running_mean", self.running_mean, False
        yield f"{prefix}.running_var", self.running_var, False


@dataclass
class GCNLayer:
    weight: np.ndarray
    bn: BatchNorm
    slope: np.ndarray  # 0-d, so in-place updates work

    def tensors(self, prefix: str):
        yield f"{prefix}.weight", self.weight, True
        yield from self.bn.tensors(f"{prefix}.bn")
        yield f"{prefix}.prelu", self.slope, True


class _Module:
    def tensors(self) -> Iterator[Tuple[str, np.ndarray, bool]]:
        raise NotImplementedError

    def named_tensors(self) -> Dict[str, np.ndarray]:
        return {name: arr for name, arr, _ in self.tensors()}

    def named_parameters(self) -> Dict[str, np.ndarray]:
        return {name: arr for name, arr, trainable in self.tensors() if trainable}


@dataclass
class EncoderParams(_Module):
    layers: List[GCNLayer]

    @classmethod
    def init(cls, in_dim: int, dim: int, num_layers: int, rng: Rng, batch_norm: bool = True):
        layers = []
        for l in range(num_layers):
            fan_in = in_dim if l == 0 else dim
            layers.append(
                GCNLayer(glorot(rng, fan_in, dim), BatchNorm.init(dim, batch_norm), np.array(PRELU_INIT))
            )
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    def tensors(self):
        for l, layer in enumerate(self.layers):
            yield from layer.tensors(f"encoder.{l}")


@dataclass
class PredictorParams(_Module):
    w1: np.ndarray
    bn: BatchNorm
    slope: np.ndarray
    w2: np.ndarray

    @classmethod
    def init(cls, dim: int, hidden: int, rng: Rng, batch_norm: bool = True):
        return cls(
            glorot(rng, dim, hidden),
            BatchNorm.init(hidden, batch_norm),
            np.array(PRELU_INIT),
            glorot(rng, hidden, dim),
        )

    def tensors(self):
        yield "predictor.w1", self.w1, True
        yield from self.bn.tensors("predictor.bn")
        yield "predictor.prelu", self.slope, True
        yield "predictor.w2", self.w2, True


@dataclass
class DualNetwork:
    """Online encoder + predictor (trained) and a target encoder (EMA copy)."""

    online: EncoderParams
    predictor: PredictorParams
    target: EncoderParams
    tau: float

    @classmethod
    def init(cls, in_dim, dim, hidden, num_layers, tau, rng: Rng, batch_norm: bool = True):
        online = EncoderParams.init(in_dim, dim, num_layers, rng, batch_norm)
        predictor = PredictorParams.init(dim, hidden, rng, batch_norm)
        return cls(online, predictor, copy.deepcopy(online), float(tau))

    def online_parameters(self) -> Dict[str, np.ndarray]:
        params = self.online.named_parameters()
        params.update(self.predictor.named_parameters())
        return params

    def state_dict(self) -> Dict[str, np.ndarray]:
        out = dict(self.online.named_tensors())
        out.update(self.predictor.named_tensors())
        out.update({f"target.{k}": v for k, v in self.target.named_tensors().items()})
        return out

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        mine = self.state_dict()
        missing = sorted(set(mine) - set(state))
        if missing:
            raise KeyError(f"checkpoint is missing tensors: {missing}")
        for name, arr in mine.items():
            src = np.asarray(state[name], dtype=np.float64)
            if src.shape != arr.shape:
                raise DimensionError(f"{name}: shape {src.shape} != {arr.shape}")
            arr[...] = src


# ---------------------------------------------------------------------------
# forward pieces


def _check_finite(x: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite activation in {where}")


def _bn_forward(bn: BatchNorm, u: np.ndarray, mode: str, update_stats: bool):
    if not bn.enabled:
        return u, None
    if mode == TRAIN:
        mu = u.mean(axis=0)
        var = u.var(axis=0)
        std = np.sqrt(var + BN_EPS)
        xhat = (u - mu) / std
        if update_stats:
            n = u.shape[0]
            unbiased = var * n / (n - 1) if n > 1 else var
            bn.running_mean *= 1.0 - BN_MOMENTUM
            bn.running_mean += BN_MOMENTUM * mu
            bn.running_var *= 1.0 - BN_MOMENTUM
            bn.running_var += BN_MOMENTUM * unbiased
    elif mode == EVAL:
        std = np.sqrt(bn.running_var + BN_EPS)
        xhat = (u - bn.running_mean) / std
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return bn.gamma * xhat + bn.beta, (xhat, std, mode)


def _bn_backward(bn: BatchNorm, cache, dy: np.ndarray):
    if cache is None:
        return dy, np.zeros_like(bn.gamma), np.zeros_like(bn.beta)
    xhat, std, mode = cache
    dgamma = np.sum(dy * xhat, axis=0)
    dbeta = np.sum(dy, axis=0)
    dxhat = dy * bn.gamma
    if mode == EVAL:
        return dxhat / std, dgamma, dbeta
    n = dy.shape[0]
    du = (n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0)) / (n * std)
    return du, dgamma, dbeta


def _prelu(v: np.ndarray, slope: np.ndarray) -> np.ndarray:
    return np.where(v > 0, v, slope * v)


def _prelu_backward(v: np.ndarray, slope: np.ndarray, dy: np.ndarray):
    pos = v > 0
    dv = np.where(pos, dy, slope * dy)
    dslope = np.sum(np.where(pos, 0.0, dy * v))
    return dv, np.array(dslope)


@dataclass
class Tape:
    """Activations recorded by forward passes, consumed by :func:`backward`."""

    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)


@dataclass
class _LayerRecord:
    kind: str  # "encoder" or "predictor"
    index: int
    params: object
    a_norm: Optional[CsrMatrix]
    inp: np.ndarray  # layer input (S = A X for encoder, H for predictor)
    pre_act: np.ndarray
    bn_cache: object
    hidden: Optional[np.ndarray] = None  # predictor PReLU output
    out_shape: Tuple[int, int] = (0, 0)


def encoder_forward(
    p: EncoderParams,
    a_norm: CsrMatrix,
    x: np.ndarray,
    mode: str = TRAIN,
    tape: Optional[Tape] = None,
    update_stats: bool = True,
) -> np.ndarray:
    """Run the GCN stack. ``mode="train"`` normalizes with batch statistics.

    With ``update_stats=False`` a train-mode pass leaves the running
    statistics untouched (used for the target network).
    """
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != p.in_dim:
        raise DimensionError(f"encoder expects {p.in_dim} input features, got shape {h.shape}")
    if a_norm.shape != (h.shape[0], h.shape[0]):
        raise DimensionError(f"adjacency {a_norm.shape} does not match {h.shape[0]} nodes")
    for l, layer in enumerate(p.layers):
        with np.errstate(over="ignore", invalid="ignore"):
            s = spmm(a_norm, h)
            u = s @ layer.weight
            v, cache = _bn_forward(layer.bn, u, mode, update_stats)
            h = _prelu(v, layer.slope)
        _check_finite(h, f"encoder layer {l}")
        if tape is not None:
            tape.entries.append(
                _LayerRecord("encoder", l, layer, a_norm, s, v, cache, out_shape=h.shape)
            )
    return h


def predictor_forward(
    p: PredictorParams, h: np.ndarray, mode: str = TRAIN, tape: Optional[Tape] = None,
    update_stats: bool = True,
) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != p.w1.shape[0]:
        raise DimensionError(f"predictor expects width {p.w1.shape[0]}, got shape {h.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        u = h @ p.w1
        v, cache = _bn_forward(p.bn, u, mode, update_stats)
        a = _prelu(v, p.slope)
        z = a @ p.w2
    _check_finite(z, "predictor")
    if tape is not None:
        tape.entries.append(_LayerRecord("predictor", 0, p, None, h, v, cache, a, z.shape))
    return z


def backward(tape: Tape, loss_grad: np.ndarray) -> Dict[str, np.ndarray]:
    """Reverse pass over every recorded layer.

    ``loss_grad`` is dLoss/d(output of the last recorded layer). Returns
    gradients keyed by parameter name. Only tensors on the tape receive
    gradients; the target network is never recorded, so it gets none.
    """
    if not tape.entries:
        raise ValueError("empty tape")
    g = np.asarray(loss_grad, dtype=np.float64)
    if g.shape != tape.entries[-1].out_shape:
        raise DimensionError(f"loss_grad shape {g.shape} != output {tape.entries[-1].out_shape}")
    grads: Dict[str, np.ndarray] = {}
    for rec in reversed(tape.entries):
        p = rec.params
        if rec.kind == "predictor":
            grads["predictor.w2"] = rec.hidden.T @ g
            g = g @ p.w2.T
            dv, grads["predictor.prelu"] = _prelu_backward(rec.pre_act, p.slope, g)
            du, grads["predictor.bn.weight"], grads["predictor.bn.bias"] = _bn_backward(
                p.bn, rec.bn_cache, dv
            )
            grads["predictor.w1"] = rec.inp.T @ du
            g = du @ p.w1.T
        else:
            pre = f"encoder.{rec.index}"
            dv, grads[f"{pre}.prelu"] = _prelu_backward(rec.pre_act, p.slope, g)
            du, grads[f"{pre}.bn.weight"], grads[f"{pre}.bn.bias"] = _bn_backward(
                p.bn, rec.bn_cache, dv
            )
            grads[f"{pre}.weight"] = rec.inp.T @ du
            # A_norm is symmetric, so its transpose is itself
            g = spmm(rec.a_norm, du @ p.weight.T)
    return grads


# ---------------------------------------------------------------------------
# optimization


@dataclass
class AdamState:
    lr: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-5
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
    """One Adam step with bias correction and decoupled weight decay, in place."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != params[name].shape:
            raise DimensionError(f"{name}: grad shape {np.shape(g)} != {params[name].shape}")
    state.step += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p -= state.lr * (update + state.weight_decay * p)
    return params


def ema_update(net: DualNetwork) -> None:
    """target <- tau * target + (1 - tau) * online, for every encoder tensor."""
    tau = net.tau
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    online = net.online.named_tensors()
    target = net.target.named_tensors()
    if online.keys() != target.keys() or any(
        online[k].shape != target[k].shape for k in online
    ):
        raise DimensionError("online and target encoders differ in structure")
    for name, t in target.items():
        t *= tau
        t += (1.0 - tau) * online[name]
