"""Temporal interaction classifier over per-frame pose predictions.

The classifier is a composition: an affine-rectifier-affine map first
mixes the hand and object control points of one frame into a feature
vector (the interaction map), then a 2-layer LSTM consumes the per-frame
features and the final hidden state feeds an affine + softmax over
interaction classes. Disabling the interaction map yields the plain
recurrent baseline that consumes pose vectors directly.

Per-frame inputs are camera-frame meters, by default centered on the
hand root so the classifier sees relative geometry, optionally extended
with the per-frame action/object class probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .codec import FramePrediction, softmax
from .errors import ConfigError, EmptySequence, NonFiniteLoss, WidthMismatch
from .geometry import HAND_PARTS


@dataclass(frozen=True)
class InteractionConfig:
    n_classes: int
    n_control: int = 21
    feature_width: int = 512
    lstm_width: int = 512
    lstm_layers: int = 2
    include_object_points: bool = True
    include_class_probs: bool = False
    n_actions: int = 0
    n_objects: int = 0
    root_relative: bool = True
    use_pair_map: bool = True
    input_scale: float = 10.0

    def __post_init__(self):
        if self.n_classes < 1 or self.n_control < 1:
            raise ConfigError("class and control-point counts must be >= 1")
        if self.lstm_layers < 1 or self.lstm_width < 1 or self.feature_width < 1:
            raise ConfigError("widths and layer counts must be >= 1")
        if self.include_class_probs and (self.n_actions < 1 or self.n_objects < 1):
            raise ConfigError("class-prob features need n_actions and n_objects")

    @property
    def input_width(self) -> int:
        width = 3 * self.n_control
        if self.include_object_points:
            width += 3 * self.n_control
        if self.include_class_probs:
            width += self.n_actions + self.n_objects
        return width

    @property
    def rnn_input_width(self) -> int:
        return self.feature_width if self.use_pair_map else self.input_width


class InteractionModel:
    """Named parameters of the interaction map + LSTM + output head."""

    def __init__(self, cfg: InteractionConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}

    def copy(self) -> "InteractionModel":
        return InteractionModel(self.cfg, {k: v.copy() for k, v in self.params.items()})


def init_interaction(cfg: InteractionConfig, seed: int) -> InteractionModel:
    """Fan-in scaled uniform init; LSTM forget-gate biases start at 1."""
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x17a)))
    p: dict[str, np.ndarray] = {}

    def uniform(fan_in, shape):
        s = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-s, s, size=shape)

    if cfg.use_pair_map:
        p["g.w1"] = uniform(cfg.input_width, (cfg.input_width, cfg.feature_width))
        p["g.b1"] = np.zeros(cfg.feature_width)
        p["g.w2"] = uniform(cfg.feature_width, (cfg.feature_width, cfg.feature_width))
        p["g.b2"] = np.zeros(cfg.feature_width)
    width_in = cfg.rnn_input_width
    for layer in range(cfg.lstm_layers):
        h = cfg.lstm_width
        p[f"lstm{layer}.wx"] = uniform(width_in, (width_in, 4 * h))
        p[f"lstm{layer}.wh"] = uniform(h, (h, 4 * h))
        bias = np.zeros(4 * h)
        bias[h: 2 * h] = 1.0
        p[f"lstm{layer}.b"] = bias
        width_in = h
    p["out.w"] = uniform(cfg.lstm_width, (cfg.lstm_width, cfg.n_classes))
    p["out.b"] = np.zeros(cfg.n_classes)
    return InteractionModel(cfg, p)


def frame_input(
    cfg: InteractionConfig,
    hand_points: np.ndarray,
    object_points: np.ndarray | None = None,
    action_probs: np.ndarray | None = None,
    object_probs: np.ndarray | None = None,
) -> np.ndarray:
    """Flatten one frame's predictions into the classifier's input layout."""
    hand = np.asarray(hand_points, dtype=float).reshape(cfg.n_control, 3)
    root = hand[0].copy() if cfg.root_relative else np.zeros(3)
    parts = [(hand - root).ravel() * cfg.input_scale]
    if cfg.include_object_points:
        if object_points is None:
            raise WidthMismatch("config includes object points but none were given")
        obj = np.asarray(object_points, dtype=float).reshape(cfg.n_control, 3)
        parts.append((obj - root).ravel() * cfg.input_scale)
    if cfg.include_class_probs:
        if action_probs is None or object_probs is None:
            raise WidthMismatch("config includes class probabilities but none were given")
        if len(action_probs) != cfg.n_actions or len(object_probs) != cfg.n_objects:
            raise WidthMismatch("class probability widths disagree with the config")
        parts.append(np.asarray(action_probs, dtype=float))
        parts.append(np.asarray(object_probs, dtype=float))
    return np.concatenate(parts)


def sequence_inputs(cfg: InteractionConfig, preds: list[FramePrediction]) -> np.ndarray:
    """(T, input_width) array from pruned per-frame predictions."""
    return np.stack([
        frame_input(cfg, p.hand_points, p.object_points, p.action_probs, p.object_probs)
        for p in preds
    ])


def _wrap(model: InteractionModel, requires_grad: bool) -> dict[str, ad.Tensor]:
    return {k: ad.Tensor(v, requires_grad=requires_grad) for k, v in model.params.items()}


def _features_graph(pt: dict[str, ad.Tensor], x: ad.Tensor) -> ad.Tensor:
    hidden = ad.relu(x @ pt["g.w1"] + pt["g.b1"])
    return hidden @ pt["g.w2"] + pt["g.b2"]


def _lstm_step(pt, layer: int, x: ad.Tensor, h: ad.Tensor, c: ad.Tensor, width: int):
    gates = x @ pt[f"lstm{layer}.wx"] + h @ pt[f"lstm{layer}.wh"] + pt[f"lstm{layer}.b"]
    i = ad.sigmoid(gates[:, 0 * width: 1 * width])
    f = ad.sigmoid(gates[:, 1 * width: 2 * width])
    g = ad.tanh(gates[:, 2 * width: 3 * width])
    o = ad.sigmoid(gates[:, 3 * width: 4 * width])
    c_new = ad.mul(f, c) + ad.mul(i, g)
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


def logits_graph(pt: dict[str, ad.Tensor], cfg: InteractionConfig,
                 batch: np.ndarray) -> ad.Tensor:
    """(B, T, input_width) constant batch -> (B, n_classes) logits."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 3 or batch.shape[2] != cfg.input_width:
        raise WidthMismatch(
            f"sequence batch must be (B, T, {cfg.input_width}), got {batch.shape}"
        )
    b, t, _ = batch.shape
    if t < 1:
        raise EmptySequence("cannot classify an empty sequence")
    width = cfg.lstm_width
    hs = [ad.Tensor(np.zeros((b, width))) for _ in range(cfg.lstm_layers)]
    cs = [ad.Tensor(np.zeros((b, width))) for _ in range(cfg.lstm_layers)]
    for step in range(t):
        x = ad.Tensor(batch[:, step])
        if cfg.use_pair_map:
            x = _features_graph(pt, x)
        for layer in range(cfg.lstm_layers):
            hs[layer], cs[layer] = _lstm_step(pt, layer, x, hs[layer], cs[layer], width)
            x = hs[layer]
        # the last hidden state of the top layer feeds the classifier
    return hs[-1] @ pt["out.w"] + pt["out.b"]


def interaction_features(model: InteractionModel, hand_points, object_points=None,
                         action_probs=None, object_probs=None) -> np.ndarray:
    """The per-frame feature vector the recurrent stage consumes.

    For the plain baseline (no interaction map) this is the assembled
    input itself.
    """
    x = frame_input(model.cfg, hand_points, object_points, action_probs, object_probs)
    if not model.cfg.use_pair_map:
        return x
    pt = _wrap(model, requires_grad=False)
    return _features_graph(pt, ad.Tensor(x[None, :])).data[0]


def classify_sequence(model: InteractionModel, seq) -> np.ndarray:
    """Probability vector over interaction classes for one sequence.

    Accepts a list of FramePredictions or a precomputed (T, input_width)
    array. Raises EmptySequence on zero frames.
    """
    if isinstance(seq, np.ndarray):
        inputs = seq
    else:
        if len(seq) == 0:
            raise EmptySequence("cannot classify an empty sequence")
        inputs = sequence_inputs(model.cfg, seq)
    if inputs.shape[0] == 0:
        raise EmptySequence("cannot classify an empty sequence")
    pt = _wrap(model, requires_grad=False)
    logits = logits_graph(pt, model.cfg, inputs[None, ...])
    return softmax(logits.data[0])


def sequence_loss(model: InteractionModel, batch: np.ndarray, labels: np.ndarray,
                  with_grads: bool = True):
    """Mean cross-entropy over a batch of equal-length sequences."""
    pt = _wrap(model, requires_grad=with_grads)
    logits = logits_graph(pt, model.cfg, batch)
    logp = ad.log_softmax(logits, axis=-1)
    picked = logp[(np.arange(len(labels)), np.asarray(labels, dtype=int))]
    loss = ad.mul(picked.sum(), -1.0 / len(labels))
    if not np.isfinite(loss.data):
        raise NonFiniteLoss(f"sequence loss is not finite: {loss.data}")
    if not with_grads:
        return float(loss.data), None
    loss.backward()
    grads = {k: t.grad if t.grad is not None else np.zeros_like(t.data)
             for k, t in pt.items()}
    return float(loss.data), grads


def sgd_epoch_sequences(model: InteractionModel, inputs: np.ndarray,
                        labels: np.ndarray, lr: float,
                        rng: np.random.Generator, batch_size: int = 16) -> float:
    """One SGD epoch over (N, T, input_width) sequences; returns mean loss."""
    order = rng.permutation(inputs.shape[0])
    losses = []
    for start in range(0, len(order), batch_size):
        idx = order[start: start + batch_size]
        value, grads = sequence_loss(model, inputs[idx], labels[idx])
        for name, g in grads.items():
            model.params[name] -= lr * g
        losses.append((value, len(idx)))
    total = sum(n for _, n in losses)
    return sum(v * n for v, n in losses) / total


def grad_check_sequences(model: InteractionModel, batch: np.ndarray,
                         labels: np.ndarray, eps: float = 1e-5,
                         n_samples: int = 150, seed: int = 0) -> float:
    """Analytic vs central-FD gradients through the map and the LSTM."""
    _, grads = sequence_loss(model, batch, labels)
    rng = np.random.default_rng(seed)
    names = sorted(model.params.keys())
    sizes = np.array([model.params[n].size for n in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    picks = rng.choice(int(sizes.sum()), size=min(n_samples, int(sizes.sum())),
                       replace=False)
    worst = 0.0
    for flat in picks:
        t_i = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[t_i]
        local = int(flat - offsets[t_i])
        arr = model.params[name].ravel()
        orig = arr[local]
        arr[local] = orig + eps
        hi, _ = sequence_loss(model, batch, labels, with_grads=False)
        arr[local] = orig - eps
        lo, _ = sequence_loss(model, batch, labels, with_grads=False)
        arr[local] = orig
        numeric = (hi - lo) / (2 * eps)
        analytic = grads[name].ravel()[local]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, rel)
    return worst


def weight_importance(model: InteractionModel) -> tuple[np.ndarray, dict[str, float]]:
    """Per-joint share of first-layer weight mass tied to hand-joint inputs.

    Sums absolute weights over each joint's three coordinate columns of the
    first trainable layer (the interaction map's first affine, or the
    recurrent input matrix for the plain baseline), normalized to sum 1
    across the 21 joints. Also aggregates by hand part.
    """
    cfg = model.cfg
    matrix = model.params["g.w1"] if cfg.use_pair_map else model.params["lstm0.wx"]
    per_joint = np.abs(matrix[: 3 * cfg.n_control]).sum(axis=1)
    per_joint = per_joint.reshape(cfg.n_control, 3).sum(axis=1)
    total = per_joint.sum()
    if total > 0:
        per_joint = per_joint / total
    parts = {name: float(per_joint[list(idx)].sum()) for name, idx in HAND_PARTS.items()}
    return per_joint, parts
