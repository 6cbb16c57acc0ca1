#!/usr/bin/env python3
"""
QR-DQN Agent - noisy dueling quantile network with risk-profiled action selection

Architecture:
    - Trunk: state -> [256, 128, 64] (plain affine + ReLU)
    - Value stream: 64 -> [64, 32] (noisy) -> N quantiles
    - Advantage stream: 64 -> [64, 32] (noisy) -> 3^n * N quantiles
    - Output(a, j) = V(j) + A(a, j) - mean_a' A(a', j)

Training regresses return quantiles with the quantile Huber loss against
Double-DQN targets sampled from a prioritized replay buffer.
"""

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.core.errors import CheckpointError, ConfigurationError, DimensionError, TrainingError
from src.core.numerics import (
    EVAL, TRAIN, Adam, Affine, Dropout, NoisyAffine, Parameter, ReLU, Sequential, Tape,
    as_tensor2, backward, deserialize_parameters, load_parameters, serialize_parameters,
)
from src.core.replay_buffer import PrioritizedReplayBuffer, TransitionRecord

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CBMQ"

LOWER_TAIL = 'lower_tail'
FULL_MEAN = 'mean'
UPPER_TAIL = 'upper_tail'
RISK_KINDS = (LOWER_TAIL, FULL_MEAN, UPPER_TAIL)


@dataclass
class RiskProfile:
    """Quantile aggregation rule used to score actions"""
    kind: str = FULL_MEAN
    cutoff: float = 1.0

    def __post_init__(self):
        if self.kind not in RISK_KINDS:
            raise ConfigurationError(f"unknown risk profile '{self.kind}'; expected one of {', '.join(RISK_KINDS)}")
        if not 0.0 < self.cutoff <= 1.0:
            raise ConfigurationError(f"risk cutoff must be in (0, 1], got {self.cutoff}")

    @classmethod
    def lower_tail(cls, q_lo: float = 0.25) -> 'RiskProfile':
        return cls(LOWER_TAIL, q_lo)

    @classmethod
    def full_mean(cls) -> 'RiskProfile':
        return cls(FULL_MEAN, 1.0)

    @classmethod
    def upper_tail(cls, q_hi: float = 0.75) -> 'RiskProfile':
        return cls(UPPER_TAIL, q_hi)

    def describe(self) -> str:
        if self.kind == LOWER_TAIL:
            return f"lower-tail mean (tau <= {self.cutoff})"
        if self.kind == UPPER_TAIL:
            return f"upper-tail mean (tau >= {self.cutoff})"
        return "full mean"


@dataclass
class AgentConfig:
    n_quantiles: int = 51
    gamma: float = 0.95
    learning_rate: float = 5e-4
    batch_size: int = 128
    buffer_capacity: int = 200_000
    warmup: int = 5000
    target_sync_interval: int = 500
    kappa: float = 1.0
    sigma_init: float = 0.5
    trunk_widths: List[int] = field(default_factory=lambda: [256, 128, 64])
    head_widths: List[int] = field(default_factory=lambda: [64, 32])
    dropout: float = 0.0
    double_dqn: bool = True
    epsilon: float = 0.0
    per_alpha: float = 0.6
    per_beta_start: float = 0.4
    per_beta_end: float = 1.0
    per_eps: float = 1e-3
    reward_scale: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.trunk_widths = [int(w) for w in self.trunk_widths]
        self.head_widths = [int(w) for w in self.head_widths]
        if self.n_quantiles < 1:
            raise ConfigurationError(f"n_quantiles must be >= 1, got {self.n_quantiles}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigurationError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.kappa <= 0:
            raise ConfigurationError(f"kappa must be > 0, got {self.kappa}")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ConfigurationError(
                f"need 1 <= batch_size <= buffer_capacity, got {self.batch_size} / {self.buffer_capacity}")
        if self.target_sync_interval < 1:
            raise ConfigurationError(f"target_sync_interval must be >= 1, got {self.target_sync_interval}")
        if not self.trunk_widths or not self.head_widths or min(self.trunk_widths + self.head_widths) < 1:
            raise ConfigurationError("layer widths must be non-empty lists of positive integers")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigurationError(f"epsilon must be in [0, 1], got {self.epsilon}")


# ----- Quantiles and risk aggregation -----

def quantile_midpoints(n_quantiles: int) -> np.ndarray:
    """tau_i = (2i - 1) / (2N), i = 1..N"""
    return (2.0 * np.arange(1, n_quantiles + 1) - 1.0) / (2.0 * n_quantiles)


def tail_mask(profile: RiskProfile, taus: np.ndarray) -> np.ndarray:
    if profile.kind == LOWER_TAIL:
        mask = taus <= profile.cutoff + 1e-12
    elif profile.kind == UPPER_TAIL:
        mask = taus >= profile.cutoff - 1e-12
    else:
        mask = np.ones_like(taus, dtype=bool)
    if not mask.any():
        raise ConfigurationError(
            f"{profile.describe()} selects no quantile midpoints (smallest {taus[0]:.4f}, largest {taus[-1]:.4f})")
    return mask


def risk_value(table: np.ndarray, profile: RiskProfile, taus: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-action score: tail (or full) mean over each row sorted ascending"""
    table = np.asarray(table, dtype=np.float64)
    if taus is None:
        taus = quantile_midpoints(table.shape[-1])
    mask = tail_mask(profile, taus)
    return np.sort(table, axis=-1)[..., mask].mean(axis=-1)


def greedy_action(values: np.ndarray) -> int:
    """argmax with ties going to the smallest index"""
    return int(np.argmax(values))


def quantile_huber_loss(pred: np.ndarray, targets: np.ndarray, taus: np.ndarray,
                        kappa: float = 1.0) -> Tuple[Union[float, np.ndarray], np.ndarray]:
    """
    Quantile Huber loss and its gradient w.r.t. pred.

    For one sample: L = (1/N') sum_j sum_k |tau_j - 1{u_jk < 0}| * H_kappa(u_jk) / kappa
    with u_jk = target_k - pred_j. Accepts a single row (N,) / (N',) or a batch
    (B, N) / (B, N'); a batch returns per-sample losses.
    """
    if kappa <= 0:
        raise ConfigurationError(f"kappa must be > 0, got {kappa}")
    single = np.ndim(pred) == 1
    pred2 = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    targets2 = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if pred2.shape[0] != targets2.shape[0]:
        raise DimensionError(f"{pred2.shape[0]} prediction rows but {targets2.shape[0]} target rows")
    if pred2.shape[1] != len(taus):
        raise DimensionError(f"{pred2.shape[1]} predicted quantiles but {len(taus)} midpoints")

    n_targets = targets2.shape[1]
    u = targets2[:, None, :] - pred2[:, :, None]  # (B, N, N')
    abs_u = np.abs(u)
    quadratic = abs_u <= kappa
    huber = np.where(quadratic, 0.5 * u * u, kappa * (abs_u - 0.5 * kappa))
    weight = np.abs(taus[None, :, None] - (u < 0.0))
    loss = (weight * huber).sum(axis=(1, 2)) / (kappa * n_targets)

    dhuber_du = np.where(quadratic, u, kappa * np.sign(u))
    grad = -(weight * dhuber_du).sum(axis=2) / (kappa * n_targets)

    if single:
        return float(loss[0]), grad[0]
    return loss, grad


# ----- Network -----

class NetworkTape:
    def __init__(self):
        self.trunk = Tape()
        self.value = Tape()
        self.advantage = Tape()


class QuantileNetwork:
    """Dueling quantile network; output shape (batch, n_actions, n_quantiles)"""

    def __init__(self, state_dim: int, n_actions: int, n_quantiles: int,
                 trunk_widths: Sequence[int] = (256, 128, 64), head_widths: Sequence[int] = (64, 32),
                 sigma_init: float = 0.5, dropout: float = 0.0,
                 rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else np.random.default_rng()
        self.state_dim = state_dim
        self.n_actions = n_actions
        self.n_quantiles = n_quantiles
        self.trunk_widths = list(trunk_widths)
        self.head_widths = list(head_widths)

        layers = []
        fan_in = state_dim
        for i, width in enumerate(self.trunk_widths):
            layers += [Affine(fan_in, width, rng, name=f"trunk{i}"), ReLU()]
            if dropout > 0:
                layers.append(Dropout(dropout, rng))
            fan_in = width
        self.trunk = Sequential(layers)
        self.value = self._head(fan_in, n_quantiles, sigma_init, rng, "value")
        self.advantage = self._head(fan_in, n_actions * n_quantiles, sigma_init, rng, "advantage")

    def _head(self, fan_in: int, out: int, sigma_init: float, rng: np.random.Generator, name: str) -> Sequential:
        layers = []
        for i, width in enumerate(self.head_widths):
            layers += [NoisyAffine(fan_in, width, rng, sigma_init, name=f"{name}{i}"), ReLU()]
            fan_in = width
        layers.append(Affine(fan_in, out, rng, name=f"{name}_out"))
        return Sequential(layers)

    def parameters(self) -> List[Parameter]:
        return self.trunk.parameters() + self.value.parameters() + self.advantage.parameters()

    def noisy_layers(self) -> List[NoisyAffine]:
        return self.value.noisy_layers() + self.advantage.noisy_layers()

    def set_noise_rng(self, rng: np.random.Generator):
        for layer in self.noisy_layers():
            layer.rng = rng

    def streams(self, states: np.ndarray, mode: str = EVAL,
                tape: Optional[NetworkTape] = None) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(output, value stream (B, N), advantage stream (B, A, N))"""
        x = as_tensor2(states, "state")
        if x.shape[1] != self.state_dim:
            raise ConfigurationError(f"state has {x.shape[1]} entries, network expects {self.state_dim}")
        features = self.trunk.forward(x, mode, tape.trunk if tape else None)
        value = self.value.forward(features, mode, tape.value if tape else None)
        adv = self.advantage.forward(features, mode, tape.advantage if tape else None)
        adv = adv.reshape(-1, self.n_actions, self.n_quantiles)
        out = value[:, None, :] + adv - adv.mean(axis=1, keepdims=True)
        return out, value, adv

    def forward(self, states: np.ndarray, mode: str = EVAL, tape: Optional[NetworkTape] = None) -> np.ndarray:
        return self.streams(states, mode, tape)[0]

    def backward(self, grad_out: np.ndarray, tape: NetworkTape):
        """Accumulate parameter gradients for d loss / d output of shape (B, A, N)"""
        grad_out = np.asarray(grad_out, dtype=np.float64)
        grad_value = grad_out.sum(axis=1)
        grad_adv = (grad_out - grad_out.mean(axis=1, keepdims=True)).reshape(grad_out.shape[0], -1)
        grad_features = backward(grad_value, tape.value) + backward(grad_adv, tape.advantage)
        backward(grad_features, tape.trunk)

    def copy_from(self, other: 'QuantileNetwork'):
        for mine, theirs in zip(self.parameters(), other.parameters()):
            mine.value[...] = theirs.value


# ----- Targets -----

def td_target(batch: Sequence[TransitionRecord], online, target, gamma: float,
              reward_scale: float = 1.0, double_dqn: bool = True) -> np.ndarray:
    """Per-sample target quantile rows r + gamma * (1 - done) * Z_target(s', a*)"""
    next_states = np.stack([r.next_state for r in batch])
    rewards = np.array([r.reward for r in batch], dtype=np.float64) * reward_scale
    dones = np.array([r.done for r in batch], dtype=np.float64)

    next_target = target.forward(next_states, EVAL)
    selector = online.forward(next_states, EVAL) if double_dqn else next_target
    best = np.argmax(risk_value(selector, RiskProfile.full_mean()), axis=-1)
    rows = next_target[np.arange(len(batch)), best]
    return rewards[:, None] + gamma * (1.0 - dones)[:, None] * rows


class QRDQNAgent:
    """Online/target quantile networks, Adam optimizer and the training step"""

    def __init__(self, state_dim: int, n_units: int, config: Optional[AgentConfig] = None,
                 seed: Optional[int] = None):
        self.config = config or AgentConfig()
        self.state_dim = state_dim
        self.n_units = n_units
        self.n_actions = 3 ** n_units
        self.taus = quantile_midpoints(self.config.n_quantiles)

        init_seq, noise_seq, explore_seq = np.random.SeedSequence(seed).spawn(3)
        init_rng = np.random.default_rng(init_seq)
        self.noise_rng = np.random.default_rng(noise_seq)
        self.rng = np.random.default_rng(explore_seq)

        cfg = self.config
        self.online = QuantileNetwork(state_dim, self.n_actions, cfg.n_quantiles, cfg.trunk_widths,
                                      cfg.head_widths, cfg.sigma_init, cfg.dropout, init_rng)
        self.target = QuantileNetwork(state_dim, self.n_actions, cfg.n_quantiles, cfg.trunk_widths,
                                      cfg.head_widths, cfg.sigma_init, cfg.dropout, init_rng)
        self.online.set_noise_rng(self.noise_rng)
        self.target.set_noise_rng(self.noise_rng)
        self.target.copy_from(self.online)

        self.optimizer = Adam(self.online.parameters(), cfg.learning_rate,
                              cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        self.train_steps = 0
        self.syncs = 0

    def quantiles(self, state: np.ndarray, mode: str = EVAL) -> np.ndarray:
        """Quantile table (n_actions, N) for one state"""
        return self.online.forward(state, mode)[0]

    def select_action(self, state: np.ndarray, profile: RiskProfile, mode: str = EVAL) -> int:
        if mode == TRAIN and self.config.epsilon > 0 and self.rng.random() < self.config.epsilon:
            return int(self.rng.integers(self.n_actions))
        values = risk_value(self.quantiles(state, mode), profile, self.taus)
        return greedy_action(values)

    def td_target(self, batch: Sequence[TransitionRecord]) -> np.ndarray:
        return td_target(batch, self.online, self.target, self.config.gamma,
                         self.config.reward_scale, self.config.double_dqn)

    def train_step(self, buffer: PrioritizedReplayBuffer, beta: float) -> Tuple[float, np.ndarray]:
        """One prioritized minibatch update; returns (weighted mean loss, per-sample TD errors)"""
        cfg = self.config
        batch, weights, serials = buffer.sample(cfg.batch_size, beta)
        targets = self.td_target(batch)

        states = np.stack([r.state for r in batch])
        actions = np.array([r.action_index for r in batch], dtype=np.int64)
        rows = np.arange(len(batch))

        tape = NetworkTape()
        out = self.online.forward(states, TRAIN, tape)
        pred = out[rows, actions]
        losses, grad_pred = quantile_huber_loss(pred, targets, self.taus, cfg.kappa)

        loss = float(np.mean(weights * losses))
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at train step {self.train_steps + 1}")

        grad_out = np.zeros_like(out)
        grad_out[rows, actions] = weights[:, None] * grad_pred / len(batch)
        self.online.backward(grad_out, tape)
        self.optimizer.step()

        td_errors = np.abs(targets.mean(axis=1) - pred.mean(axis=1))
        buffer.update_priorities(serials, td_errors)

        self.train_steps += 1
        if self.train_steps % cfg.target_sync_interval == 0:
            self.sync_target()
        return loss, td_errors

    def sync_target(self):
        """Hard copy of the online parameters into the target network"""
        self.target.copy_from(self.online)
        self.syncs += 1
        logger.debug(f"Target network synced (sync {self.syncs}, step {self.train_steps})")

    # ----- Checkpoints -----

    def checkpoint_header(self, strategy: str) -> Dict[str, Any]:
        return {
            'n': self.n_units,
            'h': self.state_dim - 3 * self.n_units,
            'n_quantiles': self.config.n_quantiles,
            'trunk_widths': list(self.config.trunk_widths),
            'head_widths': list(self.config.head_widths),
            'strategy': strategy,
        }

    def to_bytes(self, strategy: str) -> bytes:
        header = json.dumps(self.checkpoint_header(strategy), sort_keys=True).encode('utf-8')
        return b"".join([CHECKPOINT_MAGIC, struct.pack("<I", len(header)), header,
                         serialize_parameters(self.online.parameters())])

    def save_checkpoint(self, path: Union[str, Path], strategy: str) -> Path:
        path = Path(path)
        with open(path, 'wb') as f:
            f.write(self.to_bytes(strategy))
        logger.info(f"Checkpoint saved to {path}")
        return path

    def load_bytes(self, blob: bytes) -> Dict[str, Any]:
        """Load online (and target) parameters; returns the checkpoint header"""
        header, payload = split_checkpoint(blob)
        expected = self.checkpoint_header(header.get('strategy', ''))
        for key in ('n', 'h', 'n_quantiles', 'trunk_widths', 'head_widths'):
            if header.get(key) != expected[key]:
                raise CheckpointError(
                    f"checkpoint {key} = {header.get(key)} does not match configured {expected[key]}", field=key)
        load_parameters(self.online.parameters(), deserialize_parameters(payload))
        self.target.copy_from(self.online)
        return header

    def load_checkpoint(self, path: Union[str, Path]) -> Dict[str, Any]:
        with open(path, 'rb') as f:
            return self.load_bytes(f.read())


def split_checkpoint(blob: bytes) -> Tuple[Dict[str, Any], bytes]:
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a maintenance agent checkpoint (bad magic)", field='magic')
    try:
        (length,) = struct.unpack_from("<I", blob, 4)
        header = json.loads(blob[8:8 + length].decode('utf-8'))
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable checkpoint header: {e}", field='header')
    return header, blob[8 + length:]


def read_checkpoint_header(path: Union[str, Path]) -> Dict[str, Any]:
    with open(path, 'rb') as f:
        return split_checkpoint(f.read())[0]
