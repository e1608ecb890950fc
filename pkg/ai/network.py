"""
Dense actor-critic network over a flat float64 parameter vector.

Hidden layers use tanh; two heads sit on the last hidden layer: logits over
the discrete action space and a scalar state value.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Sequence, Tuple

import numpy as np

import constants
from slicing.types import SlicingError


class NumericError(SlicingError):
    """Non-finite values in the network output or the loss."""


class Role(Enum):
    """Whether a policy guides deployments or is being trained."""
    EXPERT = "expert"
    LEARNER = "learner"

    def __str__(self) -> str:
        return self.value


def layer_shapes(state_dim: int, hidden: Sequence[int], n_actions: int) -> List[Tuple[str, tuple]]:
    """Names and shapes of all parameter blocks, in storage order."""
    shapes = []
    fan_in = state_dim
    for i, width in enumerate(hidden):
        shapes.append((f"hidden{i}.W", (fan_in, width)))
        shapes.append((f"hidden{i}.b", (width,)))
        fan_in = width
    shapes.append(("policy.W", (fan_in, n_actions)))
    shapes.append(("policy.b", (n_actions,)))
    shapes.append(("value.W", (fan_in, 1)))
    shapes.append(("value.b", (1,)))
    return shapes


def param_count(state_dim: int, hidden: Sequence[int], n_actions: int) -> int:
    return sum(int(np.prod(shape)) for _, shape in layer_shapes(state_dim, hidden, n_actions))


@dataclass
class PolicyWeights:
    """Architecture plus flat parameter vector of one policy."""
    state_dim: int
    hidden: Tuple[int, ...]
    n_actions: int
    params: np.ndarray
    role: Role = Role.LEARNER

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.params = np.asarray(self.params, dtype=np.float64)
        expected = param_count(self.state_dim, self.hidden, self.n_actions)
        if self.params.ndim != 1 or self.params.size != expected:
            raise ValueError(f"expected {expected} parameters, got shape {self.params.shape}")

    @classmethod
    def initialize(cls, state_dim: int, n_actions: int, rng: np.random.Generator,
                   hidden: Sequence[int] = constants.HIDDEN_SIZES,
                   policy_scale: float = constants.POLICY_INIT_SCALE,
                   role: Role = Role.LEARNER) -> 'PolicyWeights':
        """
        Random hidden layers (std 1/sqrt(fan_in)), a small-scale policy head
        and a zero value head, so the initial policy is close to uniform.
        """
        blocks = []
        for name, shape in layer_shapes(state_dim, hidden, n_actions):
            if name.endswith(".b") or name.startswith("value"):
                blocks.append(np.zeros(shape))
            elif name.startswith("policy"):
                blocks.append(rng.standard_normal(shape) * policy_scale)
            else:
                blocks.append(rng.standard_normal(shape) / np.sqrt(shape[0]))
        params = np.concatenate([b.ravel() for b in blocks])
        return cls(state_dim, tuple(hidden), n_actions, params, role)

    def unpack(self, flat: np.ndarray = None) -> Dict[str, np.ndarray]:
        """Views into ``flat`` (the parameters by default) keyed by block name."""
        flat = self.params if flat is None else flat
        views = {}
        offset = 0
        for name, shape in layer_shapes(self.state_dim, self.hidden, self.n_actions):
            size = int(np.prod(shape))
            views[name] = flat[offset:offset + size].reshape(shape)
            offset += size
        return views

    def copy(self, role: Role = None) -> 'PolicyWeights':
        return PolicyWeights(self.state_dim, self.hidden, self.n_actions,
                             self.params.copy(), role or self.role)

    def frozen(self) -> 'PolicyWeights':
        """Read-only expert copy; any in-place update raises."""
        expert = self.copy(Role.EXPERT)
        expert.params.setflags(write=False)
        return expert


@dataclass
class ForwardPass:
    """Everything ``backward`` needs from a batched forward pass."""
    activations: List[np.ndarray]
    logits: np.ndarray
    probs: np.ndarray
    values: np.ndarray


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def forward(weights: PolicyWeights, states: np.ndarray) -> ForwardPass:
    """Batched forward pass over states of shape (N, state_dim)."""
    views = weights.unpack()
    h = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if h.shape[1] != weights.state_dim:
        raise ValueError(f"state length {h.shape[1]} != {weights.state_dim}")
    activations = [h]
    for i in range(len(weights.hidden)):
        h = np.tanh(h @ views[f"hidden{i}.W"] + views[f"hidden{i}.b"])
        activations.append(h)
    logits = h @ views["policy.W"] + views["policy.b"]
    values = (h @ views["value.W"] + views["value.b"])[:, 0]
    if not (np.all(np.isfinite(logits)) and np.all(np.isfinite(values))):
        raise NumericError("non-finite network output")
    return ForwardPass(activations, logits, softmax(logits), values)


def policy_forward(weights: PolicyWeights, state: np.ndarray) -> Tuple[np.ndarray, float]:
    """Action probabilities and state value for a single state."""
    fp = forward(weights, state)
    return fp.probs[0], float(fp.values[0])


def policy_logits(weights: PolicyWeights, state: np.ndarray) -> np.ndarray:
    return forward(weights, state).logits[0]


def backward(weights: PolicyWeights, fp: ForwardPass, dlogits: np.ndarray, dvalues: np.ndarray) -> np.ndarray:
    """Flat gradient given loss gradients w.r.t. logits (N, A) and values (N,)."""
    views = weights.unpack()
    grad = np.zeros_like(weights.params)
    g = weights.unpack(grad)
    h_last = fp.activations[-1]
    dvalues = dvalues[:, None]
    g["policy.W"][...] = h_last.T @ dlogits
    g["policy.b"][...] = dlogits.sum(axis=0)
    g["value.W"][...] = h_last.T @ dvalues
    g["value.b"][...] = dvalues.sum(axis=0)
    dh = dlogits @ views["policy.W"].T + dvalues @ views["value.W"].T
    for i in reversed(range(len(weights.hidden))):
        dpre = dh * (1.0 - fp.activations[i + 1] ** 2)
        g[f"hidden{i}.W"][...] = fp.activations[i].T @ dpre
        g[f"hidden{i}.b"][...] = dpre.sum(axis=0)
        dh = dpre @ views[f"hidden{i}.W"].T
    return grad
