import numpy as np
import pytest
import yaml

from ai.network import PolicyWeights
from harness.config import build_env_config, build_run_config
from slicing.types import EnvConfig, SliceSpec, Trace, TrafficKind, TrafficModel

# small enough that a run of a few dozen windows takes well under a second per window
SMALL_DOC = {
    "slices": [
        {"name": "VoNR", "weight": 0.1, "c1": 0.5, "c2": 10,
         "traffic": {"kind": "vonr", "user_mean": 8, "user_max": 12}},
        {"name": "VR", "weight": 0.7, "c1": 2.0, "c2": 1,
         "traffic": {"kind": "vr_synthetic", "user_mean": 1, "user_max": 3}},
        {"name": "Video", "weight": 0.2, "c1": 1.0, "c2": 5,
         "traffic": {"kind": "video", "user_mean": 3, "user_max": 6}},
    ],
    "env": {"total_capacity": 200, "window_len_slots": 20},
    "transfer": {"duration": 20},
    "run": {"total_steps": 40, "oracle_windows": 3},
    "patterns": {
        "pattern1": {},
        "pattern2": {"VR": {"user_mean": 2, "frame_size_mean_b": 3000}, "Video": {"user_mean": 2}},
    },
    "sweep": {
        "base_seed": 7,
        "seeds": [1],
        "modes": ["none", "reuse", "distill", "hybrid"],
        "exploration_decays": [0.99],
        "transfer_rates": [0.9],
        "gammas": [1.0, 0.3],
        "expert_seed": 99,
        "expert_steps": 40,
        "top_k": 4,
        "scenarios": {"similar": {"train": "pattern1", "deploy": "pattern1"},
                      "different": {"train": "pattern2", "deploy": "pattern1"}},
    },
}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def env_config() -> EnvConfig:
    """The default three-slice environment."""
    return build_env_config({})


@pytest.fixture
def small_doc() -> dict:
    return yaml.safe_load(yaml.safe_dump(SMALL_DOC))


@pytest.fixture
def small_env_config(small_doc) -> EnvConfig:
    return build_env_config(small_doc)


@pytest.fixture
def small_config(small_doc):
    return build_run_config(small_doc)


@pytest.fixture
def small_config_file(tmp_path, small_doc):
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump(small_doc))
    return path


@pytest.fixture
def tiny_weights(rng) -> PolicyWeights:
    return PolicyWeights.initialize(3, 6, rng, hidden=(4,), policy_scale=1.0)


def empty_env_config(num_slices: int = 3) -> EnvConfig:
    """Environment whose slices replay empty traces (pass ``empty_traces`` to SlicingEnv)."""
    weights = [0.1, 0.7, 0.2] if num_slices == 3 else [1.0 / num_slices] * num_slices
    slices = tuple(
        SliceSpec(s, f"s{s}", weights[s], 1.0 + s, 2.0 + s,
                  TrafficModel(TrafficKind.VR_TRACE, 1.0, 2, trace_path="empty.csv"))
        for s in range(num_slices))
    return EnvConfig(slices=slices)


def empty_traces(num_slices: int = 3) -> dict:
    return {s: Trace() for s in range(num_slices)}


def weights_with_logits(logits, state_dim: int = 3) -> PolicyWeights:
    """A network whose logits are ``logits`` for every state."""
    logits = np.asarray(logits, dtype=np.float64)
    weights = PolicyWeights.initialize(state_dim, len(logits), np.random.default_rng(0), hidden=(2,))
    views = weights.unpack()
    views["policy.W"][...] = 0.0
    views["policy.b"][...] = logits
    return weights
