"""
File-based policy directory.

One YAML document per context key, stored at ``<dir>/<context_key>.policy``.
Weights are written as 17-significant-digit decimal strings, which
round-trip float64 values exactly.
"""
import difflib
import logging
import os
import re
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import yaml

import constants
from ai.network import PolicyWeights, Role, param_count
from slicing.types import SlicingError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
_KEY_PATTERN = re.compile(r"^[A-Za-z0-9_.-]+(/[A-Za-z0-9_.-]+)*$")


class PolicyStoreError(SlicingError):
    """A policy file is missing, malformed, or incompatible with this run."""


@dataclass
class PolicyRecord:
    """A stored policy: architecture, action-space hash, weights and metadata."""
    context_key: str
    state_dim: int
    hidden: Tuple[int, ...]
    n_actions: int
    action_space_hash: str
    params: np.ndarray
    role: Role = Role.EXPERT
    metadata: dict = field(default_factory=dict)
    format_version: int = constants.POLICY_FORMAT_VERSION

    @classmethod
    def from_weights(cls, context_key: str, weights: PolicyWeights, action_space_hash: str,
                     metadata: Optional[dict] = None, role: Role = Role.EXPERT) -> 'PolicyRecord':
        return cls(context_key, weights.state_dim, tuple(weights.hidden), weights.n_actions,
                   action_space_hash, weights.params.copy(), role, dict(metadata or {}))

    def validate(self):
        check_key(self.context_key)
        expected = param_count(self.state_dim, self.hidden, self.n_actions)
        if np.ndim(self.params) != 1 or len(self.params) != expected:
            raise PolicyStoreError(
                f"{self.context_key}: architecture needs {expected} weights, record has {np.size(self.params)}")
        if not np.all(np.isfinite(self.params)):
            raise PolicyStoreError(f"{self.context_key}: non-finite weights")

    def weights(self, role: Optional[Role] = None) -> PolicyWeights:
        """Network weights; expert records come back read-only."""
        role = role or self.role
        weights = PolicyWeights(self.state_dim, self.hidden, self.n_actions, np.array(self.params), role)
        return weights.frozen() if role == Role.EXPERT else weights

    def to_document(self) -> dict:
        return {
            "format_version": self.format_version,
            "context_key": self.context_key,
            "role": str(self.role),
            "architecture": {
                "state_dim": self.state_dim,
                "hidden": list(self.hidden),
                "n_actions": self.n_actions,
                "action_space_hash": self.action_space_hash,
            },
            "metadata": self.metadata,
            "weights": [format(float(w), ".17g") for w in self.params],
        }

    @classmethod
    def from_document(cls, doc: dict) -> 'PolicyRecord':
        try:
            arch = doc["architecture"]
            return cls(
                context_key=str(doc["context_key"]),
                state_dim=int(arch["state_dim"]),
                hidden=tuple(int(h) for h in arch["hidden"]),
                n_actions=int(arch["n_actions"]),
                action_space_hash=str(arch["action_space_hash"]),
                params=np.array([float(w) for w in doc["weights"]], dtype=np.float64),
                role=Role(doc.get("role", "expert")),
                metadata=dict(doc.get("metadata") or {}),
                format_version=int(doc["format_version"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise PolicyStoreError(f"malformed policy document: {exc}") from exc


def check_key(context_key: str):
    if not _KEY_PATTERN.match(context_key) or ".." in context_key.split("/"):
        raise PolicyStoreError(f"invalid context key {context_key!r}")


def policy_path(directory: PathLike, context_key: str) -> Path:
    check_key(context_key)
    return Path(directory) / (context_key + constants.POLICY_SUFFIX)


def list_keys(directory: PathLike) -> List[str]:
    """All context keys stored under ``directory``, sorted."""
    root = Path(directory)
    if not root.is_dir():
        return []
    suffix = constants.POLICY_SUFFIX
    return sorted(p.relative_to(root).as_posix()[:-len(suffix)] for p in root.rglob("*" + suffix)
                  if not p.name.startswith(".tmp-"))


def save_policy(directory: PathLike, record: PolicyRecord, overwrite: bool = False) -> Path:
    """Write ``record`` atomically (temp file, then rename)."""
    record.validate()
    path = policy_path(directory, record.context_key)
    if path.exists() and not overwrite:
        raise PolicyStoreError(f"policy {record.context_key!r} already exists at {path}; pass overwrite")
    record.metadata.setdefault("created_at", datetime.now(timezone.utc).isoformat(timespec="seconds"))
    doc = record.to_document()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=constants.POLICY_SUFFIX)
        try:
            with os.fdopen(fd, "w") as fh:
                yaml.safe_dump(doc, fh, sort_keys=False)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise PolicyStoreError(f"cannot write {path}: {exc}") from exc
    logger.info("saved policy %s (%d weights) to %s", record.context_key, len(record.params), path)
    return path


def _missing_key_message(directory: PathLike, context_key: str) -> str:
    keys = list_keys(directory)
    if not keys:
        return f"no policy {context_key!r}: {directory} holds no policies"
    nearest = difflib.get_close_matches(context_key, keys, n=3, cutoff=0.0)
    return f"no policy {context_key!r} in {directory}; nearest keys: {', '.join(nearest)}"


def load_policy(directory: PathLike, context_key: str, expected_hash: Optional[str] = None,
                expected_state_dim: Optional[int] = None,
                expected_n_actions: Optional[int] = None) -> PolicyRecord:
    """
    Read and validate a stored policy.

    Raises:
        PolicyStoreError: missing key (the message names the three nearest
            keys), format version mismatch, malformed weights, or an
            architecture / action-space hash that differs from the
            expected one.
    """
    path = policy_path(directory, context_key)
    if not path.is_file():
        raise PolicyStoreError(_missing_key_message(directory, context_key))
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise PolicyStoreError(f"cannot read {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise PolicyStoreError(f"{path} is not a policy document")
    version = doc.get("format_version")
    if version != constants.POLICY_FORMAT_VERSION:
        raise PolicyStoreError(
            f"{path}: format version {version}, expected {constants.POLICY_FORMAT_VERSION}")

    record = PolicyRecord.from_document(doc)
    record.validate()
    if expected_hash is not None and record.action_space_hash != expected_hash:
        raise PolicyStoreError(
            f"{context_key}: trained on a different action space "
            f"(hash {record.action_space_hash[:12]}, expected {expected_hash[:12]})")
    if expected_state_dim is not None and record.state_dim != expected_state_dim:
        raise PolicyStoreError(f"{context_key}: state size {record.state_dim}, expected {expected_state_dim}")
    if expected_n_actions is not None and record.n_actions != expected_n_actions:
        raise PolicyStoreError(f"{context_key}: {record.n_actions} actions, expected {expected_n_actions}")
    logger.info("loaded policy %s from %s", context_key, path)
    return record


def resolve_context(directory: PathLike, requested_key: str) -> str:
    """Exact-match resolution of a requested context key."""
    if requested_key in list_keys(directory):
        return requested_key
    raise PolicyStoreError(_missing_key_message(directory, requested_key))
