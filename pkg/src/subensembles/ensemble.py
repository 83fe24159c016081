"""Sub-ensemble and deep-ensemble training plus the averaging combiner.

A sub-ensemble is built by training one full network, freezing everything
before the split index, and then training additional task heads from fresh
random inits against the frozen trunk, all on the same full dataset (no
bootstrap resampling). Prediction evaluates the trunk once and averages the
task heads' probability outputs; a deep ensemble averages N independently
trained full networks.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import ConfigurationError, DataFormatError, NumericalError, TrainingError
from .layers import (ParamStore, cross_entropy_grad, cross_entropy_loss,
                     backward_layer, forward_layer, sgd_step, zero_velocity)
from .network import (NetworkSpec, SplitPoint, eval_counter, format_spec,
                      forward_full, forward_task, forward_trunk, init_params,
                      load_params, parse_spec, save_params, split)
from .rng import Stream, derive_key

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9


@dataclass
class SubEnsemble:
    spec: NetworkSpec
    split: SplitPoint
    trunk: ParamStore  # frozen; shared by every member
    members: list[ParamStore]  # task-segment parameters, layer keys >= split.index
    member_seeds: tuple[int, ...] = ()
    train_cfg: TrainConfig | None = None

    def __post_init__(self):
        if len(self.members) < 1:
            raise ConfigurationError("an ensemble needs at least one member")

    @property
    def num_members(self) -> int:
        return len(self.members)


@dataclass
class DeepEnsemble:
    spec: NetworkSpec
    members: list[ParamStore]  # full-network parameters
    member_seeds: tuple[int, ...] = ()
    train_cfg: TrainConfig | None = None

    def __post_init__(self):
        if len(self.members) < 1:
            raise ConfigurationError("an ensemble needs at least one member")

    @property
    def num_members(self) -> int:
        return len(self.members)


def member_seed(master_seed: int, index: int) -> int:
    """Per-member seed: master and member index mixed through SplitMix64."""
    return derive_key(master_seed, "member", index)


def _train_segment(
    spec: NetworkSpec,
    params: ParamStore,
    inputs: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    shuffle_seed: int,
    lo: int,
    hi: int,
    member_name: str,
) -> ParamStore:
    """SGD over layers [lo, hi); `inputs` feed layer `lo` directly."""
    velocity = zero_velocity(params)
    n = len(inputs)
    try:
        for epoch in range(cfg.epochs):
            order = Stream(derive_key(shuffle_seed, "shuffle", epoch)).permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                x, y = inputs[idx], labels[idx]
                activations = []
                for i in range(lo, hi):
                    activations.append(x)
                    x = forward_layer(spec.layers[i], params.tensors.get(i), x)
                loss = cross_entropy_loss(x, y)
                if not np.isfinite(loss):
                    raise NumericalError(f"loss became {loss}")
                grad = cross_entropy_grad(x, y)
                grads = {}
                for i in reversed(range(lo, hi)):
                    grad, gp = backward_layer(spec.layers[i], params.tensors.get(i),
                                              activations[i - lo], grad)
                    if gp is not None:
                        grads[i] = gp
                sgd_step(params, grads, velocity, cfg.learning_rate, cfg.momentum)
    except NumericalError as exc:
        raise TrainingError(f"{member_name} diverged: {exc}") from exc
    return params


def train_full_model(data: Dataset, spec: NetworkSpec, cfg: TrainConfig, seed: int) -> ParamStore:
    """Train the whole stitched network from a fresh seeded init."""
    params = init_params(spec, seed)
    return _train_segment(spec, params, data.images, data.labels, cfg, seed,
                          0, len(spec.layers), f"full model (seed {seed})")


def train_sub_ensemble(
    data: Dataset,
    spec: NetworkSpec,
    split_point: SplitPoint,
    n: int,
    cfg: TrainConfig,
    seed: int,
) -> SubEnsemble:
    """Train an n-member sub-ensemble.

    Member 1 is the task segment of the initially trained full network;
    members 2..n are freshly seeded task heads trained against the frozen
    trunk on the same full dataset.
    """
    if n < 1:
        raise ConfigurationError(f"member count must be >= 1, got {n}")
    k = split_point.index
    seeds = [member_seed(seed, i) for i in range(n)]
    full = train_full_model(data, spec, cfg, seeds[0])

    trunk = ParamStore({i: p for i, p in full.tensors.items() if i < k}, seeds[0])
    first = ParamStore({i: p for i, p in full.tensors.items() if i >= k}, seeds[0])
    members = [first]

    if n > 1:
        # trunk is frozen, so its features for the training set are fixed
        features = forward_trunk(spec, split_point, trunk, data.images)
        for i in range(1, n):
            head = init_params(spec, seeds[i], (k, len(spec.layers)))
            _train_segment(spec, head, features, data.labels, cfg, seeds[i],
                           k, len(spec.layers), f"task member {i + 1}/{n}")
            members.append(head)
    return SubEnsemble(spec, split_point, trunk, members, tuple(seeds), cfg)


def train_deep_ensemble(
    data: Dataset,
    spec: NetworkSpec,
    n: int,
    cfg: TrainConfig,
    seed: int,
) -> DeepEnsemble:
    """Train n independent full networks on the same full dataset."""
    if n < 1:
        raise ConfigurationError(f"member count must be >= 1, got {n}")
    seeds = [member_seed(seed, i) for i in range(n)]
    members = [train_full_model(data, spec, cfg, s) for s in seeds]
    return DeepEnsemble(spec, members, tuple(seeds), cfg)


def member_probabilities(ensemble: SubEnsemble | DeepEnsemble, x: np.ndarray) -> np.ndarray:
    """Per-member softmax outputs, shape (num_members, batch, classes).

    For a sub-ensemble the trunk is evaluated exactly once and its output is
    shared by every task head.
    """
    if isinstance(ensemble, SubEnsemble):
        trunk_out = forward_trunk(ensemble.spec, ensemble.split, ensemble.trunk, x)
        probs = [forward_task(ensemble.spec, ensemble.split, m, trunk_out)
                 for m in ensemble.members]
    else:
        probs = [forward_full(ensemble.spec, m, x) for m in ensemble.members]
    return np.stack(probs)


def combine(member_probs: np.ndarray, n: int | None = None) -> np.ndarray:
    """Average of the first n members' probabilities, in member order."""
    n = len(member_probs) if n is None else n
    if not 1 <= n <= len(member_probs):
        raise ConfigurationError(f"cannot combine {n} of {len(member_probs)} members")
    total = member_probs[0].copy()
    for i in range(1, n):
        total += member_probs[i]
    return total / n


def predict(ensemble: SubEnsemble | DeepEnsemble, x: np.ndarray) -> np.ndarray:
    """Ensemble class probabilities: N^-1 * sum of member softmax outputs.

    Accepts a single example (c, h, w) or a batch (n, c, h, w); returns a
    (classes,) vector or a (n, classes) matrix accordingly.
    """
    single = x.ndim == 3
    out = combine(member_probabilities(ensemble, x))
    return out[0] if single else out


def trunk_evaluations() -> int:
    """Trunk forward count since the last eval_counter.reset() (test hook)."""
    return eval_counter.trunk_forwards


# ---------------------------------------------------------------------------
# checkpoint directory: manifest + trunk file + one file per member


def save_ensemble(ensemble: SubEnsemble | DeepEnsemble, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    is_sub = isinstance(ensemble, SubEnsemble)
    member_files = [f"member_{i:03d}.params" for i in range(ensemble.num_members)]
    manifest = {
        "format_version": MANIFEST_VERSION,
        "kind": "sub" if is_sub else "deep",
        "spec": format_spec(ensemble.spec),
        "split_index": ensemble.split.index if is_sub else None,
        "member_seeds": list(ensemble.member_seeds),
        "train_config": asdict(ensemble.train_cfg) if ensemble.train_cfg else None,
        "trunk_file": "trunk.params" if is_sub else None,
        "member_files": member_files,
    }
    with open(directory / MANIFEST_NAME, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    if is_sub:
        save_params(ensemble.trunk, directory / "trunk.params")
    for name, member in zip(member_files, ensemble.members):
        save_params(member, directory / name)


def load_ensemble(directory) -> SubEnsemble | DeepEnsemble:
    directory = Path(directory)
    path = directory / MANIFEST_NAME
    if not path.exists():
        raise DataFormatError(f"no {MANIFEST_NAME} in {directory}")
    with open(path, encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise DataFormatError(f"unsupported ensemble manifest version in {path}")
    spec = parse_spec(manifest["spec"])
    members = [load_params(directory / name) for name in manifest["member_files"]]
    seeds = tuple(manifest.get("member_seeds", ()))
    cfg = TrainConfig(**manifest["train_config"]) if manifest.get("train_config") else None
    if manifest["kind"] == "sub":
        trunk = load_params(directory / manifest["trunk_file"])
        return SubEnsemble(spec, split(spec, manifest["split_index"]), trunk,
                           members, seeds, cfg)
    return DeepEnsemble(spec, members, seeds, cfg)
