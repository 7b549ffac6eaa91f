"""Flat key-value experiment configuration.

Missing keys take the documented defaults; unknown keys are hard errors so
a typo cannot silently run the wrong experiment.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import FormatError, InvalidConfig
from .pipeline import FeatureExtractorConfig, TrainConfig

DEFAULT_GAMMAS = (0.0, 0.01, 0.05, 0.1, 0.5)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 1234
    n_train: int = 30
    n_val: int = 10
    n_test: int = 20
    dims: tuple[int, int, int] = (48, 48, 32)
    stage: str = "stage2"
    gamma: float = 0.5
    gammas: tuple[float, ...] = DEFAULT_GAMMAS
    tau: float = 4.0
    epsilon: float = 0.1
    learning_rate: float = 0.5
    iterations: int = 300
    train_seed: int = 0
    class_weights: tuple[float, ...] | None = (1.0, 6.0, 2.0)
    smoothing_sigmas: tuple[float, ...] = (1.0, 2.0)
    include_intensity: bool = True
    include_coords: bool = True
    test_mask_source: str = "predicted"

    def __post_init__(self):
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise InvalidConfig("split sizes must be >= 1")
        if len(self.dims) != 3 or any(d < 2 for d in self.dims):
            raise InvalidConfig(f"dims must be three values >= 2, got {self.dims}")
        # delegates range checks for the training fields
        self.train_config()

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(doc)
        for key in ("dims", "gammas", "smoothing_sigmas", "class_weights"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: cannot parse config: {exc}") from exc
        if not isinstance(doc, dict):
            raise FormatError(f"{path}: config must be a JSON object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        for key, value in doc.items():
            if isinstance(value, tuple):
                doc[key] = list(value)
        return doc

    def train_config(self, stage: str | None = None, gamma: float | None = None) -> TrainConfig:
        # include_mask is resolved per stage by TrainConfig, not here
        features = FeatureExtractorConfig(
            smoothing_sigmas=self.smoothing_sigmas,
            include_intensity=self.include_intensity,
            include_coords=self.include_coords,
        )
        return TrainConfig(
            stage=stage if stage is not None else self.stage,
            gamma=gamma if gamma is not None else self.gamma,
            tau=self.tau,
            epsilon=self.epsilon,
            learning_rate=self.learning_rate,
            iterations=self.iterations,
            seed=self.train_seed,
            class_weights=self.class_weights,
            features=features,
        )
