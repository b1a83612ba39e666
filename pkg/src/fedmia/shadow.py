"""Shadow-model training on the attacker's side.

Shadow models reuse the target's architecture and are always trained
centrally on their own shadow-train split; this module never sees the
target model or the target's training data.
"""

import os
from dataclasses import dataclass, replace

from .errors import InputError
from .nn import ModelSpec, TrainConfig, init_params, save_params, train
from .seeding import derive_seed


@dataclass
class ShadowEnsemble:
    """k trained shadow models paired with the datasets that trained them."""

    models: list
    datasets: list
    spec: ModelSpec

    def __post_init__(self):
        if not self.models or len(self.models) != len(self.datasets):
            raise InputError(
                f"need matching non-empty model/dataset lists, got "
                f"{len(self.models)} models and {len(self.datasets)} datasets"
            )
        for i, model in enumerate(self.models):
            if not model.conforms_to(self.spec):
                raise InputError(f"shadow model {i} does not conform to the ensemble spec")

    def __len__(self) -> int:
        return len(self.models)


def shadow_seed(master_seed: int, index: int, stage: str) -> int:
    """Seed for shadow `index`; stage is "init" or "train"."""
    return derive_seed(master_seed, "shadow-model", index, stage)


def train_shadows(datasets: list, spec: ModelSpec, cfg: TrainConfig, checkpoint_dir=None) -> ShadowEnsemble:
    """Train one shadow model per shadow dataset, each on its train split.

    Shadow i is a pure function of (datasets[i], spec, cfg, i): its
    initialization and shuffle seeds are derived from (cfg.seed, i).
    """
    if not datasets:
        raise InputError("train_shadows needs at least one shadow dataset")
    for i, sd in enumerate(datasets):
        if len(sd.train) == 0:
            raise InputError(f"shadow dataset {i} has an empty train split")
    models = []
    for i, sd in enumerate(datasets):
        params = init_params(spec, shadow_seed(cfg.seed, i, "init"))
        trained = train(params, sd.train, replace(cfg, seed=shadow_seed(cfg.seed, i, "train")))
        models.append(trained)
        if checkpoint_dir is not None:
            save_params(trained, os.path.join(checkpoint_dir, f"shadow_{i:03d}.params"))
    return ShadowEnsemble(models=models, datasets=list(datasets), spec=spec)
