"""Model and training configuration, plus the run-config JSON schema.

Run config files nest the two sections::

    {"data": "...", "seed": 0, "model": {...}, "train": {...}}

Unknown keys are rejected anywhere; the resolved config (all defaults
materialized) is written into every run directory so a run can be reproduced
from it alone.
"""

import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError


def _check_keys(data, cls, where):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {where} config keys: {sorted(unknown)}")


@dataclass
class ModelConfig:
    embed_dim: int = 100
    num_experts: int = 32
    top_n: int = 5
    expert_hidden: int = 64
    gate_hidden: int = 64
    neighbor_cap: int = 50
    margin: float = 1.0
    inner_lr: float = 0.001
    inner_steps: int = 1
    eval_inner_steps: int = None  # None: same as inner_steps
    eta_init: str = "zero"  # "zero" starts at the projection identity
    eta_init_std: float = 0.01
    train_embeddings: bool = True
    use_neighbor_agg: bool = True
    use_moe: bool = True
    use_local_adapt: bool = True

    def validate(self):
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be >= 1")
        if not 1 <= self.top_n <= self.num_experts:
            raise ConfigError(
                f"top_n must satisfy 1 <= top_n <= num_experts "
                f"(got {self.top_n} of {self.num_experts})"
            )
        if self.margin <= 0:
            raise ConfigError("margin must be positive")
        if self.inner_steps < 1:
            raise ConfigError("inner_steps must be >= 1")
        if self.neighbor_cap < 1:
            raise ConfigError("neighbor_cap must be >= 1")
        if self.expert_hidden < 1 or self.gate_hidden < 1:
            raise ConfigError("hidden widths must be >= 1")
        if self.eta_init not in ("zero", "gaussian"):
            raise ConfigError(f"eta_init must be 'zero' or 'gaussian', got {self.eta_init!r}")
        return self

    @property
    def test_inner_steps(self):
        return self.inner_steps if self.eval_inner_steps is None else self.eval_inner_steps

    @classmethod
    def from_dict(cls, data):
        _check_keys(data, cls, "model")
        return cls(**data).validate()


@dataclass
class TrainConfig:
    shots: int = 5
    meta_batch_tasks: int = 1
    query_batch: int = 1024  # query triplets per task; capped by relation size
    outer_lr: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_steps: int = 10000
    eval_every: int = 1000
    patience: int = 10
    eval_query_cap: int = None  # None: rank every remaining triplet
    workers: int = 1

    def validate(self):
        if self.shots < 1:
            raise ConfigError("shots must be >= 1")
        if self.meta_batch_tasks < 1 or self.query_batch < 1:
            raise ConfigError("meta_batch_tasks and query_batch must be >= 1")
        if self.max_steps < 0:
            raise ConfigError("max_steps must be >= 0")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.max_steps > 0 and self.eval_every > self.max_steps:
            raise ConfigError("eval_every must not exceed max_steps")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        return self

    @classmethod
    def from_dict(cls, data):
        _check_keys(data, cls, "train")
        return cls(**data).validate()


@dataclass
class RunConfig:
    data: str = None
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self):
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        self.model.validate()
        self.train.validate()
        return self

    @classmethod
    def from_dict(cls, data):
        _check_keys(data, cls, "run")
        model = ModelConfig.from_dict(data.get("model", {}))
        train = TrainConfig.from_dict(data.get("train", {}))
        return cls(data=data.get("data"), seed=data.get("seed", 0),
                   model=model, train=train).validate()

    @classmethod
    def from_file(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
        if not isinstance(raw, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        return cls.from_dict(raw)

    def to_dict(self):
        return {
            "data": self.data,
            "seed": self.seed,
            "model": asdict(self.model),
            "train": asdict(self.train),
        }

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")
