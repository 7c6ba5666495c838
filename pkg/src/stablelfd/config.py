"""Experiment configuration: flat ``section.key = value`` text files.

Example::

    # comment
    dataset.path = data/toy
    run.preset = desk
    run.methods = CHN, FT
    run.seeds = 0, 1, 2
    hypernet.reg_strategy = subset:3

A preset fills every training hyperparameter; explicit keys override it.
``reference`` follows the reference hyperparameter table, chosen by data
dimension; ``desk`` is the reduced setting that trains in minutes on a CPU.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from stablelfd.continual import LEARNERS, METHODS, MethodConfig
from stablelfd.dynamics import ContractError


class ConfigError(ContractError):
    pass


# config key -> MethodConfig field
METHOD_KEYS = {
    "train.iterations": "iterations",
    "train.lr": "lr",
    "train.points": "train_points",
    "integrator.scheme": "scheme",
    "learner.time_input": "time_input",
    "learner.alpha": "alpha",
    "learner.node_hidden": "node_hidden",
    "learner.f_hidden": "f_hidden",
    "learner.v_hidden": "v_hidden",
    "hypernet.hidden": "hn_hidden",
    "hypernet.task_emb_dim": "task_emb_dim",
    "hypernet.chunk_size": "chunk_size",
    "hypernet.chunk_emb_dim": "chunk_emb_dim",
    "hypernet.out_scale": "hn_out_scale",
    "hypernet.beta": "beta",
    "hypernet.reg_strategy": "reg_strategy",
    "hypernet.lookahead": "lookahead",
    "baselines.si_c": "si_c",
    "baselines.si_xi": "si_xi",
    "baselines.mas_lambda": "mas_lambda",
    "pose.tangent_scale": "tangent_scale",
}
RUN_KEYS = ("dataset.path", "run.preset", "run.methods", "run.learners", "run.seeds", "run.output")
PRESETS = ("desk", "reference")

DESK = {"iterations": 3000, "lr": 1e-3, "beta": 1.0, "alpha": 0.1}

# columns of the reference hyperparameter table, keyed by data dimension ("pose" for position + orientation)
_REFERENCE_COLUMNS = {
    2: dict(iterations=15000, lr=1e-4, node=(1000, 1000, 1015), hn_node=(100, 100, 150), hn_f=(100,) * 3,
            hn=(200,) * 3, emb=256, chunk=8192),
    8: dict(iterations=60000, lr=5e-5, node=(1000,) * 3 + (1015,), hn_node=(100,) * 3 + (150,), hn_f=(90,) * 3,
            hn=(300,) * 3, emb=256, chunk=16384),
    16: dict(iterations=70000, lr=5e-5, node=(1000,) * 4 + (1015,), hn_node=(100,) * 4 + (150,), hn_f=(75,) * 3,
             hn=(300,) * 3, emb=256, chunk=16384),
    32: dict(iterations=80000, lr=5e-5, node=(1000,) * 5 + (1015,), hn_node=(80,) * 5 + (100,), hn_f=(60,) * 3,
             hn=(350,) * 3, emb=512, chunk=16384),
    "pose": dict(iterations=40000, lr=5e-5, node=(1000, 1000, 1015), hn_node=(100, 100, 150), hn_f=(100,) * 3,
                 hn=(300,) * 3, emb=256, chunk=8192),
}


def reference_preset(dim: int, kind: str, method: str) -> dict:
    """MethodConfig overrides from the reference table for this data shape."""
    if kind == "pose":
        col = _REFERENCE_COLUMNS["pose"]
    else:
        col = _REFERENCE_COLUMNS[next((d for d in (2, 8, 16, 32) if d >= dim), 32)]
    small = method == "HN"
    return {
        "iterations": col["iterations"], "lr": col["lr"],
        "node_hidden": col["hn_node"] if small else col["node"],
        "f_hidden": col["hn_f"] if small else (1000,) * 3,
        "v_hidden": (100, 100),
        "hn_hidden": col["hn"], "task_emb_dim": col["emb"], "chunk_emb_dim": col["emb"],
        "chunk_size": col["chunk"], "beta": 5e-3, "si_c": 0.3, "si_xi": 0.3, "mas_lambda": 0.1,
        "tangent_scale": 5.0,
    }


def _field_types() -> dict:
    return {f.name: f.type for f in fields(MethodConfig)}


def _convert(key: str, name: str, value: str):
    typ = _field_types()[name]
    try:
        if "tuple" in typ:
            return tuple(int(v) for v in value.replace(" ", "").split(",") if v)
        if typ == "bool":
            low = value.lower()
            if low not in ("true", "false", "on", "off", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "on", "1", "yes")
        if typ == "int":
            return int(value)
        if typ == "float":
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {typ}") from None


def _split_list(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.split(",") if v.strip())


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str | None = None
    preset: str = "reference"
    methods: tuple[str, ...] = ("CHN",)
    learners: tuple[str, ...] = ("sNODE",)
    seeds: tuple[int, ...] = (0,)
    output: str | None = None
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"run.preset must be one of {PRESETS}, got {self.preset!r}")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"run.methods: unknown method {m!r}")
        for l in self.learners:
            if l not in LEARNERS:
                raise ConfigError(f"run.learners: unknown learner {l!r}")
        if not self.methods or not self.learners or not self.seeds:
            raise ConfigError("run.methods, run.learners and run.seeds must be nonempty")
        unknown = set(self.overrides) - set(_field_types())
        if unknown:
            raise ConfigError(f"unknown method settings: {sorted(unknown)}")
        # validate every combination up front
        for m in self.methods:
            for l in self.learners:
                self.method_config(m, l, dim=2, kind="euclidean")

    def method_config(self, method: str, learner: str, dim: int, kind: str) -> MethodConfig:
        base = dict(DESK) if self.preset == "desk" else reference_preset(dim, kind, method)
        base.update(self.overrides)
        try:
            return MethodConfig(method=method, learner=learner, **base)
        except ContractError as exc:
            raise ConfigError(str(exc)) from None

    def runs(self):
        for method in self.methods:
            for learner in self.learners:
                for seed in self.seeds:
                    yield method, learner, seed

    def with_values(self, values: dict[str, str]) -> ExperimentConfig:
        """Apply ``key -> raw string`` settings (same keys as the file format)."""
        kw = {"dataset": self.dataset, "preset": self.preset, "methods": self.methods, "learners": self.learners,
              "seeds": self.seeds, "output": self.output, "overrides": dict(self.overrides)}
        for key, value in values.items():
            if key in METHOD_KEYS:
                kw["overrides"][METHOD_KEYS[key]] = _convert(key, METHOD_KEYS[key], value)
            elif key == "dataset.path":
                kw["dataset"] = value
            elif key == "run.preset":
                kw["preset"] = value
            elif key == "run.methods":
                kw["methods"] = _split_list(value)
            elif key == "run.learners":
                kw["learners"] = _split_list(value)
            elif key == "run.seeds":
                try:
                    kw["seeds"] = tuple(int(s) for s in _split_list(value))
                except ValueError:
                    raise ConfigError(f"run.seeds: expected integers, got {value!r}") from None
            elif key == "run.output":
                kw["output"] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        return ExperimentConfig(**kw)


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}, line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in METHOD_KEYS and key not in RUN_KEYS:
            raise ConfigError(f"{source}, line {n}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"{source}, line {n}: duplicate key {key!r}")
        values[key] = value
    return values


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return ExperimentConfig().with_values(parse_text(text, str(path)))


def resolved_text(cfg: MethodConfig, dataset: str | None, seed: int) -> str:
    """A config file that pins every setting of one resolved run."""
    inverse = {v: k for k, v in METHOD_KEYS.items()}
    lines = []
    if dataset is not None:
        lines.append(f"dataset.path = {dataset}")
    lines += ["run.preset = desk", f"run.methods = {cfg.method}", f"run.learners = {cfg.learner}",
              f"run.seeds = {seed}"]
    for name, value in cfg.to_dict().items():
        if name in ("method", "learner"):
            continue
        if isinstance(value, list):
            value = ", ".join(str(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{inverse[name]} = {value}")
    return "\n".join(lines) + "\n"
