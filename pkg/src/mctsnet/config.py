"""Run configuration: one flat record covering env, nets, training, and eval.

Config files are plain ``key=value`` lines (``#`` comments allowed); CLI
flags override file values.  Field types drive the string coercion.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .sokoban import RewardScheme
from .subnets import SubnetConfig
from .training import CreditConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # board and environment
    board_width: int = 7
    board_height: int = 7
    n_boxes: int = 1
    pulls: int = 30
    step_penalty: float = -0.1
    box_on: float = 1.0
    box_off: float = -1.0
    solve_bonus: float = 10.0
    episode_cap: int = 100

    # network
    scale: str = "desk"  # desk | paper | tiny
    backup: str = "gated"  # gated | mlp
    policy: str = "modulated"  # modulated | unstructured | uniform | distilled
    model: str = "real"  # real | sham

    # search and training
    M: int = 5
    estimator: str = "anytime"  # basic | anytime
    credit_gamma: float = 0.5
    entropy_coeff: float = 0.01
    lr: float = 5e-4
    steps: int = 2000
    prior_epochs: float = 1.0
    prior_lr: float = 1e-3
    workers: int = 1

    # data and artefacts
    dataset: str = ""
    prior_checkpoint: str = ""
    resume: str = ""
    out_dir: str = "runs"

    # evaluation
    eval_every: int = 2000
    eval_episodes: int = 100
    checkpoint_every: int = 2000

    # classic search baselines
    search_gamma: float = 0.99
    uct_c: float = 1.25

    # generation commands
    n_levels: int = 1000
    oracle_max_nodes: int = 200_000

    # compare harness
    n_seeds: int = 5
    axes: str = "model,backup,policy"
    baseline_sims: str = "25,128,512"
    m_sweep: str = "2,10"

    seed: int = 0

    # -- derived views ------------------------------------------------------

    def reward_scheme(self) -> RewardScheme:
        return RewardScheme(
            step_penalty=self.step_penalty,
            box_on=self.box_on,
            box_off=self.box_off,
            solve_bonus=self.solve_bonus,
        )

    def subnet_config(self) -> SubnetConfig:
        maker = {"desk": SubnetConfig.desk, "tiny": SubnetConfig.tiny, "paper": SubnetConfig}
        if self.scale not in maker:
            raise ConfigError(f"scale must be desk|paper|tiny, got {self.scale!r}")
        cfg = maker[self.scale](board_height=self.board_height, board_width=self.board_width)
        return cfg.with_variants(backup=self.backup, policy=self.policy)

    def credit(self) -> CreditConfig:
        return CreditConfig(
            estimator=self.estimator, gamma=self.credit_gamma, entropy_coeff=self.entropy_coeff
        )

    def validate(self) -> None:
        if self.model not in ("real", "sham"):
            raise ConfigError(f"model must be real|sham, got {self.model!r}")
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        self.subnet_config()
        self.credit()


def _coerce(raw: str, kind: type):
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean from {raw!r}")
    return kind(raw)


def load_config(path: str | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Build a RunConfig from an optional key=value file plus overrides."""
    cfg = RunConfig()
    types = {f.name: f.type for f in fields(RunConfig)}
    kinds = {name: type(getattr(cfg, name)) for name in types}

    def apply(name: str, raw: str, origin: str):
        key = name.strip().replace("-", "_")
        if key not in kinds:
            raise ConfigError(f"unknown config key {key!r} ({origin})")
        try:
            setattr(cfg, key, _coerce(raw.strip(), kinds[key]))
        except (TypeError, ValueError) as err:
            raise ConfigError(f"bad value for {key!r}: {raw!r} ({origin})") from err

    if path:
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, raw = line.split("=", 1)
            apply(key, raw, f"{path}:{lineno}")

    for key, raw in (overrides or {}).items():
        apply(key, raw, "command line")

    cfg.validate()
    return cfg
