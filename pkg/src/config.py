"""
Configuration management using Pydantic and Pydantic-Settings.

Runs are described by a flat `key = value` text file (`#` comments allowed).
RunConfig reads it through the dotenv settings source; process environment
variables are never consulted.
"""
from pathlib import Path
from typing import Annotated, Any, Literal

from typing_extensions import Self

from pydantic import AfterValidator, BaseModel, BeforeValidator, Field, FilePath, model_validator
from pydantic_settings import BaseSettings, NoDecode, PydanticBaseSettingsSource, SettingsConfigDict

from .utils import is_power_of_two


def _parse_dims(value: Any) -> Any:
    if isinstance(value, str):
        return tuple(int(part) for part in value.split(",") if part.strip())
    return value


def _check_power_of_two(value: int) -> int:
    if not is_power_of_two(value):
        raise ValueError(f"must be a power of two, got {value}")
    return value


PowerOfTwo = Annotated[int, AfterValidator(_check_power_of_two)]
HiddenDims = Annotated[tuple[int, ...], NoDecode, BeforeValidator(_parse_dims)]


class TrainingFields(BaseModel):
    """Training hyperparameters shared by TrainConfig and RunConfig; defaults follow the reference hyperparameter tables."""

    alpha_q: float = Field(default=50.0, ge=0.0)
    alpha_bc: float = Field(default=10.0, ge=0.0)
    alpha_sc: float = Field(default=10.0, ge=0.0)
    gamma: float = Field(default=0.99, gt=0.0, lt=1.0)
    tau: float = Field(default=0.005, ge=0.0, le=1.0)
    m_disc: PowerOfTwo = 8
    m_btt: PowerOfTwo = 8
    batch_size: int = Field(default=256, ge=1)
    grad_steps: int = Field(default=20000, ge=0)
    lr: float = Field(default=1e-4, gt=0.0)
    grad_clip: float = Field(default=1.0, gt=0.0)
    clipped_double_q: bool = False
    seed: int = Field(default=0, ge=0)
    q_normalization: Literal["normalized", "raw"] = "normalized"
    fm_step: Literal["min", "double"] = "min"
    policy_hidden: HiddenDims = (64, 64)
    critic_hidden: HiddenDims = (64, 64)
    log_every: int = Field(default=100, ge=1)

    @model_validator(mode="after")
    def _btt_within_disc(self) -> Self:
        if self.m_btt > self.m_disc:
            raise ValueError(f"m_btt ({self.m_btt}) must not exceed m_disc ({self.m_disc})")
        return self


class TrainConfig(TrainingFields):
    """Everything one training run needs."""


class InferenceConfig(BaseModel):
    """Step budget, best-of-N width and episode count for one evaluation."""

    m_inf: PowerOfTwo = 4
    n: int = Field(default=1, ge=1)
    episodes: int = Field(default=50, ge=1)
    seed: int = Field(default=0, ge=0)


class RunConfig(BaseSettings, TrainingFields):
    """
    Flat run configuration: the training fields, inference fields, environment
    name, dataset path, output directory and evaluation cadence.
    """

    model_config = SettingsConfigDict(
        case_sensitive=False,
        extra="forbid",
        env_file_encoding="utf-8",
    )

    # Run wiring
    env: str = Field(default="reach2goal")
    dataset_path: FilePath
    output_dir: Path = Field(default=Path("runs/default"))
    eval_every: int = Field(default=2000, ge=1)

    # Inference
    m_inf: PowerOfTwo = 4
    best_of_n: int = Field(default=1, ge=1)
    episodes: int = Field(default=50, ge=1)

    def __init__(self, **kwargs: Any):
        super().__init__(**kwargs)
        self._ensure_output_directory()

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        return (init_settings, dotenv_settings)

    @model_validator(mode="after")
    def _inference_within_disc(self) -> "RunConfig":
        if self.m_inf > self.m_disc:
            raise ValueError(f"m_inf ({self.m_inf}) must not exceed m_disc ({self.m_disc})")
        return self

    def _ensure_output_directory(self) -> None:
        """Ensures the output directory for metrics and models exists."""
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.model_dump(include=set(TrainConfig.model_fields)))

    def inference_config(self, seed: int | None = None) -> InferenceConfig:
        return InferenceConfig(
            m_inf=self.m_inf,
            n=self.best_of_n,
            episodes=self.episodes,
            seed=self.seed if seed is None else seed,
        )


def load_run_config(path: Path) -> RunConfig:
    """Read a `key = value` config file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return RunConfig(_env_file=path)


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_run_config(config: RunConfig) -> str:
    """Emit a config in the same flat format load_run_config reads."""
    lines = ["# sorl-desk run configuration"]
    for key, value in config.model_dump().items():
        lines.append(f"{key} = {_format_value(value)}")
    return "\n".join(lines) + "\n"
