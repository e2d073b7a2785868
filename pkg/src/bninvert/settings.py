from __future__ import annotations

from pathlib import Path
from typing import Any, Literal, Optional, Tuple, Type

import orjson
from pydantic import BaseModel, ConfigDict, Field
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

from bninvert.components.fixture.shapes import ShapesFixtureConfig
from bninvert.core.errors import ConfigError
from bninvert.core.schemas import SynthesisConfig, TrainConfig

RESOLVED_CONFIG_NAME = "resolved_config.json"

LogLevel = Literal["DEBUG", "INFO", "WARNING", "ERROR"]


class DatasetSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    path: Optional[Path] = Field(default=None, description="SYND directory; the shapes fixture is generated when unset")
    name: str = Field(default="shapes")
    fixture_seed: int = Field(default=1337, ge=0)
    class_count: int = Field(default=4, ge=2)
    image_size: int = Field(default=16, ge=8)
    channels: Literal[1, 3] = Field(default=3)
    train_per_class: int = Field(default=500, ge=1)
    test_per_class: int = Field(default=125, ge=0)
    noise_std: float = Field(default=0.05, ge=0)

    def fixture_config(self, seed: Optional[int] = None) -> ShapesFixtureConfig:
        return ShapesFixtureConfig(
            class_count=self.class_count,
            image_size=self.image_size,
            channels=self.channels,
            train_per_class=self.train_per_class,
            test_per_class=self.test_per_class,
            noise_std=self.noise_std,
            seed=self.fixture_seed if seed is None else seed,
            name=self.name,
        )


class ModelSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    arch: Literal["tiny_resnet"] = Field(default="tiny_resnet")
    width: int = Field(default=16, ge=1)
    seed: int = Field(default=0, ge=0)


class OutputSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    progress: bool = Field(default=True)
    samples_per_class: int = Field(default=8, ge=0, description="PPM samples exported per class after synthesis")
    grid_cols: int = Field(default=8, ge=1)
    eval_batch_size: int = Field(default=256, ge=1)


class RunSettings(BaseSettings):
    """Resolved run configuration: CLI overrides > BNINVERT_* env > TOML file > defaults."""

    threads: int = Field(default=1, ge=1)
    log_level: LogLevel = Field(default="INFO")
    dataset: DatasetSettings = Field(default_factory=DatasetSettings)
    model: ModelSettings = Field(default_factory=ModelSettings)
    pretrain: TrainConfig = Field(default_factory=TrainConfig)
    synthesis: SynthesisConfig = Field(default_factory=SynthesisConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    output: OutputSettings = Field(default_factory=OutputSettings)

    model_config = SettingsConfigDict(
        env_prefix="BNINVERT_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        env_nested_delimiter="__",
        extra="forbid",
    )

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        return init_settings, env_settings, dotenv_settings, TomlConfigSettingsSource(settings_cls)

    def synthesis_config(self) -> SynthesisConfig:
        return self.synthesis.model_copy(update={"threads": self.threads})

    def resolved(self) -> dict[str, Any]:
        return self.model_dump(mode="json")


def load_run_settings(config_path: Optional[Path] = None, **overrides: Any) -> RunSettings:
    """Build settings from an optional TOML file plus keyword overrides (nested dicts per section)."""
    if config_path is not None and not config_path.is_file():
        raise ConfigError(f"Config file not found: {config_path}")

    settings_cls: Type[RunSettings] = RunSettings
    if config_path is not None:
        toml_file = config_path

        class _FileRunSettings(RunSettings):
            model_config = SettingsConfigDict(toml_file=toml_file)

        settings_cls = _FileRunSettings

    try:
        return settings_cls(**overrides)
    except ValueError as exc:
        # ValidationError, TOMLDecodeError and bad env payloads are all ValueErrors
        raise ConfigError(f"Invalid configuration: {exc}") from exc


def write_resolved_config(settings: RunSettings, out_dir: Path, extra: Optional[dict[str, Any]] = None) -> Path:
    payload = {"settings": settings.resolved()}
    if extra:
        payload["command"] = extra
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / RESOLVED_CONFIG_NAME
    path.write_bytes(orjson.dumps(payload, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS))
    return path
