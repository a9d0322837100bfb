"""Run configuration: one JSON document, validated with unknown keys rejected."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SynthSection(_Section):
    kind: Literal["sine", "factor"] = "factor"
    days: int = Field(1000, ge=2)
    amplitude: float = 1.0
    period: float = Field(250.0, gt=0)
    level_offset: float = 2.0
    noise_std: float = Field(0.06, ge=0)
    n_stocks: int = Field(20, ge=1)
    market_loading: Optional[list[float]] = None
    volume_base: float = Field(1e6, gt=0)
    regime_stickiness: float = Field(0.97, ge=0, le=1)
    market_drift: float = 0.0


class DataSection(_Section):
    csv: Optional[str] = None
    wide: bool = False
    market_ticker: str = "MARKET"
    synth: Optional[SynthSection] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.csv is None) == (self.synth is None):
            raise ValueError("exactly one of 'csv' or 'synth' must be given")
        return self


class LstmSection(_Section):
    hidden_dims: list[int] = Field(default_factory=lambda: [64, 64, 32], min_length=1)
    dropout_rate: float = Field(0.2, ge=0, lt=1)
    dropout_after: list[int] = Field(default_factory=lambda: [0, 2])
    learning_rate: float = Field(1e-3, gt=0)
    epochs: int = Field(50, ge=0)
    batch_size: Optional[int] = Field(32, ge=1)
    clip_norm: float = Field(5.0, gt=0)


class HmmSection(_Section):
    n_states: int = Field(4, ge=1)
    iterations: int = Field(10, ge=0)
    variance_floor: float = Field(1e-6, gt=0)
    volume_transform: Literal["log1p", "raw"] = "log1p"


class FusionSection(_Section):
    state_encoding: Literal["index", "onehot"] = "index"
    stride: Optional[int] = Field(5, ge=1)


class BaselineSection(_Section):
    ridge_lambda: float = Field(1.0, ge=0)


class PortfolioSection(_Section):
    mode: Literal["all", "hc"] = "all"
    threshold: Optional[float] = None
    risk_free: float = 0.015
    hc_count: int = Field(50, ge=1)
    method: Literal["mid-lstm", "lstm", "linear", "ridge"] = "mid-lstm"
    short_term_method: Optional[Literal["mid-lstm", "lstm", "linear", "ridge"]] = "ridge"
    return_kind: Literal["log", "simple"] = "log"
    restarts: int = Field(20, ge=0)
    frontier_samples: int = Field(2000, ge=0)


class RunConfig(_Section):
    data: DataSection
    window_length: int = Field(60, ge=2)
    split_fraction: float = Field(0.85, gt=0, lt=1)
    lstm: LstmSection = LstmSection()
    hmm: HmmSection = HmmSection()
    fusion: FusionSection = FusionSection()
    baselines: BaselineSection = BaselineSection()
    portfolio: PortfolioSection = PortfolioSection()
    seed: int = Field(0, ge=0, lt=2 ** 64)
    output_dir: str = "out"
    jobs: Optional[int] = Field(None, ge=1)

    def model_params(self) -> dict:
        """Keyword arguments for :class:`midlstm.model.MidLSTM`."""
        lstm = self.lstm
        return dict(
            window_length=self.window_length, split_fraction=self.split_fraction,
            hidden_dims=tuple(lstm.hidden_dims), dropout_rate=lstm.dropout_rate,
            dropout_after=tuple(lstm.dropout_after), learning_rate=lstm.learning_rate,
            epochs=lstm.epochs, batch_size=lstm.batch_size, clip_norm=lstm.clip_norm,
            n_states=self.hmm.n_states, hmm_iterations=self.hmm.iterations,
            variance_floor=self.hmm.variance_floor,
            volume_transform=self.hmm.volume_transform,
            state_encoding=self.fusion.state_encoding, fusion_stride=self.fusion.stride,
            ridge_lambda=self.baselines.ridge_lambda, seed=self.seed,
        )

    def with_overrides(self, **changes) -> "RunConfig":
        data = self.model_dump()
        data.update({k: v for k, v in changes.items() if v is not None})
        return parse_config(data)


def _format(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{path}: {e['msg']}")
    return "; ".join(lines)


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format(err)) from None


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err})") from None
    return parse_config(data)
