import os
import logging
from pydantic import BaseModel, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict
from typing import List, Optional, Tuple
from typing_extensions import Self

from xdcpipe.utils import parse_float_list

DOTENV_PATH = os.environ.get(
    "DOTENV_PATH",
    os.path.join(
        os.path.dirname(
            os.path.dirname(__file__)
        ),
        ".env"
    )
)


class _SolverSettings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="XDCPIPE_SOLVER_",
        env_file=DOTENV_PATH,
        extra="ignore",
        env_ignore_empty=True
    )

    budget_seconds: float = Field(default=30.0, gt=0)
    max_nodes: Optional[int] = Field(default=None, ge=1)
    gap: float = Field(default=0.01, ge=0, lt=1)
    workers: int = Field(default=1, ge=1)
    # small-instance guideline for dispatching cross-ud to the exact solver
    max_stages: int = 4
    max_microbatches: int = 6
    max_chunks: int = 2


class _SweepSettings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="XDCPIPE_SWEEP_",
        env_file=DOTENV_PATH,
        extra="ignore",
        env_ignore_empty=True
    )

    workers: Optional[int] = None
    # comma or pipe separated, e.g. "0,0.5,1,2"
    lat_ratios: str = "0,0.5,1,2"
    bw_ratios: str = "0,0.5,1,2"

    @field_validator('lat_ratios', 'bw_ratios')
    @classmethod
    def check_ratios(cls, comma_separated_string: str) -> str:
        if any(v < 0 for v in parse_float_list(comma_separated_string)):
            raise ValueError("delay ratios must be non-negative")
        return comma_separated_string

    def grid(self) -> Tuple[List[float], List[float]]:
        return parse_float_list(self.lat_ratios), parse_float_list(self.bw_ratios)

    @model_validator(mode="after")
    def default_workers(self) -> Self:
        if self.workers is None:
            self.workers = os.cpu_count() or 1
            logging.debug(f"Sweep workers defaulting to {self.workers}")
        elif self.workers < 1:
            raise ValueError("XDCPIPE_SWEEP_WORKERS must be at least 1")
        return self


class _GreedySettings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="XDCPIPE_GREEDY_",
        env_file=DOTENV_PATH,
        extra="ignore",
        env_ignore_empty=True
    )

    n_sub: int = Field(default=4, ge=1)


class _AppSettings(BaseModel):
    solver: _SolverSettings = _SolverSettings()
    sweep: _SweepSettings = _SweepSettings()
    greedy: _GreedySettings = _GreedySettings()


app_settings = _AppSettings()
