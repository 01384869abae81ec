import os
import logging
from typing import List, Literal, Optional, Tuple
from pydantic import BaseModel, Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict
import yaml

logger = logging.getLogger(__name__)

METHODS = ("proposed", "oracle", "semi-oracle")


def default_sigma2_grid() -> List[float]:
    # 8 points log-spaced in [1e-6, 1e-1]
    return [10.0 ** (-6.0 + 5.0 * i / 7.0) for i in range(8)]


class SolverConfig(BaseModel):
    pivot_tol: float = 1e-10
    feas_tol: float = 1e-9
    opt_tol: float = 1e-9
    max_iter: Optional[int] = None
    refactor_interval: int = 64
    bland_stall_factor: int = 50
    clamp_tol: float = 1e-12
    pricing: Literal["devex", "dantzig"] = "devex"
    # size of the random rhs shift relative to the row scale; 0 disables it
    perturbation: float = Field(1e-7, ge=0.0)
    perturbation_seed: int = 0


class BcdConfig(BaseModel):
    max_iters: int = Field(200, gt=0)
    rel_tol: float = Field(1e-9, ge=0.0, lt=1.0)
    restarts: int = Field(10, gt=0)
    init_scale: float = Field(1.0, gt=0.0)
    seed: int = 0
    workers: int = Field(1, gt=0)


class SimulationConfig(BaseModel):
    d: int = 2
    K: int = 3
    N: List[int] = [10, 12, 15]
    T: int = 7
    sigma2: float = 1e-3
    dynamics_scale: float = 1.0
    init_scale: float = 1.0
    seed: int = 0


class SweepConfig(BaseModel):
    sigma2_grid: List[float] = Field(default_factory=default_sigma2_grid)
    trials: int = Field(500, gt=0)
    methods: List[str] = list(METHODS)
    kmeans_restarts: int = Field(100, gt=0)
    workers: int = Field(1, gt=0)

    @field_validator("methods")
    @classmethod
    def check_methods(cls, value: List[str]) -> List[str]:
        unknown = [m for m in value if m not in METHODS]
        if unknown:
            raise ValueError(f"Unknown methods {unknown}, expected a subset of {list(METHODS)}")
        return value


class GmmSettings(BaseModel):
    p: float = 0.4
    p_prime: float = 0.6
    a: float = 0.0
    a_prime: float = 4.0
    sigma: float = 0.5
    sigma_prime: float = 0.3
    grid: Tuple[float, float, int] = (-3.0, 7.0, 200)


class LoggingConfig(BaseModel):
    level: str = "INFO"


class Settings(BaseSettings):
    solver: SolverConfig = SolverConfig()
    bcd: BcdConfig = BcdConfig()
    simulation: SimulationConfig = SimulationConfig()
    sweep: SweepConfig = SweepConfig()
    gmm: GmmSettings = GmmSettings()
    logging: LoggingConfig = LoggingConfig()

    model_config = SettingsConfigDict(
        env_nested_delimiter='__',
        env_file='.env',
        extra='ignore'
    )

    @classmethod
    def load_from_yaml(cls, path: str = "config/config.example.yaml") -> "Settings":
        if not os.path.exists(path):
            raise FileNotFoundError(f"Config file not found: {path}")

        with open(path, "r") as f:
            yaml_data = yaml.safe_load(f) or {}

        return cls(**yaml_data)


def load_settings() -> Settings:
    config_path = os.getenv("OTSEP_CONFIG", "config/config.yaml")
    if not os.path.exists(config_path):
        config_path = "config/config.example.yaml"
    try:
        return Settings.load_from_yaml(config_path)
    except Exception as e:
        # Fall back to built-in defaults, which mirror the example file
        logger.warning(f"Failed to load config from {config_path}: {e}; using defaults")
        return Settings()


# Global settings instance
settings = load_settings()
