import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from omegaconf import OmegaConf
from omegaconf.errors import OmegaConfBaseException

from constants import CONTROLLER_GAIN, DT, EPS_I, K_BOX_RADIUS, K_FD_STEP, K_INFLATION, K_SAMPLES, STEPS, TAU_D, \
    TOL_FEAS, TOL_RANK
from ..modules.network import default_network_path, load_network_config
from ..pipelines.pipeline_identification import ATTACK_POOLS, IdentificationPipeline, series_cardinality
from .errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class CurvatureConfig:
    radius: float = K_BOX_RADIUS
    samples: int = K_SAMPLES
    inflation: float = K_INFLATION
    fd_step: float = K_FD_STEP


@dataclass
class SeriesConfig:
    series: str = "attack_1"
    seed: Optional[int] = None
    steps: Optional[int] = None


@dataclass
class RunConfig:
    network: str = str(default_network_path())
    dt: float = DT
    steps: int = STEPS
    seed: int = 0
    series: str = "attack_1"
    controller_gain: float = CONTROLLER_GAIN
    tau_d: float = TAU_D
    eps_i: float = EPS_I
    tol_feas: float = TOL_FEAS
    tol_rank: float = TOL_RANK
    reset_each_step: bool = True
    attack_pool: str = "published"
    magnitude_scale: float = 1.0
    # null selects the oracle epsilon of each step's true attack
    epsilon: Optional[float] = None
    curvature: CurvatureConfig = field(default_factory=CurvatureConfig)
    experiments: List[SeriesConfig] = field(default_factory=list)


def _positive(config, key, path):
    value = OmegaConf.select(config, key)
    if not value > 0:
        raise ConfigError(f"must be positive, got {value}", path=path, field=key)


def validate_config(config, path=None):
    for key in ("dt", "steps", "tau_d", "eps_i", "tol_feas", "tol_rank",
                "curvature.radius", "curvature.samples", "curvature.inflation", "curvature.fd_step"):
        _positive(config, key, path)
    if config.controller_gain < 0:
        raise ConfigError(f"must be nonnegative, got {config.controller_gain}", path=path, field="controller_gain")
    if config.magnitude_scale < 0:
        raise ConfigError(f"must be nonnegative, got {config.magnitude_scale}", path=path, field="magnitude_scale")
    if config.epsilon is not None and not config.epsilon > 0:
        raise ConfigError(f"must be positive or null, got {config.epsilon}", path=path, field="epsilon")
    if config.attack_pool not in ATTACK_POOLS:
        raise ConfigError(f"must be one of {list(ATTACK_POOLS)}, got '{config.attack_pool}'",
                          path=path, field="attack_pool")
    for key, entry in [("series", config)] + [(f"experiments[{i}].series", e) for i, e in
                                              enumerate(config.experiments)]:
        try:
            series_cardinality(entry.series)
        except ValueError as exc:
            raise ConfigError(str(exc), path=path, field=key) from exc
    for i, entry in enumerate(config.experiments):
        if entry.steps is not None and entry.steps < 1:
            raise ConfigError(f"must be at least 1, got {entry.steps}", path=path, field=f"experiments[{i}].steps")


def load_config(path=None, overrides=()):
    """Run configuration: defaults, then a YAML file, then `key=value` overrides.

    Args:
        path (str, optional): YAML run configuration, or a network JSON file
            which then only replaces the `network` key
        overrides (sequence of str, optional): dotlist overrides such as `seed=3`
    """
    config = OmegaConf.structured(RunConfig)
    try:
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise ConfigError("file does not exist", path=path)
            if path.suffix == ".json":
                config.network = str(path)
            else:
                user = OmegaConf.load(path)
                network = user.get("network")
                if network is not None and not Path(network).is_absolute() and not Path(network).exists():
                    user.network = str(path.parent / network)
                config = OmegaConf.merge(config, user)
        if overrides:
            config = OmegaConf.merge(config, OmegaConf.from_dotlist(list(overrides)))
    except OmegaConfBaseException as exc:
        raise ConfigError(str(exc).splitlines()[0], path=path) from exc
    validate_config(config, path)
    return config


def create_pipeline(config) -> IdentificationPipeline:
    """load the network of a run configuration and build its pipeline

    Args:
        config (DictConfig): see `load_config`
    """
    model = load_network_config(config.network)
    return IdentificationPipeline(model, config)
