"""
Run configuration: a versioned YAML schema with environment overrides.
"""
import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from .errors import ArtifactIOError, ConfigError
from .models.ensemble import DeepEnsembleOptions, GpeTrainingOptions
from .models.flow import BoundaryConditions, SolverSettings
from .models.inversion import OptimizerSettings
from .models.mesh import FaceTag, Mesh


FORMAT_VERSION = 1


class MeshConfig(BaseModel):
    kind: Literal["channel_1d", "channel_2d", "step_2d"]
    n_cells: Optional[int] = Field(None, description="Wall-normal cells of a 1D channel")
    stretch_ratio: float = Field(1.0, ge=1.0)
    half_height: float = Field(1.0, gt=0)
    nx: Optional[int] = None
    ny: Optional[int] = None
    domain_length: float = Field(1.0, gt=0)
    domain_height: float = Field(1.0, gt=0)
    step_height_fraction: float = Field(0.5, gt=0, lt=1)
    step_length_fraction: float = Field(0.25, gt=0, lt=1)
    top: Literal["wall", "symmetry"] = "wall"

    class Config:
        extra = "forbid"

    @model_validator(mode="after")
    def _sizes_present(self):
        if self.kind == "channel_1d" and self.n_cells is None:
            raise ValueError("channel_1d needs n_cells")
        if self.kind != "channel_1d" and (self.nx is None or self.ny is None):
            raise ValueError(f"{self.kind} needs nx and ny")
        return self

    def build(self) -> Mesh:
        from .ops.mesh import build_channel_1d, build_channel_2d, build_step_2d

        if self.kind == "channel_1d":
            return build_channel_1d(self.n_cells, self.stretch_ratio, self.half_height)
        if self.kind == "channel_2d":
            top = FaceTag.WALL if self.top == "wall" else FaceTag.SYMMETRY
            return build_channel_2d(self.nx, self.ny, self.domain_length, self.domain_height, top=top)
        return build_step_2d(
            self.nx,
            self.ny,
            self.step_height_fraction,
            self.domain_length,
            self.domain_height,
            step_length_fraction=self.step_length_fraction,
        )


class TwinConfig(BaseModel):
    depth: float = Field(0.5, gt=0, lt=1)
    center: float = Field(0.5, ge=0, le=1, description="Dip centre as a fraction of the domain height")
    width: float = Field(0.15, gt=0)
    include_v: bool = False

    class Config:
        extra = "forbid"


class ReferenceConfig(BaseModel):
    path: str = Field(..., description="CSV of reference samples with columns x, y, u_ref and optional v_ref")

    class Config:
        extra = "forbid"


Box = Tuple[float, float, float, float]


class InversionConfig(BaseModel):
    regularization: float = Field(1e-2, ge=0, description="Weight of the (beta_c - 1)^2 penalty")
    active_box: Optional[Box] = Field(None, description="Restrict beta_c to cells in (x0, x1, y0, y1)")
    assimilation_box: Optional[Box] = Field(None, description="Restrict the data term to cells in (x0, x1, y0, y1)")
    optimizer: OptimizerSettings = Field(default_factory=OptimizerSettings)

    class Config:
        extra = "forbid"


class CaseConfig(BaseModel):
    name: str = Field(..., min_length=1)
    role: Literal["training", "test"] = "training"
    mesh: MeshConfig
    flow: BoundaryConditions
    solver: SolverSettings = Field(default_factory=SolverSettings)
    twin: Optional[TwinConfig] = None
    reference: Optional[ReferenceConfig] = None
    inversion: InversionConfig = Field(default_factory=InversionConfig)
    stations: List[float] = Field(default_factory=list, description="x positions of velocity profiles (2D)")
    reference_velocity: Optional[float] = Field(None, gt=0, description="U_ref for skin friction")

    class Config:
        extra = "forbid"

    @field_validator("name")
    @classmethod
    def _safe_name(cls, value: str) -> str:
        if any(ch in value for ch in "/\\") or value.startswith("."):
            raise ValueError(f"Case name {value!r} cannot be used as a directory name")
        return value

    @model_validator(mode="after")
    def _single_reference(self):
        if self.twin is not None and self.reference is not None:
            raise ValueError(f"Case {self.name} sets both twin and reference data")
        if self.role == "training" and self.twin is None and self.reference is None:
            raise ValueError(f"Training case {self.name} needs twin or reference data")
        return self

    @property
    def has_reference(self) -> bool:
        return self.twin is not None or self.reference is not None


class FeaturesConfig(BaseModel):
    band: Tuple[float, float] = Field((0.9, 1.1), description="Targets inside this closed band are dropped")
    squash: bool = Field(True, description="Map invariants through x / (|x| + 1)")

    class Config:
        extra = "forbid"

    @field_validator("band")
    @classmethod
    def _ordered(cls, value):
        if value[0] > value[1]:
            raise ValueError(f"Band lower bound {value[0]} exceeds upper bound {value[1]}")
        return value


class ModelConfig(BaseModel):
    kind: Literal["gpe", "de"] = "gpe"
    sigma_bar: Optional[float] = Field(None, ge=0, description="Acceptance tolerance; defaults to 0.2 (gpe) or 0.1 (de)")
    sweep: List[float] = Field(default_factory=lambda: [0.05, 0.1, 0.15, 0.2, 0.25])
    lof_neighbors: int = Field(20, ge=1)
    gpe: GpeTrainingOptions = Field(default_factory=GpeTrainingOptions)
    de: DeepEnsembleOptions = Field(default_factory=DeepEnsembleOptions)

    class Config:
        extra = "forbid"

    def resolved_sigma_bar(self) -> float:
        if self.sigma_bar is not None:
            return self.sigma_bar
        return 0.2 if self.kind == "gpe" else 0.1


class RunConfig(BaseModel):
    format_version: int = FORMAT_VERSION
    cases: List[CaseConfig] = Field(..., min_length=1)
    features: FeaturesConfig = Field(default_factory=FeaturesConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    seed: int = Field(0, ge=0, description="Master seed; fans out to GP restarts and ensemble members")
    threads: int = Field(1, ge=1)
    output_dir: str = "runs/default"
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"

    class Config:
        extra = "forbid"

    @field_validator("format_version")
    @classmethod
    def _known_version(cls, value: int) -> int:
        if value != FORMAT_VERSION:
            raise ValueError(f"Unsupported format_version {value}, expected {FORMAT_VERSION}")
        return value

    @model_validator(mode="after")
    def _unique_cases(self):
        names = [case.name for case in self.cases]
        duplicates = sorted({name for name in names if names.count(name) > 1})
        if duplicates:
            raise ValueError(f"Duplicate case names: {duplicates}")
        return self

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ConfigError(
                f"Invalid run configuration: {e.error_count()} error(s)",
                payload={"errors": e.errors(include_url=False, include_context=False, include_input=False)}
            )

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as e:
            raise ArtifactIOError(f"Could not read config: {e}", path=str(path))
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            raise ConfigError(f"Config is not valid YAML: {e}")
        if not isinstance(data, dict):
            raise ConfigError("Config must be a mapping at the top level")
        return cls.from_dict(data)

    def apply_env(self, env_file: Optional[str] = None) -> "RunConfig":
        """Apply BETAC_* overrides from the environment or a .env file."""
        if env_file:
            from dotenv import load_dotenv
            load_dotenv(env_file)

        overrides: Dict[str, Any] = {}
        env_map = {
            "BETAC_OUTPUT_DIR": "output_dir",
            "BETAC_THREADS": "threads",
            "BETAC_SEED": "seed",
            "BETAC_LOG_LEVEL": "log_level",
        }
        for env_name, field_name in env_map.items():
            value = os.getenv(env_name)
            if value:
                overrides[field_name] = value.upper() if field_name == "log_level" else value
        return self.with_overrides(**overrides)

    def with_overrides(
        self,
        output_dir: Optional[str] = None,
        seed: Optional[int] = None,
        threads: Optional[int] = None,
        sigma_bar: Optional[float] = None,
        log_level: Optional[str] = None
    ) -> "RunConfig":
        data = self.model_dump(mode="json")
        for name, value in (("output_dir", output_dir), ("seed", seed), ("threads", threads), ("log_level", log_level)):
            if value is not None:
                data[name] = value
        if sigma_bar is not None:
            data["model"]["sigma_bar"] = sigma_bar
        return type(self).from_dict(data)

    def case(self, name: str) -> CaseConfig:
        for case in self.cases:
            if case.name == name:
                return case
        raise ConfigError(f"No case named {name!r}")

    def cases_with_role(self, role: str) -> List[CaseConfig]:
        return [case for case in self.cases if case.role == role]

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.model_dump(mode="json"), sort_keys=False)

    def gpe_options(self) -> GpeTrainingOptions:
        return self.model.gpe.model_copy(update={"seed": self.seed})

    def de_options(self) -> DeepEnsembleOptions:
        return self.model.de.model_copy(update={"seed": self.seed})


def fingerprint(*parts: Any) -> str:
    """Stable hash of config sections (pydantic models or plain JSON values)."""
    payload = [part.model_dump(mode="json") if isinstance(part, BaseModel) else part for part in parts]
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()
