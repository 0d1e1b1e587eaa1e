import hashlib
import json
import math
from enum import Enum
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from nsdimer.analysis.husimi import HusimiGridSpec
from nsdimer.physics.floquet import DEFAULT_MAX_N
from nsdimer.physics.lindblad import IntegratorConfig
from nsdimer.physics.model import ModelParams

SCHEMA_VERSION = 1


# --- Enums ---

class MeanFieldForm(str, Enum):
    printed = "printed"
    conservative = "conservative"


class StateSource(str, Enum):
    lindblad = "lindblad"
    mcwf = "mcwf"


class OutputKind(str, Enum):
    csv = "csv"
    json = "json"
    matrix = "matrix"


# --- Parameter blocks ---

class DimerBlock(BaseModel):
    """Model parameters without N; each job supplies N (or does not need it)."""

    J: float = 1.0
    U: float = 0.1125
    gamma: float = Field(default=0.1, ge=0)
    A: float = 3.4
    T: float = Field(default=2 * math.pi, gt=0)

    def params(self, N: int = 1, U: Optional[float] = None) -> ModelParams:
        return ModelParams(
            J=self.J, U=self.U if U is None else U, gamma=self.gamma, A=self.A, T=self.T, N=N
        )


class GridSpec(BaseModel):
    """Explicit ``values`` or an inclusive ``start``/``stop``/``step`` range."""

    values: Optional[List[float]] = None
    start: Optional[float] = None
    stop: Optional[float] = None
    step: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def one_form(self) -> "GridSpec":
        ranged = (self.start, self.stop, self.step)
        if self.values is None and any(v is None for v in ranged):
            raise ValueError("grid needs either values or start, stop and step")
        if self.values is not None and any(v is not None for v in ranged):
            raise ValueError("grid takes values or a range, not both")
        return self

    def points(self) -> List[float]:
        if self.values is not None:
            return list(self.values)
        if self.stop < self.start:
            return []
        count = int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return [round(float(v), 12) for v in self.start + self.step * np.arange(count)]


class MCWFBlock(BaseModel):
    n_traj: int = Field(default=20, ge=1)
    relax_periods: int = Field(default=200, ge=0)


class PoincareOverlay(BaseModel):
    enabled: bool = True
    n_iterates: int = Field(default=200, ge=1)
    theta: float = 2.0
    phi: float = 0.0


# --- Job blocks, one per subcommand ---

class MeanFieldSweepJob(BaseModel):
    command: Literal["meanfield-sweep"] = "meanfield-sweep"
    model: DimerBlock = DimerBlock()
    integrator: IntegratorConfig = IntegratorConfig()
    u_grid: GridSpec = GridSpec(start=0.0, stop=0.8, step=0.004)
    n_iterates: int = Field(default=200, ge=1)
    theta0: float = 2.0
    phi0: float = 0.0
    bins: int = Field(default=400, ge=1)
    form: MeanFieldForm = MeanFieldForm.printed
    write_sections: bool = True
    ns_scan: bool = False


class QuantumBifurcationJob(BaseModel):
    command: Literal["quantum-bifurcation"] = "quantum-bifurcation"
    model: DimerBlock = DimerBlock()
    integrator: IntegratorConfig = IntegratorConfig()
    N: int = Field(default=20, ge=1)
    u_grid: GridSpec = GridSpec(start=0.0, stop=0.8, step=0.05)
    n_periods: int = Field(default=50, ge=1)


class HusimiJob(BaseModel):
    command: Literal["husimi"] = "husimi"
    model: DimerBlock = DimerBlock()
    integrator: IntegratorConfig = IntegratorConfig()
    N: int = Field(default=50, ge=1)
    grid: HusimiGridSpec = HusimiGridSpec()
    source: StateSource = StateSource.lindblad
    mcwf: MCWFBlock = MCWFBlock()
    overlay: PoincareOverlay = PoincareOverlay()
    save_matrix: bool = False


class TrajectoriesJob(BaseModel):
    command: Literal["trajectories"] = "trajectories"
    model: DimerBlock = DimerBlock()
    integrator: IntegratorConfig = IntegratorConfig()
    N: int = Field(default=50, ge=1)
    u_grid: GridSpec = GridSpec(values=[0.1125])
    n_traj: int = Field(default=20, ge=1)
    relax_periods: int = Field(default=200, ge=0)
    measure_periods: int = Field(default=200, ge=1)
    histogram_bins: int = Field(default=100, ge=1)
    omega_bins: int = Field(default=100, ge=1)


class FloquetJob(BaseModel):
    command: Literal["floquet"] = "floquet"
    model: DimerBlock = DimerBlock(U=0.12)
    integrator: IntegratorConfig = IntegratorConfig()
    N: int = Field(default=10, ge=1)
    N_list: List[int] = [4, 6, 8, 10]
    max_N: int = Field(default=DEFAULT_MAX_N, ge=1)
    order: Literal["F", "C"] = "F"

    @field_validator("N_list")
    @classmethod
    def positive_sizes(cls, v: List[int]) -> List[int]:
        if any(n < 1 for n in v):
            raise ValueError("every N in N_list must be >= 1")
        return v


class BagelDiameterJob(BaseModel):
    command: Literal["bagel-diameter"] = "bagel-diameter"
    model: DimerBlock = DimerBlock()
    integrator: IntegratorConfig = IntegratorConfig()
    N_list: List[int] = [10, 20]
    u_grid: GridSpec = GridSpec(values=[0.1, 0.1125, 0.13])
    grid: HusimiGridSpec = HusimiGridSpec()
    prominence_fraction: float = Field(default=0.05, gt=0, lt=1)


Job = Annotated[
    Union[
        MeanFieldSweepJob,
        QuantumBifurcationJob,
        HusimiJob,
        TrajectoriesJob,
        FloquetJob,
        BagelDiameterJob,
    ],
    Field(discriminator="command"),
]


# --- Run config and manifest ---

class RunConfig(BaseModel):
    schema_version: int = SCHEMA_VERSION
    seed: int = Field(default=0, ge=0)
    workers: int = Field(default=1, ge=1)
    large: bool = False
    output_dir: Optional[Path] = None
    job: Job

    @field_validator("schema_version")
    @classmethod
    def known_schema(cls, v: int) -> int:
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v}, expected {SCHEMA_VERSION}")
        return v

    @property
    def command(self) -> str:
        return self.job.command

    def config_hash(self) -> str:
        """SHA-256 over everything that determines the outputs."""
        payload = self.model_dump(mode="json", exclude={"output_dir"})
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


class OutputEntry(BaseModel):
    path: str
    kind: OutputKind
    sha256: str
    bytes: int


class RunManifest(BaseModel):
    config_hash: str
    code_version: str
    command: str
    config: Dict[str, Any]
    started_at: str
    finished_at: str
    wall_clock_seconds: float
    outputs: List[OutputEntry]
    warnings: List[str] = []
    metadata: Dict[str, Any] = {}
