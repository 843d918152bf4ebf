"""Scenario file schema: one strict model per command, unknown keys rejected."""

from __future__ import annotations

from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DomainSpec(Strict):
    polygon: list[tuple[float, float]]
    segment_names: Optional[list[str]] = None
    slits: list[tuple[tuple[float, float], tuple[float, float]]] = []
    slit_names: Optional[list[str]] = None


class MeshSpec(Strict):
    domain: Union[Literal["unit_square", "l_shape", "slit_square"], DomainSpec] = "unit_square"
    h: float = Field(0.125, gt=0)
    dirichlet: list[list[str]] = Field(default_factory=lambda: [[]])


class GridSpec(Strict):
    T: float = Field(1.0, gt=0)
    N: int = Field(32, ge=1)


class AnalyzeTensorParams(Strict):
    tensor: dict
    eta_grid_size: int = Field(720, ge=8)
    mesh: Optional[MeshSpec] = None
    lam: float = 0.0
    dirichlet_everywhere: bool = True


class SneibergParams(Strict):
    theta: Optional[float] = None
    beta: Optional[float] = None
    gamma: Optional[float] = None
    intervals: Optional[dict] = None


class FamilySpec(Strict):
    mode: Literal["constant", "tabulated", "random"] = "constant"
    tensor: Optional[dict] = None
    T: Optional[float] = None
    table: Optional[list] = None
    m: int = Field(1, ge=1)
    nodes: int = Field(8, ge=1)
    gamma: float = Field(0.5, gt=0)
    M: float = Field(2.0, gt=0)


class ForcingSpec(Strict):
    kind: Literal["zero", "constant", "random"] = "constant"
    value: float = 1.0


class LionsParams(Strict):
    family: FamilySpec
    lam: float = 0.0
    gamma: float = Field(gt=0)
    Lambda: float
    M: Optional[float] = None
    mesh: MeshSpec = MeshSpec()
    grid: GridSpec = GridSpec()
    forcing: ForcingSpec = ForcingSpec(kind="random")
    tol: float = 0.05


class InitialSpec(Strict):
    kind: Literal["zero", "constant", "sine", "bump"] = "zero"
    value: float = 1.0


class SolveParabolicParams(Strict):
    family: FamilySpec
    Lambda: float = 0.0
    forcing: ForcingSpec = ForcingSpec()
    u0: InitialSpec = InitialSpec()
    mesh: MeshSpec = MeshSpec()
    grid: GridSpec = GridSpec()


class MapSpec(Strict):
    name: str
    params: dict = {}


class ContinuationSpec(Strict):
    lam: float = 0.0
    gamma: float = Field(1.0, gt=0)
    M: float = Field(1.0, ge=0)
    Lambda: Optional[float] = None
    C_E: float = Field(1.0, gt=0)
    C_Phi: Optional[float] = None
    s: Optional[float] = None


class SolveQuasilinearParams(Strict):
    coefficient_map: MapSpec
    rhs: MapSpec = MapSpec(name="zero")
    u0: InitialSpec = InitialSpec(kind="sine")
    mesh: MeshSpec = MeshSpec()
    grid: GridSpec = GridSpec()
    mode: Literal["picard", "continuation"] = "picard"
    tol: float = Field(1e-8, gt=0)
    max_iter: int = Field(50, ge=1)
    cutoff_eps: Optional[float] = Field(None, gt=0)
    continuation: ContinuationSpec = ContinuationSpec()


class ChemotaxisRun(Strict):
    params: dict = {}
    mode: Literal["full4", "reduced2"] = "reduced2"
    mesh: MeshSpec = MeshSpec()
    grid: GridSpec = GridSpec(T=0.5, N=32)
    tol: float = Field(1e-8, gt=0)
    max_iter: int = Field(50, ge=1)


class GeometryCheckParams(Strict):
    mesh: MeshSpec = MeshSpec()
    radii: list[float] = [0.05, 0.1, 0.2]
    samples: int = Field(32, ge=1)

    @field_validator("radii")
    @classmethod
    def _positive(cls, v):
        if not v or min(v) <= 0:
            raise ValueError("radii must be positive and non-empty")
        return v


PARAMS = {
    "analyze-tensor": AnalyzeTensorParams,
    "sneiberg": SneibergParams,
    "lions": LionsParams,
    "solve-parabolic": SolveParabolicParams,
    "solve-quasilinear": SolveQuasilinearParams,
    "chemotaxis": ChemotaxisRun,
    "geometry-check": GeometryCheckParams,
}


class ScenarioConfig(Strict):
    command: Literal["analyze-tensor", "sneiberg", "lions", "solve-parabolic",
                     "solve-quasilinear", "chemotaxis", "geometry-check"]
    params: dict = {}
    output_dir: Optional[str] = None
    seed: int = 0
