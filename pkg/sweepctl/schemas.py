"""
Pydantic models for run-configuration validation.

A run configuration is a YAML tree with up to four blocks:
- problem: geometry catalogue entries, perturbation, constants, costs,
  endpoint sets, localization and reference-solution settings
- run: mesh size, tolerances, sign convention, solver options
- crowd: corridor model data
- point: a primal point for the coderivative report of `check`
"""

from typing import Annotated, Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

FiniteFloat = Annotated[float, Field(allow_inf_nan=False)]
PositiveFloat = Annotated[float, Field(gt=0, allow_inf_nan=False)]
Vector = list[FiniteFloat]
Matrix = list[list[FiniteFloat]]


class StrictModel(BaseModel):
    """Base model: unknown keys are rejected, instances are immutable."""
    model_config = ConfigDict(extra="forbid", frozen=True)


# ─────────────────────────────────────────────────────────────
# Problem block
# ─────────────────────────────────────────────────────────────

class ConstraintSpec(StrictModel):
    """One catalogue entry: affine a·x + b, sphere gap ‖Px − q‖ − r, quadratic xᵀQx + a·x + b."""
    kind: Literal["affine", "sphere_gap", "quadratic"]
    a: Vector | None = None
    b: FiniteFloat = 0.0
    P: Matrix | None = None
    q: Vector | None = None
    r: FiniteFloat | None = None
    Q: Matrix | None = None

    @model_validator(mode="after")
    def check_kind_fields(self) -> "ConstraintSpec":
        required = {
            "affine": ("a",),
            "sphere_gap": ("q", "r"),
            "quadratic": ("Q",),
        }[self.kind]
        missing = [name for name in required if getattr(self, name) is None]
        if missing:
            raise ValueError(f"{self.kind} constraint requires {', '.join(missing)}")
        return self


class GeometryConstants(StrictModel):
    M1: PositiveFloat = 1.0
    M2: PositiveFloat = 1.0
    M3: PositiveFloat = 1.0
    beta: PositiveFloat = 1.0
    rho: PositiveFloat = 1.0
    c: PositiveFloat = 1.0e6


class PerturbationSpec(StrictModel):
    """f(x, a) = A x + B a + c with declared Lipschitz and growth constants."""
    kind: Literal["affine"] = "affine"
    A: Matrix | None = None
    B: Matrix | None = None
    c: Vector | None = None
    lipschitz: PositiveFloat = 1.0
    growth: PositiveFloat = 1.0


class ControlASpec(StrictModel):
    kind: Literal["free", "box", "finite"] = "free"
    dimension: int = Field(default=1, ge=1)
    lower: Vector | None = None
    upper: Vector | None = None
    points: Matrix | None = None
    value: Vector | None = None

    @model_validator(mode="after")
    def check_bounds(self) -> "ControlASpec":
        if self.kind == "box" and (self.lower is None or self.upper is None):
            raise ValueError("box control set requires lower and upper")
        if self.kind == "finite" and not self.points:
            raise ValueError("finite control set requires points")
        return self


class ControlUSpec(StrictModel):
    value: Vector | None = None
    constraints: list[ConstraintSpec] = []
    lipschitz: PositiveFloat = 1.0
    optimize: bool = False


class CostSpec(StrictModel):
    kind: Literal["zero", "l1_time", "squared_distance", "control_energy"] = "zero"
    target: Vector | None = None
    tau: FiniteFloat = 0.0
    weight: FiniteFloat = 1.0


class EndpointSpec(StrictModel):
    kind: Literal["all", "point", "box", "halfline"] = "all"
    lower: Vector | None = None
    upper: Vector | None = None
    point: Vector | None = None


class ReferenceSpec(StrictModel):
    kind: Literal["corridor", "simulated"] = "simulated"
    k_fine: int = Field(default=4000, ge=2)
    mu: PositiveFloat | None = None


class ProblemBlock(StrictModel):
    dimension: int = Field(ge=1)
    constraints: list[ConstraintSpec] = Field(min_length=1)
    constants: GeometryConstants = GeometryConstants()
    perturbation: PerturbationSpec = PerturbationSpec()
    x0: Vector
    horizon: PositiveFloat
    controls_a: ControlASpec = ControlASpec()
    controls_u: ControlUSpec = ControlUSpec()
    terminal_cost: CostSpec = CostSpec()
    running_cost: CostSpec = CostSpec()
    endpoint_x: EndpointSpec = EndpointSpec()
    endpoint_T: EndpointSpec = EndpointSpec(kind="halfline", lower=[0.0])
    epsilon: PositiveFloat = 1.0
    reference: ReferenceSpec | None = None
    localized: bool = False

    @model_validator(mode="after")
    def check_dimensions(self) -> "ProblemBlock":
        if len(self.x0) != self.dimension:
            raise ValueError(f"x0 has length {len(self.x0)}, expected {self.dimension}")
        return self


# ─────────────────────────────────────────────────────────────
# Run, crowd and point blocks
# ─────────────────────────────────────────────────────────────

class RunBlock(StrictModel):
    k: int = Field(default=200, ge=1)
    k_values: list[int] = [50, 100, 200, 400, 800]
    seed: int = 0
    sign: Literal[1, -1] = 1
    active_tol: PositiveFloat = 1e-8
    tolerance: PositiveFloat = 1e-6
    max_iters: int = Field(default=500, ge=1)
    control_blocks: int | None = Field(default=None, ge=1)
    T_init: PositiveFloat | None = None

    @field_validator("k_values")
    @classmethod
    def positive_k_values(cls, v: list[int]) -> list[int]:
        if not v or any(k < 1 for k in v):
            raise ValueError("k_values must be a non-empty list of positive integers")
        return v


class CrowdBlock(StrictModel):
    x_dest: FiniteFloat = 0.0
    x1_init: FiniteFloat = -48.0
    x2_init: FiniteFloat = -24.0
    L1: PositiveFloat = 3.0
    L2: PositiveFloat = 3.0
    tau: PositiveFloat = 1.0
    s1: PositiveFloat | None = None
    s2: PositiveFloat | None = None
    control_bounds: tuple[FiniteFloat, FiniteFloat] | None = None

    @field_validator("control_bounds")
    @classmethod
    def ordered_bounds(cls, v: tuple[float, float] | None) -> tuple[float, float] | None:
        if v is not None and v[0] > v[1]:
            raise ValueError("control_bounds must be [lower, upper] with lower <= upper")
        return v


class PointBlock(StrictModel):
    x: Vector
    u: Vector
    a: Vector
    w: Vector
    y: Vector


class RunConfig(StrictModel):
    problem: ProblemBlock | None = None
    run: RunBlock = RunBlock()
    crowd: CrowdBlock | None = None
    point: PointBlock | None = None

    def effective(self) -> dict:
        """Configuration with every default filled in, for the run manifest."""
        return self.model_dump(mode="json")
