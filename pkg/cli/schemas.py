"""Run configuration and the report envelope shared by every subcommand."""

from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

REPORT_SCHEMA_VERSION = 1

TOLERANCE_KEYS = ("max_cond", "eig_gap", "label", "prob", "disc", "imag", "cross", "relevance")


class XHandling(BaseModel):
    """How the covariate X enters the moments: ignored, exact match, or kernel weights."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: Literal["none", "discrete", "kernel"] = "none"
    point: Optional[Tuple[float, ...]] = Field(
        default=None,
        description="Covariate value(s) conditioned on, one per x_ column",
    )

    @model_validator(mode="after")
    def point_matches_mode(self) -> "XHandling":
        if self.mode == "none" and self.point is not None:
            raise ValueError("x mode 'none' takes no covariate point")
        if self.mode != "none" and not self.point:
            raise ValueError(f"x mode '{self.mode}' needs a covariate point")
        return self

    @classmethod
    def parse(cls, text: str) -> "XHandling":
        """Parse ``none``, ``discrete:<v1,...>`` or ``kernel:<v1,...>``."""
        text = text.strip()
        if text == "none":
            return cls()
        mode, sep, values = text.partition(":")
        if not sep:
            raise ValueError(f"cannot parse x handling {text!r}")
        try:
            point = tuple(float(part) for part in values.split(","))
        except ValueError:
            raise ValueError(f"covariate point must be numeric, got {values!r}")
        return cls(mode=mode, point=point)

    @property
    def scalar_or_vector(self):
        """The point as the moments stage expects it."""
        if self.point is None:
            return None
        return self.point[0] if len(self.point) == 1 else list(self.point)


class RunConfig(BaseModel):
    """Fully resolved configuration of one CLI invocation."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    command: Literal["identify", "estimate", "simulate", "montecarlo", "effects"]
    input: Optional[str] = Field(default=None, description="CSV sample, moments JSON or DGP JSON")
    output: Optional[str] = Field(default=None, description="Report path; stdout when absent")
    mode: Literal["prop1", "prop2", "mixture"] = "prop1"
    x: XHandling = Field(default_factory=XHandling)
    kernel: Literal["gaussian", "epanechnikov"] = "gaussian"
    bandwidth: Optional[float] = None
    tolerances: Dict[str, float] = Field(default_factory=dict, description="Overrides of the regime defaults")
    k_u: Optional[int] = Field(default=None, ge=1)
    partition: Optional[List[float]] = None
    seed: int = 0
    reps: int = Field(default=1, ge=1)
    n: Optional[int] = Field(default=None, ge=1)
    latent_dump: bool = False
    weighted: bool = False
    aggregate: bool = False
    workers: Optional[int] = Field(default=None, ge=1, exclude=True)

    @field_validator("x", mode="before")
    @classmethod
    def parse_x(cls, value):
        if isinstance(value, str):
            return XHandling.parse(value)
        return value

    @field_validator("tolerances")
    @classmethod
    def known_tolerances(cls, value: Dict[str, float]) -> Dict[str, float]:
        unknown = sorted(set(value) - set(TOLERANCE_KEYS))
        if unknown:
            raise ValueError(f"unknown tolerance names: {', '.join(unknown)}")
        negative = sorted(k for k, v in value.items() if not v >= 0)
        if negative:
            raise ValueError(f"tolerances must be non-negative: {', '.join(negative)}")
        return dict(sorted(value.items()))

    @field_validator("bandwidth")
    @classmethod
    def positive_bandwidth(cls, value: Optional[float]) -> Optional[float]:
        if value is not None and not value > 0:
            raise ValueError("bandwidth must be positive")
        return value

    @model_validator(mode="after")
    def consistent(self) -> "RunConfig":
        if self.partition is not None:
            if any(b <= a for a, b in zip(self.partition, self.partition[1:])):
                raise ValueError("partition cut points must be strictly increasing")
            if self.mode != "mixture":
                raise ValueError("a partition override only applies to mixture mode")
            if self.k_u is not None and len(self.partition) != 2 * self.k_u - 1:
                raise ValueError(f"mixture with K_u={self.k_u} needs {2 * self.k_u - 1} cut points")
        if self.mode == "mixture" and self.x.mode != "none":
            raise ValueError("mixture mode does not condition on x")
        if self.command in ("simulate", "montecarlo") and self.n is None:
            raise ValueError(f"{self.command} needs a sample size")
        return self


def report_envelope(
    command: str,
    config: Optional[RunConfig],
    result: Optional[Dict[str, Any]] = None,
    error: Optional[Dict[str, Any]] = None,
) -> Dict[str, Any]:
    """Wrap a result or an error with the schema version and the resolved config."""
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "command": command,
        "status": "error" if error is not None else "ok",
        "config": None if config is None else config.model_dump(mode="json"),
        "result": result,
        "error": error,
    }
