"""Monte Carlo replication summaries."""

from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field


class ParameterSummary(BaseModel):
    """Sampling behaviour of one theta component across replications."""

    model_config = ConfigDict(frozen=True)

    name: str
    truth: float
    mean: float
    bias: float
    rmse: float
    sd: Optional[float] = Field(default=None, description="Empirical SD; None for a single replication")
    mean_se: float
    se_ratio: Optional[float] = Field(default=None, description="Empirical SD over mean reported SE")
    coverage: Optional[float] = Field(default=None, description="Share of intervals covering the truth")


class MonteCarloSummary(BaseModel):
    """Aggregate of R replications of simulate -> moments -> minimum distance."""

    model_config = ConfigDict(frozen=True)

    spec_name: str
    n: int
    replications: int
    seed: int
    succeeded: int
    failures: Dict[str, int] = Field(default_factory=dict, description="Failed replications by error code")
    coverage_level: float
    rate_label: Optional[str] = None
    parameters: List[ParameterSummary] = Field(default_factory=list)

    def to_document(self) -> Dict:
        doc = self.model_dump(mode="json")
        doc["kind"] = "montecarlo_summary"
        return doc
