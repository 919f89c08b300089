"""Treatment-effect report."""

from typing import Dict, Literal, Optional

from pydantic import Field

from models.base import DomainModel, FloatArray


class EffectsReport(DomainModel):
    """Per-v treatment effects and the latent-type weights behind them.

    Weight arrays are indexed [v, u].
    """

    late: Optional[FloatArray] = Field(default=None, description="LATE(v) for v=0,1")
    ate: FloatArray
    tt: FloatArray
    tut: FloatArray
    pr_treated: FloatArray = Field(..., description="Pr(T*=1|V=v)")
    weights_u: FloatArray = Field(..., description="Pr(U*=u|V=v)")
    weights_u_treated: FloatArray = Field(..., description="Pr(U*=u|T*=1,V=v)")
    weights_u_untreated: FloatArray = Field(..., description="Pr(U*=u|T*=0,V=v)")
    route: Literal["prop1", "prop2", "mixture"]
    aggregate: Optional[Dict[str, Optional[float]]] = Field(
        default=None,
        description="Effects averaged over the empirical distribution of V",
    )

    def to_document(self) -> Dict:
        doc = self.model_dump(mode="json")
        doc["kind"] = "effects_report"
        return doc
