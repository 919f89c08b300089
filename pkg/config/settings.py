from typing import Literal, Optional
from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables (.env file)."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="MISCLASS_",
        case_sensitive=False,
        extra="ignore"
    )

    # =================================================================
    # LOGGING CONFIGURATION
    # =================================================================
    log_level: str = Field(default="INFO", description="Logging level")

    # =================================================================
    # IDENTIFICATION TOLERANCES (exact-oracle regime)
    # =================================================================
    tol_max_cond: float = Field(
        default=1e8,
        description="Largest admissible condition number of a Q matrix"
    )
    tol_eig_gap: float = Field(
        default=1e-10,
        description="Smallest admissible gap between cross-ratio eigenvalues"
    )
    tol_label: float = Field(
        default=1e-10,
        description="Smallest admissible gap between emission rates used for labeling"
    )
    tol_prob: float = Field(
        default=1e-6,
        description="Slack outside [0, 1] that is clamped instead of rejected"
    )
    tol_disc: float = Field(
        default=1e-12,
        description="Negative discriminants above -tol_disc are treated as zero"
    )
    tol_imag: float = Field(
        default=1e-10,
        description="Largest imaginary part discarded by the general eigensolver"
    )
    tol_cross: float = Field(
        default=1e-6,
        description="Largest admissible disagreement between Z=0 and Z=1 reconstructions"
    )
    tol_relevance: float = Field(
        default=1e-10,
        description="Smallest admissible instrument relevance gap in 2x2 solves"
    )

    # =================================================================
    # ESTIMATION TOLERANCES (noisy-moment regime)
    # =================================================================
    est_tol_eig_gap: float = Field(default=1e-8, description="Eigenvalue gap for sample moments")
    est_tol_prob: float = Field(default=0.05, description="Probability slack for sample moments")
    est_tol_disc: float = Field(default=1e-10, description="Discriminant slack for sample moments")
    est_tol_imag: float = Field(default=1e-6, description="Imaginary-part slack for sample moments")
    est_tol_cross: float = Field(default=0.25, description="Z cross-check slack for sample moments")

    # =================================================================
    # KERNEL MOMENTS
    # =================================================================
    kernel: Literal["gaussian", "epanechnikov"] = Field(
        default="gaussian",
        description="Default kernel family"
    )
    kernel_mass_floor: float = Field(
        default=1e-10,
        description="Total kernel weight below which a cell counts as empty"
    )
    min_cell_size: int = Field(default=2, description="Minimum observations per (z, v) cell")

    # =================================================================
    # MINIMUM-DISTANCE OPTIMIZER
    # =================================================================
    lm_initial_damping: float = Field(default=1e-3, description="Initial Levenberg-Marquardt damping")
    lm_damping_factor: float = Field(default=10.0, description="Damping multiplier on rejected steps")
    lm_max_iter: int = Field(default=500, description="Maximum optimizer iterations")
    lm_step_tol: float = Field(default=1e-12, description="Step infinity-norm convergence threshold")
    lm_objective_tol: float = Field(default=1e-16, description="Objective decrease convergence threshold")
    max_cond_jacobian: float = Field(
        default=1e10,
        description="Largest admissible condition number of F at the optimum"
    )
    fallback_starts: int = Field(default=20, description="Random restarts when closed-form init fails")
    fallback_seed: int = Field(default=20240101, description="Seed of the fallback restart grid")

    # =================================================================
    # MONTE CARLO
    # =================================================================
    mc_workers: int = Field(default=1, description="Worker processes for Monte Carlo replications")
    mc_coverage_level: float = Field(default=0.95, description="Nominal confidence-interval level")

    # =================================================================
    # PARTITION SEARCH
    # =================================================================
    partition_max_cond: float = Field(
        default=1e6,
        description="Condition number of L_Y above which a partition grid search runs"
    )
    partition_grid_points: int = Field(default=9, description="Quantile offsets tried per search")
    data_dir: Optional[str] = Field(default=None, description="Override for the fixture directory")

    @field_validator("log_level", mode="before")
    @classmethod
    def normalize_log_level(cls, v):
        """Upper-case the log level name."""
        if isinstance(v, str):
            return v.upper()
        return v

    @field_validator("mc_workers", "min_cell_size", "lm_max_iter", "fallback_starts")
    @classmethod
    def positive_int(cls, v):
        """Reject non-positive counts."""
        if v < 1:
            raise ValueError("must be a positive integer")
        return v

    # =================================================================
    # COMPUTED PROPERTIES
    # =================================================================
    def identification_tolerances(self) -> dict:
        """Tolerances for exact population moments."""
        return {
            "max_cond": self.tol_max_cond,
            "eig_gap": self.tol_eig_gap,
            "label": self.tol_label,
            "prob": self.tol_prob,
            "disc": self.tol_disc,
            "imag": self.tol_imag,
            "cross": self.tol_cross,
            "relevance": self.tol_relevance,
        }

    def estimation_tolerances(self) -> dict:
        """Tolerances for sample moments."""
        tols = self.identification_tolerances()
        tols.update(
            eig_gap=self.est_tol_eig_gap,
            prob=self.est_tol_prob,
            disc=self.est_tol_disc,
            imag=self.est_tol_imag,
            cross=self.est_tol_cross,
        )
        return tols


# Global settings instance
settings = Settings()
