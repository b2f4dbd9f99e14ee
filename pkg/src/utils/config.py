import os
from typing import List, Literal, Optional, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field
from typing_extensions import Annotated

from simulation.billiard import TANGENCY_EPS, TraceLimits
from simulation.rigidity import ReconstructionOptions, SamplingSpec

load_dotenv()
DEFAULT_OUT = os.getenv("BILLIARD_OUT", "runs")
DEFAULT_SEED = int(os.getenv("BILLIARD_SEED", "0"))
DEFAULT_THREADS = int(os.getenv("BILLIARD_THREADS", "1"))

# ---------------------------- RUN CONFIG BLOCKS ----------------------------

class Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GlobalOptions(Block):
    out: str = DEFAULT_OUT
    seed: int = DEFAULT_SEED
    threads: int = Field(DEFAULT_THREADS, ge=1)
    verbosity: int = 0


class LimitsOptions(Block):
    t_max: Optional[float] = None
    n_max: Optional[int] = None
    tangency_eps: float = TANGENCY_EPS

    def to_limits(self):
        return TraceLimits(self.t_max, self.n_max, self.tangency_eps)


class ValidateParams(Block):
    command: Literal["validate"] = "validate"
    scene: str


class TraceParams(Block):
    command: Literal["trace"] = "trace"
    scene: str
    foot: List[float]
    direction: List[float]
    limits: LimitsOptions = LimitsOptions()


class SweepParams(Block):
    command: Literal["sweep"] = "sweep"
    scene: str
    spec: SamplingSpec = SamplingSpec()
    limits: LimitsOptions = LimitsOptions()


class CompareParams(Block):
    command: Literal["compare"] = "compare"
    tt_a: str
    tt_b: str
    match_radius: Optional[float] = None


class FrontParams(Block):
    command: Literal["front"] = "front"
    scene: str
    foot: List[float]
    direction: List[float]
    radius: Optional[float] = None
    curvatures: Optional[List[float]] = None
    t: float
    tangency_eps: float = TANGENCY_EPS


class EstimateParams(Block):
    command: Literal["estimate"] = "estimate"
    scene: str
    n_rays: int = Field(ge=1)
    margin: float = 0.01
    limits: LimitsOptions = LimitsOptions()


class ReconstructParams(Block):
    command: Literal["reconstruct"] = "reconstruct"
    tt: str
    scene: str
    init: List[float]
    max_evals: int = ReconstructionOptions.max_evals
    restarts: int = ReconstructionOptions.restarts
    initial_step: float = ReconstructionOptions.initial_step
    sample_seed: Optional[int] = ReconstructionOptions.sample_seed
    match_radius: Optional[float] = Field(default=ReconstructionOptions.match_radius, gt=0)

    def to_options(self, seed, threads):
        return ReconstructionOptions(
            max_evals=self.max_evals,
            restarts=self.restarts,
            initial_step=self.initial_step,
            sample_seed=self.sample_seed,
            match_radius=self.match_radius,
            seed=seed,
            threads=threads,
        )


CommandParams = Annotated[
    Union[ValidateParams, TraceParams, SweepParams, CompareParams,
          FrontParams, EstimateParams, ReconstructParams],
    Field(discriminator="command"),
]


class RunConfig(Block):
    """Everything needed to rerun one command; written as run_config.json."""
    options: GlobalOptions = GlobalOptions()
    params: CommandParams

    @property
    def command(self):
        return self.params.command

    def emit(self):
        return self.model_dump_json(indent=2)

    @classmethod
    def parse(cls, text):
        return cls.model_validate_json(text)
