"""Cost and wall-time estimation for the evidence-generation stage.

Cost charges blended per-token pricing over prompt+output tokens; time
counts only autoregressive output tokens and divides by the parallelism
factor, since per-node inference parallelizes freely.
"""

from dataclasses import dataclass
from typing import Dict


@dataclass
class ModelCost:
    price_per_mtok: float  # currency per 10^6 tokens, blended
    tokens_per_second: float

    def validate(self) -> None:
        if self.price_per_mtok <= 0:
            raise ValueError("price_per_mtok must be > 0")
        if self.tokens_per_second <= 0:
            raise ValueError("tokens_per_second must be > 0")


@dataclass
class TokenTally:
    """Per-node token totals for one model."""

    prompt_tokens: float
    output_tokens: float

    def validate(self) -> None:
        if self.prompt_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token tallies must be >= 0")


@dataclass
class CostReport:
    cost: float
    minutes: float

    def to_dict(self) -> Dict:
        return {"cost": self.cost, "minutes": self.minutes}


def estimate_cost_time(
    tallies: Dict[str, TokenTally],
    models: Dict[str, ModelCost],
    n_nodes: int,
    parallelism: int = 1,
) -> CostReport:
    """Scale per-node tallies to ``n_nodes`` nodes at ``parallelism`` workers."""
    if n_nodes < 0:
        raise ValueError("n_nodes must be >= 0")
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    cost = 0.0
    output_minutes = 0.0
    for name, tally in tallies.items():
        tally.validate()
        if name not in models:
            raise KeyError(f"no cost model for {name!r}")
        model = models[name]
        model.validate()
        cost += (tally.prompt_tokens + tally.output_tokens) * model.price_per_mtok / 1e6
        output_minutes += tally.output_tokens / (model.tokens_per_second * 60.0)
    return CostReport(
        cost=cost * n_nodes,
        minutes=output_minutes * n_nodes / parallelism,
    )
