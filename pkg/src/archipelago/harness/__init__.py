"""Three-island demo harness: deployment, workloads, and the delay
experiment."""

from archipelago.harness.config import ScenarioConfig, parse_period_text, period_label
from archipelago.harness.delays import run_delay_experiment
from archipelago.harness.trinity import Trinity, deploy_trinity

__all__ = [
    "ScenarioConfig",
    "Trinity",
    "deploy_trinity",
    "run_delay_experiment",
    "parse_period_text",
    "period_label",
]
