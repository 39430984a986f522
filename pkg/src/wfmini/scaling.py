"""Strong-scaling experiment harness.

Scales the training stage's rank count at fixed problem size and reports
makespan and I/O totals per point. Every training rank reads the full
dataset, so read bytes grow linearly with ranks while writes stay put.
"""
from __future__ import annotations

from dataclasses import replace

from .engine import WorkflowSpec, execute, fitting_pool
from .exemplars import inverse_problem_spec
from .metrics import summarize


def training_stage_spec(model: str = "serial_cpu", config: str = "V1",
                        desk_scale: float = 0.02, ranks: int = 1) -> WorkflowSpec:
    """The training tasks of an inverse-problem exemplar as a serial chain,
    with the rank count overridden."""
    full = inverse_problem_spec(model, config, desk_scale, rank_scale=0.02)
    trains = [replace(t, num_ranks=ranks) for t in full.tasks
              if t.category == "training"]
    edges = [(a.name, b.name) for a, b in zip(trains, trains[1:])]
    return WorkflowSpec(tasks=trains, edges=edges, phases=full.phases,
                        execution_model="serial")


def run_scaling(rank_counts=(1, 2, 4), model: str = "serial_cpu",
                config: str = "V1", desk_scale: float = 0.02,
                seed: int = 0) -> list:
    """One run per rank count; returns [{ranks, makespan, read_bytes,
    write_bytes}, ...] in rank-count order."""
    points = []
    for ranks in rank_counts:
        spec = training_stage_spec(model, config, desk_scale, ranks)
        trace = execute(spec, fitting_pool(spec), seed=seed)
        summary = summarize(trace)
        points.append({"ranks": ranks, "makespan": summary.makespan,
                       "read_bytes": summary.read_bytes,
                       "write_bytes": summary.write_bytes})
    return points
