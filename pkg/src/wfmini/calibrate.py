"""Fine-tuning loop: run the mini-app, compare per-category metrics against
ratio x target, and nudge the responsible parameters until all relative
errors fall inside tolerance.

Attribution is declared, not fitted: each tunable parameter names the one
metric it drives (I/O sizes -> byte counters, compute-only loop counts ->
makespan). Updates are damped proportional steps with rejection of
worsening iterations. The resulting mapping lets new original-workflow
configurations be translated to mini-app parameters without re-tuning.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    InvalidParameter,
    NonConvergence,
    RunnerFailure,
    SchemaError,
    UnmappedKnob,
)
from .engine import WorkflowConfig, WorkflowSpec, load_workflow
from .metrics import MetricsSummary
from .tasks import scale_values

DAMPING = 0.8
STEP_CLIP = (0.1, 10.0)

IO_READ_KERNELS = {"readNonMPI", "readWithMPI"}
IO_WRITE_KERNELS = {"writeNonMPI", "writeWithMPI"}
IO_KERNELS = IO_READ_KERNELS | IO_WRITE_KERNELS | {
    "dataCopyH2D", "dataCopyD2H", "dataCopyH2DAsync", "dataCopyD2HAsync"}


@dataclass
class TargetMetrics:
    workflow: dict                      # makespan_s, read_bytes, write_bytes
    per_task_category: dict             # category -> same + num_ranks

    def to_dict(self):
        return {"workflow": dict(self.workflow),
                "categories": {k: dict(v) for k, v in self.per_task_category.items()}}


def ingest_profile(document) -> TargetMetrics:
    """Validate a neutral workflow-profile document."""
    if not isinstance(document, dict):
        raise SchemaError("profile must be an object")
    wf = document.get("workflow")
    cats = document.get("categories")
    if not isinstance(wf, dict):
        raise SchemaError("profile needs a 'workflow' object")
    if not isinstance(cats, dict) or not cats:
        raise SchemaError("profile needs a non-empty 'categories' object")
    for key in ("makespan_s", "read_bytes", "write_bytes"):
        if key not in wf or wf[key] < 0:
            raise SchemaError(f"workflow profile needs non-negative {key!r}")
    for name, cat in cats.items():
        for key in ("makespan_s", "read_bytes", "write_bytes"):
            if key not in cat or cat[key] < 0:
                raise SchemaError(f"category {name}: needs non-negative {key!r}")
    for key in ("read_bytes", "write_bytes", "makespan_s"):
        total = sum(cat[key] for cat in cats.values())
        # per-category sums may not exceed workflow totals (small float slack)
        if total > wf[key] * (1 + 1e-9) + 1e-9:
            raise SchemaError(f"category {key} sum {total} exceeds workflow total {wf[key]}")
    return TargetMetrics(workflow=dict(wf),
                         per_task_category={k: dict(v) for k, v in cats.items()})


@dataclass
class Attribution:
    path: str        # workflow-scoped dotted path: tasks.<name>.program...
    metric: str      # makespan | read_bytes | write_bytes
    category: str
    knob: str        # config knob this parameter tracks


def _scan_program(steps, prefix, category, out):
    for i, step in enumerate(steps):
        here = f"{prefix}.{i}"
        if "loop" in step or "body" in step:
            body = step.get("body", [])
            if _compute_only(body):
                out.append(Attribution(path=f"{here}.count", metric="makespan",
                                       category=category, knob="epochs"))
            _scan_program(body, f"{here}.body", category, out)
        else:
            kname = step.get("kernel")
            if kname in IO_READ_KERNELS:
                out.append(Attribution(path=f"{here}.params.data_size",
                                       metric="read_bytes", category=category,
                                       knob="data_scale"))
            elif kname in IO_WRITE_KERNELS:
                out.append(Attribution(path=f"{here}.params.data_size",
                                       metric="write_bytes", category=category,
                                       knob="data_scale"))


def _compute_only(body):
    for step in body:
        if "loop" in step or "body" in step:
            if not _compute_only(step.get("body", [])):
                return False
        elif step.get("kernel") in IO_KERNELS:
            return False
    return bool(body)


def default_attribution(spec: WorkflowSpec) -> list:
    """Derive the parameter -> metric attribution from a workflow spec."""
    out = []
    for task in spec.tasks:
        doc = task.to_dict()
        _scan_program(doc["program"], f"tasks.{task.name}.program",
                      task.category, out)
    return out


def _split_task_path(path):
    parts = path.split(".")
    if len(parts) < 3 or parts[0] != "tasks":
        raise InvalidParameter(f"workflow parameter path must start with tasks.<name>.: {path}")
    return parts[1], ".".join(parts[2:])


def _get_workflow_param(doc, path):
    task_name, rest = _split_task_path(path)
    for tdoc in doc["tasks"]:
        if tdoc["name"] == task_name:
            node = tdoc
            for seg in rest.split("."):
                node = node[int(seg)] if isinstance(node, list) else node[seg]
            return node
    raise InvalidParameter(f"no task {task_name!r} for path {path}")


def _scale_workflow_param(doc, path, factor):
    task_name, rest = _split_task_path(path)
    for tdoc in doc["tasks"]:
        if tdoc["name"] == task_name:
            scale_values(tdoc, {rest: factor}, path_prefix=f"{task_name}:")
            return
    raise InvalidParameter(f"no task {task_name!r} for path {path}")


def measured_by_category(summary: MetricsSummary) -> dict:
    out = {}
    for info in summary.per_task.values():
        cat = out.setdefault(info.get("category", "task"),
                             {"makespan": 0.0, "read_bytes": 0, "write_bytes": 0})
        cat["makespan"] += info["makespan"]
        cat["read_bytes"] += info["read_bytes"]
        cat["write_bytes"] += info["write_bytes"]
    return out


def _residuals(summary, target: TargetMetrics, ratio, attribution):
    """Relative error per (category, metric) that some parameter drives."""
    measured = measured_by_category(summary)
    goals = {}
    for attr in attribution:
        cat = target.per_task_category.get(attr.category)
        if cat is None:
            continue
        goal = ratio * cat["makespan_s" if attr.metric == "makespan" else attr.metric]
        if goal <= 0:
            continue
        goals[(attr.category, attr.metric)] = goal
    out = {}
    for (category, metric), goal in goals.items():
        got = measured.get(category, {}).get(metric, 0.0)
        out[f"{category}.{metric}"] = abs(got - goal) / goal
    return out, goals, measured


@dataclass
class CalibrationMapping:
    ratio: float
    param_factors: dict            # path -> {knob, factor, base_knob, value}
    base_config: WorkflowConfig
    residual_error: dict
    spec_doc: dict = field(default_factory=dict)  # the tuned workflow document

    def save(self, path):
        Path(path).write_text(json.dumps({
            "ratio": self.ratio,
            "param_factors": self.param_factors,
            "base_config": self.base_config.to_dict(),
            "residual_error": self.residual_error,
            "spec": self.spec_doc,
        }, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path):
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(ratio=d["ratio"], param_factors=d["param_factors"],
                   base_config=WorkflowConfig.from_dict(d["base_config"]),
                   residual_error=d["residual_error"], spec_doc=d["spec"])


def calibrate(spec: WorkflowSpec, target: TargetMetrics, ratio: float,
              tolerance: float, max_iters: int, runner,
              base_config: WorkflowConfig | None = None,
              attribution: list | None = None):
    """Tune spec parameters until per-category metrics hit ratio x target.

    `runner` maps a WorkflowSpec to a MetricsSummary. Returns the tuned spec
    and the persisted mapping; raises NonConvergence (with residuals) if
    max_iters is exhausted above tolerance.
    """
    if not 0 < ratio <= 1:
        raise InvalidParameter("ratio must be in (0, 1]")
    if not 0 < tolerance <= 0.5:
        raise InvalidParameter("tolerance must be in (0, 0.5]")
    if max_iters < 1:
        raise InvalidParameter("max_iters must be >= 1")
    if attribution is None:
        attribution = default_attribution(spec)
    if not attribution:
        raise InvalidParameter("no tunable parameters attributed to any metric")
    base_config = base_config or WorkflowConfig()

    doc = spec.to_dict()
    best_doc, best_residuals, best_goals, best_measured = None, None, None, None
    damping = DAMPING
    for _ in range(max_iters):
        candidate = load_workflow(copy.deepcopy(doc))
        try:
            summary = runner(candidate)
        except Exception as e:
            raise RunnerFailure(f"workflow run failed during calibration: {e}") from e
        residuals, goals, measured = _residuals(summary, target, ratio, attribution)
        worst = max(residuals.values(), default=0.0)
        if best_residuals is None or worst < max(best_residuals.values(), default=0.0):
            best_doc, best_residuals = copy.deepcopy(doc), residuals
            best_goals, best_measured = goals, measured
        else:
            # worsening step: back off to the best document and damp harder
            doc = copy.deepcopy(best_doc)
            damping *= 0.5
        if max(best_residuals.values(), default=0.0) <= tolerance:
            break
        # proportional update from the last accepted state
        for attr in attribution:
            key = (attr.category, attr.metric)
            if key not in best_goals:
                continue
            got = best_measured.get(attr.category, {}).get(attr.metric, 0.0)
            if got <= 0:
                continue
            step = (best_goals[key] / got) ** damping
            step = min(max(step, STEP_CLIP[0]), STEP_CLIP[1])
            _scale_workflow_param(doc, attr.path, step)

    tuned_doc = best_doc
    tuned = load_workflow(copy.deepcopy(tuned_doc))
    param_factors = {}
    for attr in attribution:
        value = _get_workflow_param(tuned_doc, attr.path)
        base_knob = getattr(base_config, attr.knob)
        param_factors[attr.path] = {
            "knob": attr.knob, "base_knob": base_knob, "value": value,
            "factor": value / base_knob if base_knob else 0.0,
        }
    mapping = CalibrationMapping(ratio=ratio, param_factors=param_factors,
                                 base_config=base_config,
                                 residual_error=best_residuals,
                                 spec_doc=tuned_doc)
    if max(best_residuals.values(), default=0.0) > tolerance:
        raise NonConvergence(
            f"residuals above tolerance {tolerance} after {max_iters} iterations: "
            f"{best_residuals}", residuals=best_residuals)
    return tuned, mapping


MAPPED_KNOBS = ("epochs", "data_scale", "steps")


def derive_config(mapping: CalibrationMapping, new_config: WorkflowConfig) -> WorkflowSpec:
    """Mini-app spec for a new original-workflow configuration, derived from
    the persisted mapping without any runs."""
    base = mapping.base_config
    for label in ("phases", "num_nodes", "num_cpus", "num_gpus"):
        if getattr(new_config, label) != getattr(base, label):
            raise UnmappedKnob(f"{label} differs from base config and has no mapping")
    if dict(new_config.ranks) != dict(base.ranks):
        raise UnmappedKnob("ranks differ from base config and have no mapping")
    changed = {k for k in MAPPED_KNOBS
               if getattr(new_config, k) != getattr(base, k)}
    mapped = {entry["knob"] for entry in mapping.param_factors.values()}
    unmapped = changed - mapped
    if unmapped:
        raise UnmappedKnob(f"config knobs {sorted(unmapped)} changed but unmapped")
    doc = copy.deepcopy(mapping.spec_doc)
    for path, entry in mapping.param_factors.items():
        base_knob = entry["base_knob"]
        new_knob = getattr(new_config, entry["knob"])
        if base_knob == new_knob:
            continue
        _scale_workflow_param(doc, path, new_knob / base_knob)
    return load_workflow(doc)
