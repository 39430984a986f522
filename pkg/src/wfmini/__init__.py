"""wfmini: tunable workflow mini-apps.

Build emulated tasks from a catalog of parameterized kernels, compose them
into DAG workflows, execute them on a fixed slot pool, and analyze makespan,
utilization, and byte-exact I/O; calibrate parameters against a target
profile so the mini-app tracks the original workflow at a fixed ratio.
"""

from .calibrate import (
    CalibrationMapping,
    TargetMetrics,
    calibrate,
    derive_config,
    ingest_profile,
)
from .engine import (
    WorkflowConfig,
    WorkflowSpec,
    async_overlap,
    critical_path,
    execute,
    fitting_pool,
    load_workflow,
    validate_dag,
)
from .exemplars import ExemplarId, build, deep_drive_md_spec, inverse_problem_spec
from .kernels import (
    Communicator,
    Device,
    KernelCall,
    KernelContext,
    KernelResult,
    Scratch,
    catalog_names,
    execute_kernel,
    register_kernel,
)
from .metrics import (
    MetricsSummary,
    RatioReport,
    VariationReport,
    compute_ratios,
    io_timeline,
    reproducibility_stats,
    summarize,
    utilization_timeline,
)
from .tasks import ProgramStep, TaskSpec, parse_task_spec, run_task, scale_task
from .trace import MetricsSink, ResourcePool, RunTrace, TaskRecord

__version__ = "0.1.0"
