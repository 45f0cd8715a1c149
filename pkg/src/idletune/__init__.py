"""Idle-timeout tuning for pooled directory connections.

The package answers one operational question: how large must a directory
server's idle timeout be so that a proxy's pooled connections are dropped
mid-use with at most a chosen probability.  It offers the closed-form
model and its inverse, a recursive estimator that tracks the model's
parameters from access-log traffic, simulators that check both against
sampled behavior, and a command line tying them together.
"""

from .errors import (
    CannotInitializeError,
    IdletuneError,
    InfeasibleTargetError,
    ParseError,
    SequencingError,
    SinkError,
)
from .estimator import (
    EstimatorState,
    ScheduleKind,
    StepSchedule,
    TunerConfig,
    TunerRecord,
    TunerReport,
    init_state,
    recommend,
    run_tuner,
    should_publish,
    step_size,
    update,
)
from .ingest import (
    Event,
    EventKind,
    WindowStats,
    parse_event,
    read_events,
    window_stats,
    windowize,
)
from .model import (
    Expression,
    ModelParams,
    SolverPolicy,
    TimeoutSolution,
    birth_rate,
    failure_probability,
    feasibility_bound,
    solve_timeout,
    solve_timeout_exact,
    solve_timeout_large_n,
    state_probability,
)
from .simulate import (
    SimResult,
    SystemConfig,
    SystemReport,
    generate_event_log,
    simulate_failure_prob,
    simulate_system,
)
from .sinks import FileSink, LdifSink, StdoutSink, WebhookSink, make_sink

__version__ = "0.1.0"

__all__ = [
    "IdletuneError",
    "InfeasibleTargetError",
    "ParseError",
    "SequencingError",
    "CannotInitializeError",
    "SinkError",
    "ModelParams",
    "Expression",
    "SolverPolicy",
    "TimeoutSolution",
    "birth_rate",
    "state_probability",
    "failure_probability",
    "feasibility_bound",
    "solve_timeout_exact",
    "solve_timeout_large_n",
    "solve_timeout",
    "Event",
    "EventKind",
    "WindowStats",
    "parse_event",
    "read_events",
    "window_stats",
    "windowize",
    "ScheduleKind",
    "StepSchedule",
    "step_size",
    "EstimatorState",
    "TunerConfig",
    "init_state",
    "update",
    "recommend",
    "should_publish",
    "TunerRecord",
    "TunerReport",
    "run_tuner",
    "SimResult",
    "SystemConfig",
    "SystemReport",
    "simulate_failure_prob",
    "simulate_system",
    "generate_event_log",
    "StdoutSink",
    "FileSink",
    "LdifSink",
    "WebhookSink",
    "make_sink",
    "__version__",
]
