from .base import (PHASES, Abort, AbortReason, Engine, ProtocolOptions, TxnCtx,
                   TxnStatus)
from .delay import (AdaptiveBackoff, DelayPolicy, FixedNoWaitTTDelay,
                    ReadPhaseExtension, delay_next)
from .mvto import MVTO
from .si import ERMIA, SnapshotIsolation
from .silo import MOCC, Silo, silo_commit_tid
from .tictoc import TicToc, tictoc_commit_ts
from .twopl import TwoPL

ENGINES = {
    "silo": Silo,
    "tictoc": TicToc,
    "mocc": MOCC,
    "2pl": TwoPL,
    "si": SnapshotIsolation,
    "ermia": ERMIA,
    "mvto": MVTO,
}

# which options each protocol honors; anything else is a config error
SUPPORTED_OPTIONS = {
    "silo": {"no_wait"},
    "tictoc": {"no_wait_tt", "no_wait_tt_delay", "preemptive_abort",
               "timestamp_history", "history_size"},
    "mocc": {"hot_threshold"},
    "2pl": {"no_wait", "watchdog"},
    "si": {"gc", "gc_interval", "gc_budget", "version_reuse", "prewarm", "inlining"},
    "ermia": {"gc", "gc_interval", "gc_budget", "version_reuse", "prewarm", "inlining"},
    "mvto": {"sort_by_contention", "precheck", "early_abort", "inlining",
             "overwrite_inline", "thomas_write", "gc", "gc_interval", "gc_budget",
             "starvation_retries", "version_reuse", "prewarm"},
}
COMMON_OPTIONS = {"read_phase_extension", "backoff", "backoff_min", "backoff_max",
                  "backoff_factor"}


def make_engine(protocol: str, table, options=None, **kwargs) -> Engine:
    try:
        cls = ENGINES[str(getattr(protocol, "value", protocol))]
    except KeyError:
        raise ValueError(f"unknown protocol {protocol!r}; supported: {', '.join(ENGINES)}") from None
    return cls(table, options, **kwargs)


__all__ = [
    "Abort", "AbortReason", "AdaptiveBackoff", "DelayPolicy", "ENGINES", "ERMIA",
    "Engine", "FixedNoWaitTTDelay", "MOCC", "MVTO", "PHASES", "ProtocolOptions",
    "ReadPhaseExtension", "Silo", "SnapshotIsolation", "SUPPORTED_OPTIONS",
    "TicToc", "TwoPL", "TxnCtx", "TxnStatus", "COMMON_OPTIONS", "delay_next",
    "make_engine", "silo_commit_tid", "tictoc_commit_ts",
]
