"""Perfect sampling of finite Markov chains with interval envelopes."""

from .ashe import Ashe, ashe_apply, ashe_envelope, brute_envelope, expansion_bound_check
from .automaton import (
    Event,
    EventTable,
    Interval,
    ModelError,
    OracleLimitError,
    ReducibleChainError,
    StateSpace,
    apply,
    apply_word,
    stationary_solve,
    total_variation,
    transition_matrix,
)
from .config import ConfigError, Model, load_model, parse_model
from .lp import Polytope, integer_bounds, lp_extremes
from .queueing import (
    IndexRoutingEvent,
    QueueSpec,
    RoutingSpec,
    batch_event,
    build_comparison_network,
    build_jackson,
    fork_event,
    index_routing_interval,
    join_event,
    jsw_event,
    multiserver_events,
    negative_customer,
    routing_ashe,
)
from .sampler import (
    BackwardEventStore,
    NonCoalescenceError,
    SampleResult,
    StateCapError,
    coupling_time_stats,
    epsa,
    psa,
    sample,
    split_sample,
)
from .zones import Hyperplane, PiecewiseEvent, Zone, minkowski_intersects, piecewise_envelope, zone_interval

__all__ = [
    "Ashe",
    "BackwardEventStore",
    "ConfigError",
    "Event",
    "EventTable",
    "Hyperplane",
    "IndexRoutingEvent",
    "Interval",
    "Model",
    "ModelError",
    "NonCoalescenceError",
    "OracleLimitError",
    "PiecewiseEvent",
    "Polytope",
    "QueueSpec",
    "ReducibleChainError",
    "RoutingSpec",
    "SampleResult",
    "StateCapError",
    "StateSpace",
    "Zone",
    "apply",
    "apply_word",
    "ashe_apply",
    "ashe_envelope",
    "batch_event",
    "brute_envelope",
    "build_comparison_network",
    "build_jackson",
    "coupling_time_stats",
    "epsa",
    "expansion_bound_check",
    "fork_event",
    "index_routing_interval",
    "integer_bounds",
    "join_event",
    "jsw_event",
    "load_model",
    "lp_extremes",
    "minkowski_intersects",
    "multiserver_events",
    "negative_customer",
    "parse_model",
    "piecewise_envelope",
    "psa",
    "routing_ashe",
    "sample",
    "split_sample",
    "stationary_solve",
    "total_variation",
    "transition_matrix",
    "zone_interval",
]
