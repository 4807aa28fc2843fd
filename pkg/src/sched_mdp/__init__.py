"""Optimal scheduling of multi-packet sensor transmissions over a shared channel."""

from .errors import (DimensionMismatch, InvalidAction, MaxIterations, NonConvergence, ParseError,
                     SchedMdpError, SingularInnovation, StateExplosion, TruncationTooTight,
                     ValidationError)
from .estimation import (ProcessModel, SteadyState, build_cost_table, lyapunov_apply,
                         riccati_steady_state, steady_state)
from .mdp import (MdpInstance, MdpState, SystemConfig, build_mdp, enumerate_reachable,
                  stage_cost, transition)
from .solver import (Solution, SolverOptions, discounted_value_iteration, evaluate_policy,
                     min_mean_cycle_oracle, relative_value_iteration, solve)
from .structure import (StructureReport, analyze, check_consistency, check_threshold,
                        check_value_monotonicity)
from .simulation import McConfig, McResult, Trace, monte_carlo_validate, rollout
from .config import RunConfig, load_config, parse_config

__version__ = "0.1.0"
