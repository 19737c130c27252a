"""Project scheduling through operand Petri nets.

A project network is turned into an activity diagram and then an operand
net; both the classical time-indexed program and its operand-net counterpart
are built from it and solved exactly.
"""

from importlib import resources

from .model import (
    FINISH,
    Activity,
    CycleError,
    HfschedError,
    InfeasibleError,
    InfeasibleHorizonError,
    OperandKind,
    OperandPool,
    ProjectNetwork,
    TimeWindows,
    ValidationError,
    ValidationReport,
    critical_path_windows,
    default_horizon,
    topological_order,
    validate_network,
)
from .transform import (
    ActivityDiagram,
    OperandNet,
    act_to_operand_net,
    aon_to_act,
    build_operand_net,
    required_final_marking,
)
from .simulate import (
    FeasibilityViolation,
    FiringSchedule,
    StateTrajectory,
    check_schedule,
    per_period_usage,
    reconstruct_transition_marking,
    simulate,
)
from .program import IlpProgram, build_hfnmcf, build_rcpsp, evaluate, export_lp
from .solver import (
    Schedule,
    SolveOptions,
    SolveStats,
    brute_force,
    build_program,
    check_equivalence,
    solve,
    solve_network,
)
from .analysis import earned_value, schedule_table, slack_times
from .ingest import (
    InstanceDocument,
    load_instance,
    parse_document,
    parse_native,
    parse_psplib_sm,
    read_results,
    serialize_native,
    write_results,
)

__version__ = "0.1.0"


def fixture_path(name: str = "demeulemeester.proj"):
    """Path of a bundled instance file."""
    return resources.files(__name__).joinpath("fixtures", name)
