"""Concatenation and pasting of killed Markov processes.

Processes are finite continuous-time chains or interval diffusions. Stages are
placed on disjoint tagged copies of their spaces and glued at each death
through a transfer kernel. Pastings alternate two processes on overlapping
spaces and erase the copy index. Monte Carlo estimators are checked against
exact linear algebra on finite chains.
"""

__version__ = "0.1.0"

from .concat import (  # noqa: E402
    ConcatenationPlan,
    ConcatPath,
    Stage,
    evaluate_concat,
    kill_at_revival,
    revival_time,
    sample_concatenated,
    shift_concat,
)
from .errors import (  # noqa: E402
    CensoredRegionError,
    ConcatError,
    ConfigurationError,
    DomainError,
    EmptyDomainError,
    NumericError,
    RevivalUndefined,
    UnsupportedEngineError,
)
from .estimate import (  # noqa: E402
    EntryStop,
    EstimateReport,
    RevivalStop,
    dynkin_residual,
    mc_lifetime,
    mc_resolvent,
    mc_semigroup,
    post_widder_invert,
    revival_formula_test,
)
from .functions import Const, Indicator, IntervalIndicator, Table  # noqa: E402
from .oracle import (  # noqa: E402
    SubGenerator,
    assemble_alternating_pair,
    assemble_concatenated,
    assemble_instant_revival,
    exact_entry_functionals,
    exact_resolvent,
    exact_semigroup,
)
from .pasting import (  # noqa: E402
    PastingSpec,
    check_consistency,
    first_entry_times,
    make_alternating_plan,
    project_path,
    projection_criterion_test,
)
from .process import FiniteChain, IntervalDiffusion, Path, dead_path, evaluate, exit_point, sample_path, shift  # noqa: E402
from .rng import RngStream  # noqa: E402
from .spaces import CEMETERY, FiniteLabels, RealInterval, Region, SpacePoint, TaggedSpace  # noqa: E402
from .transfer import Dirac, ExitIdentity, ExitPointTable, kernel_expectation, sample_revival  # noqa: E402
