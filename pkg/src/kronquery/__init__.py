"""Kronecker-structured matrix-vector queries: primitives, estimators and lower-bound instances."""

__version__ = "0.1.0"

from .core import (
    CapacityError,
    DimensionError,
    ExplicitDense,
    ImplicitMatrix,
    KronVector,
    QueryMatrix,
    RankOne,
    SpikedWigner,
    Zero,
    condition_number,
    full_contraction,
    kron_expand,
    kron_inner,
    matvec,
    modal_product,
    projection_energy,
    vec_mat_vec,
)
from .estimators import (
    QueryBudget,
    Verdict,
    hutchinson_trace,
    l2_estimate,
    required_queries_upper,
    threshold_distinguisher,
    zero_test,
)
from .instances import (
    GameSpec,
    PlantedVector,
    SpikedWignerFamily,
    kl_nonadaptive,
    make_spiked_pair,
    make_trace_hard_instance,
    run_game,
    tv_upper_from_kl,
)
from .sampling import (
    Alphabet,
    AlphabetIID,
    ComplexRademacher,
    ConfigurationError,
    Gaussian,
    Rademacher,
    SeededStream,
    SqrtNSphere,
    UnitSphere,
    adversary_complex_n2,
    adversary_pm1_n2,
    adversary_support2,
    make_planted_vector,
    sample_kron,
)
