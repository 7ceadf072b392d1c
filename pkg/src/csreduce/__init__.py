"""Sparse recovery guarantees: quasinorm toolkit, base schemes and the
top-2k projection that converts an lp/lq scheme into an lr/ls one."""
from .base_recovery import (
    BaseRecoverer,
    CoSaMPRecoverer,
    CountSketchRecoverer,
    GuaranteeSpec,
    IHTRecoverer,
    cosamp_recover,
    countsketch_recover,
    estimate_constant,
    iht_recover,
)
from .measurement import (
    EnsembleKind,
    MeasurementEnsemble,
    SignalModel,
    TailModel,
    generate_signal,
    measure,
    realize,
)
from .quasinorm import head, lp_norm, restrict, sigma_k, tail, top_support
from .reduction import (
    ReductionConfig,
    check_implication,
    predicted_constant,
    reduce,
    verify_proof_chain,
)

__version__ = "0.1.0"
