"""
opmatch.distmatch - prior training and operator matching.
"""

from .ikl import SurrogateTerms, ikl_op_gradient, ikl_surrogate, output_conditioning
from .matching import MatchState, aux_step, init_aux, match, op_step
from .prior import train_prior
from .recorder import MatchRecorder, plot_match
from .sr import match_sr, sr_operator_init, synthesize_pairs

__all__ = [
    "train_prior",
    "ikl_surrogate",
    "ikl_op_gradient",
    "SurrogateTerms",
    "output_conditioning",
    "MatchState",
    "match",
    "init_aux",
    "aux_step",
    "op_step",
    "match_sr",
    "sr_operator_init",
    "synthesize_pairs",
    "MatchRecorder",
    "plot_match",
]
