"""Inside/outside chart inference for discrete and Gaussian RBNs."""

from rbn.chart.api import (
    best_tree,
    existence_probs,
    export_chart_csv,
    inside_pass,
    joint_inside_outside,
    joint_log_prob,
    map_estimate,
    marginal_likelihood,
    node_posteriors,
    outside_pass,
    parse,
    resolve,
    viterbi_structure,
)
from rbn.chart.discrete import FlatGrammar, compile_grammar
from rbn.chart.params import GrbnParams
from rbn.chart.types import Chart, DiscreteMessage, NodePosterior, SplitRecord

__all__ = [
    "Chart",
    "DiscreteMessage",
    "FlatGrammar",
    "GrbnParams",
    "NodePosterior",
    "SplitRecord",
    "best_tree",
    "compile_grammar",
    "existence_probs",
    "export_chart_csv",
    "inside_pass",
    "joint_inside_outside",
    "joint_log_prob",
    "map_estimate",
    "marginal_likelihood",
    "node_posteriors",
    "outside_pass",
    "parse",
    "resolve",
    "viterbi_structure",
]
