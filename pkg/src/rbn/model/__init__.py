"""Model definitions, validation, CNF conversion, PCFG conversion and sampling."""

from rbn.model.cnf import to_cnf
from rbn.model.pcfg import abstract_pcfg, rbn_to_pcfg
from rbn.model.sampling import sample, sample_in_window, sample_with_rng
from rbn.model.tree import Tree, TreeNode, from_spans
from rbn.model.types import (
    Categorical,
    CategoricalKernel,
    CategoricalPrior,
    Continuous,
    GaussianPrior,
    LinearGaussianKernel,
    MultiTerminalKernel,
    Pcfg,
    RbnSpec,
    StructuralDistribution,
    TemplateVariable,
    Transition,
)
from rbn.model.validate import ValidationReport, validate_spec

__all__ = [
    "Categorical",
    "CategoricalKernel",
    "CategoricalPrior",
    "Continuous",
    "GaussianPrior",
    "LinearGaussianKernel",
    "MultiTerminalKernel",
    "Pcfg",
    "RbnSpec",
    "StructuralDistribution",
    "TemplateVariable",
    "Transition",
    "Tree",
    "TreeNode",
    "ValidationReport",
    "abstract_pcfg",
    "from_spans",
    "rbn_to_pcfg",
    "sample",
    "sample_in_window",
    "sample_with_rng",
    "to_cnf",
    "validate_spec",
]
