"""JSON encoding of RBN specifications."""

from __future__ import annotations

import json

import numpy as np

from rbn.errors import ValidationError
from rbn.model.types import (
    Categorical,
    CategoricalKernel,
    CategoricalPrior,
    Continuous,
    GaussianPrior,
    LinearGaussianKernel,
    MultiTerminalKernel,
    RbnSpec,
    StructuralDistribution,
    TemplateVariable,
    Transition,
)


def _list(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def _domain_to_dict(d) -> dict:
    if isinstance(d, Categorical):
        out = {"type": "categorical", "cardinality": d.cardinality}
        if d.labels is not None:
            out["labels"] = list(d.labels)
        return out
    return {"type": "continuous", "dimension": d.dimension}


def _kernel_to_dict(k) -> dict:
    if isinstance(k, CategoricalKernel):
        return {"type": "categorical", "table": _list(k.table)}
    if isinstance(k, LinearGaussianKernel):
        w = k.transposition_weights
        return {
            "type": "linear_gaussian",
            "covs": [_list(c) for c in k.covs],
            "transposition_weights": None if w is None else _list(w),
        }
    if isinstance(k, MultiTerminalKernel):
        return {"type": "multi_terminal", "cov": _list(k.cov), "rate": k.rate}
    raise ValidationError(f"unknown kernel {type(k).__name__}")


def spec_to_dict(spec: RbnSpec) -> dict:
    p = spec.prior
    if isinstance(p, CategoricalPrior):
        prior = {"variable": p.variable, "type": "categorical", "probs": _list(p.probs)}
    else:
        prior = {"variable": p.variable, "type": "gaussian", "mean": _list(p.mean), "cov": _list(p.cov)}
    return {
        "kind": spec.kind,
        "variables": [{"id": v.id, "kind": v.kind, "domain": _domain_to_dict(v.domain)} for v in spec.variables],
        "transitions": [
            {"id": t.id, "source": t.source, "targets": list(t.targets), "kernel": _kernel_to_dict(t.kernel)}
            for t in spec.transitions
        ],
        "structural": [{"owner": s.owner, "weights": _list(s.weights)} for s in spec.structural],
        "prior": prior,
    }


def _domain_from_dict(d: dict):
    if d["type"] == "categorical":
        labels = d.get("labels")
        return Categorical(int(d["cardinality"]), tuple(labels) if labels is not None else None)
    if d["type"] == "continuous":
        return Continuous(int(d["dimension"]))
    raise ValidationError(f"unknown domain type {d['type']!r}")


def _kernel_from_dict(d: dict):
    kind = d.get("type")
    if kind == "categorical":
        return CategoricalKernel(np.array(d["table"], dtype=float))
    if kind == "linear_gaussian":
        w = d.get("transposition_weights")
        return LinearGaussianKernel(tuple(np.array(c, dtype=float) for c in d["covs"]), None if w is None else np.array(w))
    if kind == "multi_terminal":
        return MultiTerminalKernel(np.array(d["cov"], dtype=float), float(d["rate"]))
    raise ValidationError(f"unknown kernel type {kind!r}")


def spec_from_dict(data: dict) -> RbnSpec:
    try:
        variables = tuple(TemplateVariable(v["id"], v["kind"], _domain_from_dict(v["domain"])) for v in data["variables"])
        transitions = tuple(
            Transition(t["source"], tuple(t["targets"]), _kernel_from_dict(t["kernel"]), id=t.get("id", ""))
            for t in data["transitions"]
        )
        structural = tuple(StructuralDistribution(s["owner"], np.array(s["weights"], dtype=float)) for s in data["structural"])
        p = data["prior"]
        if p["type"] == "categorical":
            prior = CategoricalPrior(p["variable"], np.array(p["probs"], dtype=float))
        elif p["type"] == "gaussian":
            prior = GaussianPrior(p["variable"], np.array(p["mean"], dtype=float), np.array(p["cov"], dtype=float))
        else:
            raise ValidationError(f"unknown prior type {p['type']!r}")
        return RbnSpec(variables, transitions, structural, prior, kind=data.get("kind", "discrete"))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed model document: {exc!r}") from None


def dumps(spec: RbnSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2)


def loads(text: str) -> RbnSpec:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"model file is not valid JSON: {exc}") from None
    return spec_from_dict(data)


def save(spec: RbnSpec, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(spec) + "\n")


def load(path) -> RbnSpec:
    with open(path) as fh:
        return loads(fh.read())
