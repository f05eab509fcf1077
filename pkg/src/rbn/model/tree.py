"""Derivation trees over an observation sequence.

Latent nodes carry a half-open span ``(start, end)``; terminal nodes are
width-one leaves standing for single observations.  Metrics and exports
identify nodes by the spans of latent nodes only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class TreeNode:
    start: int
    end: int
    value: object = None
    tau: int | None = None
    children: tuple["TreeNode", ...] = ()
    variable: str | None = None
    terminal: bool = False

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)

    @property
    def width(self) -> int:
        return self.end - self.start


@dataclass(frozen=True, eq=False)
class Tree:
    root: TreeNode
    n: int = field(default=None)

    def __post_init__(self):
        if self.n is None:
            object.__setattr__(self, "n", self.root.end)

    def nodes(self) -> list[TreeNode]:
        """All nodes (latent and terminal) in pre-order."""
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            out.append(node)
            stack.extend(reversed(node.children))
        return out

    def latent_nodes(self) -> list[TreeNode]:
        return [nd for nd in self.nodes() if not nd.terminal]

    def spans(self) -> list[tuple[int, int]]:
        return [nd.span for nd in self.latent_nodes()]

    def span_set(self) -> frozenset:
        return frozenset(self.spans())

    def check(self) -> list[str]:
        """Structural invariant violations (empty when valid)."""
        problems = []
        if self.root.span != (0, self.n):
            problems.append(f"root span {self.root.span} != (0, {self.n})")
        for nd in self.nodes():
            if nd.children:
                pos = nd.start
                for ch in nd.children:
                    if ch.start != pos:
                        problems.append(f"children of {nd.span} do not partition it")
                        break
                    pos = ch.end
                if pos != nd.end:
                    problems.append(f"children of {nd.span} do not partition it")
            elif nd.terminal and nd.width != 1:
                problems.append(f"terminal node {nd.span} is not width one")
        leaves = [nd for nd in self.nodes() if not nd.children]
        covered = sum(nd.width for nd in leaves)
        if covered != self.n:
            problems.append("leaves do not cover the observations")
        return problems

    def bracketed(self) -> str:
        def render(nd: TreeNode) -> str:
            if nd.terminal:
                return str(nd.start)
            inner = " ".join(render(ch) for ch in nd.children)
            head = f"{nd.start}:{nd.end}"
            if nd.tau:
                head += f"^{nd.tau}"
            return f"({head} {inner})" if inner else f"({head})"

        return render(self.root)

    def to_dict(self) -> dict:
        latent = self.latent_nodes()
        values = []
        for nd in latent:
            v = nd.value
            if isinstance(v, np.ndarray):
                v = [float(x) for x in v]
            elif isinstance(v, (np.integer, int)):
                v = int(v)
            elif isinstance(v, (np.floating, float)):
                v = float(v)
            values.append(v)
        return {
            "n": self.n,
            "spans": [list(nd.span) for nd in latent],
            "values": values,
            "transpositions": [None if nd.tau is None else int(nd.tau) for nd in latent],
            "bracketed": self.bracketed(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Tree":
        spans = [tuple(s) for s in data["spans"]]
        values = data.get("values") or [None] * len(spans)
        taus = data.get("transpositions") or [None] * len(spans)
        n = data.get("n", max(e for _, e in spans) if spans else 0)
        return from_spans(spans, n, values, taus)


def _value(v):
    if isinstance(v, list):
        return np.array(v, dtype=float)
    return v


def from_spans(spans, n: int, values=None, taus=None) -> Tree:
    """Rebuild a tree from a set of nested latent spans; uncovered positions
    inside a node become terminal children."""
    spans = [tuple(int(x) for x in s) for s in spans]
    values = list(values) if values is not None else [None] * len(spans)
    taus = list(taus) if taus is not None else [None] * len(spans)
    info = {s: (values[i], taus[i]) for i, s in enumerate(spans)}
    order = sorted(info, key=lambda s: (s[0], -(s[1] - s[0])))
    if not order or order[0] != (0, n):
        raise ValueError("spans must include the root (0, n)")
    children: dict = {s: [] for s in order}
    stack = []
    for s in order:
        while stack and not (stack[-1][0] <= s[0] and s[1] <= stack[-1][1]):
            stack.pop()
        if stack:
            parent = stack[-1]
            children[parent].append(s)
        stack.append(s)

    # iterative build to stay clear of the recursion limit on deep trees
    built: dict = {}
    for s in sorted(order, key=lambda s: s[1] - s[0]):
        kids = []
        pos = s[0]
        for c in children[s]:
            if c[0] < pos:
                raise ValueError(f"span {c} overlaps a sibling")
            kids.extend(TreeNode(p, p + 1, terminal=True) for p in range(pos, c[0]))
            kids.append(built[c])
            pos = c[1]
        kids.extend(TreeNode(p, p + 1, terminal=True) for p in range(pos, s[1]))
        v, t = info[s]
        built[s] = TreeNode(s[0], s[1], _value(v), t, tuple(kids))
    return Tree(built[(0, n)], n)
