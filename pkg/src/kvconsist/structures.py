"""Dependency trees for profiles and responses.

The profile tree is predefined: a synthetic "[KV]" root with one child per
key, and each whitespace-separated value token as a child of its key node.
Response trees come from an external parse when available; otherwise a
right-branching chain is used as a fallback (token 1 is the root, token i
hangs off token i-1), which degenerates the tree encoder to a sequential one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .core import Profile

KV_ROOT_TOKEN = "[KV]"


class TreeError(ValueError):
    """Structural violation; `kind` names the broken invariant."""

    def __init__(self, kind: str, message: str):
        self.kind = kind
        super().__init__(f"{kind}: {message}")


@dataclass
class DepNode:
    id: int
    token: str
    children: list[int] = field(default_factory=list)


@dataclass
class DepTree:
    root: int
    nodes: dict[int, DepNode]

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, nid: int) -> DepNode:
        return self.nodes[nid]

    def tokens(self) -> dict[int, str]:
        return {nid: n.token for nid, n in self.nodes.items()}


def build_profile_tree(p: Profile) -> DepTree:
    """Predefined profile structure: [KV] -> key -> value tokens.

    Node ids are assigned in construction order (root 0, then each pair's key
    followed by its value tokens), so the layout is deterministic and
    order-preserving over profile pairs.
    """
    if not p.pairs:
        raise TreeError("empty-profile", "profile tree needs at least one pair")
    nodes = {0: DepNode(0, KV_ROOT_TOKEN)}
    next_id = 1
    for key, value in p.pairs:
        key_id = next_id
        next_id += 1
        nodes[key_id] = DepNode(key_id, key)
        nodes[0].children.append(key_id)
        for tok in value.split():
            nodes[next_id] = DepNode(next_id, tok)
            nodes[key_id].children.append(next_id)
            next_id += 1
    return DepTree(root=0, nodes=nodes)


def response_tree(tokens, parse=None) -> DepTree:
    """Build the response tree from a (1-based index, head) parse.

    Head 0 marks the root. Without a parse, falls back to a right-branching
    chain. Node ids are 0-based token positions either way.
    """
    tokens = list(tokens)
    if not tokens:
        raise TreeError("empty-response", "response tree needs at least one token")
    n = len(tokens)
    nodes = {i: DepNode(i, tok) for i, tok in enumerate(tokens)}
    if parse is None:
        for i in range(1, n):
            nodes[i - 1].children.append(i)
        return DepTree(root=0, nodes=nodes)

    parse = [(int(i), int(h)) for i, h in parse]
    covered = sorted(i for i, _ in parse)
    if covered != list(range(1, n + 1)):
        raise TreeError("coverage", f"parse must cover token indices 1..{n} exactly, got {covered}")
    roots = []
    for idx, head in parse:
        if head == 0:
            roots.append(idx)
        elif not (1 <= head <= n):
            raise TreeError("index-range", f"head {head} of token {idx} outside 1..{n}")
        elif head == idx:
            raise TreeError("cycle", f"token {idx} is its own head")
    if len(roots) != 1:
        raise TreeError("root-count", f"expected exactly one root, got {len(roots)}")
    for idx, head in parse:
        if head != 0:
            nodes[head - 1].children.append(idx - 1)
    tree = DepTree(root=roots[0] - 1, nodes=nodes)
    validate_tree(tree)
    return tree


def dfs_order(t: DepTree) -> list[int]:
    """Post-order traversal: every node after all its descendants, root last."""
    order: list[int] = []
    # Explicit stack; (node, expanded) avoids recursion limits on long chains.
    stack: list[tuple[int, bool]] = [(t.root, False)]
    while stack:
        nid, expanded = stack.pop()
        if expanded:
            order.append(nid)
        else:
            stack.append((nid, True))
            for child in reversed(t.nodes[nid].children):
                stack.append((child, False))
    return order


def validate_tree(t: DepTree) -> None:
    """Check all tree invariants; raises TreeError naming the violation."""
    if t.root not in t.nodes:
        raise TreeError("root-missing", f"root id {t.root} not among nodes")
    parents: dict[int, int] = {}
    for nid, node in t.nodes.items():
        if node.id != nid:
            raise TreeError("id-mismatch", f"node keyed {nid} carries id {node.id}")
        for child in node.children:
            if child not in t.nodes:
                raise TreeError("dangling-child", f"node {nid} lists unknown child {child}")
            if child == nid:
                raise TreeError("cycle", f"node {nid} is its own child")
            if child in parents:
                raise TreeError("multi-parent", f"node {child} has parents {parents[child]} and {nid}")
            parents[child] = nid
    if t.root in parents:
        raise TreeError("root-parent", f"root {t.root} has a parent")
    # Reachability (also catches cycles detached from the root).
    seen = set()
    stack = [t.root]
    while stack:
        nid = stack.pop()
        if nid in seen:
            raise TreeError("cycle", f"node {nid} reached twice from root")
        seen.add(nid)
        stack.extend(t.nodes[nid].children)
    if seen != set(t.nodes):
        orphans = sorted(set(t.nodes) - seen)
        raise TreeError("unreachable", f"nodes {orphans} unreachable from root")
