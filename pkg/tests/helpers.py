"""Shared test utilities: finite-difference gradient checking and random trees."""

import random

import torch

from kvconsist.structures import DepNode, DepTree


def max_fd_relative_error(loss_fn, params, eps=1e-5, max_coords=8, seed=0):
    """Max relative error between autograd gradients and central differences.

    Checks every coordinate of small tensors and a seeded sample of larger
    ones. Coordinates where both the analytic and numeric gradient are ~0
    count as exact agreement.
    """
    params = [p for p in params]
    rng = random.Random(seed)
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    with torch.no_grad():
        for p in params:
            grad = p.grad if p.grad is not None else torch.zeros_like(p)
            flat = p.view(-1)
            gflat = grad.reshape(-1)
            coords = list(range(flat.numel()))
            if len(coords) > max_coords:
                coords = rng.sample(coords, max_coords)
            for i in coords:
                orig = flat[i].item()
                flat[i] = orig + eps
                lp = float(loss_fn())
                flat[i] = orig - eps
                lm = float(loss_fn())
                flat[i] = orig
                fd = (lp - lm) / (2.0 * eps)
                an = gflat[i].item()
                if max(abs(an), abs(fd)) < 1e-9:
                    continue
                worst = max(worst, abs(an - fd) / max(abs(an), abs(fd)))
    return worst


def random_tree(rng: random.Random, max_nodes=50, tokens=("a", "b", "c", "d")) -> DepTree:
    """Random rooted tree: node i>0 attaches under a random earlier node."""
    n = rng.randint(1, max_nodes)
    nodes = {0: DepNode(0, rng.choice(tokens))}
    for i in range(1, n):
        nodes[i] = DepNode(i, rng.choice(tokens))
        nodes[rng.randrange(i)].children.append(i)
    return DepTree(root=0, nodes=nodes)
