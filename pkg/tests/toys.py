"""Small hand-built grids shared across test modules."""

import numpy as np

from gridscreen.grid import Branch, Bus, Grid


def two_bus(beta=1.0, p=1.0, limit=2.0, inertia=(1.0, 1.0), damping=(0.5, 0.5)):
    """Two buses joined by one line; injection +p at bus 1, -p at bus 2."""
    return Grid(
        buses=(
            Bus(id=1, inertia=inertia[0], damping=damping[0], injection=p,
                kind="generator"),
            Bus(id=2, inertia=inertia[1], damping=damping[1], injection=-p),
        ),
        branches=(Branch(from_bus=1, to_bus=2, susceptance=beta, limit=limit),),
        monitored=(0,),
        reference=2,
    )


def triangle(limits=(2.0, 2.0, 2.0)):
    """Three buses in a cycle with distinct susceptances."""
    return Grid(
        buses=(
            Bus(id=1, inertia=1.0, damping=0.5, injection=1.0, kind="generator"),
            Bus(id=2, inertia=0.4, damping=0.3, injection=0.0),
            Bus(id=3, inertia=0.7, damping=0.6, injection=-1.0),
        ),
        branches=(
            Branch(from_bus=1, to_bus=2, susceptance=2.0, limit=limits[0]),
            Branch(from_bus=2, to_bus=3, susceptance=1.5, limit=limits[1]),
            Branch(from_bus=1, to_bus=3, susceptance=1.0, limit=limits[2]),
        ),
        monitored=(0, 1, 2),
        reference=1,
    )


def random_connected(rng, n_buses=6, extra_branches=3):
    """Random connected grid: a random spanning tree plus extra chords."""
    edges = []
    for k in range(1, n_buses):
        edges.append((int(rng.integers(0, k)), k))
    for _ in range(extra_branches):
        i, j = rng.choice(n_buses, size=2, replace=False)
        edges.append((int(min(i, j)), int(max(i, j))))
    p = rng.normal(size=n_buses)
    p -= p.mean()
    buses = tuple(
        Bus(
            id=k + 1,
            inertia=float(rng.uniform(0.2, 2.0)),
            damping=float(rng.uniform(0.1, 1.0)),
            injection=float(p[k]),
            kind="generator" if p[k] > 0 else "load",
        )
        for k in range(n_buses)
    )
    branches = tuple(
        Branch(
            from_bus=i + 1,
            to_bus=j + 1,
            susceptance=float(rng.uniform(0.5, 5.0)),
            limit=float(rng.uniform(1.0, 4.0)),
        )
        for i, j in edges
    )
    return Grid(
        buses=buses,
        branches=branches,
        monitored=tuple(range(len(branches))),
        reference=1,
    )
