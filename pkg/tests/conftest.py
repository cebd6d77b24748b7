import numpy as np
import pytest

from freqctl.netmodel import AreaParams, NetworkModel

# Table I weights/time constants and Table II limits (deviation form) of the 4-area case
KUNDUR_TABLE = [
    # D, R, alpha, beta, Tg, Tl, pg0, pg_lim, pl_lim
    (0.04, 0.04, 2.0, 2.5, 4.0, 4.0, 625.9, (600, 730), (75, 120)),
    (0.045, 0.06, 2.5, 4.0, 6.0, 5.0, 562.7, (550, 680), (80, 120)),
    (0.05, 0.05, 1.5, 2.5, 5.0, 4.0, 701.7, (650, 810), (80, 120)),
    (0.055, 0.045, 3.0, 3.0, 5.5, 5.0, 509.6, (500, 640), (55, 120)),
]
KUNDUR_P = np.array([90.0, 90.0, 90.0, 120.0])
KUNDUR_PG0 = np.array([row[6] for row in KUNDUR_TABLE])
KUNDUR_PL0 = np.full(4, 120.0)
TABLE3_PG = np.array([676.0, 618.0, 758.0, 570.0])
TABLE3_PL = np.array([80.0, 85.3, 86.2, 60.0])


def kundur_areas(M=10.0, gamma_lambda=1.0):
    areas = []
    for D, R, a, b, Tg, Tl, pg0, (glo, ghi), (llo, lhi) in KUNDUR_TABLE:
        areas.append(AreaParams(D=D, R=R, alpha=a, beta=b, Tg=Tg, Tl=Tl, M=M,
                                pg_min=glo - pg0, pg_max=ghi - pg0,
                                pl_min=llo - 120.0, pl_max=lhi - 120.0,
                                gamma_lambda=gamma_lambda, allow_boundary_limits=True))
    return areas


def kundur_net(**kw):
    return NetworkModel([(0, 1), (1, 2), (2, 3), (3, 0)], [100.0] * 4, kundur_areas(**kw))


def simple_area(**kw):
    base = dict(D=1.0, R=0.05, alpha=2.0, beta=3.0, Tg=2.0, Tl=3.0, M=2.0,
                pg_min=-50.0, pg_max=60.0, pl_min=-40.0, pl_max=30.0)
    base.update(kw)
    return AreaParams(**base)


def chain3(**kw):
    return NetworkModel([(0, 1), (1, 2)], [10.0, 20.0],
                        [simple_area(**kw), simple_area(D=1.5, M=3.0, alpha=1.0, **kw),
                         simple_area(D=0.8, beta=1.5, Tg=4.0, **kw)])


def random_network(rng, n=None, extra_edges=None):
    """Connected random network (spanning tree plus extra edges) with random params."""
    n = n or int(rng.integers(2, 6))
    edges = [(int(rng.integers(0, j)), j) for j in range(1, n)]
    for _ in range(extra_edges if extra_edges is not None else int(rng.integers(0, 3))):
        i, k = rng.choice(n, size=2, replace=False)
        edges.append((int(i), int(k)))
    edges = [(k, i) if rng.random() < 0.5 else (i, k) for i, k in edges]
    areas = []
    for _ in range(n):
        areas.append(AreaParams(
            D=rng.uniform(0.5, 2), R=rng.uniform(0.02, 0.2), alpha=rng.uniform(0.5, 4),
            beta=rng.uniform(0.5, 4), Tg=rng.uniform(1, 6), Tl=rng.uniform(1, 6),
            M=rng.uniform(1, 10), pg_min=-rng.uniform(10, 80), pg_max=rng.uniform(10, 80),
            pl_min=-rng.uniform(10, 80), pl_max=rng.uniform(10, 80),
            gamma_lambda=rng.uniform(0.5, 2)))
    return NetworkModel(edges, rng.uniform(5, 50, size=len(edges)), areas)


def random_w(rng, net, inside=True, scale=20.0):
    m, n = net.edge_count, net.node_count
    w = np.concatenate([rng.normal(size=m) * 0.2, rng.normal(size=n),
                        rng.uniform(net.pg_min, net.pg_max) if inside else rng.normal(size=n) * scale,
                        rng.uniform(net.pl_min, net.pl_max) if inside else rng.normal(size=n) * scale,
                        rng.normal(size=n) * scale])
    return w


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def net3():
    return chain3()


def small_scenario_dict(**top):
    """Three-area chain, short horizon: fast enough for unit tests."""
    area = dict(D=1.0, R=0.05, alpha=2.0, beta=3.0, Tg=2.0, Tl=3.0, M=2.0,
                pg_limits=[-50.0, 60.0], pl_limits=[-40.0, 30.0],
                initial_pg_actual=500.0, initial_pl_actual=100.0, gamma_lambda=1.0)
    data = {
        "name": "small",
        "network": {"nodes": ["a", "b", "c"],
                    "edges": [{"from": 0, "to": 1, "susceptance": 10.0},
                              {"from": 1, "to": 2, "susceptance": 20.0}]},
        "areas": [dict(area), dict(area, D=1.5, M=3.0, alpha=1.0),
                  dict(area, D=0.8, beta=1.5, Tg=4.0)],
        "disturbances": [{"t": 0.5, "node": 0, "delta_mw": 20.0},
                         {"t": 0.5, "node": 2, "delta_mw": -10.0}],
        "integrator": {"h": 0.01, "horizon": 5.0, "sample": 0.05},
        "mode": "measured",
    }
    data.update(top)
    return data


# acceptance summary ------------------------------------------------------------

ACCEPTANCE_LINES = {}


def record_criterion(number, title, passed, detail):
    """Store one PASS/FAIL line per acceptance criterion (printed at session end)."""
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
