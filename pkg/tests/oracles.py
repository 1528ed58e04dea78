"""Slow, loop-based reference implementations used as test oracles."""

import itertools
import math

import numpy as np


def cs_cost_loops(m, x, sigma, mu=0.0):
    """Regularised CS objective evaluated term by term."""
    n, k = m.shape

    def g(i, j):
        d2 = sum((x[i, d] - x[j, d]) ** 2 for d in range(x.shape[1]))
        return math.exp(-d2 / (2.0 * (sigma * math.sqrt(2.0)) ** 2))

    num = 0.0
    per_cluster = [0.0] * k
    for i in range(n):
        for j in range(n):
            gij = g(i, j)
            num += 0.5 * (1.0 - float(m[i] @ m[j])) * gij
            for c in range(k):
                per_cluster[c] += m[i, c] * m[j, c] * gij
    ent = sum(v * math.log(v) for v in m.ravel() if v > 0)
    return num / math.sqrt(math.prod(per_cluster)) - mu * ent


def exhaustive_hard_minimizer(x, sigma, k=2):
    """Labelling minimising the objective over every hard assignment with no empty cluster."""
    n = x.shape[0]
    best_cost, best = math.inf, None
    # fixing the first label removes one copy of each permutation-equivalent labelling
    for tail in itertools.product(range(k), repeat=n - 1):
        labels = np.array((0,) + tail)
        if len(set(labels.tolist())) < k:
            continue
        cost = cs_cost_loops(np.eye(k)[labels], x, sigma)
        if cost < best_cost:
            best_cost, best = cost, labels
    return best, best_cost


def two_clouds(seed, n=12, sigma=1.0):
    """Two tight 2-D clouds ten widths apart, rows shuffled."""
    rng = np.random.default_rng(seed)
    n1 = int(rng.integers(3, n - 2))
    a = rng.normal(0.0, 0.5 * sigma, (n1, 2))
    b = rng.normal(0.0, 0.5 * sigma, (n - n1, 2)) + [10.0 * sigma, 0.0]
    perm = rng.permutation(n)
    truth = (np.arange(n) >= n1).astype(int)
    return np.vstack([a, b])[perm], truth[perm]


def same_partition(a, b):
    """True when two labellings agree up to a relabelling of clusters."""
    a, b = np.asarray(a), np.asarray(b)
    mapping = {}
    for u, v in zip(a.tolist(), b.tolist()):
        if mapping.setdefault(u, v) != v:
            return False
    return len(set(mapping.values())) == len(mapping)


def krr_reference(x_train, y_train, x_test, width, ridge):
    """Standardise, augment, invert the regularised Gram matrix explicitly and predict."""
    x_train = np.asarray(x_train, float)
    x_test = np.atleast_2d(np.asarray(x_test, float))
    mean = x_train.mean(axis=0)
    sd = x_train.std(axis=0)
    for j in range(x_train.shape[1]):
        if sd[j] == 0:
            mean[j], sd[j] = 0.0, 1.0
    y_mean = y_train.mean()
    y_sd = y_train.std() or 1.0

    def z(rows):
        return [list((r - mean) / sd) + [1.0] for r in rows]

    zt, zs = z(x_train), z(x_test)

    def kern(u, v):
        return math.exp(-sum((a - b) ** 2 for a, b in zip(u, v)) / (2.0 * width * width))

    m = len(zt)
    gram = np.array([[kern(zt[a], zt[b]) for b in range(m)] for a in range(m)])
    alpha = np.linalg.inv(gram + ridge * np.eye(m)) @ ((y_train - y_mean) / y_sd)
    k_star = np.array([[kern(s, t) for t in zt] for s in zs])
    return k_star @ alpha * y_sd + y_mean
