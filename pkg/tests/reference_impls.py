"""Independent reference implementations used as test oracles.

These deliberately re-derive results with different code paths than the
package: a textbook vanilla RNN with its own BPTT, a per-lag loop SAC, and a
dense bitmask boundary-matrix persistence reduction. They are slow and only
suitable for small inputs.
"""

import numpy as np


class VanillaRnn:
    """Textbook ReLU RNN with linear readout and the same initial-state lift.

    Written independently of the package network module: plain per-step
    loops, its own gradient derivation. Subgradient of relu at 0 is 0.
    """

    def __init__(self, w_init, w_rec, w_in, w_out):
        self.w_init = w_init
        self.w_rec = w_rec
        self.w_in = w_in
        self.w_out = w_out

    def forward(self, p0, velocities):
        r = np.maximum(p0 @ self.w_init.T, 0.0)
        states = [r]
        preds = []
        T = velocities.shape[-2]
        for t in range(T):
            z = states[-1] @ self.w_rec.T + velocities[..., t, :] @ self.w_in.T
            r = np.maximum(z, 0.0)
            states.append(r)
            preds.append(r @ self.w_out.T)
        return states, preds

    def loss_and_grads(self, p0, velocities, targets, lambda_reg):
        """Mean softmax cross-entropy + lambda ||w_rec||^2, textbook BPTT."""
        B, T = targets.shape[0], targets.shape[1]
        states, preds = self.forward(p0, velocities)
        preds = np.stack(preds, axis=1)
        shifted = preds - preds.max(axis=-1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        log_soft = shifted - logz
        ce = float(-(targets * log_soft).sum(axis=-1).mean())
        total = ce + lambda_reg * float(np.sum(self.w_rec * self.w_rec))

        soft = np.exp(log_soft)
        dpred = (soft * targets.sum(axis=-1, keepdims=True) - targets) / (B * T)
        d_w_out = dpred.reshape(B * T, -1).T @ np.stack(states[1:], axis=1).reshape(B * T, -1)
        d_w_rec = np.zeros_like(self.w_rec)
        d_w_in = np.zeros_like(self.w_in)
        g = np.zeros_like(states[0])
        for t in range(T - 1, -1, -1):
            g = g + dpred[:, t] @ self.w_out
            mask = (states[t] @ self.w_rec.T + velocities[:, t] @ self.w_in.T) > 0.0
            dz = 1.0 * np.where(mask, g, 0.0)
            d_w_rec += dz.T @ states[t]
            d_w_in += dz.T @ velocities[:, t]
            g = 0.0 * g + dz @ self.w_rec
        u0 = p0 @ self.w_init.T
        du = np.where(u0 > 0.0, g, 0.0)
        d_w_init = du.T @ p0
        d_w_rec = d_w_rec + 2.0 * lambda_reg * self.w_rec
        grads = {"w_init": d_w_init, "w_rec": d_w_rec, "w_in": d_w_in, "w_out": d_w_out}
        return total, grads


def naive_sac(grid, defined, min_overlap):
    """Per-lag double loop Pearson over the overlap of defined bins."""
    B = grid.shape[0]
    size = 2 * B - 1
    out = np.zeros((size, size))
    valid = np.zeros((size, size), dtype=bool)
    for dy in range(-B + 1, B):
        for dx in range(-B + 1, B):
            xs, ys, xs2, ys2 = [], [], [], []
            vals_a, vals_b = [], []
            for y in range(B):
                for x in range(B):
                    y2, x2 = y - dy, x - dx
                    if 0 <= y2 < B and 0 <= x2 < B and defined[y, x] and defined[y2, x2]:
                        vals_a.append(grid[y, x])
                        vals_b.append(grid[y2, x2])
            n = len(vals_a)
            if n < min_overlap:
                continue
            a = np.array(vals_a)
            b = np.array(vals_b)
            num = n * (a * b).sum() - a.sum() * b.sum()
            va = n * (a * a).sum() - a.sum() ** 2
            vb = n * (b * b).sum() - b.sum() ** 2
            if va <= 1e-10 * n * np.abs((a * a).sum()) or vb <= 1e-10 * n * np.abs((b * b).sum()):
                continue
            out[dy + B - 1, dx + B - 1] = num / np.sqrt(va * vb)
            valid[dy + B - 1, dx + B - 1] = True
    return out, valid


def reference_rips_pairs(D, max_dim, thresh):
    """Dense global boundary-matrix reduction with bitmask columns.

    Standard column algorithm: simplices sorted by (diameter, dim, vertex
    tuple); columns reduced left to right with int bitmasks. Returns
    (pairs, essentials) like the package engine, zero-persistence pairs
    dropped.
    """
    from itertools import combinations

    n = D.shape[0]
    simplices = [((v,), 0.0) for v in range(n)]
    for dim in range(1, max_dim + 2):
        for verts in combinations(range(n), dim + 1):
            diam = max(D[a, b] for a, b in combinations(verts, 2))
            if diam <= thresh:
                simplices.append((verts, diam))
    simplices.sort(key=lambda s: (s[1], len(s[0]), s[0]))
    index = {s[0]: i for i, s in enumerate(simplices)}

    columns = []
    for verts, _ in simplices:
        col = 0
        if len(verts) > 1:
            for drop in range(len(verts)):
                face = verts[:drop] + verts[drop + 1 :]
                col |= 1 << index[face]
        columns.append(col)

    pivot = {}
    paired_death = [False] * len(simplices)
    paired_birth = [False] * len(simplices)
    pairs = {d: [] for d in range(max_dim + 1)}
    for j, col in enumerate(columns):
        while col:
            low = col.bit_length() - 1
            if low in pivot:
                col ^= columns[pivot[low]]
            else:
                break
        columns[j] = col
        if col:
            low = col.bit_length() - 1
            pivot[low] = j
            paired_death[j] = True
            paired_birth[low] = True
            dim = len(simplices[low][0]) - 1
            birth, death = simplices[low][1], simplices[j][1]
            if dim <= max_dim and death > birth:
                pairs[dim].append((birth, death))
    essentials = {d: [] for d in range(max_dim + 1)}
    for i, (verts, diam) in enumerate(simplices):
        dim = len(verts) - 1
        if dim <= max_dim and not paired_birth[i] and not paired_death[i]:
            essentials[dim].append(diam)
    for d in pairs:
        pairs[d].sort()
        essentials[d].sort()
    return pairs, essentials
