import time

import numpy as np

from splatlab.primitives import PrimitiveSet, build_covariance, inverse_opacity
from splatlab.renderer import T_EPS, Viewpoint, render_backward, render_depth, render_forward
from splatlab._kernels import ALPHA_MAX

rng = np.random.default_rng(0)


def random_set(n, lo=0.25, hi=0.75, span=16.0):
    return PrimitiveSet(
        mu=rng.uniform(2.0, span - 2.0, size=(n, 2)),
        kappa=np.log(rng.uniform(1.0, 3.0, size=(n, 2))),
        rot=rng.uniform(0, np.pi, size=n),
        tau=inverse_opacity(rng.uniform(lo, hi, size=n)) * np.ones(n),
        color=rng.uniform(0.1, 0.9, size=(n, 3)),
        depth=rng.random(n),
    )


def oracle_render(pset, vp):
    """Naive per-pixel loop implementing the same blend definition."""
    h, w = vp.shape
    img = np.zeros((h, w, 3))
    op = pset.opacity()
    cand = []
    x0, y0, x1, y1 = vp.extent()
    for i in range(len(pset)):
        if not pset.alive[i] or op[i] <= 1 / 255:
            continue
        cov = build_covariance(np.exp(pset.kappa[i]), pset.rot[i])
        ex, ey = 3 * np.sqrt(cov[0, 0]), 3 * np.sqrt(cov[1, 1])
        if pset.mu[i, 0] + ex < x0 or pset.mu[i, 0] - ex > x1:
            continue
        if pset.mu[i, 1] + ey < y0 or pset.mu[i, 1] - ey > y1:
            continue
        cand.append(i)
    cand.sort(key=lambda i: pset.depth[i])
    # per-candidate alpha maps + contribution-floor gate
    amap = {}
    vis = []
    for i in cand:
        cov = build_covariance(np.exp(pset.kappa[i]), pset.rot[i])
        m = np.linalg.inv(cov)
        al = np.zeros((h, w))
        best = 0.0
        for r in range(h):
            for c in range(w):
                p = vp.to_scene(np.array([c + 0.5, r + 0.5]))
                d = p - pset.mu[i]
                q = d @ m @ d
                if q > 128.0:
                    continue
                a = min(op[i] * np.exp(-0.5 * q), ALPHA_MAX)
                al[r, c] = a
                best = max(best, a)
        if best > 1 / 255:
            amap[i] = al
            vis.append(i)
    for r in range(h):
        for c in range(w):
            t = 1.0
            for i in vis:
                if t < T_EPS:
                    break
                a = amap[i][r, c]
                img[r, c] += a * t * np.clip(pset.color[i], 0, 1)
                t *= 1.0 - a
    return img, vis


vp = Viewpoint(origin=(0.0, 0.0), shape=(16, 16))
ps = random_set(5)
t0 = time.time()
img, rec, mask = render_forward(ps, vp)
print("first forward (JIT):", time.time() - t0)
oimg, ovis = oracle_render(ps, vp)
print("forward vs oracle max abs diff:", np.abs(img - oimg).max())
print("visible:", sorted(rec.order.tolist()), "oracle:", sorted(ovis))

# telescoping check
T = np.ones((16, 16))
for r in range(16):
    for c in range(16):
        t = 1.0
        for (_, a, tt) in rec.pixel_entries(r, c):
            assert abs(tt - t) < 1e-15
            t *= 1 - a
print("telescoping OK; t_final diff:", np.abs(rec.t_final - [[np.prod([1 - a for (_, a, _) in rec.pixel_entries(r, c)]) for c in range(16)] for r in range(16)]).max())

# finite differences on all params
def loss_of(pset):
    img, _, _ = render_forward(pset, vp)
    return float(np.sum(img * wgt))

wgt = rng.standard_normal((16, 16, 3))
img, rec, mask = render_forward(ps, vp)
g = render_backward(rec, ps, vp, wgt)

h_fd = 1e-4
worst = 0.0
for attr in ("mu", "kappa", "rot", "tau", "color"):
    arr = getattr(ps, attr)
    it = np.ndindex(*arr.shape)
    for idx in it:
        orig = arr[idx]
        arr[idx] = orig + h_fd
        lp = loss_of(ps)
        arr[idx] = orig - h_fd
        lm = loss_of(ps)
        arr[idx] = orig
        fd = (lp - lm) / (2 * h_fd)
        an = getattr(g, attr)[idx]
        err = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
        if err > worst:
            worst = err
            wat = (attr, idx, fd, an)
print("worst FD rel err:", worst, wat)

# timing at training scale
ps2 = random_set(150, span=64.0)
vp2 = Viewpoint(origin=(0.0, 0.0), shape=(64, 64))
img2, rec2, m2 = render_forward(ps2, vp2)
t0 = time.time()
K = 30
for _ in range(K):
    img2, rec2, m2 = render_forward(ps2, vp2)
    g2 = render_backward(rec2, ps2, vp2, wgt2 := np.ones((64, 64, 3)))
print("fwd+bwd per iter (150 prims, 64x64):", (time.time() - t0) / K * 1e3, "ms, visible:", rec2.order.size)

dimg = render_depth(ps, vp)
print("depth range:", dimg.min(), dimg.max())
