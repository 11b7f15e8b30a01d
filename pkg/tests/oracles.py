"""Independent reference computations used by the tests."""
import numpy as np
import torch

from triplane_inversion.camera import generate_rays


def bilinear_scalar(plane, gx, gy):
    """Sample a (C, R, R) grid at normalized (gx, gy) in [-1, 1], node-aligned, border clamp."""
    _, res, _ = plane.shape
    fx = (min(max(gx, -1.0), 1.0) + 1.0) * 0.5 * (res - 1)
    fy = (min(max(gy, -1.0), 1.0) + 1.0) * 0.5 * (res - 1)
    x0, y0 = int(np.floor(fx)), int(np.floor(fy))
    x1, y1 = min(x0 + 1, res - 1), min(y0 + 1, res - 1)
    ax, ay = fx - x0, fy - y0
    return (
        plane[:, y0, x0] * (1 - ax) * (1 - ay)
        + plane[:, y0, x1] * ax * (1 - ay)
        + plane[:, y1, x0] * (1 - ax) * ay
        + plane[:, y1, x1] * ax * ay
    )


def triplane_scalar(planes, point):
    x, y, z = point
    return bilinear_scalar(planes[0], x, y) + bilinear_scalar(planes[1], x, z) + bilinear_scalar(planes[2], y, z)


def finite_difference_check(fn, tensor, n_entries=20, step=1e-3, seed=0):
    """Max relative error between autodiff and central differences on random entries.

    ``fn`` maps ``tensor`` (float64, requires_grad) to a scalar.
    """
    tensor = tensor.detach().clone().double().requires_grad_(True)
    (grad,) = torch.autograd.grad(fn(tensor), tensor)
    gen = np.random.default_rng(seed)
    flat = tensor.detach().view(-1)
    idx = gen.choice(flat.numel(), size=min(n_entries, flat.numel()), replace=False)
    worst = 0.0
    for i in idx:
        with torch.no_grad():
            orig = flat[i].item()
            flat[i] = orig + step
            up = fn(tensor).item()
            flat[i] = orig - step
            down = fn(tensor).item()
            flat[i] = orig
        fd = (up - down) / (2 * step)
        ad = grad.view(-1)[i].item()
        worst = max(worst, abs(fd - ad) / max(abs(fd), abs(ad), 1e-6))
    return worst


def raymarch_first_surface(scene, pose, intr, res, t_near, t_far, n_steps=2000):
    """Brute-force first-hit points by marching every pixel ray through the SDF."""
    rays = generate_rays(pose, intr, res, dtype=torch.float64)
    o = rays.origins.numpy().reshape(-1, 3)
    d = rays.directions.numpy().reshape(-1, 3)
    cos = d @ pose.forward
    zs = np.linspace(t_near, t_far, n_steps)
    hit = np.full(len(o), np.nan)
    prev = scene.sdf(o + d * (zs[0] / cos)[:, None])
    for k in range(1, n_steps):
        cur = scene.sdf(o + d * (zs[k] / cos)[:, None])
        crossing = np.isnan(hit) & (prev > 0) & (cur <= 0)
        # Linear interpolation of the zero crossing in z.
        frac = prev[crossing] / (prev[crossing] - cur[crossing])
        hit[crossing] = zs[k - 1] + frac * (zs[k] - zs[k - 1])
        prev = cur
    ok = ~np.isnan(hit)
    return o[ok] + d[ok] * (hit[ok] / cos[ok])[:, None]


def chamfer(a, b):
    from scipy.spatial import cKDTree

    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    return 0.5 * (da.mean() + db.mean())
