"""Independent KKT-residual oracle for the pendulum NLP, written directly in jax.

Shares no code with the package: dynamics, RK4 transcription, cost and
bounds are restated here and differentiated with ``jax.grad``.
"""
import csv

import jax
import jax.numpy as jnp
import numpy as np

jax.config.update("jax_enable_x64", True)


def make_phi(params, spec):
    m, l, b, grav, umax = params.m, params.l, params.b, params.grav, params.u_max
    N, dt = spec.N, spec.dt
    Q = jnp.array(spec.Q)
    Pt = jnp.array(spec.P_term)
    xr = jnp.array(spec.x_ref)

    def f(x, u):
        return jnp.array([x[1], (u - b * x[1] - m * grav * l * jnp.sin(x[0])) / (m * l * l)])

    def step(x, u):
        k1 = f(x, u)
        k2 = f(x + dt / 2 * k1, u)
        k3 = f(x + dt / 2 * k2, u)
        k4 = f(x + dt * k3, u)
        return x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    def pieces(w, p):
        X = w[:2 * N].reshape(N, 2)
        U = w[2 * N:]
        prev = jnp.vstack([p[None, :], X[:-1]])
        nxt = jax.vmap(step)(prev, U)
        J = jnp.sum(jnp.sum(Q * (prev - xr) ** 2, axis=1) + spec.R * U ** 2) \
            + jnp.sum(Pt * (X[-1] - xr) ** 2)
        c = (X - nxt).ravel()
        g = jnp.stack([U - umax, -U - umax], axis=1).ravel()
        return J, c, g

    def lagrangian(w, p, lam, mu):
        J, c, g = pieces(w, p)
        return J + lam @ c + mu @ g

    grad_L = jax.grad(lagrangian)

    @jax.jit
    def phi(w, p, lam, mu, mask):
        _, c, g = pieces(w, p)
        return jnp.concatenate([grad_L(w, p, lam, mu * mask), c, jnp.where(mask > 0, g, 0.0)])

    return phi


def read_primal_dual(path):
    """Rows of a primal-dual sidecar CSV as dicts of numpy arrays."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    cols = {name: i for i, name in enumerate(header)}

    def block(prefix, row):
        return np.array([float(row[i]) for name, i in cols.items()
                         if name.startswith(prefix + "_") and name[len(prefix) + 1:].isdigit()])

    out = []
    for row in rows:
        active = row[cols["active_set"]].split()
        out.append({"row": int(row[cols["row"]]), "p": block("p", row), "w": block("w", row),
                    "lam": block("lam", row), "mu": block("mu", row),
                    "active": [int(j) for j in active]})
    return out


def residuals_from_csv(dataset_csv, primal_dual_csv, params, spec):
    """Infinity norm of phi for every non-discarded augmented row of ``dataset_csv``."""
    with open(dataset_csv, newline="") as fh:
        reader = csv.DictReader(fh)
        meta = list(reader)
    phi = make_phi(params, spec)
    norms = {}
    for rec in read_primal_dual(primal_dual_csv):
        info = meta[rec["row"]]
        if info["kind"] != "augmented" or info["discarded"] != "false":
            continue
        mask = np.zeros(rec["mu"].size)
        mask[rec["active"]] = 1.0
        r = phi(rec["w"], rec["p"], rec["lam"], rec["mu"], mask)
        norms[rec["row"]] = float(jnp.max(jnp.abs(r)))
    n_expected = sum(1 for m in meta if m["kind"] == "augmented" and m["discarded"] == "false")
    return norms, n_expected, [float(m["stationarity_norm"]) for m in meta
                               if m["kind"] == "augmented" and m["discarded"] == "false"]
