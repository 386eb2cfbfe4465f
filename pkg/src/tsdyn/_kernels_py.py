"""Pure-Python reference kernels (the fallback when the extension is absent).

All sweeps walk a node grid ``0..N`` with one transition matrix per interval,
looked up through an index array so repeated matrices are stored once.
"""
import numpy as np


def affine_forward(phi_tab, phi_idx, q, x0):
    """``x[k+1] = phi_tab[phi_idx[k]] @ x[k] + q[k]``."""
    N = phi_idx.shape[0]
    x = np.empty((N + 1, x0.shape[0]))
    x[0] = x0
    for k in range(N):
        x[k + 1] = phi_tab[phi_idx[k]] @ x[k] + q[k]
    return x


def projected_forward(phi_tab, phi_idx, proj_tab, proj_idx, q, x0):
    """``x[k+1] = P[k+1] @ (phi[k] @ x[k] + q[k])``."""
    N = phi_idx.shape[0]
    x = np.empty((N + 1, x0.shape[0]))
    x[0] = x0
    for k in range(N):
        x[k + 1] = proj_tab[proj_idx[k + 1]] @ (phi_tab[phi_idx[k]] @ x[k] + q[k])
    return x


def projected_backward(phiinv_tab, phi_idx, proj_tab, proj_idx, q, xN):
    """``x[k] = P[k] @ (phiinv[k] @ (x[k+1] - q[k]))``, from the right end."""
    N = phi_idx.shape[0]
    x = np.empty((N + 1, xN.shape[0]))
    x[N] = xN
    for k in range(N - 1, -1, -1):
        x[k] = proj_tab[proj_idx[k]] @ (phiinv_tab[phi_idx[k]] @ (x[k + 1] - q[k]))
    return x


def transition_products(phi_tab, phi_idx, X0):
    """Cumulative products ``X[k+1] = phi[k] @ X[k]``."""
    N = phi_idx.shape[0]
    X = np.empty((N + 1,) + X0.shape)
    X[0] = X0
    for k in range(N):
        X[k + 1] = phi_tab[phi_idx[k]] @ X[k]
    return X
