"""Per-group ISS Lyapunov certificates, gains and decentralized controllers.

A certificate evaluates

    V(z) = |S R z|^2 + |p(z)|^2 + q(z),      q with a ReLU output,

on goal-relative coordinates ``z = x - offset`` where ``R`` projects onto the
normal space of the node's goal set. Nodes in one share group use the same
parameters; the bundle keeps one certificate and one controller per group.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .diffcore import MlpParams, Tape, mlp_apply, mlp_init, power_iterate
from .diffcore import tape as ad
from .environments import EnvConfigError, EnvironmentModel, NetworkTopology


class PortError(ValueError):
    pass


@dataclass
class IssCertificate:
    S: np.ndarray
    p_net: MlpParams
    q_net: MlpParams
    gain_k: float
    alpha: float
    residual: np.ndarray

    @property
    def dim(self) -> int:
        return self.S.shape[0]

    def arrays(self) -> list[np.ndarray]:
        """Lyapunov parameters in a fixed order (S, p weights, q weights)."""
        return [self.S] + self.p_net.arrays() + self.q_net.arrays()

    def set_arrays(self, arrays) -> None:
        arrays = list(arrays)
        n_p = len(self.p_net.arrays())
        self.S = arrays[0]
        self.p_net.set_arrays(arrays[1:1 + n_p])
        self.q_net.set_arrays(arrays[1 + n_p:])


@dataclass
class DecentralizedPolicy:
    net: MlpParams
    low: np.ndarray
    high: np.ndarray

    @property
    def mid(self) -> np.ndarray:
        return 0.5 * (self.low + self.high)

    @property
    def half(self) -> np.ndarray:
        return 0.5 * (self.high - self.low)


@dataclass
class CertificateBundle:
    kind: str
    topology: NetworkTopology
    certificates: dict[int, IssCertificate]
    policies: dict[int, DecentralizedPolicy]
    goal_offset: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def groups(self) -> list[int]:
        return sorted(self.certificates)

    def group_of(self, node: int) -> int:
        return self.topology.share_group[node]

    def members(self, group: int) -> np.ndarray:
        return self.topology.members(group)

    def copy(self) -> "CertificateBundle":
        return copy.deepcopy(self)

    def refresh_spectral(self, n_iters: int) -> None:
        for g in self.groups:
            for net in (self.certificates[g].p_net, self.certificates[g].q_net,
                        self.policies[g].net):
                if any(net.spectral_norm):
                    power_iterate(net, n_iters)


def new_bundle(env: EnvironmentModel, hidden=(64, 64), seed=0, spectral_norm=True,
               gain_k=0.0, alpha=None) -> CertificateBundle:
    """Fresh bundle with one certificate/controller per share group of ``env``."""
    d, p = env.state_dim, env.control_dim
    ss = np.random.SeedSequence(seed)
    certs, pols = {}, {}
    for g in env.topology.groups:
        s_p, s_q, s_pi, s_S = (int(c.generate_state(1)[0]) for c in ss.spawn(4))
        widths = [d, *hidden]
        S = np.random.default_rng(s_S).uniform(-1, 1, size=(d, d)) / np.sqrt(d)
        certs[g] = IssCertificate(
            S=S,
            p_net=mlp_init(widths + [d], seed=s_p, spectral_norm=spectral_norm),
            q_net=mlp_init(widths + [1], output_activation="relu", seed=s_q,
                           spectral_norm=spectral_norm),
            gain_k=float(gain_k),
            alpha=float(env.alpha if alpha is None else alpha),
            residual=env.goal_residual_matrix(),
        )
        pols[g] = DecentralizedPolicy(
            net=mlp_init(widths + [p], seed=s_pi, spectral_norm=spectral_norm),
            low=env.actuation_bounds.low.copy(),
            high=env.actuation_bounds.high.copy(),
        )
    return CertificateBundle(env.kind, env.topology, certs, pols, env.goal_offset().copy())


# -- batched evaluation --------------------------------------------------------


def certificate_values(cert: IssCertificate, Z, arrays=None, tangent=None):
    """V on a batch ``Z`` (N, d); with ``tangent`` also the directional derivative.

    ``arrays`` overrides :meth:`IssCertificate.arrays` (e.g. with tape variables).
    """
    arrays = cert.arrays() if arrays is None else list(arrays)
    n_p = len(cert.p_net.arrays())
    S, p_arr, q_arr = arrays[0], arrays[1:1 + n_p], arrays[1 + n_p:]
    RT = cert.residual.T
    SR = ad.matmul(ad.matmul(Z, RT), ad.transpose(S))
    if tangent is None:
        p = mlp_apply(cert.p_net, Z, p_arr)
        q = mlp_apply(cert.q_net, Z, q_arr)
        return ad.sum(SR * SR, axis=1) + ad.sum(p * p, axis=1) + q[:, 0]
    dSR = ad.matmul(ad.matmul(tangent, RT), ad.transpose(S))
    p, dp = mlp_apply(cert.p_net, Z, p_arr, tangent)
    q, dq = mlp_apply(cert.q_net, Z, q_arr, tangent)
    V = ad.sum(SR * SR, axis=1) + ad.sum(p * p, axis=1) + q[:, 0]
    dV = 2.0 * ad.sum(SR * dSR, axis=1) + 2.0 * ad.sum(p * dp, axis=1) + dq[:, 0]
    return V, dV


def policy_values(policy: DecentralizedPolicy, Z, arrays=None):
    raw = mlp_apply(policy.net, Z, arrays)
    return policy.mid + policy.half * ad.tanh(raw)


def gain_eval(gain_k, a):
    """chi(a) = sigmoid(k) a."""
    return ad.sigmoid(gain_k) * a


def _check_point(cert_dim, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != cert_dim:
        raise ValueError(f"state has {x.shape[-1]} entries, certificate expects {cert_dim}")
    return x


def v_eval(cert: IssCertificate, x, offset=None):
    """V at one state (or a batch of states)."""
    x = _check_point(cert.dim, x)
    z = x if offset is None else x - offset
    single = z.ndim == 1
    out = certificate_values(cert, np.atleast_2d(z))
    return float(out[0]) if single else out


def v_grad(cert: IssCertificate, x, offset=None) -> np.ndarray:
    """Reverse-mode gradient of V at one state (or row-wise over a batch)."""
    x = _check_point(cert.dim, x)
    z = x if offset is None else x - offset
    single = z.ndim == 1
    tape = Tape()
    zv = tape.leaf(np.atleast_2d(z))
    V = certificate_values(cert, zv)
    # rows are independent, so the gradient of the sum is the per-row gradient
    tape.backward(ad.sum(V))
    return zv.grad[0] if single else zv.grad


def policy_eval(policy: DecentralizedPolicy, x, offset=None) -> np.ndarray:
    x = _check_point(policy.net.layer_widths[0], x)
    z = x if offset is None else x - offset
    single = z.ndim == 1
    out = policy_values(policy, np.atleast_2d(z))
    return out[0] if single else out


# -- whole-network evaluation ----------------------------------------------------


@dataclass
class BundleView:
    """Per-group parameter arrays, either plain arrays or tape variables."""

    v_arrays: dict
    pi_arrays: dict
    gain_k: dict


def numpy_view(bundle: CertificateBundle) -> BundleView:
    return BundleView(
        {g: c.arrays() for g, c in bundle.certificates.items()},
        {g: p.net.arrays() for g, p in bundle.policies.items()},
        {g: np.asarray(c.gain_k, dtype=np.float64) for g, c in bundle.certificates.items()},
    )


def tape_view(bundle: CertificateBundle, tape: Tape, train_v=True, train_pi=True,
              train_k=True) -> tuple[BundleView, dict]:
    """Leaves for every trainable block; frozen blocks stay plain arrays.

    Returns the view and ``{"V": {g: [leaves]}, "pi": ..., "k": ...}``.
    """
    base = numpy_view(bundle)
    leaves = {"V": {}, "pi": {}, "k": {}}
    v_arr, pi_arr, k_arr = {}, {}, {}
    for g in bundle.groups:
        if train_v:
            leaves["V"][g] = [tape.leaf(a) for a in base.v_arrays[g]]
            v_arr[g] = leaves["V"][g]
        else:
            v_arr[g] = base.v_arrays[g]
        if train_pi:
            leaves["pi"][g] = [tape.leaf(a) for a in base.pi_arrays[g]]
            pi_arr[g] = leaves["pi"][g]
        else:
            pi_arr[g] = base.pi_arrays[g]
        if train_k:
            leaves["k"][g] = [tape.leaf(base.gain_k[g])]
            k_arr[g] = leaves["k"][g][0]
        else:
            k_arr[g] = base.gain_k[g]
    return BundleView(v_arr, pi_arr, k_arr), leaves


def _scatter_nodes(blocks, order, B):
    """Assemble per-group (B*m,) blocks into a (B, n) array in node order."""
    cols = ad.concat([ad.reshape(b, (B, -1)) for b in blocks], axis=1)
    inv = np.argsort(order)
    return ad.take(cols, (slice(None), inv))


def network_values(bundle: CertificateBundle, env: EnvironmentModel, X, beta=None,
                   view: BundleView | None = None, lie: str | None = None,
                   controls=None):
    """Per-node V, controls and (optionally) the Lie derivative along f.

    ``lie`` is ``None``, ``"analytic"`` (forward tangent through V) or
    ``"onestep"`` (Euler difference quotient). ``controls`` replaces the policy
    output when given (e.g. to check a certificate against another controller).
    Returns a dict with ``V`` (B, n), ``U`` (B, n, p) per-group list and ``lie``.
    """
    view = numpy_view(bundle) if view is None else view
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    B, n, d = X.shape
    Z = X - bundle.goal_offset
    need_f = lie is not None
    if need_f:
        beta = np.zeros((B, env.beta_dim)) if beta is None else beta
        h = env.drift(X, beta)
        G = env.input_matrix(X, beta)
    order, V_blocks, L_blocks, U_blocks = [], [], [], {}
    for g in bundle.groups:
        idx = bundle.members(g)
        if idx.size == 0:
            continue
        m = idx.size
        order.extend(idx.tolist())
        cert = bundle.certificates[g]
        Zg = Z[:, idx, :].reshape(B * m, d)
        if controls is None:
            Ug = policy_values(bundle.policies[g], Zg, view.pi_arrays[g])
        else:
            Ug = np.asarray(controls, dtype=np.float64).reshape(B, n, -1)[:, idx, :] \
                .reshape(B * m, -1)
        U_blocks[g] = Ug
        if not need_f:
            V_blocks.append(certificate_values(cert, Zg, view.v_arrays[g]))
            continue
        hg = h[:, idx, :].reshape(B * m, d)
        Gg = G[:, idx, :, :].reshape(B * m, d, -1)
        f = hg
        for k in range(Gg.shape[2]):
            f = f + Gg[:, :, k] * Ug[:, k:k + 1]
        if lie == "analytic":
            Vg, Lg = certificate_values(cert, Zg, view.v_arrays[g], tangent=f)
        elif lie == "onestep":
            Vg = certificate_values(cert, Zg, view.v_arrays[g])
            Vn = certificate_values(cert, Zg + env.dt * f, view.v_arrays[g])
            Lg = (Vn - Vg) / env.dt
        else:
            raise ValueError(f"unknown gradient mode {lie!r}")
        V_blocks.append(Vg)
        L_blocks.append(Lg)
    order = np.asarray(order)
    out = {"V": _scatter_nodes(V_blocks, order, B), "U": U_blocks, "order": order}
    if need_f:
        out["lie"] = _scatter_nodes(L_blocks, order, B)
    return out


def neighbor_max(bundle: CertificateBundle, V):
    """max over real neighbours of V_j; boundary slots and empty sets give 0.

    Because every V_j >= 0, padding the neighbour list with zeros leaves the
    maximum over real neighbours unchanged.
    """
    B = ad.value_of(V).shape[0]
    slot_idx = bundle.topology.slot_index()
    if slot_idx.shape[1] == 0:
        return np.zeros((B, bundle.topology.n))
    Vext = ad.concat([V, np.zeros((B, 1))], axis=1)
    gathered = ad.take(Vext, (slice(None), slot_idx))
    return ad.max(gathered, axis=2)


def node_gain_k(bundle: CertificateBundle, view: BundleView):
    """(n,) gain parameters in node order."""
    ks = [view.gain_k[g] for g in bundle.topology.share_group]
    return ad.stack([ad.reshape(k, (1,)) for k in ks], axis=0)[:, 0] \
        if any(ad.is_var(k) for k in ks) else np.array([float(k) for k in ks])


def node_alpha(bundle: CertificateBundle) -> np.ndarray:
    return np.array([bundle.certificates[g].alpha for g in bundle.topology.share_group])


def bundle_controls(bundle: CertificateBundle, X) -> np.ndarray:
    """Decentralized controls for a batch of network states, (B, n, p)."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 2
    Xb = X[None] if single else X
    B = Xb.shape[0]
    Z = Xb - bundle.goal_offset
    out = None
    for g in bundle.groups:
        idx = bundle.members(g)
        if idx.size == 0:
            continue
        Ug = policy_values(bundle.policies[g], Z[:, idx, :].reshape(B * idx.size, -1))
        if out is None:
            out = np.zeros((B, bundle.topology.n, Ug.shape[1]))
        out[:, idx, :] = Ug.reshape(B, idx.size, -1)
    return out[0] if single else out


def bundle_v(bundle: CertificateBundle, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 2
    Xb = X[None] if single else X
    B, n, d = Xb.shape
    Z = Xb - bundle.goal_offset
    out = np.zeros((B, n))
    for g in bundle.groups:
        idx = bundle.members(g)
        if idx.size:
            vals = certificate_values(bundle.certificates[g], Z[:, idx, :].reshape(-1, d))
            out[:, idx] = vals.reshape(B, idx.size)
    return out[0] if single else out


# -- porting -------------------------------------------------------------------


def _pattern(topo: NetworkTopology, i: int) -> tuple[bool, ...]:
    return tuple(j is not None for j in topo.neighbors[i])


def _compatible(src: tuple, tgt: tuple, relaxed: bool) -> bool:
    if len(src) != len(tgt):
        return False
    for s, t in zip(src, tgt):
        if not t and s:
            return False  # a boundary role can only come from a boundary role
        if t and not s and not relaxed:
            return False
    return True


def port_certificate(bundle: CertificateBundle, source_env: EnvironmentModel,
                     target_env: EnvironmentModel) -> CertificateBundle:
    """Assign trained per-group certificates to the nodes of a larger network.

    Each target node ``j`` is matched to a source node ``l`` with the same
    boundary role and whose neighbours (where both are real) belong to the same
    groups as ``j``'s neighbours; the neighbourhood map is recorded per node.
    Exact-pattern matches are preferred; otherwise a source boundary slot may
    stand for a real target neighbour.
    """
    if source_env.kind != target_env.kind or bundle.kind != target_env.kind:
        raise PortError(f"kind mismatch: {bundle.kind}/{source_env.kind} -> {target_env.kind}")
    src, tgt = source_env.topology, target_env.topology
    if src.state_dims[0] != tgt.state_dims[0] or src.control_dims[0] != tgt.control_dims[0]:
        raise PortError("state/control dimensions differ between source and target")
    src_groups = bundle.topology.share_group
    by_pattern: dict[tuple, set] = {}
    for ell in range(src.n):
        by_pattern.setdefault(_pattern(src, ell), set()).add(src_groups[ell])
    for pat, gs in by_pattern.items():
        if len(gs) > 1:
            raise PortError(
                f"incompatible sharing pattern: nodes with neighbourhood role {pat} "
                f"use groups {sorted(gs)}")

    assign, candidates = [], []
    for j in range(tgt.n):
        tp = _pattern(tgt, j)
        cands = [ell for ell in range(src.n) if _compatible(_pattern(src, ell), tp, False)]
        if not cands:
            cands = [ell for ell in range(src.n) if _compatible(_pattern(src, ell), tp, True)]
        if not cands:
            raise PortError(f"target node {j}: no source node with boundary role {tp}")
        gs = {src_groups[ell] for ell in cands}
        if len(gs) > 1:
            raise PortError(f"incompatible sharing pattern for target node {j}: "
                            f"candidate groups {sorted(gs)}")
        assign.append(gs.pop())
        candidates.append(cands)

    maps = []
    for j in range(tgt.n):
        found = None
        for ell in candidates[j]:
            ok = True
            slot_map = {}
            for s_slot, (tj, sl) in enumerate(zip(tgt.neighbors[j], src.neighbors[ell])):
                if tj is not None and sl is not None and assign[tj] != src_groups[sl]:
                    ok = False
                    break
                slot_map[s_slot] = (tj, sl)
            if ok:
                found = (ell, slot_map)
                break
        if found is None:
            raise PortError(f"neighbourhood map validation failed at target node {j}")
        ell, slot_map = found
        maps.append({"node": j, "source": ell,
                     "slots": [[t, s] for t, s in slot_map.values()]})

    topo = NetworkTopology(tgt.n, [list(s) for s in tgt.neighbors], assign,
                           list(tgt.state_dims), list(tgt.control_dims), tgt.slot_names)
    used = sorted(set(assign))
    out = CertificateBundle(
        target_env.kind, topo,
        {g: copy.deepcopy(bundle.certificates[g]) for g in used},
        {g: copy.deepcopy(bundle.policies[g]) for g in used},
        target_env.goal_offset().copy(),
        {**copy.deepcopy(bundle.meta), "port_maps": maps},
    )
    if src.n == tgt.n and src.neighbors == tgt.neighbors:
        out.meta = copy.deepcopy(bundle.meta)
    return out


def validate_bundle_for_env(bundle: CertificateBundle, env: EnvironmentModel) -> None:
    if bundle.kind != env.kind:
        raise EnvConfigError(f"checkpoint kind {bundle.kind!r} does not match env {env.kind!r}")
    if bundle.topology.n != env.n:
        raise EnvConfigError(f"checkpoint has {bundle.topology.n} nodes, env has {env.n}")
    if bundle.topology.neighbors != env.topology.neighbors:
        raise EnvConfigError("checkpoint topology differs from the environment topology")
