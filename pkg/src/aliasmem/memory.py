"""Hierarchical episodic/working memory and the ablation memories that replace it.

Every memory maps fused evidence ``x (B, T, N, d)``, proprioception
``(B, T, P)``, an optional phase id ``(B, T)`` and a task id ``(B,)`` to the
decision state ``h (B, T, d_w)``. ``h`` is the only thing that leaves this
module; recurrent carries are returned as detached arrays so a sequence can be
processed whole (training) or one frame at a time (closed-loop control).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError
from .numerics import T, Embedding, LayerNorm, Linear, MLP, Module, Parameter, Tensor
from .numerics.nn import xavier

SOFTPLUS_INV_ONE = math.log(math.e - 1.0)


def softplus_inverse(y: float) -> float:
    return y + math.log(-math.expm1(-y))


@dataclass
class MemoryConfig:
    width: int = 64
    work_width: int = 64
    anchors: int = 4
    slots: int = 4
    layers: int = 2
    episodic_state: int = 16
    working_state: int = 8
    expand: int = 2
    conv: int = 4
    priors: tuple = (0.001, 0.005, 0.02, None)  # None marks the flexible column
    flexible_init: float = 0.01
    proprio_dim: int = 8
    tokens_per_view: int = 16
    phases: int = 2
    use_phase: bool = True
    tasks: int = 3
    router_hidden: int = 64
    bank_temperature: float = 0.1

    def __post_init__(self):
        if len(self.priors) != self.slots:
            raise ConfigError(f"{len(self.priors)} temporal priors for {self.slots} slots")
        for name in ("width", "work_width", "anchors", "slots", "layers", "episodic_state",
                     "working_state", "expand", "conv"):
            if getattr(self, name) < 1:
                raise ConfigError(f"memory {name} must be positive")


class TokenFusion(Module):
    """Tags, proprio and phase tokens, then row-wise layer norm: ``(B,T,N,d) -> (B,T,M,d)``."""

    def __init__(self, cfg: MemoryConfig, rng: np.random.Generator):
        d = cfg.width
        self.n_view = cfg.tokens_per_view
        self.use_phase = cfg.use_phase
        self.phases = cfg.phases
        self.tag_modality = Parameter(np.zeros((3, d)))  # vision, proprio, phase
        self.tag_view = Parameter(np.zeros((2, d)))      # front, hand
        self.proprio = Linear(cfg.proprio_dim, d, rng)
        self.phase = Embedding(cfg.phases, d, rng) if cfg.use_phase else None
        self.norm = LayerNorm(d)

    def __call__(self, x: Tensor, proprio, phase=None) -> Tensor:
        n = x.shape[-2]
        if n != 2 * self.n_view:
            raise ConfigError(f"expected {2 * self.n_view} vision tokens, got {n}")
        view_ids = np.repeat([0, 1], self.n_view)
        vision = x + T.getitem(self.tag_view, view_ids) + self.tag_modality[0]
        p = self.proprio(T.as_tensor(proprio, dtype=x.dtype)) + self.tag_modality[1]
        rows = [vision, T.expand_dims(p, -2)]
        if self.use_phase:
            if phase is None:
                raise ConfigError("phase-conditioned memory needs a phase id")
            phase = np.asarray(phase)
            if phase.size and (phase.min() < 0 or phase.max() >= self.phases):
                raise ConfigError(f"phase id outside [0, {self.phases})")
            rows.append(T.expand_dims(self.phase(phase) + self.tag_modality[2], -2))
        return self.norm(T.concat(rows, axis=-2))


class AnchorSlots(Module):
    """Spatial routing into A anchors, then B learned-query temporal slots per anchor."""

    def __init__(self, cfg: MemoryConfig, rng: np.random.Generator):
        d = cfg.width
        self.n_vision = 2 * cfg.tokens_per_view
        self.router = MLP(d, cfg.router_hidden, cfg.anchors, rng)
        self.queries = Parameter(rng.normal(0.0, 1.0, size=(cfg.anchors, cfg.slots, d)))
        self.wk = Linear(d, d, rng, bias=False)
        self.wv = Linear(d, d, rng, bias=False)

    def route(self, xbar: Tensor) -> tuple[Tensor, Tensor]:
        """Returns ``pi (..., A, N)`` (softmax over anchors per token) and ``u (..., A, d)``."""
        pi = T.swapaxes(T.softmax(self.router(xbar), axis=-1))
        return pi, T.matmul(pi, xbar)

    def __call__(self, z: Tensor) -> Tensor:
        """``z (..., M, d)`` to slot features ``(..., A*B, d)``, anchor-major."""
        xbar = z[..., :self.n_vision, :]
        shared = z[..., self.n_vision:, :]
        _, u = self.route(xbar)
        A, B, d = self.queries.shape
        shared = T.broadcast_to(T.expand_dims(shared, -3), u.shape[:-2] + (A,) + shared.shape[-2:])
        anchor_set = T.concat([T.expand_dims(u, -2), shared], axis=-2)  # (..., A, 1+E, d)
        k = self.wk(anchor_set)
        v = self.wv(anchor_set)
        logits = T.matmul(self.queries, T.swapaxes(k)) * (1.0 / math.sqrt(d))
        f = T.matmul(T.softmax(logits, axis=-1), v)  # (..., A, B, d)
        return T.reshape(f, f.shape[:-3] + (A * B, d))


class SlotScan(Module):
    """Content-selective diagonal SSM over all A*B slots in one fused scan."""

    def __init__(self, cfg: MemoryConfig, rng: np.random.Generator):
        d, n, S = cfg.width, cfg.episodic_state, cfg.anchors * cfg.slots
        self.d, self.n = d, n
        self.slots = cfg.slots
        # theta = [step modifier (d) | input map (n) | readout map (n) | gate (d)]
        width = 2 * d + 2 * n
        self.theta_w = Parameter(xavier(rng, d, width, shape=(S, d, width)))
        self.theta_b = Parameter(np.zeros((S, 1, width)))
        self.A_log = Parameter(np.log(np.broadcast_to(np.arange(1, n + 1, dtype=float), (S, d, n)).copy()))
        scale, offset = [], []
        for s in range(S):
            prior = cfg.priors[s % cfg.slots]
            if prior is None:
                scale.append(1.0)
                offset.append(softplus_inverse(cfg.flexible_init))
            else:
                scale.append(float(prior))
                offset.append(SOFTPLUS_INV_ONE)
        self.step_scale = np.array(scale)
        self.step_offset = np.array(offset)

    def init_state(self, batch: int, dtype) -> np.ndarray:
        return np.zeros((batch, self.A_log.shape[0], self.d, self.n), dtype=dtype)

    def parameters_for(self, f: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor, Tensor]:
        """Per-slot ``(delta, b_in, c_out, gate, x)`` laid out ``(B, S, T, .)``."""
        Bt, Tn, S, d = f.shape
        n = self.n
        fs = T.reshape(T.transpose(f, (2, 0, 1, 3)), (S, Bt * Tn, d))
        theta = T.matmul(fs, self.theta_w) + self.theta_b
        theta = T.transpose(T.reshape(theta, (S, Bt, Tn, -1)), (1, 0, 2, 3))
        dt = f.dtype
        offset = self.step_offset.astype(dt)[:, None, None]
        scale = self.step_scale.astype(dt)[:, None, None]
        delta = T.softplus(theta[..., :d] + offset) * scale
        b_in = theta[..., d:d + n]
        c_out = theta[..., d + n:d + 2 * n]
        gate = theta[..., d + 2 * n:]
        x = T.transpose(f, (0, 2, 1, 3))
        return delta, b_in, c_out, gate, x

    def __call__(self, f: Tensor, m0) -> tuple[Tensor, np.ndarray]:
        """``f (B, T, S, d)``, ``m0 (B, S, d, n)`` to readouts ``(B, T, S, d)`` and the last state."""
        delta, b_in, c_out, gate, x = self.parameters_for(f)
        A = -T.exp(self.A_log)
        states = T.selective_scan(m0, delta, A, b_in, x)  # (B, S, T, d, n)
        if not np.all(np.isfinite(states.data)):
            bad = np.argwhere(~np.isfinite(states.data))[0]
            a, b = divmod(int(bad[1]), self.slots)
            raise DivergenceError(f"episodic slot state non-finite at anchor {a}, slot {b}, step {int(bad[2])}")
        r = T.einsum("bstcn,bstn->bstc", states, c_out) * T.silu(gate)
        return T.transpose(r, (0, 2, 1, 3)), states.data[:, :, -1]


class SlotRecall(Module):
    """Mean over slots of per-slot linear maps: ``(B, T, S, d) -> (B, T, d_w)``."""

    def __init__(self, slots: int, d: int, d_w: int, rng: np.random.Generator):
        self.weight = Parameter(xavier(rng, d, d_w, shape=(slots, d, d_w)))

    def __call__(self, r: Tensor) -> Tensor:
        Bt, Tn, S, d = r.shape
        rs = T.reshape(T.transpose(r, (2, 0, 1, 3)), (S, Bt * Tn, d))
        out = T.mean(T.matmul(rs, self.weight), axis=0)
        return T.reshape(out, (Bt, Tn, -1))


class SelectiveSSM(Module):
    """Mamba-style block (gated input, causal depthwise conv, selective scan, D skip)."""

    def __init__(self, d: int, d_state: int, expand: int, d_conv: int, rng: np.random.Generator):
        E = expand * d
        rank = max(1, math.ceil(d / 16))
        self.E, self.n, self.k, self.rank = E, d_state, d_conv, rank
        self.in_proj = Linear(d, 2 * E, rng, bias=False)
        self.conv_w = Parameter(rng.uniform(-1.0, 1.0, size=(d_conv, E)) / math.sqrt(d_conv))
        self.conv_b = Parameter(np.zeros(E))
        self.x_proj = Linear(E, rank + 2 * d_state, rng, bias=False)
        dt0 = np.exp(rng.uniform(math.log(1e-3), math.log(1e-1), size=E))
        self.dt_proj = Linear(rank, E, rng)
        self.dt_proj.bias.data = (dt0 + np.log(-np.expm1(-dt0))).astype(self.dt_proj.bias.dtype)
        self.A_log = Parameter(np.log(np.broadcast_to(np.arange(1, d_state + 1, dtype=float), (E, d_state)).copy()))
        self.D = Parameter(np.ones(E))
        self.out_proj = Linear(E, d, rng, bias=False)

    def init_state(self, batch: int, dtype) -> tuple[np.ndarray, np.ndarray]:
        return (np.zeros((batch, self.k - 1, self.E), dtype=dtype),
                np.zeros((batch, self.E, self.n), dtype=dtype))

    def __call__(self, u: Tensor, conv_hist, ssm_state) -> tuple[Tensor, Tensor, Tensor]:
        """``u (B, T, d)`` with carried ``conv_hist (B, k-1, E)`` and ``ssm_state (B, E, n)``."""
        Tn = u.shape[-2]
        xz = self.in_proj(u)
        x, z = xz[..., :self.E], xz[..., self.E:]
        padded = T.concat([T.as_tensor(conv_hist, dtype=u.dtype), x], axis=-2)
        conv = self.conv_b
        for j in range(self.k):
            conv = conv + padded[..., j:j + Tn, :] * self.conv_w[j]
        xc = T.silu(conv)
        proj = self.x_proj(xc)
        delta = T.softplus(self.dt_proj(proj[..., :self.rank]))
        b_in = proj[..., self.rank:self.rank + self.n]
        c_out = proj[..., self.rank + self.n:]
        states = T.selective_scan(ssm_state, delta, -T.exp(self.A_log), b_in, xc)
        y = T.einsum("btcn,btn->btc", states, c_out) + xc * self.D
        out = self.out_proj(y * T.silu(z))
        new_hist = padded[..., padded.shape[-2] - (self.k - 1):, :]
        return out, new_hist, states[:, -1]


@dataclass
class MemoryState:
    episodic: list = field(default_factory=list)
    conv: list = field(default_factory=list)
    ssm: list = field(default_factory=list)
    working: list = field(default_factory=list)
    bank: np.ndarray | None = None


class MemoryLayer(Module):
    def __init__(self, cfg: MemoryConfig, index: int, rng: np.random.Generator):
        d, d_w = cfg.width, cfg.work_width
        self.ctx = Linear(d_w, d, rng, bias=False) if index > 0 else None
        self.anchors = AnchorSlots(cfg, rng)
        self.scan = SlotScan(cfg, rng)
        self.recall = SlotRecall(cfg.anchors * cfg.slots, d, d_w, rng)
        # not zero-initialized: with h_prev = 0 the working input would be LN(0) = 0,
        # which gates the SSM output to zero and leaves every upstream gradient at zero
        self.proj_r = Linear(d_w, d_w, rng)
        self.in_norm = LayerNorm(d_w)
        self.work = SelectiveSSM(d_w, cfg.working_state, cfg.expand, cfg.conv, rng)
        self.w_o = Linear(d_w, d_w, rng)
        self.out_norm = LayerNorm(d_w)

    def modulate(self, z: Tensor, context: Tensor | None) -> Tensor:
        """Add the projected previous-layer working state to every token row."""
        if context is None or self.ctx is None:
            return z
        return z + T.expand_dims(self.ctx(context), -2)

    def working_update(self, recall: Tensor, h, conv, ssm):
        """Step the working SSM over time on ``LN(h_prev + Proj_r(r_t))``."""
        outs = []
        h = T.as_tensor(h, dtype=recall.dtype)
        for t in range(recall.shape[1]):
            u = self.in_norm(h + self.proj_r(recall[:, t]))
            y, conv, ssm = self.work(T.expand_dims(u, 1), conv, ssm)
            h = y[:, 0]
            outs.append(h)
        return T.stack(outs, axis=1), conv, ssm


class HierarchicalMemory(Module):
    """Multi-layer episodic slot memory with working-state integration and task-queried fusion."""

    kind = "full"

    def __init__(self, cfg: MemoryConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.fusion = TokenFusion(cfg, rng)
        self.layers = [MemoryLayer(cfg, i, rng) for i in range(cfg.layers)]
        self.task_query = Embedding(cfg.tasks, cfg.work_width, rng, std=1.0 / math.sqrt(cfg.work_width))
        self.keys = [Linear(cfg.work_width, cfg.work_width, rng, bias=False) for _ in range(cfg.layers)]
        self.encoders = [MLP(cfg.work_width, cfg.work_width, cfg.work_width, rng) for _ in range(cfg.layers)]

    def init_state(self, batch: int) -> MemoryState:
        dtype = self.fusion.norm.gamma.dtype
        st = MemoryState()
        for layer in self.layers:
            conv, ssm = layer.work.init_state(batch, dtype)
            st.episodic.append(layer.scan.init_state(batch, dtype))
            st.conv.append(conv)
            st.ssm.append(ssm)
            st.working.append(np.zeros((batch, self.cfg.work_width), dtype=dtype))
        return st

    def fuse_layers(self, ys: list[Tensor], task) -> tuple[Tensor, Tensor]:
        """Softmax over layers of ``<q_task, U_l y_l>``; returns ``(h, alpha)``."""
        q = T.expand_dims(self.task_query(task), 1)  # (B, 1, d_w)
        logits = T.stack([T.tsum(key(y) * q, axis=-1) for key, y in zip(self.keys, ys)], axis=-1)
        alpha = T.softmax(logits, axis=-1)
        h = None
        for i, (enc, y) in enumerate(zip(self.encoders, ys)):
            term = alpha[..., i:i + 1] * enc(y)
            h = term if h is None else h + term
        return h, alpha

    def __call__(self, x: Tensor, proprio, phase, task, state: MemoryState | None = None):
        state = state or self.init_state(x.shape[0])
        z = self.fusion(x, proprio, phase)
        new = MemoryState()
        context = None
        ys = []
        for i, layer in enumerate(self.layers):
            zt = layer.modulate(z, context)
            r, epi = layer.scan(layer.anchors(zt), state.episodic[i])
            hs, conv, ssm = layer.working_update(layer.recall(r), state.working[i], state.conv[i], state.ssm[i])
            if not np.all(np.isfinite(hs.data)):
                raise DivergenceError(f"working state non-finite in layer {i}")
            ys.append(layer.out_norm(layer.w_o(hs)))
            context = hs
            new.episodic.append(epi)
            new.conv.append(conv.data)
            new.ssm.append(ssm.data)
            new.working.append(hs.data[:, -1])
        h, _ = self.fuse_layers(ys, task)
        return h, new


def pooled(z: Tensor) -> Tensor:
    return T.mean(z, axis=-2)


class FeedForwardMemory(Module):
    """No memory: the state is a perceptron of the current frame's pooled tokens."""

    kind = "no_memory"

    def __init__(self, cfg: MemoryConfig, rng: np.random.Generator):
        self.fusion = TokenFusion(cfg, rng)
        self.encoder = MLP(cfg.width, cfg.work_width, cfg.work_width, rng)

    def init_state(self, batch: int) -> MemoryState:
        return MemoryState()

    def __call__(self, x, proprio, phase, task, state=None):
        return self.encoder(pooled(self.fusion(x, proprio, phase))), MemoryState()


class VanillaSSMMemory(Module):
    """A single selective SSM over pooled tokens, same output width."""

    kind = "vanilla_ssm"

    def __init__(self, cfg: MemoryConfig, rng: np.random.Generator):
        self.fusion = TokenFusion(cfg, rng)
        self.inp = Linear(cfg.width, cfg.work_width, rng)
        self.ssm = SelectiveSSM(cfg.work_width, cfg.working_state, cfg.expand, cfg.conv, rng)
        self.norm = LayerNorm(cfg.work_width)

    def init_state(self, batch: int) -> MemoryState:
        conv, ssm = self.ssm.init_state(batch, self.norm.gamma.dtype)
        return MemoryState(conv=[conv], ssm=[ssm])

    def __call__(self, x, proprio, phase, task, state=None):
        state = state or self.init_state(x.shape[0])
        u = self.inp(pooled(self.fusion(x, proprio, phase)))
        y, conv, ssm = self.ssm(u, state.conv[0], state.ssm[0])
        return self.norm(y), MemoryState(conv=[conv.data], ssm=[ssm.data])


class MemoryBank(Module):
    """Stores every pooled frame feature; retrieves by softmax over cosine similarity."""

    kind = "memory_bank"

    def __init__(self, cfg: MemoryConfig, rng: np.random.Generator):
        self.fusion = TokenFusion(cfg, rng)
        self.wq = Linear(cfg.width, cfg.width, rng, bias=False)
        self.wk = Linear(cfg.width, cfg.width, rng, bias=False)
        self.encoder = MLP(2 * cfg.width, cfg.work_width, cfg.work_width, rng)
        self.temperature = cfg.bank_temperature
        self.width = cfg.width

    def init_state(self, batch: int) -> MemoryState:
        return MemoryState(bank=np.zeros((batch, 0, self.width), dtype=self.wq.weight.dtype))

    @staticmethod
    def _unit(x: Tensor) -> Tensor:
        return x / T.sqrt(T.tsum(x * x, axis=-1, keepdims=True) + 1e-8)

    def __call__(self, x, proprio, phase, task, state=None):
        state = state or self.init_state(x.shape[0])
        p = pooled(self.fusion(x, proprio, phase))  # (B, T, d)
        past = state.bank.shape[1]
        bank = T.concat([T.as_tensor(state.bank, dtype=p.dtype), p], axis=1)
        scores = T.matmul(self._unit(self.wq(p)), T.swapaxes(self._unit(self.wk(bank)))) * (1.0 / self.temperature)
        Tn, K = p.shape[1], bank.shape[1]
        future = np.arange(K)[None, :] > (past + np.arange(Tn))[:, None]
        scores = scores + np.where(future, -1e9, 0.0).astype(p.dtype)
        retrieved = T.matmul(T.softmax(scores, axis=-1), bank)
        h = self.encoder(T.concat([p, retrieved], axis=-1))
        return h, MemoryState(bank=bank.data)


MEMORY_KINDS = {cls.kind: cls for cls in (HierarchicalMemory, FeedForwardMemory, VanillaSSMMemory, MemoryBank)}


def build_memory(kind: str, cfg: MemoryConfig, rng: np.random.Generator) -> Module:
    if kind not in MEMORY_KINDS:
        raise ConfigError(f"unknown memory kind {kind!r}")
    return MEMORY_KINDS[kind](cfg, rng)
