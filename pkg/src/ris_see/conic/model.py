"""A small complex-valued conic modeling layer.

Expressions are affine maps of the decision vector, stored densely per
variable. Programs maximize a real affine objective subject to equality,
elementwise inequality, second-order cone and Hermitian LMI constraints.
Complex data only becomes real at compile time.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

COMPLEX_TOL = 1e-13


class Affine:
    """``const + sum_v coef_v . x_v`` with ``coef_v`` of shape (size_v,) + shape."""

    __array_ufunc__ = None  # ndarray (op) Affine defers to the reflected method

    def __init__(self, const, terms: dict | None = None):
        self.const = np.asarray(const)
        self.terms = dict(terms or {})

    # basic properties ---------------------------------------------------
    @property
    def shape(self):
        return self.const.shape

    @property
    def ndim(self):
        return self.const.ndim

    @property
    def size(self):
        return self.const.size

    def is_constant(self):
        return not self.terms

    def __repr__(self):
        return f"Affine(shape={self.shape}, vars={sorted(self.terms)})"

    # arithmetic ---------------------------------------------------------
    @staticmethod
    def lift(other) -> "Affine":
        return other if isinstance(other, Affine) else Affine(np.asarray(other))

    def _map(self, fn) -> "Affine":
        return Affine(fn(self.const, False), {v: fn(c, True) for v, c in self.terms.items()})

    def __add__(self, other):
        other = Affine.lift(other)
        const = self.const + other.const
        shape = const.shape
        terms = {}
        for v in set(self.terms) | set(other.terms):
            a = self.terms.get(v)
            b = other.terms.get(v)
            if a is None:
                terms[v] = _broadcast_coef(b, shape)
            elif b is None:
                terms[v] = _broadcast_coef(a, shape)
            else:
                terms[v] = _broadcast_coef(a, shape) + _broadcast_coef(b, shape)
        return Affine(const, terms)

    __radd__ = __add__

    def __neg__(self):
        return self._map(lambda a, _: -a)

    def __sub__(self, other):
        return self + (-Affine.lift(other))

    def __rsub__(self, other):
        return Affine.lift(other) + (-self)

    def __mul__(self, other):
        if isinstance(other, Affine):
            raise TypeError("product of two affine expressions is not affine")
        other = np.asarray(other)
        extra = max(other.ndim - self.ndim, 0)

        def fn(a, is_term):
            if is_term and extra:
                a = a.reshape(a.shape[:1] + (1,) * extra + a.shape[1:])
            return a * other

        return self._map(fn)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * (1.0 / np.asarray(other))

    def __matmul__(self, C):
        C = np.asarray(C)
        return self._map(lambda a, _: a @ C)

    def __rmatmul__(self, C):
        C = np.asarray(C)
        if self.ndim == 1:
            return self._map(lambda a, _: a @ C.T)
        return self._map(lambda a, _: np.matmul(C, a))

    # structural ---------------------------------------------------------
    def conj(self):
        return self._map(lambda a, _: a.conj())

    @property
    def real(self):
        return self._map(lambda a, _: np.real(a))

    @property
    def imag(self):
        return self._map(lambda a, _: np.imag(a))

    @property
    def T(self):
        return self._map(lambda a, v: np.swapaxes(a, -1, -2))

    @property
    def H(self):
        return self.T.conj()

    def trace(self):
        return self._map(lambda a, v: np.trace(a, axis1=-2, axis2=-1))

    def diag(self):
        return self._map(lambda a, v: np.diagonal(a, axis1=-2, axis2=-1))

    def sum(self):
        return self._map(lambda a, v: a.reshape((a.shape[0], -1) if v else (-1,)).sum(-1))

    def reshape(self, *shape):
        shape = shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape
        return self._map(lambda a, v: a.reshape((a.shape[0],) + tuple(shape) if v else shape))

    def vec(self):
        """Column-major vectorization of a matrix expression."""
        return self.T.reshape(self.size)

    def __getitem__(self, key):
        key = key if isinstance(key, tuple) else (key,)
        return self._map(lambda a, v: a[(slice(None),) + key] if v else a[key])

    def value(self, values: dict) -> np.ndarray:
        out = np.array(self.const, dtype=np.result_type(self.const, float))
        for v, c in self.terms.items():
            out = out + np.tensordot(values[v], c, axes=(0, 0))
        return out

    def coefficient_rows(self, offsets: dict, nx: int) -> tuple[np.ndarray, np.ndarray]:
        """Dense (size, nx) coefficient matrix and flattened constant."""
        rows = np.zeros((self.size, nx), dtype=np.result_type(self.const, *[c.dtype for c in self.terms.values()], float))
        for v, c in self.terms.items():
            off = offsets[v]
            rows[:, off:off + c.shape[0]] = c.reshape(c.shape[0], -1).T
        return rows, self.const.reshape(-1)


def _broadcast_coef(c: np.ndarray, shape: tuple) -> np.ndarray:
    """Broadcast a (n,) + s coefficient to (n,) + shape (numpy rules on s)."""
    if c.shape[1:] == tuple(shape):
        return c
    s = c.shape[1:]
    c = c.reshape((c.shape[0],) + (1,) * (len(shape) - len(s)) + s)
    return np.broadcast_to(c, (c.shape[0],) + tuple(shape))


def _as_block(x) -> Affine:
    a = Affine.lift(x)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(a.size, 1)
    return a


def bmat(blocks) -> Affine:
    """Block matrix from nested lists of expressions, arrays or scalars."""
    blocks = [[_as_block(b) for b in row] for row in blocks]
    varsizes = {}
    for row in blocks:
        for b in row:
            for v, c in b.terms.items():
                varsizes[v] = c.shape[0]
    const = np.block([[b.const for b in row] for row in blocks])
    terms = {}
    for v, n in varsizes.items():
        grid = []
        for row in blocks:
            grid.append([b.terms[v] if v in b.terms else np.zeros((n,) + b.shape) for b in row])
        terms[v] = np.block(grid)
    return Affine(const, terms)


def concat(items: Iterable) -> Affine:
    """Concatenate 0-d or 1-d expressions into a vector."""
    items = [Affine.lift(x) for x in items]
    items = [x.reshape(1) if x.ndim == 0 else x for x in items]
    varsizes = {}
    for x in items:
        for v, c in x.terms.items():
            varsizes[v] = c.shape[0]
    const = np.concatenate([x.const for x in items])
    terms = {}
    for v, n in varsizes.items():
        terms[v] = np.concatenate(
            [x.terms[v] if v in x.terms else np.zeros((n,) + x.shape) for x in items], axis=1
        )
    return Affine(const, terms)


def hermitian_basis(n: int) -> np.ndarray:
    """Real-parameter basis (n*n, n, n) of n x n Hermitian matrices."""
    basis = []
    for i in range(n):
        e = np.zeros((n, n), complex)
        e[i, i] = 1.0
        basis.append(e)
    iu = [(i, j) for i in range(n) for j in range(i + 1, n)]
    for i, j in iu:
        e = np.zeros((n, n), complex)
        e[i, j] = e[j, i] = 1.0
        basis.append(e)
    for i, j in iu:
        e = np.zeros((n, n), complex)
        e[i, j] = 1j
        e[j, i] = -1j
        basis.append(e)
    return np.array(basis).reshape(n * n, n, n)


def hermitian_params(X: np.ndarray) -> np.ndarray:
    """Inverse of the basis expansion."""
    n = X.shape[0]
    iu = np.triu_indices(n, 1)
    return np.concatenate([np.real(np.diag(X)), np.real(X[iu]), np.imag(X[iu])])


@dataclass
class Variable:
    name: str
    kind: str  # "real" or "hermitian"
    shape: tuple

    @property
    def size(self) -> int:
        if self.kind == "hermitian":
            return self.shape[0] ** 2
        return int(np.prod(self.shape, dtype=int))

    def expr(self) -> Affine:
        if self.kind == "hermitian":
            n = self.shape[0]
            return Affine(np.zeros((n, n), complex), {self.name: hermitian_basis(n)})
        n = self.size
        return Affine(np.zeros(self.shape), {self.name: np.eye(n).reshape((n,) + tuple(self.shape))})

    def unpack(self, x: np.ndarray):
        if self.kind == "hermitian":
            return np.tensordot(x, hermitian_basis(self.shape[0]), axes=(0, 0))
        return x.reshape(self.shape)


@dataclass
class Constraint:
    """One constraint. ``exprs`` holds one expression (two for SOC: t, u).

    kinds: ``eq`` (expr == 0), ``ge`` (expr >= 0 elementwise), ``soc``
    (||u|| <= t), ``lmi`` (Hermitian expr PSD).
    """

    kind: str
    exprs: tuple
    family: str = ""
    index: tuple = ()
    census: str | None = None


CONSTRAINT_KINDS = ("eq", "ge", "soc", "lmi")


@dataclass
class ConicProgram:
    """maximize objective subject to constraints."""

    variables: dict = field(default_factory=dict)
    constraints: list = field(default_factory=list)
    objective: Affine | None = None

    # declaration --------------------------------------------------------
    def scalar(self, name: str, shape=(), lb: float | None = None) -> Affine:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        self._declare(Variable(name, "real", shape))
        x = self.variables[name].expr()
        if lb is not None:
            self.ge(x - lb, family=f"bound:{name}")
        return x

    def hermitian(self, name: str, n: int, psd: bool = True, family: str = "", index=(), census="lmi") -> Affine:
        self._declare(Variable(name, "hermitian", (n, n)))
        X = self.variables[name].expr()
        if psd:
            self.lmi(X, family=family or f"psd:{name}", index=index, census=census)
        return X

    def _declare(self, var: Variable):
        if var.name in self.variables:
            raise ValueError(f"variable {var.name!r} declared twice")
        self.variables[var.name] = var

    def maximize(self, expr):
        expr = Affine.lift(expr)
        if expr.size != 1:
            raise ValueError("objective must be scalar")
        self.objective = expr.reshape(())

    # constraints --------------------------------------------------------
    def _add(self, kind, exprs, family, index, census):
        for e in exprs:
            for v in e.terms:
                if v not in self.variables:
                    raise ValueError(f"constraint references undeclared variable {v!r}")
        self.constraints.append(Constraint(kind, tuple(exprs), family, tuple(index), census))

    def eq(self, expr, family="", index=(), census=None):
        self._add("eq", [Affine.lift(expr)], family, index, census)

    def ge(self, expr, family="", index=(), census=None):
        self._add("ge", [Affine.lift(expr)], family, index, census)

    def soc(self, t, u, family="", index=(), census=None):
        t = Affine.lift(t).reshape(())
        u = Affine.lift(u)
        u = u.reshape(u.size)
        self._add("soc", [t, u], family, index, census)

    def lmi(self, M, family="", index=(), census="lmi"):
        M = Affine.lift(M)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError(f"LMI block must be square, got shape {M.shape}")
        self._add("lmi", [M], family, index, census)

    # bookkeeping --------------------------------------------------------
    def offsets(self):
        off, out = 0, {}
        for name, var in self.variables.items():
            out[name] = off
            off += var.size
        return out, off

    def census(self) -> dict:
        counts = {"lmi": 0, "soc": 0}
        for c in self.constraints:
            if c.census in counts:
                counts[c.census] += 1
        return counts

    def families(self) -> dict:
        out: dict = {}
        for c in self.constraints:
            out[c.family] = out.get(c.family, 0) + 1
        return out

    def unpack(self, x: np.ndarray) -> dict:
        offsets, _ = self.offsets()
        return {
            name: var.unpack(x[offsets[name]:offsets[name] + var.size])
            for name, var in self.variables.items()
        }

    def pack(self, values: dict) -> dict:
        """Variable values -> raw parameter vectors (for evaluating expressions)."""
        out = {}
        for name, var in self.variables.items():
            val = np.asarray(values[name])
            out[name] = hermitian_params(val) if var.kind == "hermitian" else val.reshape(-1).astype(float)
        return out

    def violations(self, values: dict) -> list:
        """Per-constraint violation amounts at the given (unpacked) values."""
        raw = self.pack(values)
        out = []
        for c in self.constraints:
            vals = [e.value(raw) for e in c.exprs]
            if c.kind == "eq":
                v = float(np.max(np.abs(vals[0]))) if vals[0].size else 0.0
            elif c.kind == "ge":
                v = float(max(0.0, -np.min(np.real(vals[0])))) if vals[0].size else 0.0
            elif c.kind == "soc":
                v = max(0.0, float(np.linalg.norm(vals[1]) - np.real(vals[0])))
            else:
                M = vals[0]
                M = (M + M.conj().T) / 2
                v = max(0.0, float(-np.linalg.eigvalsh(M)[0]))
            out.append(v)
        return out

    # serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "format": "ris_see.conic/1",
            "variables": [
                {"name": v.name, "kind": v.kind, "shape": list(v.shape)} for v in self.variables.values()
            ],
            "objective": _enc_affine(self.objective) if self.objective is not None else None,
            "constraints": [
                {
                    "kind": c.kind,
                    "family": c.family,
                    "index": list(c.index),
                    "census": c.census,
                    "exprs": [_enc_affine(e) for e in c.exprs],
                }
                for c in self.constraints
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "ConicProgram":
        if doc.get("format") != "ris_see.conic/1":
            raise ValueError("unknown program format")
        prog = cls()
        for v in doc["variables"]:
            prog._declare(Variable(v["name"], v["kind"], tuple(v["shape"])))
        if doc["objective"] is not None:
            prog.objective = _dec_affine(doc["objective"])
        for c in doc["constraints"]:
            if c["kind"] not in CONSTRAINT_KINDS:
                raise ValueError(f"unknown constraint kind {c['kind']!r}")
            prog._add(c["kind"], [_dec_affine(e) for e in c["exprs"]], c["family"], tuple(c["index"]), c["census"])
        return prog

    @classmethod
    def loads(cls, text: str) -> "ConicProgram":
        return cls.from_dict(json.loads(text))


def _enc_array(a: np.ndarray):
    a = np.asarray(a)
    if np.iscomplexobj(a):
        return {"shape": list(a.shape), "re": a.real.ravel().tolist(), "im": a.imag.ravel().tolist()}
    return {"shape": list(a.shape), "re": a.astype(float).ravel().tolist()}


def _dec_array(obj) -> np.ndarray:
    re = np.asarray(obj["re"], float)
    if "im" in obj:
        return (re + 1j * np.asarray(obj["im"], float)).reshape(obj["shape"])
    return re.reshape(obj["shape"])


def _enc_affine(e: Affine):
    return {"const": _enc_array(e.const), "terms": {v: _enc_array(c) for v, c in e.terms.items()}}


def _dec_affine(obj) -> Affine:
    return Affine(_dec_array(obj["const"]), {v: _dec_array(c) for v, c in obj["terms"].items()})


def programs_equal(a: ConicProgram, b: ConicProgram) -> bool:
    """Structural equality, used by the serialization round-trip tests."""
    if list(a.variables) != list(b.variables):
        return False
    if any(a.variables[n] != b.variables[n] for n in a.variables):
        return False
    if len(a.constraints) != len(b.constraints):
        return False

    def same(x: Affine, y: Affine):
        return (
            x.shape == y.shape
            and np.array_equal(x.const, y.const)
            and set(x.terms) == set(y.terms)
            and all(np.array_equal(x.terms[v], y.terms[v]) for v in x.terms)
        )

    if (a.objective is None) != (b.objective is None):
        return False
    if a.objective is not None and not same(a.objective, b.objective):
        return False
    for c, d in zip(a.constraints, b.constraints):
        if (c.kind, c.family, c.index, c.census) != (d.kind, d.family, d.index, d.census):
            return False
        if len(c.exprs) != len(d.exprs) or not all(same(x, y) for x, y in zip(c.exprs, d.exprs)):
            return False
    return True


# ---------------------------------------------------------------------------
# compilation to real standard form


@dataclass
class RealConeForm:
    """minimize c'x s.t. A x = b, h - G x in (R+^l x Q^q x S^s)."""

    c: np.ndarray
    G: np.ndarray
    h: np.ndarray
    A: np.ndarray
    b: np.ndarray
    dims: dict
    c0: float  # objective constant (of the maximization)


def _is_real(rows, const) -> bool:
    scale = max(1.0, float(np.max(np.abs(rows), initial=0.0)), float(np.max(np.abs(const), initial=0.0)))
    return not np.iscomplexobj(rows) and not np.iscomplexobj(const) or (
        np.max(np.abs(np.imag(rows)), initial=0.0) <= COMPLEX_TOL * scale
        and np.max(np.abs(np.imag(const)), initial=0.0) <= COMPLEX_TOL * scale
    )


def embed_hermitian(Mr: np.ndarray, Mi: np.ndarray) -> np.ndarray:
    """Real symmetric embedding [[Re, -Im], [Im, Re]] of a Hermitian matrix."""
    return np.block([[Mr, -Mi], [Mi, Mr]])


def compile_program(prog: ConicProgram) -> RealConeForm:
    offsets, nx = prog.offsets()
    lin_G, lin_h, soc_G, soc_h, sdp_G, sdp_h = [], [], [], [], [], []
    q_dims, s_dims = [], []
    eq_A, eq_b = [], []

    for con in prog.constraints:
        if con.kind == "eq":
            rows, const = con.exprs[0].coefficient_rows(offsets, nx)
            if np.iscomplexobj(rows) or np.iscomplexobj(const):
                rows = np.concatenate([np.real(rows), np.imag(rows)])
                const = np.concatenate([np.real(const), np.imag(const)])
            keep = (np.abs(rows).max(axis=1) > 0) | (np.abs(const) > 0)
            eq_A.append(rows[keep])
            eq_b.append(-const[keep])
        elif con.kind == "ge":
            rows, const = con.exprs[0].coefficient_rows(offsets, nx)
            lin_G.append(-np.real(rows))
            lin_h.append(np.real(const))
        elif con.kind == "soc":
            t_rows, t_c = con.exprs[0].coefficient_rows(offsets, nx)
            u_rows, u_c = con.exprs[1].coefficient_rows(offsets, nx)
            if not _is_real(u_rows, u_c):
                u_rows = np.concatenate([np.real(u_rows), np.imag(u_rows)])
                u_c = np.concatenate([np.real(u_c), np.imag(u_c)])
            rows = np.concatenate([np.real(t_rows), np.real(u_rows)])
            const = np.concatenate([np.real(t_c), np.real(u_c)])
            soc_G.append(-rows)
            soc_h.append(const)
            q_dims.append(rows.shape[0])
        else:
            M = con.exprs[0]
            n = M.shape[0]
            rows, const = M.coefficient_rows(offsets, nx)
            if _is_real(rows, const):
                R = np.real(rows).reshape(n, n, nx)
                C = np.real(const).reshape(n, n)
                size = n
            else:
                Rc = rows.reshape(n, n, nx)
                Cc = const.reshape(n, n)
                R = _embed_rows(Rc)
                C = embed_hermitian(np.real(Cc), np.imag(Cc))
                size = 2 * n
            # symmetrize, then column-major vectorization
            R = 0.5 * (R + np.swapaxes(R, 0, 1))
            C = 0.5 * (C + C.T)
            sdp_G.append(-R.transpose(1, 0, 2).reshape(size * size, nx))
            sdp_h.append(C.T.reshape(-1))
            s_dims.append(size)

    def stack(parts, width):
        return np.concatenate(parts) if parts else np.zeros((0, width))

    G = np.concatenate([stack(lin_G, nx), stack(soc_G, nx), stack(sdp_G, nx)])
    h = np.concatenate([stack(lin_h, 0).reshape(-1) if lin_h else np.zeros(0),
                        np.concatenate(soc_h) if soc_h else np.zeros(0),
                        np.concatenate(sdp_h) if sdp_h else np.zeros(0)])
    A = stack(eq_A, nx)
    b = np.concatenate(eq_b) if eq_b else np.zeros(0)
    obj_rows, obj_c = prog.objective.coefficient_rows(offsets, nx)
    c = -np.real(obj_rows[0])
    dims = {"l": int(sum(g.shape[0] for g in lin_G)), "q": q_dims, "s": s_dims}
    return RealConeForm(c, G, h, A, b, dims, float(np.real(obj_c[0])))


def _embed_rows(Rc: np.ndarray) -> np.ndarray:
    """Embed an (n, n, nx) stack of complex coefficient matrices."""
    re, im = np.real(Rc), np.imag(Rc)
    top = np.concatenate([re, -im], axis=1)
    bot = np.concatenate([im, re], axis=1)
    return np.concatenate([top, bot], axis=0)
