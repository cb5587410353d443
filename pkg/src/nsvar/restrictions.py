"""Sign normalization, traditional sign restrictions and narrative restrictions.

Restrictions refer to variables, shocks and periods by 0-based index. Periods
index the post-lag sample, i.e. rows of the innovation matrix ``U``.

The evaluators are vectorised: any argument named ``Q`` may be a single
``(n, n)`` matrix or a stack ``(..., n, n)``; the returned boolean array has the
leading shape of ``Q``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import ConfigError, NonlinearRestrictionError
from .var_core import ReducedFormParams, VmaCoefficients, response_rows, vma_coefficients

HD_MODES = ("most_important", "overwhelming")
RANK_MODES = ("largest_positive", "largest_magnitude")


@dataclass(frozen=True)
class SignRestriction:
    """``sign * eta_{variable, shock, horizon} >= 0``."""

    variable: int
    shock: int
    horizon: int
    sign: int = 1


@dataclass(frozen=True)
class ShockSign:
    shock: int
    period: int
    sign: int = 1


@dataclass(frozen=True)
class HistDecomp:
    """Shock ``shock`` is the most important / overwhelming contributor to the
    unexpected change in ``variable`` between ``period`` and ``period + span``."""

    variable: int
    shock: int
    period: int
    span: int = 0
    mode: str = "most_important"

    def __post_init__(self):
        if self.mode not in HD_MODES:
            raise ConfigError(f"unknown historical-decomposition mode {self.mode!r}")
        if self.span < 0:
            raise ConfigError("span must be non-negative")


@dataclass(frozen=True)
class ShockRank:
    """Shock realisation in ``period`` is the largest over ``comparison``.

    ``comparison=None`` means every other post-lag period.
    """

    shock: int
    period: int
    mode: str = "largest_positive"
    comparison: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.mode not in RANK_MODES:
            raise ConfigError(f"unknown shock-rank mode {self.mode!r}")
        if self.comparison is not None:
            comp = tuple(int(t) for t in self.comparison)
            if self.period in comp:
                raise ConfigError("shock-rank comparison set must exclude the restricted period")
            object.__setattr__(self, "comparison", comp)

    def comparison_periods(self, n_periods: int) -> np.ndarray:
        if self.comparison is None:
            return np.array([t for t in range(n_periods) if t != self.period], dtype=int)
        return np.array(self.comparison, dtype=int)


NarrativeRestriction = Union[ShockSign, HistDecomp, ShockRank]


@dataclass(frozen=True)
class RestrictionSet:
    traditional: tuple[SignRestriction, ...] = ()
    narrative: tuple[NarrativeRestriction, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "traditional", tuple(self.traditional))
        object.__setattr__(self, "narrative", tuple(self.narrative))

    def __len__(self):
        return len(self.traditional) + len(self.narrative)

    @property
    def max_horizon(self) -> int:
        hs = [r.horizon for r in self.traditional]
        hs += [r.span for r in self.narrative if isinstance(r, HistDecomp)]
        return max(hs, default=0)

    def extended(self, traditional: Iterable[SignRestriction] = (),
                 narrative: Iterable[NarrativeRestriction] = ()) -> "RestrictionSet":
        return RestrictionSet(self.traditional + tuple(traditional), self.narrative + tuple(narrative))

    def narrative_only(self) -> "RestrictionSet":
        return RestrictionSet((), self.narrative)

    def shock_sign_only(self) -> bool:
        return all(isinstance(r, ShockSign) for r in self.narrative)

    def linear_column(self) -> int | None:
        """Column ``j*`` that every restriction constrains linearly, if any.

        Returns ``None`` when the set is empty of column-specific restrictions
        or when some restriction is nonlinear or touches several columns.
        """
        try:
            cols = {_linear_shock(r, self) for r in self.traditional + self.narrative}
        except NonlinearRestrictionError:
            return None
        return cols.pop() if len(cols) == 1 else None

    def is_linear_in(self, j: int) -> bool:
        try:
            return all(_linear_shock(r, self) == j for r in self.traditional + self.narrative)
        except NonlinearRestrictionError:
            return False


def _linear_shock(r, rset: RestrictionSet) -> int:
    if isinstance(r, HistDecomp):
        raise NonlinearRestrictionError(
            "historical-decomposition restrictions constrain every column of Q nonlinearly")
    if isinstance(r, ShockRank) and r.mode == "largest_magnitude":
        if _sign_for(rset, r.shock, r.period) is None:
            raise NonlinearRestrictionError(
                "largest-magnitude shock-rank restriction is linear only together with a "
                "shock-sign restriction on the same shock and period")
    return r.shock


def _sign_for(rset: RestrictionSet, shock: int, period: int) -> int | None:
    for r in rset.narrative:
        if isinstance(r, ShockSign) and r.shock == shock and r.period == period:
            return r.sign
    return None


# --------------------------------------------------------------------------
# narrative indicator core

ShockFn = Callable[[np.ndarray, int], np.ndarray]
WindowFn = Callable[[np.ndarray], np.ndarray]
IrFn = Callable[[int, int], np.ndarray]


def narrative_holds(narrative: Sequence[NarrativeRestriction], n_periods: int,
                    shock_fn: ShockFn, window_fn: WindowFn, ir_fn: IrFn):
    """Evaluate ``D_N`` from accessors for shocks and impulse responses.

    ``shock_fn(periods, j)`` returns ``eps_{j,t}`` for ``t`` in ``periods`` along
    the last axis; ``window_fn(periods)`` returns all shocks, shape ``(..., len, n)``;
    ``ir_fn(l, i)`` returns the row ``(eta_{i,0,l}, ..., eta_{i,n-1,l})``.
    The same core serves observed data and simulated shock draws.
    """
    ok = np.bool_(True)
    for r in narrative:
        if isinstance(r, ShockSign):
            eps = shock_fn(np.array([r.period]), r.shock)[..., 0]
            ok = ok & (r.sign * eps >= 0)
        elif isinstance(r, HistDecomp):
            periods = np.arange(r.period, r.period + r.span + 1)
            win = window_fn(periods)
            H = sum(ir_fn(l, r.variable) * win[..., r.span - l, :] for l in range(r.span + 1))
            absH = np.abs(H)
            own = absH[..., r.shock]
            others = np.delete(absH, r.shock, axis=-1)
            if others.shape[-1] == 0:
                continue
            if r.mode == "most_important":
                ok = ok & (own >= others.max(axis=-1))
            else:
                ok = ok & (own >= others.sum(axis=-1))
        elif isinstance(r, ShockRank):
            comp = r.comparison_periods(n_periods)
            if comp.size == 0:
                continue
            ek = shock_fn(np.array([r.period]), r.shock)
            et = shock_fn(comp, r.shock)
            if r.mode == "largest_positive":
                ok = ok & np.all(ek >= et, axis=-1)
            else:
                ok = ok & np.all(np.abs(ek) >= np.abs(et), axis=-1)
        else:  # pragma: no cover - guarded by the type
            raise ConfigError(f"unknown narrative restriction {r!r}")
    return ok


def referenced_shocks(narrative: Sequence[NarrativeRestriction], n: int,
                      n_periods: int) -> list[tuple[int, int]]:
    """Every ``(period, shock)`` pair that ``D_N`` depends on, in first-use order."""
    seen: dict[tuple[int, int], None] = {}
    for r in narrative:
        if isinstance(r, ShockSign):
            seen.setdefault((r.period, r.shock))
        elif isinstance(r, HistDecomp):
            for t in range(r.period, r.period + r.span + 1):
                for j in range(n):
                    seen.setdefault((t, j))
        elif isinstance(r, ShockRank):
            seen.setdefault((r.period, r.shock))
            for t in r.comparison_periods(n_periods):
                seen.setdefault((int(t), r.shock))
    return list(seen)


def validate_periods(rset: RestrictionSet, n_periods: int, n: int | None = None) -> None:
    def bad(msg):
        raise ConfigError(msg)

    for r in rset.traditional:
        if n is not None and not (0 <= r.variable < n and 0 <= r.shock < n):
            bad(f"traditional restriction {r} references an index outside 0..{n - 1}")
        if r.horizon < 0:
            bad(f"negative horizon in {r}")
    for r in rset.narrative:
        if n is not None:
            idx = [r.shock] + ([r.variable] if isinstance(r, HistDecomp) else [])
            if any(not 0 <= i < n for i in idx):
                bad(f"{r} references a variable/shock outside 0..{n - 1}")
        last = r.period + (r.span if isinstance(r, HistDecomp) else 0)
        if r.period < 0 or last >= n_periods:
            bad(f"{r} references a period outside the post-lag sample 0..{n_periods - 1}")
        if isinstance(r, ShockRank) and r.comparison is not None:
            if any(not 0 <= t < n_periods for t in r.comparison):
                bad(f"{r} comparison set leaves the post-lag sample")


# --------------------------------------------------------------------------
# evaluation against observed innovations

class RestrictionEvaluator:
    """Evaluates restrictions for fixed ``(phi, U)`` over batches of ``Q``."""

    def __init__(self, params: ReducedFormParams, U, rset: RestrictionSet,
                 vma: VmaCoefficients | None = None):
        U = np.asarray(U, dtype=float)
        if U.ndim != 2 or U.shape[1] != params.n:
            raise ConfigError(f"innovations must have shape (T, {params.n})")
        validate_periods(rset, U.shape[0], params.n)
        self.params = params
        self.rset = rset
        self.U = U
        self.W = U @ params.Sigma_tr_inv.T                 # rows Sigma_tr^{-1} u_t
        if vma is None or vma.horizons < rset.max_horizon:
            vma = vma_coefficients(params, rset.max_horizon)
        self.rows = response_rows(params, vma)

    @property
    def n_periods(self) -> int:
        return self.U.shape[0]

    def normalization(self, Q) -> np.ndarray:
        Q = np.asarray(Q, dtype=float)
        d = np.einsum("...ij,ij->...j", Q, self.params.Sigma_tr_inv)
        return np.all(d >= 0, axis=-1)

    def traditional(self, Q) -> np.ndarray:
        Q = np.asarray(Q, dtype=float)
        ok = np.ones(Q.shape[:-2], dtype=bool)
        for r in self.rset.traditional:
            val = Q[..., :, r.shock] @ self.rows[r.horizon, r.variable]
            ok &= r.sign * val >= 0
        return ok

    def shocks(self, Q, periods) -> np.ndarray:
        """Structural shocks ``(..., len(periods), n)`` for the given periods."""
        return np.einsum("ti,...ij->...tj", self.W[np.asarray(periods)], np.asarray(Q, dtype=float))

    def narrative(self, Q) -> np.ndarray:
        Q = np.asarray(Q, dtype=float)
        W, rows = self.W, self.rows

        def shock_fn(periods, j):
            return Q[..., :, j] @ W[periods].T

        def window_fn(periods):
            return self.shocks(Q, periods)

        def ir_fn(l, i):
            return rows[l, i] @ Q

        out = narrative_holds(self.rset.narrative, self.n_periods, shock_fn, window_fn, ir_fn)
        return np.broadcast_to(out, Q.shape[:-2]).copy()

    def accepts(self, Q, check_normalization: bool = True) -> np.ndarray:
        ok = self.traditional(Q) & self.narrative(Q)
        if check_normalization:
            ok &= self.normalization(Q)
        return ok


def check_sign_normalization(params: ReducedFormParams, Q) -> bool | np.ndarray:
    d = np.einsum("...ij,ij->...j", np.asarray(Q, dtype=float), params.Sigma_tr_inv)
    out = np.all(d >= 0, axis=-1)
    return bool(out) if out.ndim == 0 else out


def evaluate_traditional(params: ReducedFormParams, Q, rset: RestrictionSet):
    vma = vma_coefficients(params, rset.max_horizon)
    rows = response_rows(params, vma)
    Q = np.asarray(Q, dtype=float)
    ok = np.ones(Q.shape[:-2], dtype=bool)
    for r in rset.traditional:
        ok &= r.sign * (Q[..., :, r.shock] @ rows[r.horizon, r.variable]) >= 0
    return bool(ok) if ok.ndim == 0 else ok


def evaluate_narrative(params: ReducedFormParams, Q, U, rset: RestrictionSet):
    """``D_N`` for the observed innovations ``U``."""
    out = RestrictionEvaluator(params, U, rset.narrative_only()).narrative(Q)
    return bool(out) if out.ndim == 0 else out


def linear_coefficient_matrix(params: ReducedFormParams, U, rset: RestrictionSet,
                              column: int) -> np.ndarray:
    """Rows ``Z`` with ``Z q >= 0`` equivalent to every restriction on ``q_column``.

    The last row is the sign normalization ``(Sigma_tr^{-1} e_j)' q >= 0``.
    """
    U = np.asarray(U, dtype=float)
    validate_periods(rset, U.shape[0], params.n)
    W = U @ params.Sigma_tr_inv.T
    rows_ir = response_rows(params, vma_coefficients(params, rset.max_horizon))
    out: list[np.ndarray] = []
    for r in rset.narrative:
        if _linear_shock(r, rset) != column:
            raise NonlinearRestrictionError(
                f"{r} constrains column {r.shock}, not the target column {column}")
        if isinstance(r, ShockSign):
            out.append(r.sign * W[r.period])
        else:  # ShockRank
            comp = r.comparison_periods(U.shape[0])
            diff = W[r.period] - W[comp]
            if r.mode == "largest_positive":
                out.extend(diff)
            else:
                s = _sign_for(rset, r.shock, r.period)
                summ = W[r.period] + W[comp]
                for a, b in zip(diff, summ):
                    out.extend([s * a, s * b])
    for r in rset.traditional:
        if r.shock != column:
            raise NonlinearRestrictionError(
                f"{r} constrains column {r.shock}, not the target column {column}")
        out.append(r.sign * rows_ir[r.horizon, r.variable])
    out.append(params.Sigma_tr_inv[:, column].copy())
    return np.vstack(out)


# --------------------------------------------------------------------------
# configuration parsing

_SIGNS = {"+": 1, "-": -1, "positive": 1, "negative": -1, 1: 1, -1: -1}


def _load_mapping(config) -> Mapping:
    if isinstance(config, Mapping):
        return config
    try:
        import tomllib
    except ModuleNotFoundError:  # python < 3.11
        import tomli as tomllib
    try:
        return tomllib.loads(str(config))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"restriction config is not valid TOML: {exc}") from exc


@dataclass
class _Resolver:
    variables: Sequence[str]
    shocks: Sequence[str] = ()
    dates: Sequence[str] | None = None
    lags: int = 0
    n_obs: int | None = None
    where: str = field(default="")

    def variable(self, value, key="variable") -> int:
        if isinstance(value, str):
            if value in self.variables:
                return list(self.variables).index(value)
            raise ConfigError(f"{self.where}: unknown {key} {value!r} (known: {list(self.variables)})")
        return self._index(value, key, len(self.variables))

    def shock(self, value, key="shock") -> int:
        if isinstance(value, str):
            if value in self.shocks:
                return list(self.shocks).index(value)
            if value in self.variables:
                return list(self.variables).index(value)
            raise ConfigError(f"{self.where}: unknown {key} {value!r}")
        return self._index(value, key, len(self.variables))

    def _index(self, value, key, n) -> int:
        if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value < n:
            raise ConfigError(f"{self.where}: {key} must be a name or an index in 0..{n - 1}, got {value!r}")
        return value

    def period(self, value, key="period") -> int:
        if isinstance(value, str):
            row = self._date_row(value, key)
        elif isinstance(value, int) and not isinstance(value, bool):
            row = value
        else:
            raise ConfigError(f"{self.where}: {key} must be a date string or a row index, got {value!r}")
        k = row - self.lags
        if k < 0 or (self.n_obs is not None and row >= self.n_obs):
            raise ConfigError(f"{self.where}: {key} {value!r} falls outside the post-lag sample")
        return k

    def _date_row(self, value: str, key: str) -> int:
        if self.dates is None:
            raise ConfigError(f"{self.where}: {key} {value!r} given as a date but the data has no date column")
        dates = [str(d) for d in self.dates]
        if value in dates:
            return dates.index(value)
        hits = [i for i, d in enumerate(dates) if d.startswith(value)]
        if len(hits) != 1:
            raise ConfigError(f"{self.where}: {key} {value!r} matches {len(hits)} dates")
        return hits[0]


def _check_keys(entry: Mapping, allowed: set[str], where: str) -> None:
    extra = set(entry) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {sorted(extra)}")


def _int(entry, key, where, default=None):
    if key not in entry:
        if default is None:
            raise ConfigError(f"{where}: missing key {key!r}")
        return default
    v = entry[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}: {key} must be an integer, got {v!r}")
    return v


def _sign(entry, where, default=None) -> int:
    if "sign" not in entry:
        if default is None:
            raise ConfigError(f"{where}: missing key 'sign'")
        return default
    v = entry["sign"]
    if v not in _SIGNS or isinstance(v, bool):
        raise ConfigError(f"{where}: sign must be '+' or '-', got {v!r}")
    return _SIGNS[v]


def parse_restrictions(config, variables: Sequence[str], *, shocks: Sequence[str] | None = None,
                       dates: Sequence[str] | None = None, lags: int = 0,
                       n_obs: int | None = None, ignore: Iterable[str] = ("model",)) -> RestrictionSet:
    """Build a :class:`RestrictionSet` from TOML text or an equivalent mapping.

    Periods are data-row indices or date strings (unique prefix match against
    ``dates``); they are converted to post-lag indices by subtracting ``lags``.
    Top-level ``shocks = [...]`` names the columns of Q; otherwise shocks are
    referred to by the variable of the equation they are normalised on, or by index.
    """
    cfg = _load_mapping(config)
    _check_keys(cfg, {"traditional", "narrative", "shocks", *ignore}, "restriction config")
    shock_names = list(cfg.get("shocks", shocks or ()))
    res = _Resolver(list(variables), shock_names, dates, lags, n_obs)

    traditional: list[SignRestriction] = []
    for pos, entry in enumerate(cfg.get("traditional", [])):
        res.where = where = f"traditional[{pos}]"
        _check_keys(entry, {"variable", "shock", "horizons", "horizon", "sign"}, where)
        i = res.variable(entry.get("variable"))
        j = res.shock(entry.get("shock"))
        sign = _sign(entry, where)
        if "horizons" in entry:
            hz = entry["horizons"]
            if (not isinstance(hz, list) or len(hz) != 2
                    or any(isinstance(h, bool) or not isinstance(h, int) for h in hz)):
                raise ConfigError(f"{where}: horizons must be [first, last] integers, got {hz!r}")
            if hz[0] < 0 or hz[1] < hz[0]:
                raise ConfigError(f"{where}: horizons range {hz!r} is empty or negative")
            horizons = range(hz[0], hz[1] + 1)
        else:
            horizons = [_int(entry, "horizon", where)]
        traditional.extend(SignRestriction(i, j, h, sign) for h in horizons)

    narrative: list[NarrativeRestriction] = []
    for pos, entry in enumerate(cfg.get("narrative", [])):
        res.where = where = f"narrative[{pos}]"
        kind = entry.get("kind")
        if kind == "shock_sign":
            _check_keys(entry, {"kind", "shock", "period", "sign"}, where)
            narrative.append(ShockSign(res.shock(entry.get("shock")), res.period(entry.get("period")),
                                       _sign(entry, where)))
        elif kind == "hist_decomp":
            _check_keys(entry, {"kind", "variable", "shock", "period", "span", "mode"}, where)
            mode = entry.get("mode", "most_important")
            if mode not in HD_MODES:
                raise ConfigError(f"{where}: mode must be one of {HD_MODES}, got {mode!r}")
            span = _int(entry, "span", where, default=0)
            k = res.period(entry.get("period"))
            if n_obs is not None and k + span + lags >= n_obs:
                raise ConfigError(f"{where}: span runs past the end of the sample")
            narrative.append(HistDecomp(res.variable(entry.get("variable")), res.shock(entry.get("shock")),
                                        k, span, mode))
        elif kind == "shock_rank":
            _check_keys(entry, {"kind", "shock", "period", "mode", "comparison"}, where)
            mode = entry.get("mode", "largest_positive")
            if mode not in RANK_MODES:
                raise ConfigError(f"{where}: mode must be one of {RANK_MODES}, got {mode!r}")
            k = res.period(entry.get("period"))
            comp = entry.get("comparison", "all")
            if comp == "all":
                comparison = None
            elif isinstance(comp, list):
                comparison = tuple(res.period(t, "comparison") for t in comp)
            else:
                raise ConfigError(f"{where}: comparison must be 'all' or a list of periods")
            narrative.append(ShockRank(res.shock(entry.get("shock")), k, mode, comparison))
        else:
            raise ConfigError(f"{where}: unknown kind {kind!r} "
                              "(expected shock_sign, hist_decomp or shock_rank)")
    return RestrictionSet(tuple(traditional), tuple(narrative))


def exact_narrative_probability(rset: RestrictionSet) -> float | None:
    """Closed-form ``r(phi, Q)`` when it does not depend on ``(phi, Q)``.

    Shock-sign restrictions on distinct ``(shock, period)`` pairs give
    ``(1/2)^s``; other configurations return ``None``.
    """
    if not rset.shock_sign_only():
        return None
    pairs = {(r.shock, r.period) for r in rset.narrative}
    if len(pairs) != len(rset.narrative):
        return None
    return math.ldexp(1.0, -len(pairs))
