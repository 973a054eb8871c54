"""Branch-free exp/ln/pow approximations via IEEE-754 bit synthesis.

exp(x) is assembled by writing exponent and mantissa bits of 2^(x*log2 e)
directly into an int64 and reinterpreting it as a double; the fractional
part 2^yf is corrected by a degree-7 polynomial fitted with least squares
on 1000 equidistant points in [0, 1).  ln(x) runs the decomposition in
reverse with a degree-11 correction for log2(1+m).  pow(a, x) is
exp(x*ln(a)) for a > 0.

All three are total on finite inputs, NaN-propagating, and free of data-
dependent branches, so they map one-to-one onto SIMD lanes.  The compiled
scalar cores in this module are the single source of truth: the public
array API and the batch kernels both call them, which makes batch lanes
bit-identical to scalar evaluation by construction.
"""

from dataclasses import dataclass, field

import numpy as np
from numba import njit, types
from numba.extending import intrinsic

__all__ = [
    "PolyCorrection",
    "FastMathConstants",
    "CONSTANTS",
    "EXP_CORRECTION",
    "LN_CORRECTION",
    "estrin_eval",
    "horner_eval",
    "fast_exp",
    "fast_ln",
    "fast_pow",
]


# --------------------------------------------------------------------------
# coefficient tables and constants
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PolyCorrection:
    """Correction polynomial sum_i c_i y^i on y in [0, 1)."""

    coefficients: tuple

    @property
    def degree(self):
        return len(self.coefficients) - 1


# K_exp(yf) ~ 1 + yf - 2^yf, degree 7
EXP_CORRECTION = PolyCorrection((
    1.213071811889e-10,
    3.068528102657e-1,
    -2.40226342399359e-1,
    -5.55053313414954e-2,
    -9.6135243288483e-3,
    -1.34288475963084e-3,
    -1.43131744483589e-4,
    -2.1595656126349e-5,
))

# K_ln(m) ~ log2(1+m), degree 11
LN_CORRECTION = PolyCorrection((
    1.84775672096293e-10,
    1.44269504084132,
    -0.721347520143005,
    0.480898345526187,
    -0.360675000332004,
    0.288048466919235,
    -0.235306287368882,
    0.183102904829435,
    -0.1209962689793,
    0.0591503811592113,
    -0.0181149492489989,
    0.00254488675605743,
))


@dataclass(frozen=True)
class FastMathConstants:
    """64-bit IEEE-754 layout constants plus the admissible exp argument range."""

    bias: int = 1023
    mantissa_scale: float = 2.0**52
    log2_e: float = 1.4426950408889634
    ln_2: float = 0.6931471805599453
    exp_arg_min: float = -708.0
    exp_arg_max: float = 709.0
    saturation: float = field(default=float(np.finfo(np.float64).max))


CONSTANTS = FastMathConstants()

_A = EXP_CORRECTION.coefficients
_B = LN_CORRECTION.coefficients
_LOG2E = CONSTANTS.log2_e
_LN2 = CONSTANTS.ln_2
_SCALE = CONSTANTS.mantissa_scale
_INV_SCALE = 1.0 / CONSTANTS.mantissa_scale
_BIAS = float(CONSTANTS.bias)
_ARG_MIN = CONSTANTS.exp_arg_min
_ARG_MAX = CONSTANTS.exp_arg_max
_DBL_MAX = CONSTANTS.saturation
_DBL_TINY = float(np.finfo(np.float64).tiny)
_MANT_MASK = 0x000FFFFFFFFFFFFF


# --------------------------------------------------------------------------
# LLVM intrinsics: bit reinterpretation and fused multiply-add
# --------------------------------------------------------------------------

@intrinsic
def _i2f(typingctx, i):
    """Reinterpret int64 bits as float64."""
    sig = types.float64(types.int64)

    def codegen(context, builder, signature, args):
        return builder.bitcast(args[0], context.get_value_type(types.float64))

    return sig, codegen


@intrinsic
def _f2i(typingctx, f):
    """Reinterpret float64 bits as int64."""
    sig = types.int64(types.float64)

    def codegen(context, builder, signature, args):
        return builder.bitcast(args[0], context.get_value_type(types.int64))

    return sig, codegen


@intrinsic
def _fma(typingctx, a, b, c):
    """a*b + c with a single rounding (llvm.fma, lowered to VFMADD)."""
    sig = types.float64(types.float64, types.float64, types.float64)

    def codegen(context, builder, signature, args):
        from llvmlite import ir

        mod = builder.module
        fn = mod.globals.get("llvm.fma.f64")
        if fn is None:
            fnty = ir.FunctionType(ir.DoubleType(), [ir.DoubleType()] * 3)
            fn = ir.Function(mod, fnty, "llvm.fma.f64")
        return builder.call(fn, args)

    return sig, codegen


_JIT = {"error_model": "numpy", "cache": False}


# --------------------------------------------------------------------------
# compiled scalar cores (inlined into every kernel that uses them)
# --------------------------------------------------------------------------

@njit(inline="always", **_JIT)
def _k_exp(y):
    # Estrin: FMA pairs (a7 y + a6) y^2 + (a5 y + a4), ... then join with y^4
    y2 = y * y
    y4 = y2 * y2
    hi = _fma(_fma(_A[7], y, _A[6]), y2, _fma(_A[5], y, _A[4]))
    lo = _fma(_fma(_A[3], y, _A[2]), y2, _fma(_A[1], y, _A[0]))
    return _fma(hi, y4, lo)


@njit(inline="always", **_JIT)
def _k_ln(m):
    m2 = m * m
    m4 = m2 * m2
    q0 = _fma(_fma(_B[3], m, _B[2]), m2, _fma(_B[1], m, _B[0]))
    q1 = _fma(_fma(_B[7], m, _B[6]), m2, _fma(_B[5], m, _B[4]))
    q2 = _fma(_fma(_B[11], m, _B[10]), m2, _fma(_B[9], m, _B[8]))
    return _fma(_fma(q2, m4, q1), m4, q0)


@njit(inline="always", **_JIT)
def fast_exp_scalar(x):
    """exp(x): saturates to 0 below exp_arg_min, DBL_MAX above exp_arg_max."""
    below = x < _ARG_MIN
    above = x > _ARG_MAX
    isnan = x != x
    xs = 0.0 if (below or above or isnan) else x
    y = xs * _LOG2E
    yf = y - np.floor(y)
    z = _i2f(np.int64((y - _k_exp(yf) + _BIAS) * _SCALE))
    z = 0.0 if below else z
    z = _DBL_MAX if above else z
    return np.nan if isnan else z


@njit(inline="always", **_JIT)
def fast_ln_scalar(x):
    """ln(x) for x > 0; x <= 0 and NaN yield NaN, subnormals flush to tiny."""
    bad = not (x > 0.0)
    xs = 1.0 if bad else x
    xs = _DBL_TINY if xs < _DBL_TINY else xs  # bit split assumes normal numbers
    bits = _f2i(xs)
    e = np.float64(bits >> 52) - _BIAS
    m = np.float64(bits & _MANT_MASK) * _INV_SCALE
    z = _LN2 * (e + _k_ln(m))
    return np.nan if bad else z


@njit(inline="always", **_JIT)
def fast_pow_scalar(a, x):
    """a**x = exp(x ln a); a <= 0 propagates NaN."""
    return fast_exp_scalar(x * fast_ln_scalar(a))


@njit(**_JIT)
def _exp_inplace(x, out):
    for i in range(x.shape[0]):
        out[i] = fast_exp_scalar(x[i])


@njit(**_JIT)
def _ln_inplace(x, out):
    for i in range(x.shape[0]):
        out[i] = fast_ln_scalar(x[i])


@njit(**_JIT)
def _pow_inplace(a, x, out):
    for i in range(a.shape[0]):
        out[i] = fast_pow_scalar(a[i], x[i])


# --------------------------------------------------------------------------
# public API: scalars and arrays of any shape
# --------------------------------------------------------------------------

def _elementwise(kernel, *arrays):
    arrs = np.broadcast_arrays(*[np.asarray(a, dtype=np.float64) for a in arrays])
    flat = [np.ascontiguousarray(a).ravel() for a in arrs]
    out = np.empty(flat[0].shape, dtype=np.float64)
    kernel(*flat, out)
    scalar = all(np.ndim(a) == 0 for a in arrays)
    return float(out[0]) if scalar else out.reshape(arrs[0].shape)


def fast_exp(x):
    """Approximate e**x; relative error <= 1e-6 on [-708, 709] (measured ~1.2e-10)."""
    return _elementwise(_exp_inplace, x)


def fast_ln(x):
    """Approximate ln(x) for x > 0; NaN for x <= 0 (mask-friendly, no trap)."""
    return _elementwise(_ln_inplace, x)


def fast_pow(a, x):
    """Approximate a**x for a > 0 via fast_exp(x * fast_ln(a))."""
    return _elementwise(_pow_inplace, a, x)


def _coeffs(poly):
    return poly.coefficients if isinstance(poly, PolyCorrection) else tuple(poly)


def estrin_eval(poly, y):
    """Evaluate a polynomial with Estrin's pairing.

    Adjacent coefficients form multiply-add pairs (c[2k+1]*y + c[2k]); pair
    results are joined with y^2, y^4, ... so the groups are independent.
    Works on scalars or arrays; agrees with Horner up to rounding.
    """
    c = _coeffs(poly)
    y = np.asarray(y, dtype=np.float64)
    scalar = y.ndim == 0
    vals = []
    i = 0
    while i + 1 < len(c):
        vals.append(c[i + 1] * y + c[i])
        i += 2
    if i < len(c):
        vals.append(np.full(y.shape, c[i]))
    p = y * y
    while len(vals) > 1:
        joined = []
        j = 0
        while j + 1 < len(vals):
            joined.append(vals[j + 1] * p + vals[j])
            j += 2
        if j < len(vals):
            joined.append(vals[j])
        vals = joined
        p = p * p
    return float(vals[0]) if scalar else vals[0]


def horner_eval(poly, y):
    """Reference Horner evaluation of the same coefficients."""
    c = _coeffs(poly)
    y = np.asarray(y, dtype=np.float64)
    acc = np.full(y.shape, c[-1])
    for ci in c[-2::-1]:
        acc = acc * y + ci
    return float(acc) if y.ndim == 0 else acc


def error_sweep(fn, xs):
    """Relative-error sweep of fn in {'exp','ln','pow'} over sample points xs.

    Returns (exact, approx, rel_err) arrays; used by the approx-check command.
    For 'pow', xs must be a (n, 2) array of (base, exponent) pairs.
    """
    xs = np.asarray(xs, dtype=np.float64)
    if fn == "exp":
        exact = np.exp(xs)
        approx = fast_exp(xs)
    elif fn == "ln":
        exact = np.log(xs)
        approx = fast_ln(xs)
    elif fn == "pow":
        exact = xs[:, 0] ** xs[:, 1]
        approx = fast_pow(xs[:, 0], xs[:, 1])
    else:
        raise ValueError(f"unknown function {fn!r}")
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(approx - exact) / np.abs(exact)
    return exact, approx, rel
