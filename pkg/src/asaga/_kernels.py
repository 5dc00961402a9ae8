"""Compiled inner loops shared by the serial and asynchronous solvers.

Everything here is ``numba.njit``; the worker kernels release the GIL so
several Python threads can run them truly concurrently over the same
arrays. Coordinate updates in the asynchronous kernels go through a
compare-and-swap loop on the 64-bit pattern of each float.

The serial steps and the worker iteration evaluate the same arithmetic in
the same order, so a single worker reproduces the serial trajectory.
"""
import math

import numpy as np
from llvmlite import ir
from numba import njit, types
from numba.core import cgutils
from numba.extending import intrinsic

SGD, SAGA, SVRG = 0, 1, 2

WRITE_CAS = 0
WRITE_PLAIN = 1


# -- atomics and clock ------------------------------------------------------


def _element_pointer(context, builder, arrty, arr, idx):
    ary = context.make_array(arrty)(context, builder, arr)
    return cgutils.get_item_pointer(context, builder, arrty, ary, [idx], wraparound=False)


@intrinsic
def cas_add(typingctx, arr, idx, delta):
    """``arr[idx] += delta`` as a compare-and-swap retry loop; returns the new value."""
    if not (isinstance(arr, types.Array) and arr.dtype == types.float64):
        return None
    sig = types.float64(arr, idx, delta)

    def codegen(context, builder, signature, args):
        i64 = ir.IntType(64)
        f64 = ir.DoubleType()
        ptr = _element_pointer(context, builder, signature.args[0], args[0], args[1])
        iptr = builder.bitcast(ptr, i64.as_pointer())
        delta_v = context.cast(builder, args[2], signature.args[2], types.float64)
        first = builder.load_atomic(iptr, "monotonic", 8)
        entry = builder.block
        loop = builder.append_basic_block("cas.loop")
        done = builder.append_basic_block("cas.done")
        builder.branch(loop)
        builder.position_at_end(loop)
        expected = builder.phi(i64)
        expected.add_incoming(first, entry)
        new_f = builder.fadd(builder.bitcast(expected, f64), delta_v)
        pair = builder.cmpxchg(iptr, expected, builder.bitcast(new_f, i64), "monotonic", "monotonic")
        seen = builder.extract_value(pair, 0)
        ok = builder.extract_value(pair, 1)
        expected.add_incoming(seen, loop)
        builder.cbranch(ok, done, loop)
        builder.position_at_end(done)
        return new_f

    return sig, codegen


@intrinsic
def racy_add(typingctx, arr, idx, delta):
    """Unsynchronized ``arr[idx] += delta``: separate load and store.

    A compiler barrier after the store stops LLVM from fusing repeated
    adds into one; nothing stops another thread writing in between.
    """
    if not (isinstance(arr, types.Array) and arr.dtype == types.float64):
        return None
    sig = types.float64(arr, idx, delta)

    def codegen(context, builder, signature, args):
        i64 = ir.IntType(64)
        f64 = ir.DoubleType()
        ptr = _element_pointer(context, builder, signature.args[0], args[0], args[1])
        iptr = builder.bitcast(ptr, i64.as_pointer())
        delta_v = context.cast(builder, args[2], signature.args[2], types.float64)
        old = builder.bitcast(builder.load_atomic(iptr, "monotonic", 8), f64)
        new_f = builder.fadd(old, delta_v)
        builder.store_atomic(builder.bitcast(new_f, i64), iptr, "monotonic", 8)
        barrier = ir.FunctionType(ir.VoidType(), [])
        builder.asm(barrier, "", "~{memory}", [], True)
        return new_f

    return sig, codegen


@intrinsic
def atomic_incr(typingctx, arr, idx, delta):
    """Atomic fetch-and-add on an int64 element; returns the previous value."""
    if not (isinstance(arr, types.Array) and arr.dtype == types.int64):
        return None
    sig = types.int64(arr, idx, delta)

    def codegen(context, builder, signature, args):
        ptr = _element_pointer(context, builder, signature.args[0], args[0], args[1])
        delta_v = context.cast(builder, args[2], signature.args[2], types.int64)
        return builder.atomic_rmw("add", ptr, delta_v, "monotonic")

    return sig, codegen


@intrinsic
def atomic_load(typingctx, arr, idx):
    if not (isinstance(arr, types.Array) and arr.dtype == types.int64):
        return None
    sig = types.int64(arr, idx)

    def codegen(context, builder, signature, args):
        ptr = _element_pointer(context, builder, signature.args[0], args[0], args[1])
        return builder.load_atomic(ptr, "monotonic", 8)

    return sig, codegen


@intrinsic
def monotonic_ns(typingctx):
    """CLOCK_MONOTONIC in nanoseconds, via libc ``clock_gettime``."""
    sig = types.int64()

    def codegen(context, builder, signature, args):
        i64 = ir.IntType(64)
        i32 = ir.IntType(32)
        ts_t = ir.LiteralStructType([i64, i64])
        fnty = ir.FunctionType(i32, [i32, ts_t.as_pointer()])
        fn = cgutils.get_or_insert_function(builder.module, fnty, "clock_gettime")
        ts = cgutils.alloca_once(builder, ts_t)
        builder.call(fn, [ir.Constant(i32, 1), ts])
        sec = builder.load(cgutils.gep_inbounds(builder, ts, 0, 0))
        nsec = builder.load(cgutils.gep_inbounds(builder, ts, 0, 1))
        return builder.add(builder.mul(sec, ir.Constant(i64, 1_000_000_000)), nsec)

    return sig, codegen


@njit(nogil=True, cache=True)
def now_ns():
    return monotonic_ns()


@njit(nogil=True, cache=True)
def add_repeatedly(vec, v, k, write_mode):
    """Add 1.0 to ``vec[v]`` ``k`` times (lost-update stress kernel)."""
    for _ in range(k):
        if write_mode == WRITE_CAS:
            cas_add(vec, v, 1.0)
        else:
            racy_add(vec, v, 1.0)


@njit(nogil=True, cache=True)
def coordinate_add(vec, v, delta, write_mode):
    if write_mode == WRITE_CAS:
        cas_add(vec, v, delta)
    else:
        racy_add(vec, v, delta)


# -- splitmix64 sampler -----------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True)
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(nogil=True, cache=True)
def next_index(rng, n):
    """Advance the splitmix64 state in ``rng[0]`` and return an index in [0, n)."""
    s = rng[0] + _GOLDEN
    rng[0] = s
    return np.int64(mix64(s) % np.uint64(n))


@njit(cache=True)
def draw_indices(rng, n, count):
    out = np.empty(count, dtype=np.int64)
    for k in range(count):
        out[k] = next_index(rng, n)
    return out


# -- logistic loss pieces ---------------------------------------------------


@njit(nogil=True, cache=True)
def sigma(margin, b):
    """Derivative of log(1 + exp(-b m)) with respect to m."""
    z = b * margin
    if z > 0:
        e = math.exp(-z)
        return -b * e / (1.0 + e)
    return -b / (1.0 + math.exp(z))


@njit(nogil=True, cache=True)
def softplus(z):
    if z > 0:
        return z + math.log1p(math.exp(-z))
    return math.log1p(math.exp(z))


@njit(nogil=True, cache=True)
def row_margin(indptr, indices, data, x, i):
    m = 0.0
    for j in range(indptr[i], indptr[i + 1]):
        m += x[indices[j]] * data[j]
    return m


@njit(cache=True)
def all_margins(indptr, indices, data, x):
    n = indptr.shape[0] - 1
    out = np.empty(n)
    for i in range(n):
        out[i] = row_margin(indptr, indices, data, x, i)
    return out


@njit(nogil=True, cache=True)
def sigma_rows(indptr, indices, data, y, x, lo, hi, sig_out, grad_out):
    """Fill ``sig_out[lo:hi]`` with sigma_i(x) and accumulate sum sigma_i a_i into ``grad_out``."""
    for i in range(lo, hi):
        s = sigma(row_margin(indptr, indices, data, x, i), y[i])
        sig_out[i] = s
        for j in range(indptr[i], indptr[i + 1]):
            grad_out[indices[j]] += s * data[j]


@njit(cache=True)
def scalar_memory_average(indptr, indices, data, alpha, d):
    """(1/n) sum_i alpha_i a_i, recomputed from scratch."""
    n = indptr.shape[0] - 1
    out = np.zeros(d)
    for i in range(n):
        for j in range(indptr[i], indptr[i + 1]):
            out[indices[j]] += alpha[i] * data[j]
    return out / n


# -- serial steps -----------------------------------------------------------


@njit(nogil=True, cache=True)
def sgd_step(indptr, indices, data, y, ddiag, lam, x, i, gamma):
    s = sigma(row_margin(indptr, indices, data, x, i), y[i])
    for j in range(indptr[i], indptr[i + 1]):
        v = indices[j]
        x[v] -= gamma * (s * data[j] + lam * ddiag[v] * x[v])


@njit(nogil=True, cache=True)
def saga_sparse_step(indptr, indices, data, y, ddiag, lam, x, alpha, abar, i, gamma):
    n = y.shape[0]
    s = sigma(row_margin(indptr, indices, data, x, i), y[i])
    dalpha = s - alpha[i]
    for j in range(indptr[i], indptr[i + 1]):
        v = indices[j]
        x[v] -= gamma * (dalpha * data[j] + ddiag[v] * abar[v] + lam * ddiag[v] * x[v])
    for j in range(indptr[i], indptr[i + 1]):
        abar[indices[j]] += dalpha * data[j] / n
    alpha[i] = s


@njit(nogil=True, cache=True)
def saga_dense_step(indptr, indices, data, y, lam, x, alpha, abar, i, gamma, buf):
    """Plain SAGA: the memory average and regularizer touch every coordinate.

    ``buf`` is a zeroed scratch vector of length d and is zeroed again on exit.
    """
    n = y.shape[0]
    s = sigma(row_margin(indptr, indices, data, x, i), y[i])
    dalpha = s - alpha[i]
    for j in range(indptr[i], indptr[i + 1]):
        buf[indices[j]] = dalpha * data[j]
    for v in range(x.shape[0]):
        x[v] -= gamma * (buf[v] + abar[v] + lam * x[v])
    for j in range(indptr[i], indptr[i + 1]):
        buf[indices[j]] = 0.0
        abar[indices[j]] += dalpha * data[j] / n
    alpha[i] = s


@njit(nogil=True, cache=True)
def lag_catch_up(x, abar, lam, gamma, v, k):
    """Apply ``k`` deferred dense steps x_v <- x_v - gamma (abar_v + lam x_v) at once."""
    if k <= 0:
        return
    if lam == 0.0:
        x[v] -= gamma * k * abar[v]
    else:
        # c = 1 - gamma lam; x <- c^k x - abar (1 - c^k) / lam
        log_c = math.log1p(-gamma * lam)
        ck = math.exp(k * log_c)
        one_minus_ck = -math.expm1(k * log_c)
        x[v] = ck * x[v] - abar[v] * one_minus_ck / lam


@njit(nogil=True, cache=True)
def saga_lagged_step(indptr, indices, data, y, lam, x, alpha, abar, counters, t, i, gamma):
    """Dense SAGA step ``t`` (0-based) applied lazily.

    ``counters[v]`` is the number of steps already folded into ``x[v]``.
    Coordinates outside the support keep lagging until next accessed.
    """
    n = y.shape[0]
    for j in range(indptr[i], indptr[i + 1]):
        v = indices[j]
        lag_catch_up(x, abar, lam, gamma, v, t - counters[v])
    s = sigma(row_margin(indptr, indices, data, x, i), y[i])
    dalpha = s - alpha[i]
    for j in range(indptr[i], indptr[i + 1]):
        v = indices[j]
        x[v] -= gamma * (dalpha * data[j] + abar[v] + lam * x[v])
        counters[v] = t + 1
    for j in range(indptr[i], indptr[i + 1]):
        abar[indices[j]] += dalpha * data[j] / n
    alpha[i] = s


@njit(nogil=True, cache=True)
def flush_lag(x, abar, lam, gamma, counters, t):
    for v in range(x.shape[0]):
        lag_catch_up(x, abar, lam, gamma, v, t - counters[v])
        counters[v] = t


@njit(nogil=True, cache=True)
def svrg_step(indptr, indices, data, y, ddiag, lam, x, sig_ref, grad_ref, i, gamma):
    s = sigma(row_margin(indptr, indices, data, x, i), y[i])
    ds = s - sig_ref[i]
    for j in range(indptr[i], indptr[i + 1]):
        v = indices[j]
        x[v] -= gamma * (ds * data[j] + ddiag[v] * grad_ref[v] + lam * ddiag[v] * x[v])


@njit(nogil=True, cache=True)
def run_steps(method, indptr, indices, data, y, ddiag, lam, x, alpha, abar,
              sig_ref, grad_ref, counters, t0, rng, count, gamma, buf):
    """``count`` sampled steps of one serial method; returns the new step count.

    method: 0 sgd, 1 sparse saga, 2 svrg inner, 3 dense saga, 4 lagged saga.
    """
    n = y.shape[0]
    t = t0
    for _ in range(count):
        i = next_index(rng, n)
        if method == 0:
            sgd_step(indptr, indices, data, y, ddiag, lam, x, i, gamma)
        elif method == 1:
            saga_sparse_step(indptr, indices, data, y, ddiag, lam, x, alpha, abar, i, gamma)
        elif method == 2:
            svrg_step(indptr, indices, data, y, ddiag, lam, x, sig_ref, grad_ref, i, gamma)
        elif method == 3:
            saga_dense_step(indptr, indices, data, y, lam, x, alpha, abar, i, gamma, buf)
        else:
            saga_lagged_step(indptr, indices, data, y, lam, x, alpha, abar, counters, t, i, gamma)
        t += 1
    return t


# -- asynchronous worker ----------------------------------------------------


@njit(nogil=True, cache=True)
def _write(vec, v, delta, write_mode):
    if write_mode == WRITE_CAS:
        cas_add(vec, v, delta)
    else:
        racy_add(vec, v, delta)


@njit(nogil=True, cache=True)
def async_worker(method, indptr, indices, data, y, ddiag, lam, gamma,
                 x, alpha, abar, sig_ref, grad_ref,
                 counter, stride, n_iters, rng, write_mode, full_read,
                 xfull, xs, bs,
                 snap_every, snaps, snap_iters, snap_times,
                 instrument, starts, ends, durations,
                 spin_ns, phase, violations, offset):
    """Lock-free worker loop shared by ASAGA, Hogwild and the Kromagnon inner phase.

    One iteration: sample i; read x (and for SAGA alpha_i and abar) on the
    support without any snapshot guarantee; compute the update; add it
    coordinate-wise to shared memory. Every ``stride`` local iterations the
    shared ``counter`` is bumped; the worker that moves it onto a multiple
    of ``snap_every`` copies x into the snapshot slot it owns. ``offset``
    is the number of local iterations this worker ran in earlier calls.
    """
    n = y.shape[0]
    for it in range(n_iters):
        if full_read:
            for v in range(x.shape[0]):
                xfull[v] = x[v]
        i = next_index(rng, n)
        if instrument:
            starts[it] = atomic_load(counter, 0)
            t_begin = monotonic_ns()
        if method == SVRG and phase[0] != 1:
            violations[0] += 1
        lo = indptr[i]
        hi = indptr[i + 1]
        m = 0.0
        for j in range(lo, hi):
            v = indices[j]
            xv = xfull[v] if full_read else x[v]
            xs[j - lo] = xv
            m += xv * data[j]
        s = sigma(m, y[i])
        if method == SAGA:
            a_hat = alpha[i]
            for j in range(lo, hi):
                bs[j - lo] = abar[indices[j]]
            dalpha = s - a_hat
        elif method == SVRG:
            dalpha = s - sig_ref[i]
        else:
            dalpha = s
        if spin_ns > 0:
            t_spin = monotonic_ns()
            while monotonic_ns() - t_spin < spin_ns:
                pass
        for j in range(lo, hi):
            v = indices[j]
            if method == SAGA:
                step = dalpha * data[j] + ddiag[v] * bs[j - lo] + lam * ddiag[v] * xs[j - lo]
            elif method == SVRG:
                step = dalpha * data[j] + ddiag[v] * grad_ref[v] + lam * ddiag[v] * xs[j - lo]
            else:
                step = dalpha * data[j] + lam * ddiag[v] * xs[j - lo]
            _write(x, v, -(gamma * step), write_mode)
            if method == SAGA:
                _write(abar, v, dalpha * data[j] / n, write_mode)
        if method == SAGA:
            _write(alpha, i, dalpha, write_mode)
        if instrument:
            ends[it] = atomic_load(counter, 0)
            durations[it] = monotonic_ns() - t_begin
        if (offset + it + 1) % stride == 0:
            c = atomic_incr(counter, 0, 1) + 1
            if snap_every > 0 and c % snap_every == 0:
                k = c // snap_every
                if k < snaps.shape[0]:
                    for v in range(x.shape[0]):
                        snaps[k, v] = x[v]
                    snap_iters[k] = c * stride
                    snap_times[k] = monotonic_ns()
