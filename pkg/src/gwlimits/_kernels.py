"""Compiled inner loops: counter-based streams, samplers and accumulators.

A stream is the pair ``(counter, gamma)`` of a SplitMix64 sequence; the
i-th output is ``mix64(counter + i * gamma)``.  Stream keys are derived
from ``(seed, index, index, ...)`` by hashing, so any replicate or
generation can be regenerated on its own.

Family codes: 0 binary split, 1 geometric, 2 poisson, 3 explicit table,
4 discrete pareto.  Tail codes for the alias sampler: 0 none,
1 geometric, 2 poisson, 3 zeta.
"""

import math

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_G1 = np.uint64(0xFF51AFD7ED558CCD)
_G2 = np.uint64(0xC4CEB9FE1A85EC53)
_SALT = np.uint64(0x632BE59BD9B4E019)
_ALT = np.uint64(0xAAAAAAAAAAAAAAAA)
_LOW32 = np.uint64(0xFFFFFFFF)
_ONE = np.uint64(1)
_S11 = np.uint64(11)
_S27 = np.uint64(27)
_S30 = np.uint64(30)
_S31 = np.uint64(31)
_S32 = np.uint64(32)
_S33 = np.uint64(33)
_INV53 = 1.0 / 9007199254740992.0
_INV32 = 1.0 / 4294967296.0

FAM_BINARY, FAM_GEOMETRIC, FAM_POISSON, FAM_TABLE, FAM_PARETO = 0, 1, 2, 3, 4
TAIL_NONE, TAIL_GEOMETRIC, TAIL_POISSON, TAIL_ZETA = 0, 1, 2, 3

STATUS_OK, STATUS_OVERFLOW, STATUS_BUDGET = 0, 1, 2
COND_NONE, COND_LAST_PARENT, COND_PROXY, COND_HTRANSFORM = 0, 1, 2, 3

_BIG = 4611686018427387904  # 2**62, returned by the zeta tail on float overflow


@njit(inline="always", cache=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def mix_gamma(z):
    z = (z ^ (z >> _S33)) * _G1
    z = (z ^ (z >> _S33)) * _G2
    z = (z ^ (z >> _S33)) | _ONE
    w = z ^ (z >> _ONE)
    bits = 0
    while w:
        w &= w - _ONE
        bits += 1
    if bits < 24:
        z ^= _ALT
    return z


@njit(cache=True)
def derive(key, idx):
    """Child key for index ``idx`` of ``key``."""
    return mix64(key ^ mix64(np.uint64(idx) * _GOLDEN + _SALT))


@njit(cache=True)
def open_stream(key, state):
    state[0] = mix64(key + _SALT)
    state[1] = mix_gamma(key + _GOLDEN)


@njit(inline="always", cache=True)
def next_u64(state):
    state[0] += state[1]
    return mix64(state[0])


@njit(inline="always", cache=True)
def uniform(state):
    """Uniform on the open interval (0, 1)."""
    return ((next_u64(state) >> _S11) + 0.5) * _INV53


@njit(cache=True)
def std_normal(state):
    u1 = uniform(state)
    u2 = uniform(state)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


# ---------------------------------------------------------------------------
# scalar samplers


@njit(cache=True)
def poisson_draw(state, lam):
    if lam <= 0.0:
        return 0
    if lam < 10.0:
        u = uniform(state)
        k = 0
        p = math.exp(-lam)
        acc = p
        while u > acc and p > 0.0:
            k += 1
            p *= lam / k
            acc += p
        return k
    # PTRS transformed rejection (Hormann 1993)
    slam = math.sqrt(lam)
    loglam = math.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        u = uniform(state) - 0.5
        v = uniform(state)
        us = 0.5 - abs(u)
        k = math.floor((2.0 * a / us + b) * u + lam + 0.43)
        if us >= 0.07 and v <= vr:
            return np.int64(k)
        if k < 0 or (us < 0.013 and v > us):
            continue
        if (math.log(v) + math.log(invalpha) - math.log(a / (us * us) + b)
                <= -lam + k * loglam - math.lgamma(k + 1.0)):
            return np.int64(k)


@njit(cache=True)
def _binomial_small_p(state, n, p):
    if n * p < 10.0:
        # sequential inversion
        q = 1.0 - p
        s = p / q
        a = (n + 1) * s
        r = math.exp(n * math.log1p(-p))
        u = uniform(state)
        k = 0
        while u > r and k < n:
            u -= r
            k += 1
            r *= a / k - s
            if r <= 0.0:
                break
        return k
    # BTRS transformed rejection (Hormann 1993)
    spq = math.sqrt(n * p * (1.0 - p))
    b = 1.15 + 2.53 * spq
    a = -0.0873 + 0.0248 * b + 0.01 * p
    c = n * p + 0.5
    vr = 0.92 - 4.2 / b
    alpha = (2.83 + 5.1 / b) * spq
    lpq = math.log(p / (1.0 - p))
    mode = math.floor((n + 1) * p)
    h = math.lgamma(mode + 1.0) + math.lgamma(n - mode + 1.0)
    while True:
        u = uniform(state) - 0.5
        v = uniform(state)
        us = 0.5 - abs(u)
        k = math.floor((2.0 * a / us + b) * u + c)
        if k < 0 or k > n:
            continue
        if us >= 0.07 and v <= vr:
            return np.int64(k)
        v = math.log(v * alpha / (a / (us * us) + b))
        if v <= h - math.lgamma(k + 1.0) - math.lgamma(n - k + 1.0) + (k - mode) * lpq:
            return np.int64(k)


@njit(cache=True)
def binomial_draw(state, n, p):
    if n <= 0 or p <= 0.0:
        return 0
    if p >= 1.0:
        return n
    if p > 0.5:
        return n - _binomial_small_p(state, n, 1.0 - p)
    return _binomial_small_p(state, n, p)


@njit(cache=True)
def gamma_draw(state, shape):
    """Gamma(shape, scale=1) by Marsaglia-Tsang."""
    if shape < 1.0:
        return gamma_draw(state, shape + 1.0) * uniform(state) ** (1.0 / shape)
    d = shape - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = std_normal(state)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = uniform(state)
        if u < 1.0 - 0.0331 * x * x * x * x:
            return d * v
        if math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
            return d * v


@njit(cache=True)
def negbin_draw(state, r, p):
    """Failures before the ``r``-th success, success probability ``p``."""
    if r <= 0:
        return 0
    lam = gamma_draw(state, float(r)) * (1.0 - p) / p
    return poisson_draw(state, lam)


@njit(cache=True)
def tail_draw(state, tail_kind, tail_params, first):
    """Exact draw from the offspring law conditioned on exceeding ``first - 1``."""
    if tail_kind == TAIL_GEOMETRIC:
        p = tail_params[0]
        u = uniform(state)
        return first + np.int64(math.floor(math.log(u) / math.log1p(-p)))
    if tail_kind == TAIL_POISSON:
        lam = tail_params[0]
        pk = tail_params[1]  # pmf at `first`
        mass = tail_params[2]  # P(xi >= first)
        target = uniform(state) * mass
        k = first
        acc = pk
        while acc < target and pk > 0.0:
            k += 1
            pk *= lam / k
            acc += pk
        return k
    # zeta tail: floor of a continuous Pareto proposal, then rejection
    a = tail_params[0]  # pmf exponent alpha + 1
    base = float(first)
    bound = ((base + 1.0) / base) ** a
    while True:
        y = base * uniform(state) ** (-1.0 / (a - 1.0))
        if y >= 4.0e18:
            return _BIG
        k = math.floor(y)
        ratio = (a - 1.0) / (k * -math.expm1((1.0 - a) * math.log1p(1.0 / k)))
        if uniform(state) * bound <= ratio:
            return np.int64(k)


@njit(cache=True)
def alias_draw(state, aprob, aalias, offset, tail_kind, tail_params):
    r = next_u64(state)
    n = aprob.shape[0]
    j = np.int64(((r >> _S32) * np.uint64(n)) >> _S32)
    u = (r & _LOW32) * _INV32
    idx = j if u < aprob[j] else aalias[j]
    if tail_kind != TAIL_NONE and idx == n - 1:
        return tail_draw(state, tail_kind, tail_params, offset + n - 1)
    return offset + idx


@njit(cache=True)
def fill_draws(state, count, aprob, aalias, offset, tail_kind, tail_params, out):
    # alias_draw is inlined by hand: a call per draw costs array refcounting
    n = aprob.shape[0]
    for i in range(count):
        r = next_u64(state)
        j = np.int64(((r >> _S32) * np.uint64(n)) >> _S32)
        u = (r & _LOW32) * _INV32
        idx = j if u < aprob[j] else aalias[j]
        if tail_kind != TAIL_NONE and idx == n - 1:
            out[i] = tail_draw(state, tail_kind, tail_params, offset + n - 1)
        else:
            out[i] = offset + idx


@njit(cache=True)
def sum_offspring(state, z, fam, fparams, aprob, aalias, offset, tail_kind, tail_params):
    """Total offspring of ``z`` parents, drawn from the convolution power directly."""
    if z <= 0:
        return 0
    if z <= 16 or fam == FAM_PARETO:
        n = aprob.shape[0]
        tot = 0
        for _ in range(z):
            r = next_u64(state)
            j = np.int64(((r >> _S32) * np.uint64(n)) >> _S32)
            u = (r & _LOW32) * _INV32
            idx = j if u < aprob[j] else aalias[j]
            if tail_kind != TAIL_NONE and idx == n - 1:
                tot += tail_draw(state, tail_kind, tail_params, offset + n - 1)
            else:
                tot += offset + idx
        return tot
    if fam == FAM_BINARY:
        return 2 * binomial_draw(state, z, fparams[0])
    if fam == FAM_GEOMETRIC:
        return negbin_draw(state, z, fparams[0])
    if fam == FAM_POISSON:
        return poisson_draw(state, z * fparams[0])
    # explicit table: multinomial counts via conditional binomials
    left = z
    rest = 1.0
    tot = 0
    for k in range(fparams.shape[0]):
        if left == 0:
            break
        pk = fparams[k]
        if pk <= 0.0:
            continue
        if k == fparams.shape[0] - 1 or pk >= rest:
            c = left
        else:
            c = binomial_draw(state, left, min(1.0, pk / rest))
        tot += k * c
        left -= c
        rest -= pk
    return tot


# ---------------------------------------------------------------------------
# streaming accumulators


@njit(cache=True)
def stream_generation(state, z, m, do_don, do_de, do_ext, T, grids_on, dgrid, egrid, cap,
                      aprob, aalias, offset, tail_kind, tail_params, out):
    """Draw ``z`` offspring one at a time, feeding the selected accumulators.

    ``out`` receives ``[total, max S_j, min S_j, max S_j/sqrt(j), max xi]``
    where ``S_j`` is the centered prefix sum.  Returns False on overflow.
    """
    ctr = state[0]
    gam = state[1]
    n = aprob.shape[0]
    tot = 0
    smax = 0.0
    smin = 0.0
    best = -np.inf
    emax = 0
    gi = 0
    next_fl = 0
    for j in range(1, z + 1):
        ctr += gam
        r = mix64(ctr)
        jj = np.int64(((r >> _S32) * np.uint64(n)) >> _S32)
        u = (r & _LOW32) * _INV32
        idx = jj if u < aprob[jj] else aalias[jj]
        if tail_kind != TAIL_NONE and idx == n - 1:
            state[0] = ctr
            x = tail_draw(state, tail_kind, tail_params, offset + n - 1)
            ctr = state[0]
        else:
            x = offset + idx
        if grids_on:
            while gi <= T and next_fl == j - 1:
                if do_don:
                    frac = ((gi * z) % T) / T
                    dgrid[gi] = (tot - m * (j - 1)) + frac * (x - m)
                if do_ext:
                    egrid[gi] = emax
                gi += 1
                next_fl = (gi * z) // T
        tot += x
        if tot > cap:
            state[0] = ctr
            out[0] = tot
            return False
        s = tot - m * j
        if s > smax:
            smax = s
        elif s < smin:
            smin = s
        if do_de:
            v = s / math.sqrt(j)
            if v > best:
                best = v
        if do_ext and x > emax:
            emax = x
    state[0] = ctr
    if grids_on:
        while gi <= T:
            if do_don:
                dgrid[gi] = tot - m * z
            if do_ext:
                egrid[gi] = emax
            gi += 1
    out[0] = tot
    out[1] = smax
    out[2] = smin
    out[3] = best
    out[4] = emax
    return True


@njit(cache=True)
def iid_batch(seeds, k, m, do_don, do_de, do_ext, T, grids_on,
              aprob, aalias, offset, tail_kind, tail_params, res, dgrids, egrids):
    """One i.i.d. stream of length ``k`` per seed; ``res`` rows as in stream_generation."""
    state = np.empty(2, dtype=np.uint64)
    out = np.empty(5)
    big = np.int64(1) << np.int64(62)
    for i in range(seeds.shape[0]):
        open_stream(seeds[i], state)
        gi = i if grids_on else 0
        stream_generation(state, k, m, do_don, do_de, do_ext, T, grids_on, dgrids[gi], egrids[gi],
                          big, aprob, aalias, offset, tail_kind, tail_params, out)
        for c in range(5):
            res[i, c] = out[c]


# ---------------------------------------------------------------------------
# Galton-Watson replicates


@njit(cache=True)
def _htransform_step(state, i, t, trans, hsurv):
    """Sample Z_g given Z_{g-1} = i and survival to the conditioning generation."""
    cap = trans.shape[0] - 1
    if i > cap:
        return -1
    norm = hsurv[t + 1, i]
    target = uniform(state) * norm
    acc = 0.0
    for k in range(1, cap + 1):
        acc += trans[i, k] * hsurv[t, k]
        if acc >= target:
            return k
    return -1


@njit(cache=True)
def gw_batch(seeds, n, wstart, do_don, do_de, do_ext, T, grids_on, cap, cond, max_attempts,
             proxy_log_ext, trans, hsurv, m,
             fam, fparams, aprob, aalias, offset, tail_kind, tail_params,
             traj, status, attempts, wres, dgrids, egrids):
    """Simulate one (possibly conditioned) replicate per seed.

    Generations ``g >= wstart`` are streamed draw by draw through the
    accumulators (``wres[i, g - wstart]``); earlier generations draw the
    total offspring count from its convolution power.
    """
    state = np.empty(2, dtype=np.uint64)
    out = np.empty(5)
    any_acc = do_don or do_de or do_ext
    r = wres.shape[1]
    for i in range(seeds.shape[0]):
        status[i] = STATUS_BUDGET
        tries = 0
        budget = 1 if (cond == COND_NONE or cond == COND_HTRANSFORM) else max_attempts
        while tries < budget:
            akey = derive(seeds[i], tries)
            tries += 1
            traj[i, 0] = 1
            for w in range(r):
                for c in range(5):
                    wres[i, w, c] = 0.0
            accepted = True
            overflow = False
            for g in range(1, n + 1):
                z = traj[i, g - 1]
                if z == 0:
                    traj[i, g] = 0
                    continue
                open_stream(derive(akey, g), state)
                if cond == COND_HTRANSFORM and g < n:
                    nz = _htransform_step(state, z, n - 1 - g, trans, hsurv)
                    if nz < 0:
                        overflow = True
                        traj[i, g] = -1
                        break
                    traj[i, g] = nz
                    continue
                if any_acc and g >= wstart:
                    w = g - wstart
                    gi = i if grids_on else 0
                    wi = w if grids_on else 0
                    ok = stream_generation(state, z, m, do_don, do_de, do_ext, T, grids_on,
                                           dgrids[gi, wi], egrids[gi, wi], cap,
                                           aprob, aalias, offset, tail_kind, tail_params, out)
                    if not ok:
                        overflow = True
                        traj[i, g] = np.int64(out[0])
                        break
                    for c in range(5):
                        wres[i, w, c] = out[c]
                    nz = np.int64(out[0])
                else:
                    nz = sum_offspring(state, z, fam, fparams, aprob, aalias, offset,
                                       tail_kind, tail_params)
                    if nz > cap:
                        overflow = True
                        traj[i, g] = nz
                        break
                traj[i, g] = nz
                if nz == 0:
                    if (cond == COND_LAST_PARENT and g <= n - 1) or cond == COND_PROXY:
                        accepted = False
                        break
            if overflow:
                for g2 in range(g + 1, n + 1):
                    traj[i, g2] = -1
                status[i] = STATUS_OVERFLOW
                break
            if not accepted:
                continue
            if cond == COND_PROXY:
                zn = traj[i, n]
                open_stream(derive(akey, n + 1), state)
                p_ext = math.exp(zn * proxy_log_ext)
                if uniform(state) < p_ext:
                    continue
            status[i] = STATUS_OK
            break
        attempts[i] = tries
