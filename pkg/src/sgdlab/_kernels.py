"""Compiled inner loops.

Objectives, oracles and problems are passed as (integer code, float64 parameter
array) pairs so that a single compiled loop serves the whole catalog.  All
randomness is drawn as uniforms from a numpy ``Generator`` (``rng.random()``),
so the stream is the same whether the caller is compiled or not; Gaussian
variates come from Box-Muller pairs.
"""
import numpy as np
from numba import njit

# objective codes
QUADRATIC = 0
SINSQ = 1
KLPRIME = 2
FINITE_SUM_LS = 3

# noise laws
NOISE_NONE = 0
NOISE_GAUSSIAN = 1
NOISE_UNIFORM = 2

# oracle codes
EXACT_NOISY = 0
COORD_UNIFORM = 1
COORD_OFF_POLICY = 2
BLOCK_COORD = 3
KIEFER_WOLFOWITZ = 4
SPSA = 5
MINIBATCH = 6

# bias direction modes
DIR_FIXED = 0
DIR_ALIGNED = 1
DIR_OPPOSED = 2

# SA vector fields
FIELD_LINEAR = 0
FIELD_SATURATING = 1

# drift maps for the almost-supermartingale process
ETA_IDENTITY = 0
ETA_SATURATING = 1

TWO_PI = 2.0 * np.pi
KL_KNOT = 5.0
DIVERGENCE_NORM_SQ = 1e24


@njit(cache=True)
def sched(p, i, t):
    """Power law packed at p[i:i+3]; scale 0 encodes the zero sequence."""
    s = p[i]
    if s == 0.0:
        return 0.0
    return s * (t + p[i + 2]) ** (-p[i + 1])


@njit(cache=True)
def fill_noise(rng, kind, std, out, n):
    if kind == NOISE_NONE or std == 0.0:
        for i in range(n):
            out[i] = 0.0
        return
    if kind == NOISE_GAUSSIAN:
        i = 0
        while i < n:
            u1 = 1.0 - rng.random()
            u2 = rng.random()
            r = std * np.sqrt(-2.0 * np.log(u1))
            out[i] = r * np.cos(TWO_PI * u2)
            if i + 1 < n:
                out[i + 1] = r * np.sin(TWO_PI * u2)
            i += 2
    else:
        half = std * np.sqrt(3.0)
        for i in range(n):
            out[i] = half * (2.0 * rng.random() - 1.0)


# -- objectives ---------------------------------------------------------------

@njit(cache=True)
def kl_scalar(x):
    """Value and derivative of the even scalar KL' example."""
    a = abs(x)
    if a <= KL_KNOT:
        s = np.sin(a)
        v = a * a + 4.0 * s * s
        dv = 2.0 * a + 4.0 * np.sin(2.0 * a)
    else:
        s5 = np.sin(KL_KNOT)
        j5 = KL_KNOT * KL_KNOT + 4.0 * s5 * s5
        dj5 = 2.0 * KL_KNOT + 4.0 * np.sin(2.0 * KL_KNOT)
        e = np.exp(-2.0 * (a - KL_KNOT))
        v = j5 + 0.5 * dj5 * (1.0 - e)
        dv = dj5 * e
    if x < 0.0:
        dv = -dv
    return v, dv


@njit(cache=True)
def obj_value(code, data, th):
    d = th.size
    v = 0.0
    if code == QUADRATIC:
        for i in range(d):
            r = 0.0
            for j in range(d):
                r += data[i * d + j] * th[j]
            v += th[i] * r
        return 0.5 * v
    if code == SINSQ:
        for i in range(d):
            s = np.sin(th[i])
            v += th[i] * th[i] + s * s
        return v
    if code == KLPRIME:
        for i in range(d):
            v += kl_scalar(th[i])[0]
        return v
    # FINITE_SUM_LS: data = [X row-major (m*d), y (m)]
    m = data.size // (d + 1)
    for k in range(m):
        r = data[m * d + k]
        for j in range(d):
            r -= data[k * d + j] * th[j]
        v += r * r
    return v / m


@njit(cache=True)
def obj_grad(code, data, th, out):
    d = th.size
    if code == QUADRATIC:
        for i in range(d):
            r = 0.0
            for j in range(d):
                r += data[i * d + j] * th[j]
            out[i] = r
    elif code == SINSQ:
        for i in range(d):
            out[i] = 2.0 * th[i] + np.sin(2.0 * th[i])
    elif code == KLPRIME:
        for i in range(d):
            out[i] = kl_scalar(th[i])[1]
    else:
        m = data.size // (d + 1)
        for j in range(d):
            out[j] = 0.0
        for k in range(m):
            r = data[m * d + k]
            for j in range(d):
                r -= data[k * d + j] * th[j]
            for j in range(d):
                out[j] -= 2.0 * r * data[k * d + j]
        for j in range(d):
            out[j] /= m


@njit(cache=True)
def sample_grad_add(data, th, k, out, weight):
    """out += weight * grad_theta (y_k - <x_k, theta>)^2."""
    d = th.size
    m = data.size // (d + 1)
    r = data[m * d + k]
    for j in range(d):
        r -= data[k * d + j] * th[j]
    for j in range(d):
        out[j] -= weight * 2.0 * r * data[k * d + j]


# -- oracles ------------------------------------------------------------------

@njit(cache=True)
def oracle_sample(ocode, op, objcode, objdata, th, t, rng, h, aux, work):
    """Write one stochastic gradient into h; returns function/gradient evaluations used.

    work must have length >= 4 * d.
    """
    d = th.size
    g = work[:d]
    noise = work[d:2 * d]
    tmp = work[2 * d:3 * d]
    for i in range(d):
        aux[i] = 0.0

    if ocode == EXACT_NOISY:
        # op = [mu(3), M(3), law, dir_mode, dir(d)]
        obj_grad(objcode, objdata, th, g)
        gn = 0.0
        for i in range(d):
            gn += g[i] * g[i]
        gn = np.sqrt(gn)
        mu = sched(op, 0, t)
        big_m = sched(op, 3, t)
        law = int(op[6])
        mode = int(op[7])
        b = mu * (1.0 + gn)
        for i in range(d):
            h[i] = g[i]
        if b != 0.0:
            if mode != DIR_FIXED and gn > 0.0:
                sgn = 1.0 if mode == DIR_ALIGNED else -1.0
                for i in range(d):
                    h[i] += b * sgn * g[i] / gn
            else:
                for i in range(d):
                    h[i] += b * op[8 + i]
        if big_m != 0.0 and law != NOISE_NONE:
            jv = obj_value(objcode, objdata, th)
            fill_noise(rng, law, big_m * np.sqrt((1.0 + jv) / d), noise, d)
            for i in range(d):
                h[i] += noise[i]
        return 1

    nk = int(op[0])
    nstd = op[1]

    if ocode == COORD_UNIFORM or ocode == COORD_OFF_POLICY:
        u = rng.random()
        idx = d - 1
        if ocode == COORD_UNIFORM:
            idx = min(int(u * d), d - 1)
        else:
            # op = [nk, nstd, decay(3), phi0(d)]; phi_t = 1/d + (phi0 - 1/d) w(t)
            w = sched(op, 2, t)
            acc = 0.0
            for i in range(d):
                acc += 1.0 / d + (op[5 + i] - 1.0 / d) * w
                if u < acc:
                    idx = i
                    break
        obj_grad(objcode, objdata, th, g)
        fill_noise(rng, nk, nstd, noise, 1)
        for i in range(d):
            h[i] = 0.0
        h[idx] = d * (g[idx] + noise[0])
        aux[idx] = 1.0
        return 1

    if ocode == BLOCK_COORD:
        m = int(op[2])
        for i in range(d):
            tmp[i] = i
        for j in range(m):
            r = j + min(int(rng.random() * (d - j)), d - j - 1)
            x = tmp[j]
            tmp[j] = tmp[r]
            tmp[r] = x
        obj_grad(objcode, objdata, th, g)
        fill_noise(rng, nk, nstd, noise, m)
        for i in range(d):
            h[i] = 0.0
        for j in range(m):
            i = int(tmp[j])
            h[i] = (d / m) * (g[i] + noise[j])
            aux[i] = 1.0
        return 1

    if ocode == KIEFER_WOLFOWITZ:
        c = sched(op, 2, t)
        for i in range(d):
            tmp[i] = th[i]
        for i in range(d):
            tmp[i] = th[i] + c
            fp = obj_value(objcode, objdata, tmp)
            tmp[i] = th[i] - c
            fm = obj_value(objcode, objdata, tmp)
            tmp[i] = th[i]
            fill_noise(rng, nk, nstd, noise, 2)
            h[i] = (fp + noise[0] - fm - noise[1]) / (2.0 * c)
        return 2 * d

    if ocode == SPSA:
        # op = [nk, nstd, c(3), k, n_nodes, nodes(n), weights(n)]
        c = sched(op, 2, t)
        nn = int(op[6])
        delta = aux
        for i in range(d):
            delta[i] = 1.0 if rng.random() < 0.5 else -1.0
        for i in range(d):
            h[i] = 0.0
        for j in range(nn):
            node = op[7 + j]
            wj = op[7 + nn + j]
            for i in range(d):
                tmp[i] = th[i] + node * c * delta[i]
            fj = obj_value(objcode, objdata, tmp)
            fill_noise(rng, nk, nstd, noise, d)
            for i in range(d):
                h[i] += wj * (fj + noise[i])
        for i in range(d):
            h[i] /= c * delta[i]
        return nn

    # MINIBATCH: op = [N]
    n = int(op[0])
    m = objdata.size // (d + 1)
    for i in range(d):
        h[i] = 0.0
    for j in range(n):
        k = min(int(rng.random() * m), m - 1)
        sample_grad_add(objdata, th, k, h, 1.0 / n)
    return n


# -- iteration engines ----------------------------------------------------------

@njit(cache=True)
def sgd_loop(objcode, objdata, ocode, op, alpha, theta0, horizon, rec_steps, rng):
    """theta_{t+1} = theta_t - alpha_t h_{t+1}, recording theta at rec_steps."""
    d = theta0.size
    th = theta0.copy()
    nrec_max = rec_steps.size
    rec_theta = np.empty((nrec_max, d))
    rec_evals = np.empty(nrec_max, np.int64)
    h = np.empty(d)
    aux = np.empty(d)
    work = np.empty(4 * d)
    nrec = 0
    evals = 0
    diverged = False
    last = horizon
    for t in range(horizon + 1):
        if nrec < nrec_max and rec_steps[nrec] == t:
            for i in range(d):
                rec_theta[nrec, i] = th[i]
            rec_evals[nrec] = evals
            nrec += 1
        if t == horizon:
            break
        evals += oracle_sample(ocode, op, objcode, objdata, th, t, rng, h, aux, work)
        a = sched(alpha, 0, t)
        nrm = 0.0
        for i in range(d):
            th[i] -= a * h[i]
            nrm += th[i] * th[i]
        if not nrm <= DIVERGENCE_NORM_SQ:
            diverged = True
            last = t + 1
            break
    return rec_theta[:nrec], rec_evals[:nrec], th, diverged, last


@njit(cache=True)
def sa_field(fcode, rate, th, out):
    d = th.size
    scale = rate
    if fcode == FIELD_SATURATING:
        nrm = 0.0
        for i in range(d):
            nrm += th[i] * th[i]
        scale = rate / (1.0 + np.sqrt(nrm))
    for i in range(d):
        out[i] = -scale * th[i]


@njit(cache=True)
def sa_loop(fcode, rate, nz, alpha, theta0, horizon, rec_steps, rng):
    """theta_{t+1} = theta_t + alpha_t (f(theta_t) + xi_{t+1}).

    nz = [mu(3), M(3), law, dir_mode, dir(d)]: the error has conditional mean of
    norm mu_t (1 + |theta|) and a mean-zero part with second moment
    M_t^2 (1 + |theta|^2).
    """
    d = theta0.size
    th = theta0.copy()
    nrec_max = rec_steps.size
    rec_theta = np.empty((nrec_max, d))
    f = np.empty(d)
    noise = np.empty(d)
    nrec = 0
    diverged = False
    last = horizon
    law = int(nz[6])
    mode = int(nz[7])
    for t in range(horizon + 1):
        if nrec < nrec_max and rec_steps[nrec] == t:
            for i in range(d):
                rec_theta[nrec, i] = th[i]
            nrec += 1
        if t == horizon:
            break
        sa_field(fcode, rate, th, f)
        n2 = 0.0
        for i in range(d):
            n2 += th[i] * th[i]
        nrm = np.sqrt(n2)
        b = sched(nz, 0, t) * (1.0 + nrm)
        if b != 0.0:
            if mode != DIR_FIXED and nrm > 0.0:
                sgn = 1.0 if mode == DIR_ALIGNED else -1.0
                for i in range(d):
                    f[i] += b * sgn * th[i] / nrm
            else:
                for i in range(d):
                    f[i] += b * nz[8 + i]
        big_m = sched(nz, 3, t)
        if big_m != 0.0 and law != NOISE_NONE:
            fill_noise(rng, law, big_m * np.sqrt((1.0 + n2) / d), noise, d)
            for i in range(d):
                f[i] += noise[i]
        a = sched(alpha, 0, t)
        n2 = 0.0
        for i in range(d):
            th[i] += a * f[i]
            n2 += th[i] * th[i]
        if not n2 <= DIVERGENCE_NORM_SQ:
            diverged = True
            last = t + 1
            break
    return rec_theta[:nrec], th, diverged, last


@njit(cache=True)
def eta(code, r):
    if code == ETA_IDENTITY:
        return r
    return r / (1.0 + r)


@njit(cache=True)
def rs_loop(sp, eta_code, u, z0, horizon, rng):
    """z_{t+1} = [(1 + f_t) z_t + g_t - alpha_t eta(z_t)] U_{t+1}, U in {1-u, 1+u}.

    sp = [f(3), g(3), alpha(3)].  Returns the path z_0..z_T and the drift
    terms alpha_t eta(z_t) for t < T.
    """
    z = np.empty(horizon + 1)
    drift = np.empty(horizon)
    z[0] = z0
    for t in range(horizon):
        zt = z[t]
        ah = sched(sp, 6, t) * eta(eta_code, zt)
        drift[t] = ah
        mean = (1.0 + sched(sp, 0, t)) * zt + sched(sp, 3, t) - ah
        if rng.random() < 0.5:
            z[t + 1] = mean * (1.0 - u)
        else:
            z[t + 1] = mean * (1.0 + u)
    return z, drift
