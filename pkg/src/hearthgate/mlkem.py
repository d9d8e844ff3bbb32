"""ML-KEM-512 key encapsulation (FIPS 203) in pure Python.

Optional post-quantum backend for the crypto suite. It is deliberately
simple: plain modular arithmetic, no constant-time tricks (side channels are
out of scope for a simulator), validated by round-trip, size, and tamper
tests. For throughput-sensitive runs use the default X25519 backend instead.

Sizes: encapsulation key 800 B, decapsulation key 1632 B, ciphertext 768 B,
shared secret 32 B.
"""

from __future__ import annotations

import hashlib

N = 256
Q = 3329
K = 2        # module rank for the 512 parameter set
ETA1 = 3
ETA2 = 2
DU = 10
DV = 4

EK_BYTES = 384 * K + 32      # 800
DK_BYTES = 768 * K + 96      # 1632
CT_BYTES = 32 * (DU * K + DV)  # 768


def _bitrev7(n: int) -> int:
    r = 0
    for _ in range(7):
        r = (r << 1) | (n & 1)
        n >>= 1
    return r


# 17 is a primitive 256th root of unity mod Q.
_ZETAS = [pow(17, _bitrev7(i), Q) for i in range(128)]
_N_INV = pow(128, -1, Q)


def _h(data: bytes) -> bytes:
    return hashlib.sha3_256(data).digest()


def _g(data: bytes) -> bytes:
    return hashlib.sha3_512(data).digest()


def _j(data: bytes) -> bytes:
    return hashlib.shake_256(data).digest(32)


def _prf(eta: int, seed: bytes, n: int) -> bytes:
    return hashlib.shake_256(seed + bytes([n])).digest(64 * eta)


# -- polynomial ring -------------------------------------------------------

def _ntt(f: list[int]) -> list[int]:
    a = list(f)
    zi = 1
    span = 128
    while span >= 2:
        for start in range(0, N, 2 * span):
            z = _ZETAS[zi]
            zi += 1
            for j in range(start, start + span):
                t = z * a[j + span] % Q
                a[j + span] = (a[j] - t) % Q
                a[j] = (a[j] + t) % Q
        span >>= 1
    return a


def _ntt_inv(f: list[int]) -> list[int]:
    a = list(f)
    zi = 127
    span = 2
    while span <= 128:
        for start in range(0, N, 2 * span):
            z = _ZETAS[zi]
            zi -= 1
            for j in range(start, start + span):
                t = a[j]
                a[j] = (t + a[j + span]) % Q
                a[j + span] = z * (a[j + span] - t) % Q
        span <<= 1
    return [x * _N_INV % Q for x in a]


def _mul_ntts(f: list[int], g: list[int]) -> list[int]:
    # The NTT domain is 128 degree-1 residues; multiply pairwise mod X^2 - gamma.
    out = [0] * N
    for i in range(64):
        gamma = _ZETAS[64 + i]
        for half, gm in ((0, gamma), (2, Q - gamma)):
            a0, a1 = f[4 * i + half], f[4 * i + half + 1]
            b0, b1 = g[4 * i + half], g[4 * i + half + 1]
            out[4 * i + half] = (a0 * b0 + a1 * b1 % Q * gm) % Q
            out[4 * i + half + 1] = (a0 * b1 + a1 * b0) % Q
    return out


def _add(a: list[int], b: list[int]) -> list[int]:
    return [(x + y) % Q for x, y in zip(a, b)]


def _sub(a: list[int], b: list[int]) -> list[int]:
    return [(x - y) % Q for x, y in zip(a, b)]


# -- encodings and sampling ------------------------------------------------

def _byte_encode(f: list[int], d: int) -> bytes:
    acc = 0
    pos = 0
    for c in f:
        acc |= (c & ((1 << d) - 1)) << pos
        pos += d
    return acc.to_bytes(32 * d, "little")


def _byte_decode(data: bytes, d: int) -> list[int]:
    if len(data) != 32 * d:
        raise ValueError(f"expected {32 * d} bytes for d={d}, got {len(data)}")
    acc = int.from_bytes(data, "little")
    mask = (1 << d) - 1
    out = []
    for _ in range(N):
        v = acc & mask
        out.append(v % Q if d == 12 else v)
        acc >>= d
    return out


def _sample_ntt(seed: bytes) -> list[int]:
    # Rejection sampling from a SHAKE-128 stream; operates on public data.
    length = 768
    buf = hashlib.shake_128(seed).digest(length)
    coeffs: list[int] = []
    pos = 0
    while len(coeffs) < N:
        if pos + 3 > len(buf):
            length *= 2
            buf = hashlib.shake_128(seed).digest(length)
        b0, b1, b2 = buf[pos], buf[pos + 1], buf[pos + 2]
        pos += 3
        d1 = b0 + 256 * (b1 & 0x0F)
        d2 = (b1 >> 4) + 16 * b2
        if d1 < Q:
            coeffs.append(d1)
        if d2 < Q and len(coeffs) < N:
            coeffs.append(d2)
    return coeffs


def _sample_cbd(data: bytes, eta: int) -> list[int]:
    stream = int.from_bytes(data, "little")
    mask = (1 << eta) - 1
    out = []
    for _ in range(N):
        chunk = stream & ((1 << (2 * eta)) - 1)
        stream >>= 2 * eta
        x = bin(chunk & mask).count("1")
        y = bin(chunk >> eta).count("1")
        out.append((x - y) % Q)
    return out


def _compress(x: int, d: int) -> int:
    return (((x << (d + 1)) + Q) // (2 * Q)) & ((1 << d) - 1)


def _decompress(y: int, d: int) -> int:
    return (y * Q + (1 << (d - 1))) >> d


def _matrix(rho: bytes) -> list[list[list[int]]]:
    return [[_sample_ntt(rho + bytes([j, i])) for j in range(K)] for i in range(K)]


# -- K-PKE core ------------------------------------------------------------

def _pke_keygen(d: bytes) -> tuple[bytes, bytes]:
    expanded = _g(d + bytes([K]))
    rho, sigma = expanded[:32], expanded[32:]
    a_hat = _matrix(rho)
    s_hat = [_ntt(_sample_cbd(_prf(ETA1, sigma, n), ETA1)) for n in range(K)]
    e_hat = [_ntt(_sample_cbd(_prf(ETA1, sigma, K + n), ETA1)) for n in range(K)]
    t_hat = []
    for i in range(K):
        acc = [0] * N
        for j in range(K):
            acc = _add(acc, _mul_ntts(a_hat[i][j], s_hat[j]))
        t_hat.append(_add(acc, e_hat[i]))
    ek = b"".join(_byte_encode(t, 12) for t in t_hat) + rho
    dk = b"".join(_byte_encode(s, 12) for s in s_hat)
    return ek, dk


def _pke_encrypt(ek: bytes, m: bytes, r: bytes) -> bytes:
    t_hat = [_byte_decode(ek[384 * i:384 * (i + 1)], 12) for i in range(K)]
    rho = ek[384 * K:]
    a_hat = _matrix(rho)
    y_hat = [_ntt(_sample_cbd(_prf(ETA1, r, n), ETA1)) for n in range(K)]
    e1 = [_sample_cbd(_prf(ETA2, r, K + n), ETA2) for n in range(K)]
    e2 = _sample_cbd(_prf(ETA2, r, 2 * K), ETA2)

    u = []
    for i in range(K):
        acc = [0] * N
        for j in range(K):
            acc = _add(acc, _mul_ntts(a_hat[j][i], y_hat[j]))  # A^T row i
        u.append(_add(_ntt_inv(acc), e1[i]))

    acc = [0] * N
    for i in range(K):
        acc = _add(acc, _mul_ntts(t_hat[i], y_hat[i]))
    mu = [_decompress(b, 1) for b in _byte_decode(m, 1)]
    v = _add(_add(_ntt_inv(acc), e2), mu)

    c1 = b"".join(_byte_encode([_compress(x, DU) for x in poly], DU) for poly in u)
    c2 = _byte_encode([_compress(x, DV) for x in v], DV)
    return c1 + c2


def _pke_decrypt(dk: bytes, ct: bytes) -> bytes:
    per_u = 32 * DU
    u = [
        [_decompress(y, DU) for y in _byte_decode(ct[per_u * i:per_u * (i + 1)], DU)]
        for i in range(K)
    ]
    v = [_decompress(y, DV) for y in _byte_decode(ct[per_u * K:], DV)]
    s_hat = [_byte_decode(dk[384 * i:384 * (i + 1)], 12) for i in range(K)]
    acc = [0] * N
    for i in range(K):
        acc = _add(acc, _mul_ntts(s_hat[i], _ntt(u[i])))
    w = _sub(v, _ntt_inv(acc))
    return _byte_encode([_compress(x, 1) for x in w], 1)


# -- public API ------------------------------------------------------------

def keygen(seed: bytes) -> tuple[bytes, bytes]:
    """Derive an (encapsulation key, decapsulation key) pair from a 64-byte seed."""
    if len(seed) != 64:
        raise ValueError(f"keygen needs a 64-byte seed, got {len(seed)}")
    d, z = seed[:32], seed[32:]
    ek, dk_pke = _pke_keygen(d)
    dk = dk_pke + ek + _h(ek) + z
    assert len(ek) == EK_BYTES and len(dk) == DK_BYTES
    return ek, dk


def _check_ek(ek: bytes) -> None:
    if len(ek) != EK_BYTES:
        raise ValueError(f"encapsulation key must be {EK_BYTES} bytes, got {len(ek)}")
    body = ek[:384 * K]
    canonical = b"".join(
        _byte_encode(_byte_decode(body[384 * i:384 * (i + 1)], 12), 12)
        for i in range(K)
    )
    if canonical != body:
        raise ValueError("encapsulation key failed modulus check")


def encaps(ek: bytes, randomness: bytes) -> tuple[bytes, bytes]:
    """Encapsulate to ``ek``: returns (ciphertext, 32-byte shared secret)."""
    _check_ek(ek)
    if len(randomness) != 32:
        raise ValueError("encapsulation randomness must be 32 bytes")
    expanded = _g(randomness + _h(ek))
    shared, r = expanded[:32], expanded[32:]
    ct = _pke_encrypt(ek, randomness, r)
    return ct, shared


def decaps(dk: bytes, ct: bytes) -> bytes:
    """Recover the shared secret; implicit rejection on mismatched ciphertexts."""
    if len(dk) != DK_BYTES:
        raise ValueError(f"decapsulation key must be {DK_BYTES} bytes, got {len(dk)}")
    if len(ct) != CT_BYTES:
        raise ValueError(f"ciphertext must be {CT_BYTES} bytes, got {len(ct)}")
    dk_pke = dk[:384 * K]
    ek = dk[384 * K:768 * K + 32]
    h_stored = dk[768 * K + 32:768 * K + 64]
    z = dk[768 * K + 64:]
    if _h(ek) != h_stored:
        raise ValueError("decapsulation key failed hash check")
    m = _pke_decrypt(dk_pke, ct)
    expanded = _g(m + h_stored)
    shared, r = expanded[:32], expanded[32:]
    rejected = _j(z + ct)
    return shared if _pke_encrypt(ek, m, r) == ct else rejected
